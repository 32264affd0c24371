//! L1-regularized logistic regression on explicit features.
//!
//! Each event may carry a fixed log-odds offset (the latent model's
//! `α_i·β_j` during residual fitting). The intercept is an always-on feature
//! excluded from the penalty.

use std::collections::BTreeMap;

use crate::data::{DyadKey, EventRecord, OptimizerSettings, SideModel, SparseFeatureVector};
use crate::error::{Error, Result};
use crate::factorization::OffsetTable;
use crate::math::{clamp_prob, logit, sigmoid, softplus};
use crate::optim::{self, Objective};

/// Events, their fixed offsets and the L1 weight.
#[derive(Debug, Clone)]
pub struct SideProblem<'a> {
    events: &'a [EventRecord],
    offsets: Vec<f64>,
    dim: usize,
    lambda: f64,
    intercept_only: bool,
    settings: OptimizerSettings,
}

impl<'a> SideProblem<'a> {
    /// `offsets` must be empty (all zero) or hold one finite value per event.
    pub fn new(
        events: &'a [EventRecord],
        offsets: Vec<f64>,
        dim: usize,
        lambda: f64,
        settings: OptimizerSettings,
    ) -> Result<Self> {
        let offsets = if offsets.is_empty() {
            vec![0.0; events.len()]
        } else {
            offsets
        };
        if offsets.len() != events.len() {
            return Err(Error::invalid(format!(
                "{} offsets for {} events",
                offsets.len(),
                events.len()
            )));
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("event offsets must be finite"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_lr must be finite and >= 0, got {lambda}"
            )));
        }
        for ev in events {
            ev.features.check_dim(dim)?;
        }
        Ok(SideProblem {
            events,
            offsets,
            dim,
            lambda,
            intercept_only: false,
            settings,
        })
    }

    /// Ignore the features and fit the intercept alone.
    pub fn intercept_only(mut self) -> Self {
        self.intercept_only = true;
        self
    }

    pub fn events(&self) -> &[EventRecord] {
        self.events
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `σ(ω·x + intercept + intercept_correction + offset)`.
pub fn predict_lr(model: &SideModel, x: &SparseFeatureVector, offset: f64) -> f64 {
    sigmoid(model.logodds(x) + offset)
}

/// Parameter layout: `[ω_0 .. ω_{P-1}, intercept]`.
struct LrObjective<'p, 'a> {
    problem: &'p SideProblem<'a>,
    weights: usize,
}

impl LrObjective<'_, '_> {
    fn new<'p, 'a>(problem: &'p SideProblem<'a>) -> LrObjective<'p, 'a> {
        let weights = if problem.intercept_only {
            0
        } else {
            problem.dim
        };
        LrObjective { problem, weights }
    }

    fn l1_weights(&self) -> Vec<f64> {
        let mut l1 = vec![self.problem.lambda; self.weights];
        l1.push(0.0);
        l1
    }

    fn pack(&self, m: &SideModel) -> Vec<f64> {
        let mut x = m.weights[..self.weights].to_vec();
        x.push(m.intercept);
        x
    }
}

impl Objective for LrObjective<'_, '_> {
    fn dim(&self) -> usize {
        self.weights + 1
    }

    fn num_terms(&self) -> usize {
        self.problem.events.len()
    }

    fn total_weight(&self) -> f64 {
        self.problem.events.len() as f64
    }

    fn term(&self, x: &[f64], t: usize, grad: &mut [f64]) -> f64 {
        let ev = &self.problem.events[t];
        let w = &x[..self.weights];
        let mut z = x[self.weights] + self.problem.offsets[t];
        if self.weights > 0 {
            z += ev.features.dot(w);
        }
        let r = sigmoid(z) - if ev.label { 1.0 } else { 0.0 };
        if self.weights > 0 {
            for (i, v) in ev.features.iter() {
                grad[i] += r * v;
            }
        }
        grad[self.weights] += r;
        if ev.label {
            softplus(-z)
        } else {
            softplus(z)
        }
    }
}

/// Penalized negative log-likelihood with the problem's offsets; the
/// intercept correction is not part of training.
pub fn side_loss(problem: &SideProblem<'_>, model: &SideModel) -> Result<f64> {
    check_model(problem, model)?;
    let obj = LrObjective::new(problem);
    Ok(optim::objective_value(
        &obj,
        &obj.pack(model),
        &obj.l1_weights(),
    ))
}

/// Gradient of the smooth part of [`side_loss`]: `(weights, intercept)`.
pub fn side_gradient(problem: &SideProblem<'_>, model: &SideModel) -> Result<(Vec<f64>, f64)> {
    check_model(problem, model)?;
    let obj = LrObjective::new(problem);
    let mut g = vec![0.0; obj.dim()];
    obj.value_grad(&obj.pack(model), &mut g);
    let b = g.pop().unwrap();
    g.resize(problem.dim, 0.0);
    Ok((g, b))
}

fn check_model(problem: &SideProblem<'_>, model: &SideModel) -> Result<()> {
    if model.dim() != problem.dim {
        return Err(Error::invalid(format!(
            "side model has {} weights, problem has {} features",
            model.dim(),
            problem.dim
        )));
    }
    Ok(())
}

/// Fits weights and intercept starting from `init`. The returned model keeps
/// `init.intercept_correction`.
pub fn fit_lr(problem: &SideProblem<'_>, init: &SideModel) -> Result<SideModel> {
    check_model(problem, init)?;
    let obj = LrObjective::new(problem);
    let mut start = init.clone();
    if problem.intercept_only {
        start.weights.iter_mut().for_each(|w| *w = 0.0);
    }
    let min = optim::minimize(&obj, obj.pack(&start), &obj.l1_weights(), &problem.settings)?;
    let mut out = start;
    out.weights[..obj.weights].copy_from_slice(&min.x[..obj.weights]);
    out.intercept = min.x[obj.weights];
    Ok(out)
}

/// Per-dyad average predicted CTR turned into a log-odds offset:
/// `p̄ = mean_d σ(ω·x_d + intercept + correction)`, `offset = logit(p̄)`,
/// with `p̄` clamped to `[1e-12, 1 - 1e-12]`.
pub fn dyad_avg_prediction(
    model: &SideModel,
    groups: &BTreeMap<DyadKey, Vec<&SparseFeatureVector>>,
) -> Result<OffsetTable> {
    let mut table = OffsetTable::new();
    for (&key, xs) in groups {
        if xs.is_empty() {
            return Err(Error::invalid(format!(
                "dyad {key:?} has no feature vectors"
            )));
        }
        let mean = xs.iter().map(|x| predict_lr(model, x, 0.0)).sum::<f64>() / xs.len() as f64;
        table.insert(key, logit(clamp_prob(mean)))?;
    }
    Ok(table)
}

/// Log-odds shift `ln(rate)` for negatives kept at `rate`.
pub fn intercept_correction(keep_rate: f64) -> Result<f64> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::invalid(format!(
            "keep rate must lie in (0, 1], got {keep_rate}"
        )));
    }
    Ok(keep_rate.ln())
}
