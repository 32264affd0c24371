//! Confidence-weighted latent feature log-linear model over dyad aggregates.
//!
//! For every observed dyad the loss is
//! `C·softplus(-z) + (V - C)·softplus(z)` with `z = α_i·β_j + offset_ij`,
//! which equals the per-impression logistic loss summed over the dyad's
//! `V` impressions. Offsets carry fixed log-odds from the side model.

use std::collections::HashMap;

use crate::data::{DyadAggregate, DyadKey, Hyperparameters, LatentFactors, Penalty};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::optim::{self, Objective};

/// Fixed per-dyad log-odds offsets; absent keys read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OffsetTable {
    offsets: HashMap<DyadKey, f64>,
}

impl OffsetTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: DyadKey, offset: f64) -> Result<()> {
        if !offset.is_finite() {
            return Err(Error::invalid(format!("offset for {key:?} is not finite")));
        }
        self.offsets.insert(key, offset);
        Ok(())
    }

    /// Same offset for every listed key.
    pub fn uniform<'a, I: IntoIterator<Item = &'a DyadAggregate>>(
        aggs: I,
        offset: f64,
    ) -> Result<Self> {
        let mut t = OffsetTable::new();
        for a in aggs {
            t.insert(a.key(), offset)?;
        }
        Ok(t)
    }

    pub fn get(&self, key: DyadKey) -> f64 {
        self.offsets.get(&key).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Data and settings for one latent-factor fit.
#[derive(Debug, Clone)]
pub struct FactorizationProblem {
    aggregates: Vec<DyadAggregate>,
    offsets: OffsetTable,
    hyper: Hyperparameters,
    rows: usize,
    cols: usize,
}

impl FactorizationProblem {
    pub fn new(
        aggregates: Vec<DyadAggregate>,
        offsets: OffsetTable,
        hyper: Hyperparameters,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        hyper.validate()?;
        for a in &aggregates {
            let k = a.key();
            if k.banner as usize >= rows || k.domain as usize >= cols {
                return Err(Error::invalid(format!(
                    "dyad {k:?} outside the {rows} x {cols} banner/domain range"
                )));
            }
        }
        Ok(FactorizationProblem {
            aggregates,
            offsets,
            hyper,
            rows,
            cols,
        })
    }

    pub fn aggregates(&self) -> &[DyadAggregate] {
        &self.aggregates
    }

    pub fn offsets(&self) -> &OffsetTable {
        &self.offsets
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn check_factors(&self, f: &LatentFactors) -> Result<()> {
        if f.rows() != self.rows || f.cols() != self.cols {
            return Err(Error::invalid(format!(
                "factors are {} x {}, problem is {} x {}",
                f.rows(),
                f.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }
}

/// `σ(α_i·β_j + offset)`.
pub fn predict_mf(factors: &LatentFactors, key: DyadKey, offset: f64) -> f64 {
    sigmoid(factors.logodds(key) + offset)
}

/// Which factor matrix stays fixed during [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedSide {
    None,
    Rows,
    Cols,
}

struct Dyad {
    row: usize,
    col: usize,
    clicks: f64,
    views: f64,
    offset: f64,
}

/// Free parameters: per row `[latent.., bias]`, per column `[latent.., bias]`,
/// row block first, each block present only when that side is free.
struct CwfObjective {
    order: usize,
    rows: usize,
    cols: usize,
    free_rows: bool,
    free_cols: bool,
    fixed_a: Vec<f64>,
    fixed_b: Vec<f64>,
    dyads: Vec<Dyad>,
    penalty: Penalty,
    lambda_latent: f64,
    lambda_bias: f64,
}

impl CwfObjective {
    fn new(problem: &FactorizationProblem, factors: &LatentFactors, fixed: FixedSide) -> Self {
        let order = factors.order();
        let stride = order + 1;
        let compact = |v: &[f64], bias: f64| -> Vec<f64> {
            let mut out = v[..order].to_vec();
            out.push(bias);
            out
        };
        let fixed_a = if fixed == FixedSide::Rows {
            (0..factors.rows())
                .flat_map(|i| compact(factors.row(i), factors.row_bias(i)))
                .collect()
        } else {
            Vec::new()
        };
        let fixed_b = if fixed == FixedSide::Cols {
            (0..factors.cols())
                .flat_map(|j| compact(factors.col(j), factors.col_bias(j)))
                .collect()
        } else {
            Vec::new()
        };
        debug_assert!(fixed_a.is_empty() || fixed_a.len() == factors.rows() * stride);
        let dyads = problem
            .aggregates
            .iter()
            .map(|a| Dyad {
                row: a.key().banner as usize,
                col: a.key().domain as usize,
                clicks: a.clicks() as f64,
                views: a.views() as f64,
                offset: problem.offsets.get(a.key()),
            })
            .collect();
        let h = &problem.hyper;
        CwfObjective {
            order,
            rows: factors.rows(),
            cols: factors.cols(),
            free_rows: fixed != FixedSide::Rows,
            free_cols: fixed != FixedSide::Cols,
            fixed_a,
            fixed_b,
            dyads,
            penalty: h.latent_penalty,
            lambda_latent: h.lambda_latent,
            lambda_bias: h.lambda_bias,
        }
    }

    fn stride(&self) -> usize {
        self.order + 1
    }

    fn row_block_len(&self) -> usize {
        if self.free_rows {
            self.rows * self.stride()
        } else {
            0
        }
    }

    fn blocks<'a>(&'a self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let split = self.row_block_len();
        let a = if self.free_rows {
            &x[..split]
        } else {
            &self.fixed_a[..]
        };
        let b = if self.free_cols {
            &x[split..]
        } else {
            &self.fixed_b[..]
        };
        (a, b)
    }

    fn pack(&self, f: &LatentFactors) -> Vec<f64> {
        let k = self.order;
        let mut x = Vec::with_capacity(self.dim());
        if self.free_rows {
            for i in 0..self.rows {
                x.extend_from_slice(&f.row(i)[..k]);
                x.push(f.row_bias(i));
            }
        }
        if self.free_cols {
            for j in 0..self.cols {
                x.extend_from_slice(&f.col(j)[..k]);
                x.push(f.col_bias(j));
            }
        }
        x
    }

    fn unpack(&self, x: &[f64], template: &LatentFactors) -> LatentFactors {
        let (k, s) = (self.order, self.stride());
        let mut f = template.clone();
        let (a, b) = self.blocks(x);
        if self.free_rows {
            for i in 0..self.rows {
                f.row_latent_mut(i).copy_from_slice(&a[i * s..i * s + k]);
                f.set_row_bias(i, a[i * s + k]);
            }
        }
        if self.free_cols {
            for j in 0..self.cols {
                f.col_latent_mut(j).copy_from_slice(&b[j * s..j * s + k]);
                f.set_col_bias(j, b[j * s + k]);
            }
        }
        f
    }

    /// Per-coordinate L1 weights (all zero for the L2 penalty).
    fn l1_weights(&self) -> Vec<f64> {
        let s = self.stride();
        (0..self.dim())
            .map(|p| match self.penalty {
                Penalty::L2 => 0.0,
                Penalty::L1 if p % s == self.order => self.lambda_bias,
                Penalty::L1 => self.lambda_latent,
            })
            .collect()
    }

    #[inline]
    fn logodds(&self, a: &[f64], b: &[f64], d: &Dyad) -> f64 {
        let s = self.stride();
        let ai = &a[d.row * s..(d.row + 1) * s];
        let bj = &b[d.col * s..(d.col + 1) * s];
        let latent: f64 = ai[..self.order]
            .iter()
            .zip(&bj[..self.order])
            .map(|(p, q)| p * q)
            .sum();
        latent + ai[self.order] + bj[self.order] + d.offset
    }
}

impl Objective for CwfObjective {
    fn dim(&self) -> usize {
        self.row_block_len()
            + if self.free_cols {
                self.cols * self.stride()
            } else {
                0
            }
    }

    fn num_terms(&self) -> usize {
        self.dyads.len()
    }

    fn total_weight(&self) -> f64 {
        self.dyads.iter().map(|d| d.views).sum()
    }

    fn term(&self, x: &[f64], t: usize, grad: &mut [f64]) -> f64 {
        let d = &self.dyads[t];
        let (a, b) = self.blocks(x);
        let z = self.logodds(a, b, d);
        let residual = d.views * sigmoid(z) - d.clicks;
        let (k, s) = (self.order, self.stride());
        let split = self.row_block_len();
        if self.free_rows {
            let bj = &b[d.col * s..(d.col + 1) * s];
            let g = &mut grad[d.row * s..(d.row + 1) * s];
            for q in 0..k {
                g[q] += residual * bj[q];
            }
            g[k] += residual;
        }
        if self.free_cols {
            let ai = &a[d.row * s..(d.row + 1) * s];
            let g = &mut grad[split + d.col * s..split + (d.col + 1) * s];
            for q in 0..k {
                g[q] += residual * ai[q];
            }
            g[k] += residual;
        }
        d.clicks * softplus(-z) + (d.views - d.clicks) * softplus(z)
    }

    fn penalty(&self, x: &[f64], grad: &mut [f64], scale: f64) -> f64 {
        if self.penalty != Penalty::L2 {
            return 0.0;
        }
        let s = self.stride();
        let mut total = 0.0;
        for (p, (&v, g)) in x.iter().zip(grad.iter_mut()).enumerate() {
            let lam = if p % s == self.order {
                self.lambda_bias
            } else {
                self.lambda_latent
            };
            total += lam * v * v;
            *g += scale * 2.0 * lam * v;
        }
        scale * total
    }
}

/// Regularized confidence-weighted loss of `factors` on `problem`.
///
/// The penalty covers latent coordinates (λ_latent) and bias coordinates
/// (λ_bias) of both factor matrices, never the constant slots.
pub fn loss_cwf(problem: &FactorizationProblem, factors: &LatentFactors) -> Result<f64> {
    problem.check_factors(factors)?;
    let obj = CwfObjective::new(problem, factors, FixedSide::None);
    let x = obj.pack(factors);
    let value = optim::objective_value(&obj, &x, &obj.l1_weights());
    if value.is_finite() {
        return Ok(value);
    }
    let (a, b) = obj.blocks(&x);
    let bad = obj
        .dyads
        .iter()
        .find(|d| {
            let z = obj.logodds(a, b, d);
            !(d.clicks * softplus(-z) + (d.views - d.clicks) * softplus(z)).is_finite()
        })
        .map(|d| Error::NonFiniteDyad {
            banner: d.row as u32,
            domain: d.col as u32,
        });
    Err(bad.unwrap_or_else(|| Error::NonFinite("regularizer is not finite".into())))
}

/// Gradient of the smooth part of [`loss_cwf`], laid out like the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradient {
    pub order: usize,
    /// Row-major `rows x (order + 2)`; constant slots are 0.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FactorGradient {
    pub fn norm(&self) -> f64 {
        self.a
            .iter()
            .chain(&self.b)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Gradient of the data term plus the L2 penalty (if selected).
/// An L1 penalty is left to the optimizer and contributes nothing here.
pub fn grad_cwf(problem: &FactorizationProblem, factors: &LatentFactors) -> Result<FactorGradient> {
    problem.check_factors(factors)?;
    let obj = CwfObjective::new(problem, factors, FixedSide::None);
    let x = obj.pack(factors);
    let mut g = vec![0.0; obj.dim()];
    obj.value_grad(&x, &mut g);
    let (k, s, w) = (obj.order, obj.stride(), factors.width());
    let mut a = vec![0.0; factors.rows() * w];
    let mut b = vec![0.0; factors.cols() * w];
    for i in 0..factors.rows() {
        a[i * w..i * w + k].copy_from_slice(&g[i * s..i * s + k]);
        a[i * w + k] = g[i * s + k];
    }
    let off = obj.row_block_len();
    for j in 0..factors.cols() {
        b[j * w..j * w + k].copy_from_slice(&g[off + j * s..off + j * s + k]);
        b[j * w + k + 1] = g[off + j * s + k];
    }
    Ok(FactorGradient { order: k, a, b })
}

/// Minimizes the regularized loss starting from `init`.
///
/// Rows and columns without any observation in the problem are set to zero
/// (their penalized optimum) and are not touched by the solver. The side
/// named by `fixed` is returned unchanged.
pub fn fit(
    problem: &FactorizationProblem,
    init: &LatentFactors,
    fixed: FixedSide,
) -> Result<LatentFactors> {
    problem.check_factors(init)?;
    let mut start = init.clone();
    let mut seen_rows = vec![false; problem.rows];
    let mut seen_cols = vec![false; problem.cols];
    for a in &problem.aggregates {
        seen_rows[a.key().banner as usize] = true;
        seen_cols[a.key().domain as usize] = true;
    }
    if fixed != FixedSide::Rows {
        for (i, _) in seen_rows.iter().enumerate().filter(|(_, s)| !**s) {
            start.clear_row(i);
        }
    }
    if fixed != FixedSide::Cols {
        for (j, _) in seen_cols.iter().enumerate().filter(|(_, s)| !**s) {
            start.clear_col(j);
        }
    }
    let obj = CwfObjective::new(problem, &start, fixed);
    if obj.dim() == 0 {
        return Ok(start);
    }
    let x0 = obj.pack(&start);
    let l1 = obj.l1_weights();
    let min = optim::minimize(&obj, x0, &l1, &problem.hyper.optimizer)?;
    let out = obj.unpack(&min.x, &start);
    Ok(out)
}
