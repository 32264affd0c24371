//! The fused model: latent factors and side model trained by alternating
//! residual fits, predicted through one sigmoid over summed log-odds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    DyadKey, EventRecord, Hyperparameters, LatentFactors, SideModel, SparseFeatureVector,
};
use crate::error::{Error, Result};
use crate::factorization::{self, FactorizationProblem, FixedSide, OffsetTable};
use crate::ingest::{aggregate, group_by_dyad, DatasetDay, DownsampleStats};
use crate::math::{logit, sigmoid};
use crate::metrics::{auc, logloss, ScoredSet};
use crate::sidemodel::{self, dyad_avg_prediction, intercept_correction, SideProblem};

/// Which components a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    /// Side model only.
    Lr,
    /// Latent factors with an intercept-only side model (LFL_K, or LFL_0 at order 0).
    Lfl,
    /// Latent factors plus the full side model.
    LrLfl,
}

impl ModelFamily {
    pub fn has_latent(self) -> bool {
        !matches!(self, ModelFamily::Lr)
    }

    pub fn has_features(self) -> bool {
        !matches!(self, ModelFamily::Lfl)
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ModelFamily::Lr),
            "lfl" => Ok(ModelFamily::Lfl),
            "lr+lfl" | "lrlfl" => Ok(ModelFamily::LrLfl),
            other => Err(Error::invalid(format!(
                "unknown model family '{other}' (expected lr, lfl or lr+lfl)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Lr => "lr",
            ModelFamily::Lfl => "lfl",
            ModelFamily::LrLfl => "lr+lfl",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub family: ModelFamily,
    /// Alternation rounds of the last training call.
    pub alternations: usize,
    /// Label of the last day trained on.
    pub day: u32,
}

/// A trained model. Banners and domains never observed in training have no
/// latent contribution, so their predictions are the side model's alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedModel {
    pub factors: Option<LatentFactors>,
    pub side: SideModel,
    pub seen_banners: Vec<bool>,
    pub seen_domains: Vec<bool>,
    pub meta: TrainingMeta,
}

impl CombinedModel {
    /// Side-only model with nothing seen.
    pub fn side_only(side: SideModel, day: u32) -> Self {
        CombinedModel {
            factors: None,
            side,
            seen_banners: Vec::new(),
            seen_domains: Vec::new(),
            meta: TrainingMeta {
                family: ModelFamily::Lr,
                alternations: 1,
                day,
            },
        }
    }

    pub fn order(&self) -> Option<usize> {
        self.factors.as_ref().map(LatentFactors::order)
    }

    pub fn is_seen(&self, key: DyadKey) -> bool {
        let b = key.banner as usize;
        let d = key.domain as usize;
        b < self.seen_banners.len()
            && d < self.seen_domains.len()
            && self.seen_banners[b]
            && self.seen_domains[d]
    }

    /// `α_i·β_j`, or exactly 0 when either entity is new.
    pub fn latent_logodds(&self, key: DyadKey) -> f64 {
        match &self.factors {
            Some(f) if self.is_seen(key) && f.contains(key) => f.logodds(key),
            _ => 0.0,
        }
    }

    pub fn side_logodds(&self, x: &SparseFeatureVector) -> f64 {
        self.side.logodds(x)
    }

    pub fn predict(&self, key: DyadKey, x: &SparseFeatureVector) -> f64 {
        sigmoid(self.side_logodds(x) + self.latent_logodds(key))
    }
}

fn mark_seen(seen: &mut Vec<bool>, len: usize, idx: impl Iterator<Item = usize>) {
    if seen.len() < len {
        seen.resize(len, false);
    }
    for i in idx {
        seen[i] = true;
    }
}

/// Trains a model of `family` on one (merged) training set.
///
/// A fresh model runs `hyper.alternations` rounds and one warm started from
/// existing factors `hyper.warm_alternations`. Each round fits the factors with the side
/// model's per-dyad averaged log-odds as offsets, then the side model with
/// the latent log-odds as per-event offsets. The first fresh round uses the
/// base-rate log-odds as a uniform offset. `observer` sees the model after
/// every round. The intercept correction for down-sampling is added to the
/// returned model only.
pub fn train_with_observer(
    data: &DatasetDay,
    hyper: &Hyperparameters,
    family: ModelFamily,
    init: Option<&CombinedModel>,
    mut observer: impl FnMut(usize, &CombinedModel),
) -> Result<CombinedModel> {
    hyper.validate()?;
    if data.events.is_empty() {
        return Err(Error::invalid("no training events"));
    }
    let dims = data.dims;
    let correction = intercept_correction(data.keep_rate())?;
    let mut side = match init {
        Some(m) => m.side.grown(dims.features),
        None => SideModel::zeros(dims.features),
    };
    side.intercept_correction = 0.0;
    let mut seen_banners = init.map(|m| m.seen_banners.clone()).unwrap_or_default();
    let mut seen_domains = init.map(|m| m.seen_domains.clone()).unwrap_or_default();
    mark_seen(
        &mut seen_banners,
        dims.banners,
        data.aggregates.iter().map(|a| a.key().banner as usize),
    );
    mark_seen(
        &mut seen_domains,
        dims.domains,
        data.aggregates.iter().map(|a| a.key().domain as usize),
    );

    let side_problem = |offsets: Vec<f64>| -> Result<SideProblem<'_>> {
        let p = SideProblem::new(
            &data.events,
            offsets,
            dims.features,
            hyper.lambda_lr,
            hyper.optimizer.clone(),
        )?;
        Ok(if family.has_features() {
            p
        } else {
            p.intercept_only()
        })
    };

    if !family.has_latent() {
        side = sidemodel::fit_lr(&side_problem(Vec::new())?, &side)?;
        let mut model = CombinedModel {
            factors: None,
            side,
            seen_banners,
            seen_domains,
            meta: TrainingMeta {
                family,
                alternations: 1,
                day: data.day,
            },
        };
        observer(1, &model);
        model.side.intercept_correction = correction;
        return Ok(model);
    }

    let warm = init.and_then(|m| m.factors.as_ref());
    if let Some(f) = warm.filter(|f| f.order() != hyper.order) {
        return Err(Error::invalid(format!(
            "warm-start model has latent order {}, training asks for {}",
            f.order(),
            hyper.order
        )));
    }
    let mut factors = match warm {
        Some(f) => f.grown(dims.banners, dims.domains),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
            LatentFactors::random(
                hyper.order,
                dims.banners,
                dims.domains,
                hyper.init_scale,
                &mut rng,
            )
        }
    };
    // a side-only warm start still needs the full schedule for the new factors
    let rounds = if warm.is_some() {
        hyper.warm_alternations
    } else {
        hyper.alternations
    };
    let groups = group_by_dyad(&data.events);
    let mut model = CombinedModel {
        factors: None,
        side: side.clone(),
        seen_banners,
        seen_domains,
        meta: TrainingMeta {
            family,
            alternations: rounds,
            day: data.day,
        },
    };
    for round in 1..=rounds {
        let offsets = if round == 1 && init.is_none() {
            OffsetTable::uniform(
                &data.aggregates,
                logit(data.base_rate().clamp(1e-6, 1.0 - 1e-6)),
            )?
        } else {
            dyad_avg_prediction(&side, &groups)?
        };
        let problem = FactorizationProblem::new(
            data.aggregates.clone(),
            offsets,
            hyper.clone(),
            dims.banners,
            dims.domains,
        )?;
        factors = factorization::fit(&problem, &factors, FixedSide::None)?;
        let event_offsets: Vec<f64> = data.events.iter().map(|e| factors.logodds(e.key)).collect();
        side = sidemodel::fit_lr(&side_problem(event_offsets)?, &side)?;
        model.factors = Some(factors.clone());
        model.side = side.clone();
        observer(round, &model);
    }
    model.side.intercept_correction = correction;
    Ok(model)
}

pub fn train_model(
    data: &DatasetDay,
    hyper: &Hyperparameters,
    family: ModelFamily,
    init: Option<&CombinedModel>,
) -> Result<CombinedModel> {
    train_with_observer(data, hyper, family, init, |_, _| {})
}

/// Latent plus side model.
pub fn train_alternating(
    data: &DatasetDay,
    hyper: &Hyperparameters,
    init: Option<&CombinedModel>,
) -> Result<CombinedModel> {
    train_model(data, hyper, ModelFamily::LrLfl, init)
}

/// Global AUC and log loss of `model` on `data`.
pub fn evaluate(model: &CombinedModel, data: &DatasetDay) -> Result<(f64, f64)> {
    let mut set = ScoredSet::default();
    for e in &data.events {
        set.push(model.predict(e.key, &e.features), e.label);
    }
    Ok((auc(&set)?, logloss(&set)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub alternation: usize,
    pub auc: f64,
    pub logloss: f64,
}

/// Splits off the last `fraction` of events (in log order) for validation.
pub fn chronological_split(data: &DatasetDay, fraction: f64) -> Result<(DatasetDay, DatasetDay)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("validation fraction must lie in (0, 1)"));
    }
    let n = data.events.len();
    if n < 2 {
        return Err(Error::invalid("too few events to carve a validation split"));
    }
    let cut = n - ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let part = |events: Vec<_>| {
        let aggregates = aggregate(&events);
        let negatives = events.iter().filter(|e: &&EventRecord| !e.label).count() as u64;
        // the kept share of negatives is assumed uniform across the split
        let rate = data.keep_rate();
        let seen = (negatives as f64 / rate).round() as u64;
        DatasetDay {
            day: data.day,
            events,
            aggregates,
            dims: data.dims,
            downsample_factor: data.downsample_factor,
            downsample: DownsampleStats {
                negatives_seen: seen.max(negatives),
                negatives_kept: negatives,
            },
        }
    };
    let train = part(data.events[..cut].to_vec());
    let valid = part(data.events[cut..].to_vec());
    Ok((train, valid))
}

/// Validation metrics after every alternation round. Without an explicit
/// validation set the last 10% of events are held out.
pub fn evaluate_alternation_trace(
    data: &DatasetDay,
    hyper: &Hyperparameters,
    validation: Option<&DatasetDay>,
) -> Result<Vec<TraceEntry>> {
    let split;
    let (train, valid) = match validation {
        Some(v) => (data, v),
        None => {
            split = chronological_split(data, 0.1)?;
            (&split.0, &split.1)
        }
    };
    let correction = intercept_correction(train.keep_rate())?;
    let mut trace = Vec::new();
    let mut failure = None;
    train_with_observer(train, hyper, ModelFamily::LrLfl, None, |round, m| {
        let mut m = m.clone();
        m.side.intercept_correction = correction;
        match evaluate(&m, valid) {
            Ok((auc, logloss)) => trace.push(TraceEntry {
                alternation: round,
                auc,
                logloss,
            }),
            Err(e) => failure = failure.take().or(Some(e)),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(trace),
    }
}
