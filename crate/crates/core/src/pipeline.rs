//! Day-over-day experiments: rolling training windows tested on the next
//! day, warm started from the previous day's model, and the staged
//! hyperparameter sweep.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::combined::{evaluate, train_model, CombinedModel, ModelFamily};
use crate::data::{Hyperparameters, Penalty};
use crate::error::{Error, Result};
use crate::ingest::DatasetDay;
use crate::metrics::{per_banner_daily, MetricsReport, ScoredSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialConfig {
    /// Training days per window.
    pub window: usize,
    pub family: ModelFamily,
    pub hyper: Hyperparameters,
    /// Negative down-sampling factor applied to training days (1 = none).
    pub downsample: f64,
    pub seed: u64,
    /// Click filters of the per-banner summaries.
    pub min_clicks: Vec<u64>,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig {
            window: 7,
            family: ModelFamily::LrLfl,
            hyper: Hyperparameters::default(),
            downsample: 1.0,
            seed: 0,
            min_clicks: vec![1, 10],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequentialRun {
    pub report: MetricsReport,
    pub test_days: Vec<u32>,
    /// Model trained for the last test day.
    pub last_model: CombinedModel,
}

fn day_seed(seed: u64, day: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(u64::from(day))
}

/// Down-samples every day's negatives with a per-day seed.
pub fn prepare_training_days(
    days: &[DatasetDay],
    factor: f64,
    seed: u64,
) -> Result<Vec<DatasetDay>> {
    days.par_iter()
        .map(|d| {
            if factor == 1.0 {
                Ok(d.clone())
            } else {
                d.downsampled(factor, day_seed(seed, d.day))
            }
        })
        .collect()
}

/// Training window ending just before `test_index`.
pub fn training_window(
    train_days: &[DatasetDay],
    test_index: usize,
    window: usize,
) -> Result<DatasetDay> {
    if window == 0 || test_index < window || test_index > train_days.len() {
        return Err(Error::invalid(format!(
            "no {window}-day window before day index {test_index}"
        )));
    }
    let refs: Vec<&DatasetDay> = train_days[test_index - window..test_index].iter().collect();
    DatasetDay::merge(&refs)
}

/// Predictions on a test day grouped by (day, banner).
pub fn score_day(model: &CombinedModel, day: &DatasetDay) -> BTreeMap<(u32, u32), ScoredSet> {
    let mut sets: BTreeMap<(u32, u32), ScoredSet> = BTreeMap::new();
    for e in &day.events {
        sets.entry((day.day, e.key.banner))
            .or_default()
            .push(model.predict(e.key, &e.features), e.label);
    }
    sets
}

/// Trains on every `window` consecutive days and tests on the day after.
/// The first window is trained from scratch; later ones are warm started
/// from the previous model.
pub fn run_sequential(days: &[DatasetDay], cfg: &SequentialConfig) -> Result<SequentialRun> {
    if cfg.window == 0 || days.len() <= cfg.window {
        return Err(Error::invalid(format!(
            "{} days leave no test day after a {}-day training window",
            days.len(),
            cfg.window
        )));
    }
    let train_days = prepare_training_days(days, cfg.downsample, cfg.seed)?;
    let mut sets = BTreeMap::new();
    let mut test_days = Vec::new();
    let mut prev: Option<CombinedModel> = None;
    for (t, test) in days.iter().enumerate().skip(cfg.window) {
        let train = training_window(&train_days, t, cfg.window)?;
        let model = train_model(&train, &cfg.hyper, cfg.family, prev.as_ref())?;
        log::info!("trained {} for test day {}", cfg.family, test.day);
        sets.append(&mut score_day(&model, test));
        test_days.push(test.day);
        prev = Some(model);
    }
    let report = per_banner_daily(&sets, &cfg.min_clicks)?;
    Ok(SequentialRun {
        report,
        test_days,
        last_model: prev.expect("at least one test day"),
    })
}

/// Candidate values for the staged sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrids {
    pub lambda_lr: Vec<f64>,
    pub lambda_bias: Vec<f64>,
    pub lambda_latent: Vec<f64>,
    pub orders: Vec<usize>,
}

impl Default for SweepGrids {
    fn default() -> Self {
        SweepGrids {
            lambda_lr: (0..=10).map(|i| 2.0 + 0.5 * i as f64).collect(),
            lambda_bias: vec![1.0, 3.0, 10.0],
            lambda_latent: vec![0.5, 1.0, 2.0, 4.0],
            orders: vec![2, 5, 10],
        }
    }
}

impl SweepGrids {
    fn validate(&self) -> Result<()> {
        if self.lambda_lr.is_empty()
            || self.lambda_bias.is_empty()
            || self.lambda_latent.is_empty()
            || self.orders.is_empty()
        {
            return Err(Error::invalid("every sweep grid needs at least one value"));
        }
        if self
            .lambda_lr
            .iter()
            .chain(&self.lambda_bias)
            .chain(&self.lambda_latent)
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::invalid("sweep grid values must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One evaluated sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub stage: u8,
    pub family: ModelFamily,
    pub lambda_lr: f64,
    pub lambda_bias: f64,
    pub lambda_latent: f64,
    pub order: usize,
    pub penalty: Penalty,
    pub auc: f64,
    pub logloss: f64,
    pub train_seconds: f64,
}

/// Highest AUC first, lower log loss breaking ties.
pub fn rank(records: &mut [SweepRecord]) {
    records.sort_by(|a, b| {
        b.auc
            .total_cmp(&a.auc)
            .then(a.logloss.total_cmp(&b.logloss))
    });
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    family: ModelFamily,
    lambda_lr: f64,
    lambda_bias: f64,
    lambda_latent: f64,
    order: usize,
}

fn run_stage(
    stage: u8,
    candidates: &[Candidate],
    base: &Hyperparameters,
    train: &DatasetDay,
    valid: &DatasetDay,
) -> Result<Vec<SweepRecord>> {
    let mut records = candidates
        .par_iter()
        .map(|c| {
            let hyper = Hyperparameters {
                lambda_lr: c.lambda_lr,
                lambda_bias: c.lambda_bias,
                lambda_latent: c.lambda_latent,
                order: c.order,
                ..base.clone()
            };
            let start = Instant::now();
            let model = train_model(train, &hyper, c.family, None)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let (auc, logloss) = evaluate(&model, valid)?;
            Ok(SweepRecord {
                stage,
                family: c.family,
                lambda_lr: c.lambda_lr,
                lambda_bias: c.lambda_bias,
                lambda_latent: c.lambda_latent,
                order: c.order,
                penalty: base.latent_penalty,
                auc,
                logloss,
                train_seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank(&mut records);
    Ok(records)
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// The optimum and its neighbors in `grid`.
fn neighbors<T: Copy + PartialEq>(grid: &[T], best: T) -> Vec<T> {
    let pos = grid.iter().position(|&g| g == best).unwrap_or(0);
    grid[pos.saturating_sub(1)..(pos + 2).min(grid.len())].to_vec()
}

/// Axis of the local stage-4 grid. When the best value sits on an axis end
/// that is also the end of the user grid, the axis grows one ×/÷2 step.
struct Axis<T> {
    values: Vec<T>,
    grid_min: T,
    grid_max: T,
    expandable: bool,
}

impl<T: Copy + PartialOrd> Axis<T> {
    fn new(grid: &[T], best: T, sorted: Vec<T>) -> Self {
        Axis {
            values: neighbors(&sorted, best),
            grid_min: sorted[0],
            grid_max: sorted[sorted.len() - 1],
            expandable: grid.len() >= 2 && sorted.len() >= 2,
        }
    }

    fn expand(&mut self, best: T, down: impl Fn(T) -> T, up: impl Fn(T) -> T) -> bool {
        if !self.expandable {
            return false;
        }
        let lo = self.values[0];
        let hi = self.values[self.values.len() - 1];
        if best == lo && lo <= self.grid_min {
            let v = down(lo);
            if v < lo {
                self.values.insert(0, v);
                return true;
            }
        }
        if best == hi && hi >= self.grid_max {
            let v = up(hi);
            if v > hi {
                self.values.push(v);
                return true;
            }
        }
        false
    }
}

/// Four-stage sweep validated on the first test day:
/// 1. `λ_LR` for the side model alone;
/// 2. `λ_0` for biases only (order 0);
/// 3. `λ_αβ` and `K` for the latent model with `λ_0` fixed;
/// 4. a local grid over `λ_LR`, `λ_αβ` and `K` for the combined model
///    around the stage 1 and 3 optima, `λ_0` still fixed.
///
/// Returns every evaluated configuration, stage by stage, ranked within
/// each stage.
pub fn staged_sweep(
    days: &[DatasetDay],
    cfg: &SequentialConfig,
    grids: &SweepGrids,
) -> Result<Vec<SweepRecord>> {
    grids.validate()?;
    if cfg.window == 0 || days.len() <= cfg.window {
        return Err(Error::invalid("the sweep needs at least window + 1 days"));
    }
    let train_days = prepare_training_days(&days[..cfg.window], cfg.downsample, cfg.seed)?;
    let train = training_window(&train_days, cfg.window, cfg.window)?;
    let valid = &days[cfg.window];
    let base = &cfg.hyper;
    let cand = |family, lambda_lr, lambda_bias, lambda_latent, order| Candidate {
        family,
        lambda_lr,
        lambda_bias,
        lambda_latent,
        order,
    };

    let s1: Vec<Candidate> = grids
        .lambda_lr
        .iter()
        .map(|&l| cand(ModelFamily::Lr, l, base.lambda_bias, base.lambda_latent, 0))
        .collect();
    let r1 = run_stage(1, &s1, base, &train, valid)?;
    let best_lr = r1[0].lambda_lr;

    let s2: Vec<Candidate> = grids
        .lambda_bias
        .iter()
        .map(|&l| cand(ModelFamily::Lfl, base.lambda_lr, l, base.lambda_latent, 0))
        .collect();
    let r2 = run_stage(2, &s2, base, &train, valid)?;
    let best_bias = r2[0].lambda_bias;

    let mut s3 = Vec::new();
    for &k in &grids.orders {
        for &l in &grids.lambda_latent {
            s3.push(cand(ModelFamily::Lfl, base.lambda_lr, best_bias, l, k));
        }
    }
    let r3 = run_stage(3, &s3, base, &train, valid)?;
    let (best_latent, best_k) = (r3[0].lambda_latent, r3[0].order);

    let mut orders = grids.orders.clone();
    orders.sort_unstable();
    orders.dedup();
    let mut lr_axis = Axis::new(&grids.lambda_lr, best_lr, sorted_unique(&grids.lambda_lr));
    let mut latent_axis = Axis::new(
        &grids.lambda_latent,
        best_latent,
        sorted_unique(&grids.lambda_latent),
    );
    let mut k_axis = Axis::new(&grids.orders, best_k, orders);

    let mut r4: Vec<SweepRecord> = Vec::new();
    for expansion in 0..=2 {
        let mut s4 = Vec::new();
        for &k in &k_axis.values {
            for &ll in &latent_axis.values {
                for &lr in &lr_axis.values {
                    let done = r4
                        .iter()
                        .any(|r| r.order == k && r.lambda_latent == ll && r.lambda_lr == lr);
                    if !done {
                        s4.push(cand(ModelFamily::LrLfl, lr, best_bias, ll, k));
                    }
                }
            }
        }
        r4.extend(run_stage(4, &s4, base, &train, valid)?);
        rank(&mut r4);
        if expansion == 2 {
            break;
        }
        let best = &r4[0];
        let grew = [
            lr_axis.expand(best.lambda_lr, |v| v / 2.0, |v| v * 2.0),
            latent_axis.expand(best.lambda_latent, |v| v / 2.0, |v| v * 2.0),
            k_axis.expand(best.order, |v| v / 2, |v| v * 2),
        ];
        if !grew.contains(&true) {
            break;
        }
    }

    Ok(r1.into_iter().chain(r2).chain(r3).chain(r4).collect())
}
