//! Domain types shared by every model component.
//!
//! Banners index the rows of the dyadic CTR matrix and domains its columns.
//! All indices are dense and assigned by the ingest vocabularies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::dot;

/// A (banner, domain) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadKey {
    pub banner: u32,
    pub domain: u32,
}

impl DyadKey {
    pub fn new(banner: u32, domain: u32) -> Self {
        DyadKey { banner, domain }
    }
}

/// Click and view counts of one observed dyad.
///
/// Unobserved dyads have no aggregate at all, so `views` is always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadAggregate {
    key: DyadKey,
    clicks: u64,
    views: u64,
}

impl DyadAggregate {
    pub fn new(key: DyadKey, clicks: u64, views: u64) -> Result<Self> {
        if views == 0 {
            return Err(Error::invalid("a dyad aggregate needs at least one view"));
        }
        if clicks > views {
            return Err(Error::invalid(format!(
                "clicks ({clicks}) exceed views ({views}) for dyad {key:?}"
            )));
        }
        Ok(DyadAggregate { key, clicks, views })
    }

    pub fn key(&self) -> DyadKey {
        self.key
    }

    pub fn clicks(&self) -> u64 {
        self.clicks
    }

    pub fn views(&self) -> u64 {
        self.views
    }

    pub fn non_clicks(&self) -> u64 {
        self.views - self.clicks
    }

    /// Empirical click-through rate `clicks / views`.
    pub fn empirical_ctr(&self) -> f64 {
        self.clicks as f64 / self.views as f64
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseFeatureVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseFeatureVector {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::invalid(
                "feature indices and values differ in length",
            ));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "feature indices must be strictly increasing",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(SparseFeatureVector { indices, values })
    }

    /// Indicator vector (all values 1.0) from arbitrary indices; sorts and dedups.
    pub fn indicators(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let values = vec![1.0; indices.len()];
        SparseFeatureVector { indices, values }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    /// Inner product with a dense weight vector. Indices past its end contribute nothing.
    #[inline]
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.iter()
            .map(|(i, v)| weights.get(i).map_or(0.0, |w| w * v))
            .sum()
    }

    /// Checks every index is below `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last as usize >= dim => Err(Error::invalid(format!(
                "feature index {last} out of range for dimension {dim}"
            ))),
            _ => Ok(()),
        }
    }
}

/// One impression.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub day: u32,
    pub key: DyadKey,
    /// `true` for a click.
    pub label: bool,
    pub features: SparseFeatureVector,
}

/// Row and column factor matrices of the latent feature log-linear model.
///
/// Each row vector has `order + 2` entries laid out as
/// `α_i = [latent_1..latent_K, bias_i, 1]` and each column vector as
/// `β_j = [latent_1..latent_K, 1, bias_j]`, so `α_i·β_j` is the latent
/// inner product plus both biases. The constant slots are never optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactors {
    order: usize,
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LatentFactors {
    pub fn zeros(order: usize, rows: usize, cols: usize) -> Self {
        let w = order + 2;
        let mut a = vec![0.0; rows * w];
        let mut b = vec![0.0; cols * w];
        for i in 0..rows {
            a[i * w + order + 1] = 1.0;
        }
        for j in 0..cols {
            b[j * w + order] = 1.0;
        }
        LatentFactors {
            order,
            rows,
            cols,
            a,
            b,
        }
    }

    /// Latent coordinates uniform in `[-scale, scale] / sqrt(order)`, biases zero.
    pub fn random<R: Rng + ?Sized>(
        order: usize,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut f = Self::zeros(order, rows, cols);
        if order == 0 {
            return f;
        }
        let s = scale / (order as f64).sqrt();
        let w = order + 2;
        for r in 0..rows {
            for k in 0..order {
                f.a[r * w + k] = rng.random_range(-s..=s);
            }
        }
        for c in 0..cols {
            for k in 0..order {
                f.b[c * w + k] = rng.random_range(-s..=s);
            }
        }
        f
    }

    /// Builds factors from full-width row-major blocks, checking the constant slots.
    pub fn from_blocks(
        order: usize,
        rows: usize,
        cols: usize,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        let w = order + 2;
        if a.len() != rows * w || b.len() != cols * w {
            return Err(Error::invalid(
                "factor block sizes do not match the declared shape",
            ));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("factor entries must be finite"));
        }
        let f = LatentFactors {
            order,
            rows,
            cols,
            a,
            b,
        };
        for i in 0..rows {
            if f.row(i)[order + 1] != 1.0 {
                return Err(Error::invalid(format!("row {i} constant slot is not 1")));
            }
        }
        for j in 0..cols {
            if f.col(j)[order] != 1.0 {
                return Err(Error::invalid(format!("column {j} constant slot is not 1")));
            }
        }
        Ok(f)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vector length `order + 2`.
    pub fn width(&self) -> usize {
        self.order + 2
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.a[i * w..(i + 1) * w]
    }

    pub fn col(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.b[j * w..(j + 1) * w]
    }

    pub fn row_bias(&self, i: usize) -> f64 {
        self.row(i)[self.order]
    }

    pub fn col_bias(&self, j: usize) -> f64 {
        self.col(j)[self.order + 1]
    }

    pub fn set_row_bias(&mut self, i: usize, v: f64) {
        let (w, k) = (self.width(), self.order);
        self.a[i * w + k] = v;
    }

    pub fn set_col_bias(&mut self, j: usize, v: f64) {
        let (w, k) = (self.width(), self.order);
        self.b[j * w + k + 1] = v;
    }

    /// Mutable latent part (first `order` entries) of row `i`.
    pub fn row_latent_mut(&mut self, i: usize) -> &mut [f64] {
        let (w, k) = (self.width(), self.order);
        &mut self.a[i * w..i * w + k]
    }

    pub fn col_latent_mut(&mut self, j: usize) -> &mut [f64] {
        let (w, k) = (self.width(), self.order);
        &mut self.b[j * w..j * w + k]
    }

    /// Full row block, row-major.
    pub fn row_block(&self) -> &[f64] {
        &self.a
    }

    pub fn col_block(&self) -> &[f64] {
        &self.b
    }

    pub fn contains(&self, key: DyadKey) -> bool {
        (key.banner as usize) < self.rows && (key.domain as usize) < self.cols
    }

    /// `α_i·β_j`. Panics when the key is out of range.
    #[inline]
    pub fn logodds(&self, key: DyadKey) -> f64 {
        dot(self.row(key.banner as usize), self.col(key.domain as usize))
    }

    /// Zeroes every free slot of row `i` (latent and bias).
    pub fn clear_row(&mut self, i: usize) {
        let k = self.order;
        self.row_latent_mut(i).fill(0.0);
        let w = self.width();
        self.a[i * w + k] = 0.0;
    }

    pub fn clear_col(&mut self, j: usize) {
        let k = self.order;
        self.col_latent_mut(j).fill(0.0);
        let w = self.width();
        self.b[j * w + k + 1] = 0.0;
    }

    /// Copy grown to at least `rows` x `cols`; new vectors are zero apart from constants.
    pub fn grown(&self, rows: usize, cols: usize) -> Self {
        let rows = rows.max(self.rows);
        let cols = cols.max(self.cols);
        let mut f = Self::zeros(self.order, rows, cols);
        f.a[..self.a.len()].copy_from_slice(&self.a);
        f.b[..self.b.len()].copy_from_slice(&self.b);
        f
    }
}

/// L1-regularized logistic regression on explicit features.
///
/// `intercept_correction` is an additive log-odds shift applied only at
/// prediction time; it compensates for negative down-sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SideModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub intercept_correction: f64,
}

impl SideModel {
    pub fn zeros(dim: usize) -> Self {
        SideModel {
            weights: vec![0.0; dim],
            intercept: 0.0,
            intercept_correction: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `ω·x + intercept + intercept_correction`.
    #[inline]
    pub fn logodds(&self, x: &SparseFeatureVector) -> f64 {
        x.dot(&self.weights) + self.intercept + self.intercept_correction
    }

    pub fn zero_weights(&self) -> usize {
        self.weights.iter().filter(|w| **w == 0.0).count()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.len() - self.zero_weights()
    }

    /// Copy padded with zero weights up to `dim` features.
    pub fn grown(&self, dim: usize) -> Self {
        let mut m = self.clone();
        if dim > m.weights.len() {
            m.weights.resize(dim, 0.0);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    L1,
    L2,
}

impl std::str::FromStr for Penalty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Penalty::L1),
            "l2" => Ok(Penalty::L2),
            other => Err(Error::invalid(format!(
                "unknown penalty '{other}' (expected l1 or l2)"
            ))),
        }
    }
}

impl std::fmt::Display for Penalty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Full-batch orthant-wise limited-memory quasi-Newton (plain L-BFGS without L1).
    Batch,
    /// Mini-batch gradient descent with inverse-time step decay and cumulative L1 clipping.
    MiniBatch,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "batch" | "owlqn" | "lbfgs" => Ok(Solver::Batch),
            "minibatch" | "sgd" => Ok(Solver::MiniBatch),
            other => Err(Error::invalid(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Batch => "batch",
            Solver::MiniBatch => "minibatch",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub solver: Solver,
    /// Iteration cap (batch) or epoch cap (mini-batch).
    pub max_iter: usize,
    /// Stop once the relative objective improvement falls below this.
    pub tolerance: f64,
    /// Initial step size for mini-batch mode.
    pub step_size: f64,
    /// Inverse-time decay rate: step = step_size / (1 + decay * epoch).
    pub step_decay: f64,
    pub batch_size: usize,
    /// Number of correction pairs kept by the quasi-Newton solver.
    pub memory: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            solver: Solver::Batch,
            max_iter: 500,
            tolerance: 1e-9,
            step_size: 0.5,
            step_decay: 0.1,
            batch_size: 256,
            memory: 10,
            seed: 0,
        }
    }
}

/// Regularization weights and training schedule.
///
/// `lambda_bias` is shared by the banner and domain biases and
/// `lambda_latent` by the latent coordinates of both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub lambda_lr: f64,
    pub lambda_bias: f64,
    pub lambda_latent: f64,
    pub latent_penalty: Penalty,
    pub order: usize,
    /// Alternation rounds for a fresh model.
    pub alternations: usize,
    /// Alternation rounds when warm starting from a previous model.
    pub warm_alternations: usize,
    /// Half-width of the uniform latent initialization (before the 1/sqrt(K) scaling).
    pub init_scale: f64,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            lambda_lr: 4.0,
            lambda_bias: 3.0,
            lambda_latent: 1.0,
            latent_penalty: Penalty::L2,
            order: 0,
            alternations: 7,
            warm_alternations: 1,
            init_scale: 0.01,
            optimizer: OptimizerSettings::default(),
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_lr", self.lambda_lr),
            ("lambda_bias", self.lambda_bias),
            ("lambda_latent", self.lambda_latent),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.alternations == 0 || self.warm_alternations == 0 {
            return Err(Error::invalid("alternations must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be finite and >= 0"));
        }
        let o = &self.optimizer;
        if o.max_iter == 0 || o.batch_size == 0 || o.memory == 0 {
            return Err(Error::invalid(
                "optimizer max_iter, batch_size and memory must be positive",
            ));
        }
        if o.tolerance.is_nan()
            || o.tolerance < 0.0
            || o.step_size.is_nan()
            || o.step_size <= 0.0
            || o.step_decay.is_nan()
            || o.step_decay < 0.0
        {
            return Err(Error::invalid(
                "optimizer tolerance/step settings out of range",
            ));
        }
        Ok(())
    }
}
