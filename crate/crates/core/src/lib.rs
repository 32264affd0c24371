//! Click-through rate prediction with latent feature log-linear models
//! fused with an L1 logistic regression on explicit side features.
//!
//! Impressions are (banner, domain) dyads. The latent part is a
//! confidence-weighted logistic matrix factorization with bias terms, the
//! side part a sparse logistic regression. Both are trained by alternating
//! residual fits and combined in a single sigmoid over summed log-odds.

pub mod combined;
pub mod config;
pub mod data;
pub mod error;
pub mod factorization;
pub mod ingest;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod sidemodel;
pub mod synth;

pub use combined::{CombinedModel, ModelFamily};
pub use data::{
    DyadAggregate, DyadKey, EventRecord, Hyperparameters, LatentFactors, OptimizerSettings,
    Penalty, SideModel, Solver, SparseFeatureVector,
};
pub use error::{Error, Result};
pub use ingest::{DatasetDay, Dims, Schema, Vocabularies};
