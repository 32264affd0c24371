//! Command-line front end for `lflctr-core`: data synthesis, training,
//! evaluation and hyperparameter sweeps over tab-separated event logs.

pub mod commands;
pub mod error;
pub mod model_file;
pub mod settings;
