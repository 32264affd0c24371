//! Typed views of the `key = value` configuration files.

use lflctr_core::combined::ModelFamily;
use lflctr_core::config::{number, numbers, parse_pairs};
use lflctr_core::pipeline::SweepGrids;
use lflctr_core::synth::GeneratorConfig;
use lflctr_core::{Error, Hyperparameters, Result};

/// Training settings read from a hyperparameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub hyper: Hyperparameters,
    pub family: ModelFamily,
    /// Negative down-sampling factor for training data.
    pub downsample: f64,
    /// Days per training window for sequential runs and sweeps.
    pub window: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            hyper: Hyperparameters::default(),
            family: ModelFamily::Lr,
            downsample: 1.0,
            window: 7,
        }
    }
}

fn unknown(kind: &str, key: &str) -> Error {
    Error::InvalidArgument(format!("unknown {kind} key '{key}'"))
}

/// Applies one training key. Returns false if the key is not a training key.
fn apply_train_key(
    s: &mut TrainSettings,
    key: &str,
    value: &str,
    order_set: &mut bool,
) -> Result<bool> {
    let h = &mut s.hyper;
    let o = &mut h.optimizer;
    match key {
        "family" => s.family = value.parse()?,
        "order" | "k" => {
            h.order = number(key, value)?;
            *order_set = true;
        }
        "lambda_lr" => h.lambda_lr = number(key, value)?,
        "lambda_bias" | "lambda_0" => h.lambda_bias = number(key, value)?,
        "lambda_latent" | "lambda_ab" => h.lambda_latent = number(key, value)?,
        "penalty" => h.latent_penalty = value.parse()?,
        "alternations" => h.alternations = number(key, value)?,
        "warm_alternations" => h.warm_alternations = number(key, value)?,
        "init_scale" => h.init_scale = number(key, value)?,
        "seed" => h.seed = number(key, value)?,
        "solver" => o.solver = value.parse()?,
        "max_iter" => o.max_iter = number(key, value)?,
        "tolerance" => o.tolerance = number(key, value)?,
        "step_size" => o.step_size = number(key, value)?,
        "step_decay" => o.step_decay = number(key, value)?,
        "batch_size" => o.batch_size = number(key, value)?,
        "memory" => o.memory = number(key, value)?,
        "optimizer_seed" => o.seed = number(key, value)?,
        "downsample" => s.downsample = number(key, value)?,
        "window" => s.window = number(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn finish(
    mut s: TrainSettings,
    pairs: &[(String, String)],
    order_set: bool,
) -> Result<TrainSettings> {
    // a latent order without an explicit family selects the combined model
    if order_set && !pairs.iter().any(|(k, _)| k == "family") {
        s.family = ModelFamily::LrLfl;
    }
    if !(s.downsample >= 1.0 && s.downsample.is_finite()) {
        return Err(Error::InvalidArgument(
            "downsample must be a finite factor >= 1".into(),
        ));
    }
    if s.window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    s.hyper.validate()?;
    Ok(s)
}

/// Without `order` or `family` the file describes the side model alone.
pub fn parse_train(text: &str) -> Result<TrainSettings> {
    let pairs = parse_pairs(text)?;
    let mut s = TrainSettings::default();
    let mut order_set = false;
    for (k, v) in &pairs {
        if !apply_train_key(&mut s, k, v, &mut order_set)? {
            return Err(unknown("hyperparameter", k));
        }
    }
    finish(s, &pairs, order_set)
}

/// Sweep grids plus base training settings for everything not swept.
pub fn parse_sweep(text: &str) -> Result<(SweepGrids, TrainSettings)> {
    let pairs = parse_pairs(text)?;
    let mut grids = SweepGrids::default();
    let mut s = TrainSettings::default();
    let mut order_set = false;
    for (k, v) in &pairs {
        match k.as_str() {
            "grid_lambda_lr" => grids.lambda_lr = numbers(k, v)?,
            "grid_lambda_bias" | "grid_lambda_0" => grids.lambda_bias = numbers(k, v)?,
            "grid_lambda_latent" | "grid_lambda_ab" => grids.lambda_latent = numbers(k, v)?,
            "grid_order" | "grid_k" => grids.orders = numbers(k, v)?,
            _ => {
                if !apply_train_key(&mut s, k, v, &mut order_set)? {
                    return Err(unknown("sweep", k));
                }
            }
        }
    }
    Ok((grids, finish(s, &pairs, order_set)?))
}

pub fn parse_synth(text: &str) -> Result<GeneratorConfig> {
    let mut c = GeneratorConfig::default();
    for (k, v) in parse_pairs(text)? {
        let (k, v) = (k.as_str(), v.as_str());
        match k {
            "banners" => c.banners = number(k, v)?,
            "domains" => c.domains = number(k, v)?,
            "order" => c.order = number(k, v)?,
            "latent_scale" => c.latent_scale = number(k, v)?,
            "bias_scale" => c.bias_scale = number(k, v)?,
            "side_attributes" => c.side_attributes = number(k, v)?,
            "side_values" => c.side_values = number(k, v)?,
            "side_density" => c.side_density = number(k, v)?,
            "side_scale" => c.side_scale = number(k, v)?,
            "intercept" => c.intercept = number(k, v)?,
            "days" => c.days = number(k, v)?,
            "events_per_day" => c.events_per_day = number(k, v)?,
            "popularity_exponent" => c.popularity_exponent = number(k, v)?,
            "feature_affinity" => c.feature_affinity = number(k, v)?,
            "seed" => c.seed = number(k, v)?,
            other => return Err(unknown("synth", other)),
        }
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lflctr_core::Penalty;

    #[test]
    fn empty_file_is_side_model_only() {
        let s = parse_train("").unwrap();
        assert_eq!(s.family, ModelFamily::Lr);
        assert_eq!(s.hyper, Hyperparameters::default());
    }

    #[test]
    fn order_selects_combined_family() {
        let s = parse_train("order = 5\nlambda_0 = 2.5\npenalty = l1\ndownsample = 10").unwrap();
        assert_eq!(s.family, ModelFamily::LrLfl);
        assert_eq!(s.hyper.order, 5);
        assert_eq!(s.hyper.lambda_bias, 2.5);
        assert_eq!(s.hyper.latent_penalty, Penalty::L1);
        assert_eq!(s.downsample, 10.0);
        assert_eq!(
            parse_train("family = lfl\norder = 0").unwrap().family,
            ModelFamily::Lfl
        );
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = parse_train("lambda_lr = 1\nlamda_bias = 2")
            .unwrap_err()
            .to_string();
        assert!(e.contains("lamda_bias"), "{e}");
        let e = parse_synth("bannerz = 3").unwrap_err().to_string();
        assert!(e.contains("bannerz"), "{e}");
        let e = parse_sweep("grid_lambda = 1,2").unwrap_err().to_string();
        assert!(e.contains("grid_lambda"), "{e}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(parse_train("lambda_lr = -1").is_err());
        assert!(parse_train("downsample = 0.5").is_err());
        assert!(parse_train("alternations = x").is_err());
        assert!(parse_synth("days = 0").is_err());
    }

    #[test]
    fn sweep_grids() {
        let (g, s) = parse_sweep("grid_lambda_lr = 4\ngrid_k = 2,5\nwindow = 3").unwrap();
        assert_eq!(g.lambda_lr, vec![4.0]);
        assert_eq!(g.orders, vec![2, 5]);
        assert_eq!(g.lambda_bias, SweepGrids::default().lambda_bias);
        assert_eq!(s.window, 3);
    }

    #[test]
    fn synth_keys() {
        let c = parse_synth("banners = 7\ndays = 8\nseed = 9").unwrap();
        assert_eq!((c.banners, c.days, c.seed), (7, 8, 9));
    }
}
