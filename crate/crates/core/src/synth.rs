//! Synthetic impression logs drawn from a known combined model.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::combined::{CombinedModel, ModelFamily, TrainingMeta};
use crate::data::{DyadKey, EventRecord, LatentFactors, SideModel, SparseFeatureVector};
use crate::error::{Error, Result};
use crate::ingest::{DatasetDay, RawEvent, Schema, Vocabularies, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub banners: usize,
    pub domains: usize,
    /// True latent order.
    pub order: usize,
    /// Standard deviation of the latent inner products `α_i·β_j` (biases excluded).
    pub latent_scale: f64,
    /// Standard deviation of the banner and domain biases.
    pub bias_scale: f64,
    /// Number of categorical attributes per impression.
    pub side_attributes: usize,
    /// Values per attribute.
    pub side_values: usize,
    /// Share of side weights that are nonzero.
    pub side_density: f64,
    /// Standard deviation of the nonzero side weights.
    pub side_scale: f64,
    pub intercept: f64,
    pub days: usize,
    pub events_per_day: usize,
    /// Zipf exponent of banner and domain popularity.
    pub popularity_exponent: f64,
    /// Probability that an attribute takes its domain's preferred value
    /// rather than a uniform one.
    pub feature_affinity: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            banners: 50,
            domains: 40,
            order: 2,
            latent_scale: 1.0,
            bias_scale: 0.5,
            side_attributes: 4,
            side_values: 8,
            side_density: 0.5,
            side_scale: 0.8,
            intercept: -3.0,
            days: 8,
            events_per_day: 20_000,
            popularity_exponent: 1.1,
            feature_affinity: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("banners", self.banners),
            ("domains", self.domains),
            ("days", self.days),
            ("events_per_day", self.events_per_day),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.side_attributes > 0 && self.side_values == 0 {
            return Err(Error::invalid(
                "side_values must be positive when attributes are generated",
            ));
        }
        for (name, v) in [
            ("latent_scale", self.latent_scale),
            ("bias_scale", self.bias_scale),
            ("side_scale", self.side_scale),
            ("popularity_exponent", self.popularity_exponent),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.intercept.is_finite() {
            return Err(Error::invalid("intercept must be finite"));
        }
        for (name, v) in [
            ("side_density", self.side_density),
            ("feature_affinity", self.feature_affinity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

pub struct SynthOutput {
    /// Un-sampled days, encoded with `vocab`.
    pub days: Vec<DatasetDay>,
    pub truth: CombinedModel,
    pub vocab: Vocabularies,
    pub schema: Schema,
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    let w = width(n);
    (0..n).map(|i| format!("{prefix}{i:0w$}")).collect()
}

fn attribute_names(cfg: &GeneratorConfig) -> Vec<String> {
    names("a", cfg.side_attributes)
}

fn value_names(cfg: &GeneratorConfig) -> Vec<String> {
    names("v", cfg.side_values)
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated scale")
}

/// Draws the ground-truth model and `cfg.days` days of events.
///
/// Identifiers are zero-padded (`b007`, `d12`, `a1=v3`) so that their
/// lexicographic order matches the generated index order.
pub fn generate(cfg: &GeneratorConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (m, n, k) = (cfg.banners, cfg.domains, cfg.order);
    let attrs = attribute_names(cfg);
    let values = value_names(cfg);
    let feature_names: Vec<String> = attrs
        .iter()
        .flat_map(|a| values.iter().map(move |v| format!("{a}={v}")))
        .collect();
    let vocab = Vocabularies {
        banners: Vocabulary::from_names(names("b", m))?,
        domains: Vocabulary::from_names(names("d", n))?,
        features: Vocabulary::from_names(feature_names)?,
    };
    let dims = vocab.dims();

    // α_i·β_j is a sum of k products of independent normals
    let coord = if k > 0 {
        normal((cfg.latent_scale / (k as f64).sqrt()).sqrt())
    } else {
        normal(0.0)
    };
    let bias = normal(cfg.bias_scale);
    let w = k + 2;
    let mut a = vec![0.0; m * w];
    let mut b = vec![0.0; n * w];
    for row in a.chunks_mut(w) {
        for v in &mut row[..k] {
            *v = coord.sample(&mut rng);
        }
        row[k] = bias.sample(&mut rng);
        row[k + 1] = 1.0;
    }
    for col in b.chunks_mut(w) {
        for v in &mut col[..k] {
            *v = coord.sample(&mut rng);
        }
        col[k] = 1.0;
        col[k + 1] = bias.sample(&mut rng);
    }
    let factors = LatentFactors::from_blocks(k, m, n, a, b)?;

    let weight = normal(cfg.side_scale);
    let mut side = SideModel::zeros(dims.features);
    for wt in side.weights.iter_mut() {
        if rng.random::<f64>() < cfg.side_density {
            *wt = weight.sample(&mut rng);
        }
    }
    side.intercept = cfg.intercept;

    let preferred: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            (0..cfg.side_attributes)
                .map(|_| rng.random_range(0..cfg.side_values))
                .collect()
        })
        .collect();
    let zipf = |count: usize| {
        WeightedIndex::new((0..count).map(|r| ((r + 1) as f64).powf(-cfg.popularity_exponent)))
            .map_err(|e| Error::invalid(format!("popularity weights: {e}")))
    };
    let banner_pop = zipf(m)?;
    let domain_pop = zipf(n)?;

    let truth = CombinedModel {
        factors: Some(factors),
        side,
        seen_banners: vec![true; m],
        seen_domains: vec![true; n],
        meta: TrainingMeta {
            family: ModelFamily::LrLfl,
            alternations: 0,
            day: cfg.days as u32 - 1,
        },
    };

    let mut days = Vec::with_capacity(cfg.days);
    for day in 0..cfg.days as u32 {
        let mut events = Vec::with_capacity(cfg.events_per_day);
        for _ in 0..cfg.events_per_day {
            let key = DyadKey::new(
                banner_pop.sample(&mut rng) as u32,
                domain_pop.sample(&mut rng) as u32,
            );
            let idx: Vec<u32> = (0..cfg.side_attributes)
                .map(|f| {
                    let v = if rng.random::<f64>() < cfg.feature_affinity {
                        preferred[key.domain as usize][f]
                    } else {
                        rng.random_range(0..cfg.side_values)
                    };
                    (f * cfg.side_values + v) as u32
                })
                .collect();
            let features = SparseFeatureVector::indicators(idx);
            let p = truth.predict(key, &features);
            let label = rng.random::<f64>() < p;
            events.push(EventRecord {
                day,
                key,
                label,
                features,
            });
        }
        days.push(DatasetDay::new(day, events, dims));
    }
    let schema = Schema {
        attributes: attrs,
        ..Schema::default()
    };
    Ok(SynthOutput {
        days,
        truth,
        vocab,
        schema,
    })
}

/// Inverse of encoding for indicator features of the form `name=value`.
pub fn to_raw(events: &[EventRecord], vocab: &Vocabularies) -> Result<Vec<RawEvent>> {
    let lookup = |v: &Vocabulary, i: u32, what: &str| -> Result<String> {
        v.name(i)
            .map(str::to_owned)
            .ok_or_else(|| Error::invalid(format!("{what} index {i} not in vocabulary")))
    };
    events
        .iter()
        .map(|e| {
            let features = e
                .features
                .indices()
                .iter()
                .map(|&i| {
                    let name = lookup(&vocab.features, i, "feature")?;
                    Ok(match name.split_once('=') {
                        Some((a, v)) => (a.to_owned(), Some(v.to_owned())),
                        None => (name, None),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RawEvent {
                day: e.day,
                banner: lookup(&vocab.banners, e.key.banner, "banner")?,
                domain: lookup(&vocab.domains, e.key.domain, "domain")?,
                label: e.label,
                features,
            })
        })
        .collect()
}

/// Writes events in the TSV log format.
pub fn write_tsv<W: Write>(mut out: W, events: &[RawEvent]) -> Result<()> {
    writeln!(out, "# day\tbanner_id\tdomain_id\tlabel\tfeatures")?;
    for e in events {
        let feats: Vec<String> = e
            .features
            .iter()
            .map(|(n, v)| match v {
                Some(v) => format!("{n}={v}"),
                None => n.clone(),
            })
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.day,
            e.banner,
            e.domain,
            u8::from(e.label),
            feats.join("|")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{encode, parse_log};

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            banners: 12,
            domains: 9,
            days: 2,
            events_per_day: 3000,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.days, b.days);
        assert_eq!(a.truth, b.truth);
        let c = generate(&GeneratorConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.days, c.days);
    }

    #[test]
    fn shapes() {
        let out = generate(&small()).unwrap();
        assert_eq!(out.days.len(), 2);
        assert!(out.days.iter().all(|d| d.events.len() == 3000));
        let dims = out.vocab.dims();
        assert_eq!((dims.banners, dims.domains, dims.features), (12, 9, 32));
        assert!(out.days[1]
            .events
            .iter()
            .all(|e| e.day == 1 && e.features.len() == 4));
        assert_eq!(out.vocab.banners.name(3), Some("b03"));
    }

    #[test]
    fn click_rate_matches_probabilities() {
        let cfg = GeneratorConfig {
            days: 1,
            events_per_day: 100_000,
            ..small()
        };
        let out = generate(&cfg).unwrap();
        let day = &out.days[0];
        let ps: Vec<f64> = day
            .events
            .iter()
            .map(|e| out.truth.predict(e.key, &e.features))
            .collect();
        let expected: f64 = ps.iter().sum();
        let sd = ps.iter().map(|p| p * (1.0 - p)).sum::<f64>().sqrt();
        let clicks = day.clicks() as f64;
        assert!(
            (clicks - expected).abs() < 3.0 * sd,
            "clicks {clicks} expected {expected} sd {sd}"
        );
    }

    #[test]
    fn zero_latent_scale_means_biases_only() {
        let out = generate(&GeneratorConfig {
            latent_scale: 0.0,
            bias_scale: 0.0,
            ..small()
        })
        .unwrap();
        let f = out.truth.factors.as_ref().unwrap();
        for b in 0..12 {
            for d in 0..9 {
                assert_eq!(f.logodds(DyadKey::new(b, d)), 0.0);
            }
        }
    }

    #[test]
    fn tsv_round_trip() {
        let out = generate(&small()).unwrap();
        let raw = to_raw(&out.days[0].events, &out.vocab).unwrap();
        let mut buf = Vec::new();
        write_tsv(&mut buf, &raw).unwrap();
        let parsed = parse_log(buf.as_slice()).unwrap();
        assert_eq!(parsed.malformed, 0);
        assert_eq!(parsed.events, raw);
        let mut vocab = out.vocab.clone();
        vocab.freeze_features();
        assert_eq!(
            encode(&parsed.events, &mut vocab, &out.schema),
            out.days[0].events
        );
        assert_eq!(vocab.dims(), out.vocab.dims());
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&GeneratorConfig {
            banners: 0,
            ..small()
        })
        .is_err());
        assert!(generate(&GeneratorConfig {
            side_density: 1.5,
            ..small()
        })
        .is_err());
        assert!(generate(&GeneratorConfig {
            latent_scale: f64::NAN,
            ..small()
        })
        .is_err());
    }
}
