//! Versioned, line-oriented text format for trained models.
//!
//! ```text
//! lflctr-model 1
//! family lr+lfl
//! order 5
//! ...header key/value lines...
//! [schema]      schema text
//! [banners]     name<TAB>seen flag, one per index
//! [domains]     name<TAB>seen flag
//! [features]    name
//! [factors]     "a" then K+2 values per banner row, "b" then K+2 per domain row
//! [side]        index<TAB>weight for every nonzero weight
//! [end]
//! ```
//!
//! Reals are written in Rust's shortest round-trip notation, so loading
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use lflctr_core::combined::{CombinedModel, ModelFamily, TrainingMeta};
use lflctr_core::ingest::{Schema, Vocabularies, Vocabulary};
use lflctr_core::{Hyperparameters, LatentFactors, Penalty, SideModel};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "lflctr-model";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: CombinedModel,
    pub hyper: Hyperparameters,
    pub vocab: Vocabularies,
    pub schema: Schema,
}

/// SHA-256 over the entries, each terminated by a newline.
pub fn vocabulary_digest(v: &Vocabulary) -> String {
    let mut h = Sha256::new();
    for name in v.names() {
        h.update(name.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Data(format!("malformed model file: {}", msg.into()))
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let h = &self.hyper;
        let mut t = String::new();
        let dims = self.vocab.dims();
        writeln!(t, "{MAGIC} {FORMAT_VERSION}").unwrap();
        writeln!(t, "family {}", m.meta.family).unwrap();
        writeln!(
            t,
            "order {}",
            m.order().map_or("none".to_string(), |k| k.to_string())
        )
        .unwrap();
        writeln!(t, "banners {}", dims.banners).unwrap();
        writeln!(t, "domains {}", dims.domains).unwrap();
        writeln!(t, "features {}", dims.features).unwrap();
        writeln!(t, "penalty {}", h.latent_penalty).unwrap();
        writeln!(t, "lambda_lr {}", real(h.lambda_lr)).unwrap();
        writeln!(t, "lambda_bias {}", real(h.lambda_bias)).unwrap();
        writeln!(t, "lambda_latent {}", real(h.lambda_latent)).unwrap();
        writeln!(t, "intercept {}", real(m.side.intercept)).unwrap();
        writeln!(
            t,
            "intercept_correction {}",
            real(m.side.intercept_correction)
        )
        .unwrap();
        writeln!(t, "alternations {}", m.meta.alternations).unwrap();
        writeln!(t, "day {}", m.meta.day).unwrap();
        writeln!(
            t,
            "digest_banners {}",
            vocabulary_digest(&self.vocab.banners)
        )
        .unwrap();
        writeln!(
            t,
            "digest_domains {}",
            vocabulary_digest(&self.vocab.domains)
        )
        .unwrap();
        writeln!(
            t,
            "digest_features {}",
            vocabulary_digest(&self.vocab.features)
        )
        .unwrap();
        t.push_str("[schema]\n");
        t.push_str(&self.schema.to_text());
        t.push_str("[banners]\n");
        for (i, name) in self.vocab.banners.names().iter().enumerate() {
            writeln!(
                t,
                "{name}\t{}",
                u8::from(m.seen_banners.get(i).copied().unwrap_or(false))
            )
            .unwrap();
        }
        t.push_str("[domains]\n");
        for (j, name) in self.vocab.domains.names().iter().enumerate() {
            writeln!(
                t,
                "{name}\t{}",
                u8::from(m.seen_domains.get(j).copied().unwrap_or(false))
            )
            .unwrap();
        }
        t.push_str("[features]\n");
        for name in self.vocab.features.names() {
            writeln!(t, "{name}").unwrap();
        }
        t.push_str("[factors]\n");
        if let Some(f) = &m.factors {
            for (tag, rows, n) in [
                ("a", f.row_block(), f.rows()),
                ("b", f.col_block(), f.cols()),
            ] {
                for r in rows.chunks(f.width()).take(n) {
                    let vals: Vec<String> = r.iter().map(|&v| real(v)).collect();
                    writeln!(t, "{tag}\t{}", vals.join("\t")).unwrap();
                }
            }
        }
        t.push_str("[side]\n");
        for (i, &w) in m.side.weights.iter().enumerate() {
            if w != 0.0 {
                writeln!(t, "{i}\t{}", real(w)).unwrap();
            }
        }
        t.push_str("[end]\n");
        t
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| bad("empty file"))?;
        match first.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(bad(format!("unsupported format version {v}"))),
            _ => return Err(bad("missing header")),
        }

        let mut header: Vec<(String, String)> = Vec::new();
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in lines {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line);
            } else {
                let (k, v) = line
                    .split_once(' ')
                    .ok_or_else(|| bad(format!("bad header line '{line}'")))?;
                header.push((k.to_string(), v.to_string()));
            }
        }
        let order: Vec<&str> = sections.iter().map(|(n, _)| n.as_str()).collect();
        if order
            != [
                "schema", "banners", "domains", "features", "factors", "side", "end",
            ]
        {
            return Err(bad(format!("unexpected sections {order:?}")));
        }
        let section = |i: usize| &sections[i].1;
        let get = |key: &str| -> CliResult<&str> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| bad(format!("header lacks '{key}'")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
            v.parse()
                .map_err(|_| bad(format!("bad value '{v}' for '{key}'")))
        }
        let header_num = |key: &str| -> CliResult<f64> { num(key, get(key)?) };

        let family: ModelFamily = get("family")?.parse().map_err(|e| bad(format!("{e}")))?;
        let order = match get("order")? {
            "none" => None,
            v => Some(num::<usize>("order", v)?),
        };
        let m: usize = num("banners", get("banners")?)?;
        let n: usize = num("domains", get("domains")?)?;
        let p: usize = num("features", get("features")?)?;

        let schema =
            Schema::parse(&section(0).join("\n")).map_err(|e| bad(format!("schema: {e}")))?;
        let entities = |body: &Vec<&str>, what: &str| -> CliResult<(Vocabulary, Vec<bool>)> {
            let mut names = Vec::with_capacity(body.len());
            let mut seen = Vec::with_capacity(body.len());
            for line in body {
                let (name, flag) = line
                    .rsplit_once('\t')
                    .ok_or_else(|| bad(format!("bad {what} line '{line}'")))?;
                names.push(name.to_string());
                seen.push(match flag {
                    "1" => true,
                    "0" => false,
                    other => return Err(bad(format!("bad seen flag '{other}'"))),
                });
            }
            let v = Vocabulary::from_names(names).map_err(|e| bad(format!("{what}: {e}")))?;
            Ok((v, seen))
        };
        let (banners, seen_banners) = entities(section(1), "banner")?;
        let (domains, seen_domains) = entities(section(2), "domain")?;
        let features = Vocabulary::from_names(section(3).iter().map(|s| s.to_string()))
            .map_err(|e| bad(format!("features: {e}")))?;
        if (banners.len(), domains.len(), features.len()) != (m, n, p) {
            return Err(bad("vocabulary sizes disagree with the header"));
        }
        for (key, v) in [
            ("digest_banners", &banners),
            ("digest_domains", &domains),
            ("digest_features", &features),
        ] {
            if get(key)? != vocabulary_digest(v) {
                return Err(bad(format!("{key} does not match the stored vocabulary")));
            }
        }

        let factors = match order {
            None => {
                if !section(4).is_empty() {
                    return Err(bad("factor rows present without an order"));
                }
                None
            }
            Some(k) => {
                let mut a = Vec::with_capacity(m * (k + 2));
                let mut b = Vec::with_capacity(n * (k + 2));
                for line in section(4) {
                    let mut cols = line.split('\t');
                    let target = match cols.next() {
                        Some("a") => &mut a,
                        Some("b") => &mut b,
                        _ => return Err(bad(format!("bad factor line '{line}'"))),
                    };
                    let vals: Vec<f64> =
                        cols.map(|v| num("factor", v)).collect::<CliResult<_>>()?;
                    if vals.len() != k + 2 {
                        return Err(bad("factor row has the wrong width"));
                    }
                    target.extend(vals);
                }
                Some(
                    LatentFactors::from_blocks(k, m, n, a, b)
                        .map_err(|e| bad(format!("factors: {e}")))?,
                )
            }
        };

        let mut side = SideModel::zeros(p);
        for line in section(5) {
            let (i, w) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("bad side line '{line}'")))?;
            let i: usize = num("side index", i)?;
            if i >= p {
                return Err(bad(format!("side index {i} out of range")));
            }
            side.weights[i] = num("side weight", w)?;
        }
        side.intercept = header_num("intercept")?;
        side.intercept_correction = header_num("intercept_correction")?;

        let hyper = Hyperparameters {
            order: order.unwrap_or(0),
            latent_penalty: get("penalty")?
                .parse::<Penalty>()
                .map_err(|e| bad(format!("{e}")))?,
            lambda_lr: header_num("lambda_lr")?,
            lambda_bias: header_num("lambda_bias")?,
            lambda_latent: header_num("lambda_latent")?,
            ..Hyperparameters::default()
        };
        let model = CombinedModel {
            factors,
            side,
            seen_banners,
            seen_domains,
            meta: TrainingMeta {
                family,
                alternations: num("alternations", get("alternations")?)?,
                day: num("day", get("day")?)?,
            },
        };
        Ok(ModelFile {
            model,
            hyper,
            vocab: Vocabularies {
                banners,
                domains,
                features,
            },
            schema,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| CliError::data(&format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(&format!("reading {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lflctr_core::synth::{generate, GeneratorConfig};

    fn sample() -> ModelFile {
        let out = generate(&GeneratorConfig {
            banners: 5,
            domains: 4,
            days: 1,
            events_per_day: 50,
            ..Default::default()
        })
        .unwrap();
        let mut model = out.truth;
        model.side.intercept_correction = (0.1f64).ln();
        model.seen_banners[2] = false;
        ModelFile {
            model,
            hyper: Hyperparameters {
                order: 2,
                ..Default::default()
            },
            vocab: out.vocab,
            schema: out.schema,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample();
        let g = ModelFile::parse(&f.to_text()).unwrap();
        assert_eq!(g.model, f.model);
        assert_eq!(g.vocab, f.vocab);
        assert_eq!(g.schema, f.schema);
        assert_eq!(g.to_text(), f.to_text());
    }

    #[test]
    fn side_only_model_has_empty_factor_block() {
        let mut f = sample();
        f.model.factors = None;
        let text = f.to_text();
        assert!(text.contains("order none\n"));
        assert!(text.contains("[factors]\n[side]\n"));
        assert_eq!(ModelFile::parse(&text).unwrap().model.factors, None);
    }

    #[test]
    fn digest_mismatch_is_detected() {
        let text = sample().to_text().replace("b1\t", "bX\t");
        let e = ModelFile::parse(&text).unwrap_err().to_string();
        assert!(e.contains("digest_banners"), "{e}");
    }

    #[test]
    fn version_is_checked() {
        let text = sample()
            .to_text()
            .replacen("lflctr-model 1", "lflctr-model 9", 1);
        assert!(ModelFile::parse(&text)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }
}
