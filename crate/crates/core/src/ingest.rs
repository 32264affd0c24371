//! Event-log parsing, vocabularies, feature encoding, negative down-sampling
//! and dyad aggregation.
//!
//! Log format: UTF-8 TSV with columns `day`, `banner_id`, `domain_id`,
//! `label` (0/1) and `features`, the last being `|`-separated `name=value`
//! pairs (a bare `name` means presence). Gzip input is detected by magic bytes.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DyadAggregate, DyadKey, EventRecord, SparseFeatureVector};
use crate::error::{Error, Result};

/// Separator between a feature key and the banner id in a cross feature.
pub const CROSS_SEPARATOR: char = '×';

/// An event as it appears in the log, before encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub day: u32,
    pub banner: String,
    pub domain: String,
    pub label: bool,
    /// `(name, value)`; `None` means a presence-only attribute.
    pub features: Vec<(String, Option<String>)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLog {
    pub events: Vec<RawEvent>,
    /// Lines skipped because they did not match the schema.
    pub malformed: usize,
}

fn parse_line(line: &str) -> Option<RawEvent> {
    let mut cols = line.split('\t');
    let day = cols.next()?.trim().parse::<u32>().ok()?;
    let banner = cols.next()?.trim();
    let domain = cols.next()?.trim();
    let label = match cols.next()?.trim() {
        "0" => false,
        "1" => true,
        _ => return None,
    };
    let feats = cols.next().unwrap_or("");
    if cols.next().is_some() || banner.is_empty() || domain.is_empty() {
        return None;
    }
    let mut features = Vec::new();
    for item in feats.split('|').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once('=') {
            Some(("", _)) => return None,
            Some((name, value)) => features.push((name.to_string(), Some(value.to_string()))),
            None => features.push((item.to_string(), None)),
        }
    }
    Some(RawEvent {
        day,
        banner: banner.to_string(),
        domain: domain.to_string(),
        label,
        features,
    })
}

/// Parses a TSV event stream. Malformed lines are counted and skipped;
/// blank lines and lines starting with `#` are ignored.
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_line(trimmed) {
            Some(ev) => out.events.push(ev),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

/// Opens a log file, transparently decompressing gzip.
pub fn open_log(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Which attributes become features, which are crossed with the banner id,
/// and how the feature vocabulary is truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    /// Attribute names to keep; empty keeps every attribute.
    pub attributes: Vec<String>,
    /// Attributes that additionally emit a `key×banner` cross feature.
    pub crosses: Vec<String>,
    /// Minimum number of occurrences for a feature to enter the vocabulary.
    pub min_count: usize,
    /// Keep only the most frequent features.
    pub top_k: Option<usize>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            attributes: Vec::new(),
            crosses: Vec::new(),
            min_count: 1,
            top_k: None,
        }
    }
}

impl Schema {
    /// Parses `key = value` lines: `attributes`, `cross`, `min_count`, `top_k`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Schema::default();
        for (key, value) in crate::config::parse_pairs(text)? {
            match key.as_str() {
                "attributes" => s.attributes = crate::config::list(&value),
                "cross" | "crosses" => s.crosses = crate::config::list(&value),
                "min_count" => s.min_count = crate::config::number(&key, &value)?,
                "top_k" => s.top_k = Some(crate::config::number(&key, &value)?),
                other => return Err(Error::invalid(format!("unknown schema key '{other}'"))),
            }
        }
        Ok(s)
    }

    /// Canonical text form; parsing it yields an equal schema.
    pub fn to_text(&self) -> String {
        let mut t = format!(
            "attributes = {}\ncross = {}\nmin_count = {}\n",
            self.attributes.join(","),
            self.crosses.join(","),
            self.min_count
        );
        if let Some(k) = self.top_k {
            t.push_str(&format!("top_k = {k}\n"));
        }
        t
    }

    fn keeps(&self, name: &str) -> bool {
        self.attributes.is_empty() || self.attributes.iter().any(|a| a == name)
    }

    fn crosses(&self, name: &str) -> bool {
        self.crosses.iter().any(|a| a == name)
    }

    /// Feature keys of one raw event (duplicates possible).
    pub fn feature_keys(&self, ev: &RawEvent) -> Vec<String> {
        let mut keys = Vec::with_capacity(ev.features.len());
        for (name, value) in &ev.features {
            if !self.keeps(name) {
                continue;
            }
            let key = match value {
                Some(v) => format!("{name}={v}"),
                None => name.clone(),
            };
            if self.crosses(name) {
                keys.push(format!("{key}{CROSS_SEPARATOR}{}", ev.banner));
            }
            keys.push(key);
        }
        keys
    }
}

/// Injective map from raw string keys to dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
    names: Vec<String>,
    frozen: bool,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Result<Self> {
        let mut v = Vocabulary::new();
        for n in names {
            if v.index.contains_key(&n) {
                return Err(Error::invalid(format!("duplicate vocabulary entry '{n}'")));
            }
            v.insert(&n);
        }
        Ok(v)
    }

    /// Two-pass build: keys ordered by descending count then lexicographically,
    /// dropping keys seen fewer than `min_count` times and keeping at most `top_k`.
    pub fn from_counts(
        counts: &HashMap<String, usize>,
        min_count: usize,
        top_k: Option<usize>,
    ) -> Self {
        let mut keys: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count.max(1))
            .map(|(k, &c)| (k, c))
            .collect();
        keys.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(k) = top_k {
            keys.truncate(k);
        }
        let mut v = Vocabulary::new();
        for (k, _) in keys {
            v.insert(k);
        }
        v
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    /// Index of `key`, adding it unless frozen.
    pub fn insert(&mut self, key: &str) -> Option<u32> {
        if let Some(&i) = self.index.get(key) {
            return Some(i);
        }
        if self.frozen {
            return None;
        }
        let i = self.names.len() as u32;
        self.index.insert(key.to_string(), i);
        self.names.push(key.to_string());
        Some(i)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: u32) -> Option<&str> {
        self.names.get(i as usize).map(String::as_str)
    }
}

/// Banner, domain and feature vocabularies.
///
/// Banner and domain vocabularies always grow on unseen ids so that new
/// entities still get an index (they become cold-start rows/columns). Only
/// the feature vocabulary honors freezing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub banners: Vocabulary,
    pub domains: Vocabulary,
    pub features: Vocabulary,
}

/// Vocabulary sizes, i.e. M, N and P.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Dims {
    pub banners: usize,
    pub domains: usize,
    pub features: usize,
}

impl Vocabularies {
    pub fn build(events: &[RawEvent], schema: &Schema) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ev in events {
            for k in schema.feature_keys(ev) {
                *counts.entry(k).or_default() += 1;
            }
        }
        let mut banners: Vec<&str> = events.iter().map(|e| e.banner.as_str()).collect();
        let mut domains: Vec<&str> = events.iter().map(|e| e.domain.as_str()).collect();
        banners.sort_unstable();
        banners.dedup();
        domains.sort_unstable();
        domains.dedup();
        let mut v = Vocabularies {
            banners: Vocabulary::new(),
            domains: Vocabulary::new(),
            features: Vocabulary::from_counts(&counts, schema.min_count, schema.top_k),
        };
        for b in banners {
            v.banners.insert(b);
        }
        for d in domains {
            v.domains.insert(d);
        }
        v
    }

    /// Adds banners, domains and (if not frozen) features from new events,
    /// keeping every existing index.
    pub fn extend(&mut self, events: &[RawEvent], schema: &Schema) {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ev in events {
            for k in schema.feature_keys(ev) {
                *counts.entry(k).or_default() += 1;
            }
        }
        let fresh = Vocabulary::from_counts(&counts, schema.min_count, None);
        for name in fresh.names() {
            self.features.insert(name);
        }
        let mut banners: Vec<&str> = events.iter().map(|e| e.banner.as_str()).collect();
        banners.sort_unstable();
        for b in banners {
            self.banners.insert(b);
        }
        let mut domains: Vec<&str> = events.iter().map(|e| e.domain.as_str()).collect();
        domains.sort_unstable();
        for d in domains {
            self.domains.insert(d);
        }
    }

    pub fn freeze_features(&mut self) {
        self.features.freeze();
    }

    pub fn dims(&self) -> Dims {
        Dims {
            banners: self.banners.len(),
            domains: self.domains.len(),
            features: self.features.len(),
        }
    }
}

/// One-of-K encoding plus banner crosses. Unknown features under a frozen
/// vocabulary are dropped; every indicator value is 1.0.
pub fn encode(events: &[RawEvent], vocab: &mut Vocabularies, schema: &Schema) -> Vec<EventRecord> {
    events
        .iter()
        .map(|ev| {
            let banner = vocab
                .banners
                .insert(&ev.banner)
                .expect("entity vocabularies never freeze");
            let domain = vocab
                .domains
                .insert(&ev.domain)
                .expect("entity vocabularies never freeze");
            let idx: Vec<u32> = schema
                .feature_keys(ev)
                .iter()
                .filter_map(|k| vocab.features.insert(k))
                .collect();
            EventRecord {
                day: ev.day,
                key: DyadKey::new(banner, domain),
                label: ev.label,
                features: SparseFeatureVector::indicators(idx),
            }
        })
        .collect()
}

/// Outcome of negative down-sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsampleStats {
    pub negatives_seen: u64,
    pub negatives_kept: u64,
}

impl DownsampleStats {
    /// Achieved keep rate of negatives; 1 when there were none.
    pub fn keep_rate(&self) -> f64 {
        if self.negatives_seen == 0 {
            1.0
        } else {
            self.negatives_kept as f64 / self.negatives_seen as f64
        }
    }

    pub fn merge(self, other: DownsampleStats) -> DownsampleStats {
        DownsampleStats {
            negatives_seen: self.negatives_seen + other.negatives_seen,
            negatives_kept: self.negatives_kept + other.negatives_kept,
        }
    }
}

/// Keeps every positive and each negative independently with probability `1/factor`.
pub fn downsample_negatives(
    events: Vec<EventRecord>,
    factor: f64,
    seed: u64,
) -> Result<(Vec<EventRecord>, DownsampleStats)> {
    if factor.is_nan() || factor < 1.0 || factor.is_infinite() {
        return Err(Error::invalid(format!(
            "down-sampling factor must be >= 1, got {factor}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / factor;
    let mut stats = DownsampleStats {
        negatives_seen: 0,
        negatives_kept: 0,
    };
    let kept = events
        .into_iter()
        .filter(|ev| {
            if ev.label {
                return true;
            }
            stats.negatives_seen += 1;
            let k = factor == 1.0 || rng.random::<f64>() < keep;
            stats.negatives_kept += k as u64;
            k
        })
        .collect();
    Ok((kept, stats))
}

/// One aggregate per distinct dyad, ordered by key.
pub fn aggregate(events: &[EventRecord]) -> Vec<DyadAggregate> {
    let mut counts: BTreeMap<DyadKey, (u64, u64)> = BTreeMap::new();
    for ev in events {
        let c = counts.entry(ev.key).or_default();
        c.0 += ev.label as u64;
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(k, (c, v))| DyadAggregate::new(k, c, v).expect("counts are consistent"))
        .collect()
}

/// Feature vectors of each dyad, multiplicity preserved, ordered by key.
pub fn group_by_dyad(events: &[EventRecord]) -> BTreeMap<DyadKey, Vec<&SparseFeatureVector>> {
    let mut groups: BTreeMap<DyadKey, Vec<&SparseFeatureVector>> = BTreeMap::new();
    for ev in events {
        groups.entry(ev.key).or_default().push(&ev.features);
    }
    groups
}

/// Splits events by their day field.
pub fn partition_by_day(events: Vec<EventRecord>) -> BTreeMap<u32, Vec<EventRecord>> {
    let mut days: BTreeMap<u32, Vec<EventRecord>> = BTreeMap::new();
    for ev in events {
        days.entry(ev.day).or_default().push(ev);
    }
    days
}

/// Training or test data of one day (or a merged window of days).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDay {
    pub day: u32,
    pub events: Vec<EventRecord>,
    pub aggregates: Vec<DyadAggregate>,
    pub dims: Dims,
    /// Nominal negative down-sampling factor (1 = none).
    pub downsample_factor: f64,
    pub downsample: DownsampleStats,
}

impl DatasetDay {
    /// Un-sampled day.
    pub fn new(day: u32, events: Vec<EventRecord>, dims: Dims) -> Self {
        let negatives = events.iter().filter(|e| !e.label).count() as u64;
        let aggregates = aggregate(&events);
        DatasetDay {
            day,
            events,
            aggregates,
            dims,
            downsample_factor: 1.0,
            downsample: DownsampleStats {
                negatives_seen: negatives,
                negatives_kept: negatives,
            },
        }
    }

    /// Down-sampled copy; aggregates are recomputed from the kept events.
    pub fn downsampled(&self, factor: f64, seed: u64) -> Result<DatasetDay> {
        let (events, stats) = downsample_negatives(self.events.clone(), factor, seed)?;
        // negatives removed by an earlier pass still count as seen
        let stats = DownsampleStats {
            negatives_seen: self.downsample.negatives_seen,
            negatives_kept: stats.negatives_kept,
        };
        let aggregates = aggregate(&events);
        Ok(DatasetDay {
            day: self.day,
            events,
            aggregates,
            dims: self.dims,
            downsample_factor: self.downsample_factor * factor,
            downsample: stats,
        })
    }

    /// Concatenates days into one training window labelled with the last day.
    pub fn merge(days: &[&DatasetDay]) -> Result<DatasetDay> {
        let last = days
            .last()
            .ok_or_else(|| Error::invalid("cannot merge zero days"))?;
        let mut events = Vec::with_capacity(days.iter().map(|d| d.events.len()).sum());
        let mut stats = DownsampleStats {
            negatives_seen: 0,
            negatives_kept: 0,
        };
        let mut dims = Dims::default();
        for d in days {
            events.extend(d.events.iter().cloned());
            stats = stats.merge(d.downsample);
            dims.banners = dims.banners.max(d.dims.banners);
            dims.domains = dims.domains.max(d.dims.domains);
            dims.features = dims.features.max(d.dims.features);
        }
        let aggregates = aggregate(&events);
        Ok(DatasetDay {
            day: last.day,
            events,
            aggregates,
            dims,
            downsample_factor: last.downsample_factor,
            downsample: stats,
        })
    }

    pub fn keep_rate(&self) -> f64 {
        self.downsample.keep_rate()
    }

    pub fn clicks(&self) -> u64 {
        self.events.iter().filter(|e| e.label).count() as u64
    }

    /// Click rate of the (possibly down-sampled) events.
    pub fn base_rate(&self) -> f64 {
        if self.events.is_empty() {
            0.0
        } else {
            self.clicks() as f64 / self.events.len() as f64
        }
    }
}
