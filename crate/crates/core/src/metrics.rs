//! Evaluation: AUC, logistic loss, per-banner daily averages, deltas against
//! a baseline and bootstrap confidence intervals for medians.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::clamp_prob;

/// Scores and binary labels of a set of impressions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid("scores and labels differ in length"));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("scores must be probabilities in [0, 1]"));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn push(&mut self, score: f64, label: bool) {
        debug_assert!((0.0..=1.0).contains(&score));
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len().max(1) as f64
    }
}

/// Mann–Whitney AUC with midranks for tied scores.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    let neg = set.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative",
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && set.scores[order[end]] == set.scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their average
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| set.labels[i]).count();
        rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean logistic loss with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn logloss(set: &ScoredSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::UndefinedMetric("log loss of an empty set"));
    }
    let total: f64 = set
        .scores
        .iter()
        .zip(&set.labels)
        .map(|(&s, &y)| {
            let p = clamp_prob(s);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / set.len() as f64)
}

/// Metrics of one banner on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct BannerDayMetrics {
    pub day: u32,
    pub banner: u32,
    pub clicks: u64,
    pub views: u64,
    /// Undefined without both clicks and non-clicks.
    pub auc: Option<f64>,
    pub logloss: f64,
}

/// Unweighted per-banner means for one day and one click filter.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySummary {
    pub day: u32,
    pub min_clicks: u64,
    pub mean_auc: Option<f64>,
    pub auc_banners: usize,
    pub mean_logloss: Option<f64>,
    pub logloss_banners: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub banners: Vec<BannerDayMetrics>,
    pub summaries: Vec<DailySummary>,
}

impl MetricsReport {
    pub fn summary(&self, day: u32, min_clicks: u64) -> Option<&DailySummary> {
        self.summaries
            .iter()
            .find(|s| s.day == day && s.min_clicks == min_clicks)
    }

    pub fn days(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.summaries.iter().map(|s| s.day).collect();
        d.dedup();
        d
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Per-banner metrics and daily averages.
///
/// For each filter `f` a banner enters the AUC mean when it has at least
/// `max(f, 1)` clicks and at least one non-click, and enters the log-loss
/// mean when it has at least `f` clicks (so `f = 0` includes clickless banners).
pub fn per_banner_daily(
    sets: &BTreeMap<(u32, u32), ScoredSet>,
    min_clicks: &[u64],
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for (&(day, banner), set) in sets {
        if set.is_empty() {
            continue;
        }
        let clicks = set.positives() as u64;
        report.banners.push(BannerDayMetrics {
            day,
            banner,
            clicks,
            views: set.len() as u64,
            auc: auc(set).ok(),
            logloss: logloss(set)?,
        });
    }
    let mut days: Vec<u32> = report.banners.iter().map(|b| b.day).collect();
    days.dedup();
    for day in days {
        let rows: Vec<&BannerDayMetrics> = report.banners.iter().filter(|b| b.day == day).collect();
        for &f in min_clicks {
            let aucs: Vec<f64> = rows
                .iter()
                .filter(|b| b.clicks >= f.max(1))
                .filter_map(|b| b.auc)
                .collect();
            let losses: Vec<f64> = rows
                .iter()
                .filter(|b| b.clicks >= f)
                .map(|b| b.logloss)
                .collect();
            report.summaries.push(DailySummary {
                day,
                min_clicks: f,
                mean_auc: mean(&aucs),
                auc_banners: aucs.len(),
                mean_logloss: mean(&losses),
                logloss_banners: losses.len(),
            });
        }
    }
    Ok(report)
}

/// Candidate minus baseline daily means. Positive AUC deltas and negative
/// log-loss deltas are improvements.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub day: u32,
    pub min_clicks: u64,
    pub delta_auc: Option<f64>,
    pub delta_logloss: Option<f64>,
}

pub fn relative_report(
    candidate: &MetricsReport,
    baseline: &MetricsReport,
) -> Result<Vec<DeltaRow>> {
    candidate
        .summaries
        .iter()
        .map(|c| {
            let b = baseline.summary(c.day, c.min_clicks).ok_or_else(|| {
                Error::invalid(format!(
                    "baseline has no summary for day {} with min_clicks {}",
                    c.day, c.min_clicks
                ))
            })?;
            let diff = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| x - y);
            Ok(DeltaRow {
                day: c.day,
                min_clicks: c.min_clicks,
                delta_auc: diff(c.mean_auc, b.mean_auc),
                delta_logloss: diff(c.mean_logloss, b.mean_logloss),
            })
        })
        .collect()
}

/// Median and a bootstrap percentile interval for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianCi {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of no values"));
    }
    Ok(median_in_place(&mut values.to_vec()))
}

/// Resamples `values` with replacement `samples` times and returns the
/// sample median with the `lo`/`hi` quantiles of the resampled medians.
pub fn bootstrap_median_ci(
    values: &[f64],
    samples: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<MedianCi> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap of no values"));
    }
    if samples == 0 || !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::invalid(
            "bootstrap needs samples > 0 and 0 <= lo <= hi <= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut buf = vec![0.0; n];
    let mut medians: Vec<f64> = (0..samples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..n)];
            }
            median_in_place(&mut buf)
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    Ok(MedianCi {
        median: median(values)?,
        lo: quantile_sorted(&medians, lo),
        hi: quantile_sorted(&medians, hi),
    })
}

/// Median delta with its bootstrap interval, over days, for one filter.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSummary {
    pub min_clicks: u64,
    pub auc: Option<MedianCi>,
    pub logloss: Option<MedianCi>,
}

pub fn summarize_deltas(rows: &[DeltaRow], samples: usize, seed: u64) -> Result<Vec<DeltaSummary>> {
    let mut filters: Vec<u64> = rows.iter().map(|r| r.min_clicks).collect();
    filters.sort_unstable();
    filters.dedup();
    filters
        .into_iter()
        .map(|f| {
            let pick = |g: fn(&DeltaRow) -> Option<f64>| -> Result<Option<MedianCi>> {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.min_clicks == f)
                    .filter_map(g)
                    .collect();
                if v.is_empty() {
                    Ok(None)
                } else {
                    bootstrap_median_ci(&v, samples, 0.05, 0.95, seed).map(Some)
                }
            };
            Ok(DeltaSummary {
                min_clicks: f,
                auc: pick(|r| r.delta_auc)?,
                logloss: pick(|r| r.delta_logloss)?,
            })
        })
        .collect()
}
