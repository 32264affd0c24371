//! The subcommands, callable without going through argument parsing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use lflctr_core::combined::train_model;
use lflctr_core::ingest::{
    encode, open_log, parse_log, partition_by_day, DatasetDay, RawEvent, Schema, Vocabularies,
};
use lflctr_core::metrics::{
    bootstrap_median_ci, median, per_banner_daily, relative_report, DeltaRow, MedianCi,
    MetricsReport,
};
use lflctr_core::pipeline::{
    prepare_training_days, run_sequential, score_day, staged_sweep, SequentialConfig,
};
use lflctr_core::synth::{generate, to_raw, write_tsv};
use lflctr_core::{EventRecord, Hyperparameters};

use crate::error::{CliError, CliResult};
use crate::model_file::ModelFile;
use crate::settings::{parse_sweep, parse_synth, parse_train, TrainSettings};

/// Bootstrap resamples for the median confidence intervals.
pub const BOOTSTRAP_SAMPLES: usize = 5000;

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::usage(&format!("reading {what} {}", path.display()), e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(&format!("creating {}", dir.display()), e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    let file = File::create(path)
        .map_err(|e| CliError::data(&format!("creating {}", path.display()), e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError {
    let context = format!("writing {}", path.display());
    move |e| CliError::data(&context, e)
}

pub fn load_schema(path: Option<&Path>) -> CliResult<Schema> {
    match path {
        Some(p) => Schema::parse(&read_text(p, "schema")?)
            .map_err(|e| CliError::usage(&p.display().to_string(), e)),
        None => Ok(Schema::default()),
    }
}

pub fn load_train_settings(path: Option<&Path>) -> CliResult<TrainSettings> {
    match path {
        Some(p) => parse_train(&read_text(p, "hyperparameters")?)
            .map_err(|e| CliError::usage(&p.display().to_string(), e)),
        None => Ok(TrainSettings::default()),
    }
}

/// Files matching `pattern`, sorted by path.
pub fn expand_glob(pattern: &str) -> CliResult<Vec<PathBuf>> {
    let paths =
        glob::glob(pattern).map_err(|e| CliError::usage(&format!("bad glob '{pattern}'"), e))?;
    let mut files: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no data files match '{pattern}'")));
    }
    Ok(files)
}

pub fn read_events(pattern: &str) -> CliResult<Vec<RawEvent>> {
    let mut events = Vec::new();
    for path in expand_glob(pattern)? {
        let reader = open_log(&path)
            .map_err(|e| CliError::data(&format!("opening {}", path.display()), e))?;
        let parsed = parse_log(reader)
            .map_err(|e| CliError::data(&format!("reading {}", path.display()), e))?;
        if parsed.malformed > 0 {
            log::warn!(
                "{}: skipped {} malformed line(s)",
                path.display(),
                parsed.malformed
            );
        }
        events.extend(parsed.events);
    }
    if events.is_empty() {
        return Err(CliError::Data(format!(
            "no events in files matching '{pattern}'"
        )));
    }
    Ok(events)
}

fn into_days(events: Vec<EventRecord>, vocab: &Vocabularies) -> Vec<DatasetDay> {
    let dims = vocab.dims();
    partition_by_day(events)
        .into_iter()
        .map(|(day, evs)| DatasetDay::new(day, evs, dims))
        .collect()
}

/// Writes one TSV per day plus `truth.model` and `schema.txt`.
pub fn synth(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<Vec<PathBuf>> {
    let mut cfg = parse_synth(&read_text(config, "synth config")?)
        .map_err(|e| CliError::usage(&config.display().to_string(), e))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let generated = generate(&cfg).map_err(|e| CliError::from_core("generating data", e))?;
    create_dir(out)?;
    let width = cfg.days.saturating_sub(1).to_string().len().max(3);
    let mut written = Vec::new();
    for day in &generated.days {
        let path = out.join(format!("day_{:0width$}.tsv", day.day));
        let raw = to_raw(&day.events, &generated.vocab)
            .map_err(|e| CliError::from_core("decoding events", e))?;
        let file = File::create(&path)
            .map_err(|e| CliError::data(&format!("creating {}", path.display()), e))?;
        write_tsv(BufWriter::new(file), &raw)
            .map_err(|e| CliError::from_core(&format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    let truth = ModelFile {
        hyper: Hyperparameters {
            order: cfg.order,
            ..Hyperparameters::default()
        },
        model: generated.truth,
        vocab: generated.vocab,
        schema: generated.schema.clone(),
    };
    let truth_path = out.join("truth.model");
    truth.save(&truth_path)?;
    written.push(truth_path);
    let schema_path = out.join("schema.txt");
    fs::write(&schema_path, generated.schema.to_text())
        .map_err(|e| CliError::data(&format!("writing {}", schema_path.display()), e))?;
    written.push(schema_path);
    Ok(written)
}

pub struct TrainArgs<'a> {
    pub data: &'a str,
    pub schema: Option<&'a Path>,
    pub hyper: Option<&'a Path>,
    pub warm_start: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: Option<u64>,
}

/// Trains one model on every event matched by the data glob.
pub fn train(args: &TrainArgs<'_>) -> CliResult<ModelFile> {
    let mut settings = load_train_settings(args.hyper)?;
    if let Some(s) = args.seed {
        settings.hyper.seed = s;
    }
    let warm = args.warm_start.map(ModelFile::load).transpose()?;
    let schema = match (args.schema, &warm) {
        (None, Some(w)) => w.schema.clone(),
        (path, _) => load_schema(path)?,
    };
    let raw = read_events(args.data)?;
    let mut vocab = match &warm {
        Some(w) => {
            let mut v = w.vocab.clone();
            v.extend(&raw, &schema);
            v
        }
        None => Vocabularies::build(&raw, &schema),
    };
    let events = encode(&raw, &mut vocab, &schema);
    let days = into_days(events, &vocab);
    let days = prepare_training_days(&days, settings.downsample, settings.hyper.seed)
        .map_err(|e| CliError::from_core("down-sampling", e))?;
    let refs: Vec<&DatasetDay> = days.iter().collect();
    let data = DatasetDay::merge(&refs).map_err(|e| CliError::from_core("merging days", e))?;
    log::info!(
        "training {} on {} events over {} day(s)",
        settings.family,
        data.events.len(),
        days.len()
    );
    let model = train_model(
        &data,
        &settings.hyper,
        settings.family,
        warm.as_ref().map(|w| &w.model),
    )
    .map_err(|e| CliError::from_core("training", e))?;
    let file = ModelFile {
        model,
        hyper: settings.hyper,
        vocab,
        schema,
    };
    file.save(args.out)?;
    Ok(file)
}

/// Test events encoded with the model's vocabulary; unseen banners and
/// domains get fresh indices and fall back to the side model.
fn encode_for(model: &ModelFile, raw: &[RawEvent]) -> (Vec<DatasetDay>, Vocabularies) {
    let mut vocab = model.vocab.clone();
    vocab.freeze_features();
    let events = encode(raw, &mut vocab, &model.schema);
    (into_days(events, &vocab), vocab)
}

/// Sorted banner names in the test events. Reports index banners by
/// position in this list so that models with different vocabularies line up.
fn test_banners(raw: &[RawEvent]) -> Vec<String> {
    let mut names: Vec<String> = raw.iter().map(|e| e.banner.clone()).collect();
    names.sort_unstable();
    names.dedup();
    names
}

fn report_for(
    model: &ModelFile,
    raw: &[RawEvent],
    banners: &[String],
    min_clicks: &[u64],
) -> CliResult<MetricsReport> {
    let (days, vocab) = encode_for(model, raw);
    let mut sets = BTreeMap::new();
    for day in days {
        for ((d, b), set) in score_day(&model.model, &day) {
            let name = vocab.banners.name(b).unwrap_or_default();
            let pos = banners
                .binary_search_by(|n| n.as_str().cmp(name))
                .map_err(|_| {
                    CliError::Data(format!(
                        "banner index {b} has no name in the model vocabulary"
                    ))
                })?;
            sets.insert((d, pos as u32), set);
        }
    }
    per_banner_daily(&sets, min_clicks).map_err(|e| CliError::from_core("computing metrics", e))
}

pub struct EvaluateArgs<'a> {
    pub model: &'a Path,
    pub data: &'a str,
    pub min_clicks: &'a [u64],
    pub out: &'a Path,
    pub baseline: Option<&'a Path>,
    pub seed: u64,
}

fn model_id(path: &Path, fallback: &str) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map_or_else(|| fallback.to_string(), str::to_string)
}

/// Writes `metrics.csv` and `summary.csv` into `out`.
pub fn evaluate(args: &EvaluateArgs<'_>) -> CliResult<(PathBuf, PathBuf)> {
    if args.min_clicks.is_empty() {
        return Err(CliError::Usage(
            "at least one --min-clicks filter is required".into(),
        ));
    }
    let candidate = ModelFile::load(args.model)?;
    let raw = read_events(args.data)?;
    let banners = test_banners(&raw);
    let mut reports = vec![(
        model_id(args.model, "candidate"),
        report_for(&candidate, &raw, &banners, args.min_clicks)?,
    )];
    if let Some(b) = args.baseline {
        let baseline = ModelFile::load(b)?;
        let mut id = model_id(b, "baseline");
        if id == reports[0].0 {
            id.push_str("-baseline");
        }
        reports.push((id, report_for(&baseline, &raw, &banners, args.min_clicks)?));
    }
    write_reports(args.out, &reports, &banners, args.seed)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn ci_fields(ci: Option<MedianCi>) -> [String; 2] {
    [opt(ci.map(|c| c.lo)), opt(ci.map(|c| c.hi))]
}

fn median_ci(values: Vec<f64>, seed: u64) -> CliResult<Option<MedianCi>> {
    if values.is_empty() {
        return Ok(None);
    }
    bootstrap_median_ci(&values, BOOTSTRAP_SAMPLES, 0.05, 0.95, seed)
        .map(Some)
        .map_err(|e| CliError::from_core("bootstrap", e))
}

/// Metrics and summary CSVs. The first report is the candidate; a second
/// one, when present, is the baseline the deltas are taken against.
/// `banners` maps report banner indices to names.
pub fn write_reports(
    out: &Path,
    reports: &[(String, MetricsReport)],
    banners: &[String],
    seed: u64,
) -> CliResult<(PathBuf, PathBuf)> {
    create_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut w = csv_writer(&metrics_path)?;
    let err = csv_err(&metrics_path);
    w.write_record([
        "day",
        "banner_id",
        "n_clicks",
        "n_views",
        "auc",
        "logloss",
        "model_id",
    ])
    .map_err(&err)?;
    for (id, report) in reports {
        for b in &report.banners {
            w.write_record([
                b.day.to_string(),
                banners
                    .get(b.banner as usize)
                    .cloned()
                    .unwrap_or_else(|| b.banner.to_string()),
                b.clicks.to_string(),
                b.views.to_string(),
                opt(b.auc),
                b.logloss.to_string(),
                id.clone(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush()
        .map_err(|e| CliError::data("flushing metrics", e))?;

    let (cand_id, cand) = &reports[0];
    let deltas: Option<Vec<DeltaRow>> = match reports.get(1) {
        Some((_, base)) => Some(
            relative_report(cand, base).map_err(|e| CliError::from_core("comparing reports", e))?,
        ),
        None => None,
    };
    let summary_path = out.join("summary.csv");
    let mut w = csv_writer(&summary_path)?;
    let err = csv_err(&summary_path);
    w.write_record([
        "day",
        "model_id",
        "filter",
        "mean_auc",
        "mean_logloss",
        "delta_auc",
        "delta_logloss",
        "ci_lo",
        "ci_hi",
        "ci_logloss_lo",
        "ci_logloss_hi",
    ])
    .map_err(&err)?;
    for (i, s) in cand.summaries.iter().enumerate() {
        let d = deltas.as_ref().map(|d| &d[i]);
        w.write_record([
            s.day.to_string(),
            cand_id.clone(),
            s.min_clicks.to_string(),
            opt(s.mean_auc),
            opt(s.mean_logloss),
            opt(d.and_then(|d| d.delta_auc)),
            opt(d.and_then(|d| d.delta_logloss)),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(&err)?;
    }
    let mut filters: Vec<u64> = cand.summaries.iter().map(|s| s.min_clicks).collect();
    filters.sort_unstable();
    filters.dedup();
    for f in filters {
        let rows: Vec<usize> = (0..cand.summaries.len())
            .filter(|&i| cand.summaries[i].min_clicks == f)
            .collect();
        let collect = |g: &dyn Fn(usize) -> Option<f64>| -> Vec<f64> {
            rows.iter().filter_map(|&i| g(i)).collect()
        };
        let auc = collect(&|i| cand.summaries[i].mean_auc);
        let ll = collect(&|i| cand.summaries[i].mean_logloss);
        let med = |v: &[f64]| if v.is_empty() { None } else { median(v).ok() };
        let (d_auc, d_ll) = match &deltas {
            Some(d) => (
                collect(&|i| d[i].delta_auc),
                collect(&|i| d[i].delta_logloss),
            ),
            None => (Vec::new(), Vec::new()),
        };
        // intervals cover the median deltas with a baseline, the median means otherwise
        let (auc_ci, ll_ci) = if deltas.is_some() {
            (
                median_ci(d_auc.clone(), seed)?,
                median_ci(d_ll.clone(), seed)?,
            )
        } else {
            (median_ci(auc.clone(), seed)?, median_ci(ll.clone(), seed)?)
        };
        let [lo, hi] = ci_fields(auc_ci);
        let [llo, lhi] = ci_fields(ll_ci);
        w.write_record([
            "median".to_string(),
            cand_id.clone(),
            f.to_string(),
            opt(med(&auc)),
            opt(med(&ll)),
            opt(med(&d_auc)),
            opt(med(&d_ll)),
            lo,
            hi,
            llo,
            lhi,
        ])
        .map_err(&err)?;
    }
    w.flush()
        .map_err(|e| CliError::data("flushing summary", e))?;
    Ok((metrics_path, summary_path))
}

fn load_days(data: &str, schema: &Schema) -> CliResult<(Vec<DatasetDay>, Vocabularies)> {
    let raw = read_events(data)?;
    let mut vocab = Vocabularies::build(&raw, schema);
    let events = encode(&raw, &mut vocab, schema);
    Ok((into_days(events, &vocab), vocab))
}

pub struct SweepArgs<'a> {
    pub data: &'a str,
    pub schema: Option<&'a Path>,
    pub grids: &'a Path,
    pub out: &'a Path,
    pub seed: u64,
}

/// Runs the staged sweep on the first test day and writes every result row.
pub fn sweep(args: &SweepArgs<'_>) -> CliResult<PathBuf> {
    let (grids, settings) = parse_sweep(&read_text(args.grids, "sweep config")?)
        .map_err(|e| CliError::usage(&args.grids.display().to_string(), e))?;
    let (days, _) = load_days(args.data, &load_schema(args.schema)?)?;
    if days.len() <= settings.window {
        return Err(CliError::Data(format!(
            "{} day(s) of data; the sweep needs at least {}",
            days.len(),
            settings.window + 1
        )));
    }
    let cfg = SequentialConfig {
        window: settings.window,
        family: settings.family,
        hyper: settings.hyper,
        downsample: settings.downsample,
        seed: args.seed,
        min_clicks: vec![1],
    };
    let records = staged_sweep(&days, &cfg, &grids).map_err(|e| CliError::from_core("sweep", e))?;
    let mut w = csv_writer(args.out)?;
    let err = csv_err(args.out);
    w.write_record([
        "stage",
        "family",
        "lambda_lr",
        "lambda_bias",
        "lambda_latent",
        "order",
        "penalty",
        "auc",
        "logloss",
        "train_seconds",
    ])
    .map_err(&err)?;
    for r in &records {
        w.write_record([
            r.stage.to_string(),
            r.family.to_string(),
            r.lambda_lr.to_string(),
            r.lambda_bias.to_string(),
            r.lambda_latent.to_string(),
            r.order.to_string(),
            r.penalty.to_string(),
            r.auc.to_string(),
            r.logloss.to_string(),
            format!("{:.3}", r.train_seconds),
        ])
        .map_err(&err)?;
    }
    w.flush()
        .map_err(|e| CliError::data("flushing sweep results", e))?;
    Ok(args.out.to_path_buf())
}

pub struct SequentialArgs<'a> {
    pub data: &'a str,
    pub schema: Option<&'a Path>,
    pub hyper: Option<&'a Path>,
    pub min_clicks: &'a [u64],
    pub out: &'a Path,
    pub seed: u64,
}

/// Rolling-window training and next-day testing over every loaded day.
pub fn sequential(args: &SequentialArgs<'_>) -> CliResult<(PathBuf, PathBuf)> {
    let settings = load_train_settings(args.hyper)?;
    let (days, vocab) = load_days(args.data, &load_schema(args.schema)?)?;
    let cfg = SequentialConfig {
        window: settings.window,
        family: settings.family,
        hyper: settings.hyper,
        downsample: settings.downsample,
        seed: args.seed,
        min_clicks: args.min_clicks.to_vec(),
    };
    let run = run_sequential(&days, &cfg).map_err(|e| CliError::from_core("sequential run", e))?;
    write_reports(
        args.out,
        &[(cfg.family.to_string(), run.report)],
        vocab.banners.names(),
        args.seed,
    )
}
