use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lflctr_cli::model_file::ModelFile;
use tempfile::TempDir;

const SYNTH: &str = "banners = 30\ndomains = 20\ndays = 8\nevents_per_day = 4000\nseed = 5\n";

fn lflctr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lflctr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lflctr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Temp dir holding a synthetic log in `data/`.
fn synth_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "synth.cfg", SYNTH);
    ok(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("data")),
    ]);
    dir
}

fn glob(dir: &Path, pattern: &str) -> String {
    format!("{}/data/{pattern}", dir.display())
}

#[test]
fn synth_writes_one_file_per_day_and_the_truth() {
    let dir = synth_dir();
    let data = dir.path().join("data");
    let days: Vec<_> = fs::read_dir(&data)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".tsv"))
        .collect();
    assert_eq!(days.len(), 8);
    let truth = ModelFile::load(&data.join("truth.model")).unwrap();
    assert_eq!(truth.model.order(), Some(2));
    assert!(data.join("schema.txt").exists());
}

#[test]
fn synth_is_reproducible_for_a_seed() {
    let (a, b) = (synth_dir(), synth_dir());
    for name in ["day_000.tsv", "day_007.tsv", "truth.model"] {
        let read = |d: &TempDir| fs::read(d.path().join("data").join(name)).unwrap();
        assert_eq!(read(&a), read(&b), "{name}");
    }
}

#[test]
fn unknown_hyperparameter_key_is_named() {
    let dir = synth_dir();
    let hyper = write(dir.path(), "h.cfg", "lambda_lr = 2\nlamda_latent = 1\n");
    let out = lflctr(&[
        "train",
        "--data",
        &glob(dir.path(), "day_000.tsv"),
        "--hyper",
        s(&hyper),
        "--out",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda_latent"));
}

#[test]
fn side_only_training_stores_no_factors() {
    let dir = synth_dir();
    let hyper = write(dir.path(), "h.cfg", "family = lr\n");
    let model = dir.path().join("lr.model");
    ok(&[
        "train",
        "--data",
        &glob(dir.path(), "day_00[0-3].tsv"),
        "--hyper",
        s(&hyper),
        "--out",
        s(&model),
    ]);
    let text = fs::read_to_string(&model).unwrap();
    assert!(text.contains("[factors]\n[side]\n"));
    assert!(ModelFile::load(&model).unwrap().model.factors.is_none());
}

#[test]
fn warm_start_runs_one_alternation() {
    let dir = synth_dir();
    let hyper = write(
        dir.path(),
        "h.cfg",
        "family = lr+lfl\norder = 2\nalternations = 3\n",
    );
    let (first, second) = (dir.path().join("a.model"), dir.path().join("b.model"));
    ok(&[
        "train",
        "--data",
        &glob(dir.path(), "day_00[0-3].tsv"),
        "--hyper",
        s(&hyper),
        "--out",
        s(&first),
    ]);
    ok(&[
        "train",
        "--data",
        &glob(dir.path(), "day_00[1-4].tsv"),
        "--hyper",
        s(&hyper),
        "--warm-start",
        s(&first),
        "--out",
        s(&second),
    ]);
    assert_eq!(ModelFile::load(&first).unwrap().model.meta.alternations, 3);
    assert_eq!(ModelFile::load(&second).unwrap().model.meta.alternations, 1);
}

#[test]
fn missing_data_names_the_glob() {
    let out = lflctr(&["train", "--data", "/nonexistent/dir/*.tsv", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/dir/*.tsv"));
}

#[test]
fn empty_test_file_is_a_data_error() {
    let dir = synth_dir();
    let model = dir.path().join("m.model");
    ok(&[
        "train",
        "--data",
        &glob(dir.path(), "day_000.tsv"),
        "--out",
        s(&model),
    ]);
    let empty = write(dir.path(), "empty.tsv", "");
    let out = lflctr(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&empty),
        "--out",
        s(&dir.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn evaluation_with_baseline_reports_deltas_per_filter() {
    let dir = synth_dir();
    let lfl = write(dir.path(), "lfl.cfg", "family = lr+lfl\norder = 2\n");
    let (cand, base) = (dir.path().join("cand.model"), dir.path().join("base.model"));
    let train = glob(dir.path(), "day_00[0-5].tsv");
    ok(&[
        "train",
        "--data",
        &train,
        "--hyper",
        s(&lfl),
        "--out",
        s(&cand),
    ]);
    ok(&["train", "--data", &train, "--out", s(&base)]);
    let ev = dir.path().join("ev");
    ok(&[
        "evaluate",
        "--model",
        s(&cand),
        "--baseline",
        s(&base),
        "--data",
        &glob(dir.path(), "day_00[67].tsv"),
        "--min-clicks",
        "1,10",
        "--out",
        s(&ev),
    ]);
    let summary = csv_rows(&ev.join("summary.csv"));
    let daily: Vec<_> = summary.iter().filter(|r| &r[0] != "median").collect();
    assert_eq!(daily.len(), 4);
    for day in ["6", "7"] {
        let filters: Vec<&str> = daily
            .iter()
            .filter(|r| &r[0] == day)
            .map(|r| r.get(2).unwrap())
            .collect();
        assert_eq!(filters, ["1", "10"]);
    }
    assert!(daily.iter().all(|r| !r[5].is_empty() && !r[6].is_empty()));
    let medians: Vec<_> = summary.iter().filter(|r| &r[0] == "median").collect();
    assert_eq!(medians.len(), 2);
    assert!(medians
        .iter()
        .all(|r| r[7].parse::<f64>().unwrap() <= r[8].parse::<f64>().unwrap()));

    let metrics = csv_rows(&ev.join("metrics.csv"));
    assert!(metrics.iter().any(|r| &r[6] == "cand"));
    assert!(metrics.iter().any(|r| &r[6] == "base"));
    assert!(metrics.iter().all(|r| r[1].starts_with('b')));
}

#[test]
fn sweep_writes_every_stage() {
    let dir = synth_dir();
    let grids = write(
        dir.path(),
        "grids.cfg",
        "window = 3\ngrid_lambda_lr = 2,4\ngrid_lambda_bias = 3\ngrid_lambda_latent = 1\ngrid_order = 2\n",
    );
    let out = dir.path().join("sweep.csv");
    ok(&[
        "sweep",
        "--data",
        &glob(dir.path(), "*.tsv"),
        "--grids",
        s(&grids),
        "--out",
        s(&out),
    ]);
    let rows = csv_rows(&out);
    for stage in ["1", "2", "3", "4"] {
        assert!(rows.iter().any(|r| &r[0] == stage), "stage {stage} missing");
    }
    assert!(rows.iter().all(|r| r[7].parse::<f64>().unwrap() > 0.5));
}

#[test]
fn sequential_run_scores_days_after_the_window() {
    let dir = synth_dir();
    let hyper = write(
        dir.path(),
        "h.cfg",
        "family = lr+lfl\norder = 2\nwindow = 6\n",
    );
    let out = dir.path().join("seq");
    ok(&[
        "sequential",
        "--data",
        &glob(dir.path(), "*.tsv"),
        "--hyper",
        s(&hyper),
        "--out",
        s(&out),
    ]);
    let days: Vec<String> = csv_rows(&out.join("summary.csv"))
        .iter()
        .map(|r| r[0].to_string())
        .collect();
    assert_eq!(days, ["6", "6", "7", "7", "median", "median"]);
}

#[test]
fn bad_subcommand_is_a_usage_error() {
    assert_eq!(lflctr(&["frobnicate"]).status.code(), Some(1));
}
