use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tcl::cmd::{self, AnalyzeArgs, EvalArgs, SplitChoice, TrainArgs, VerifyArgs};
use tcl::io::{load_checkpoint, read_embeddings, read_metrics, save_checkpoint, METRICS_COLUMNS};
use tcl::manifest::RunManifest;
use tcl::CliError;
use tcl_core::analysis::cluster_metrics;
use tcl_core::encoder::PosteriorGaussian;
use tcl_core::trainer::{Mode, TrainConfig};
use tcl_core::verify::VerifyHooks;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tcl"));
    c.env_remove("TCL_RUN_ROOT").env("RUST_LOG", "warn").env("RAYON_NUM_THREADS", "4");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn smoke(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--preset", "smoke", "--run-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn trained(tmp: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let dir = tmp.path().join(name);
    let o = smoke(&dir, extra);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn train_args(dir: &Path) -> TrainArgs {
    TrainArgs {
        preset: Some("smoke".into()),
        run_dir: Some(dir.into()),
        ..Default::default()
    }
}

#[test]
fn train_writes_a_self_describing_run() {
    let tmp = TempDir::new().unwrap();
    let dir = trained(&tmp, "run", &["--seed", "3"]);
    let manifest = RunManifest::read(&dir).unwrap();
    assert_eq!(manifest.seed, 3);
    assert_eq!(manifest.mode, Mode::Tcl);
    let rows = read_metrics(&dir.join(&manifest.artifacts.metrics)).unwrap();
    assert!(!rows.is_empty());
    assert_eq!(rows.last().unwrap().step, manifest.end_step);
    assert!(rows.windows(2).all(|w| w[0].step < w[1].step));

    // The config snapshot alone reproduces the run.
    let again = tmp.path().join("again");
    let o = run(&[
        "train",
        "--config",
        dir.join("config.toml").to_str().unwrap(),
        "--run-dir",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.join("metrics.csv")).unwrap(),
        fs::read(again.join("metrics.csv")).unwrap()
    );
}

#[test]
fn metrics_csv_schema() {
    let tmp = TempDir::new().unwrap();
    let dir = trained(&tmp, "oracle", &["--mode", "oracle"]);
    let text = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 8);
        // No contrastive loss, accuracy or KL without an encoder.
        assert_eq!((cells[1], cells[2], cells[5]), ("", "", ""));
    }
}

#[test]
fn parallel_collection_matches_sequential_bytes() {
    let tmp = TempDir::new().unwrap();
    let a = trained(&tmp, "seq", &[]);
    let b = trained(&tmp, "par", &["--parallel"]);
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn manifest_is_never_replaced() {
    let tmp = TempDir::new().unwrap();
    let dir = trained(&tmp, "run", &[]);
    let before = fs::read(dir.join("manifest.json")).unwrap();
    let o = smoke(&dir, &["--seed", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("manifest.json"));
    assert_eq!(fs::read(dir.join("manifest.json")).unwrap(), before);
}

#[test]
fn run_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = bin()
        .args(["train", "--preset", "smoke", "--mode", "baseline"])
        .env("TCL_RUN_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .args(["train", "--preset", "smoke", "--mode", "baseline"])
        .env("TCL_RUN_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("baseline-seed0/manifest.json").exists());
    assert!(tmp.path().join("baseline-seed0-1/manifest.json").exists());
    let snapshot = fs::read_to_string(tmp.path().join("baseline-seed0/config.toml")).unwrap();
    assert!(snapshot.contains("tcl_scale = 0.0"), "{snapshot}");
}

#[test]
fn missing_config_names_the_path() {
    let o = run(&["train", "--config", "/nonexistent/run.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/run.toml"));
}

#[test]
fn bad_config_keys_are_each_diagnosed() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "preset = \"smoke\"\nhorizon = \"long\"\nlearning_rate = 0.1\nwindow_size = 4\n").unwrap();
    let o = run(&["train", "--config", path.to_str().unwrap(), "--run-dir", tmp.path().join("r").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("horizon:"), "{err}");
    assert!(err.contains("learning_rate: unknown key"), "{err}");
    assert!(!err.contains("window_size"), "{err}");
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn contradictory_mode_and_scale() {
    let o = run(&["train", "--mode", "baseline", "--tcl-scale", "5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("tcl_scale"));
}

#[test]
fn config_file_and_flags_layer() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("c.toml");
    fs::write(&path, "preset = \"smoke\"\nseed = 5\nkl_weight = 1\n").unwrap();
    let dir = tmp.path().join("r");
    let args = TrainArgs {
        config: Some(path),
        seed: Some(6),
        set: vec!["momentum=0.9".into()],
        run_dir: Some(dir.clone()),
        ..Default::default()
    };
    let outcome = cmd::train(&args, &mut Vec::new()).unwrap();
    let expected = TrainConfig {
        seed: 6,
        kl_weight: 1.0,
        momentum: 0.9,
        ..TrainConfig::preset("smoke").unwrap()
    };
    assert_eq!(outcome.config, expected);
    assert_eq!(RunManifest::read(&dir).unwrap().config, expected);
}

#[test]
fn checkpoint_round_trips_exactly() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    cmd::train(&train_args(&dir), &mut Vec::new()).unwrap();
    let ckpt = load_checkpoint(&dir.join("checkpoint.json")).unwrap();
    let copy = tmp.path().join("copy.json");
    save_checkpoint(&copy, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&copy).unwrap(), ckpt);
}

fn eval_args(ckpt: PathBuf, out: PathBuf) -> EvalArgs {
    EvalArgs {
        checkpoint: ckpt,
        config: None,
        n_exploration: Some(2),
        n_eval: Some(3),
        seed: Some(11),
        split: SplitChoice::Test,
        out: Some(out),
    }
}

#[test]
fn eval_is_repeatable_and_reports_every_task() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    cmd::train(&train_args(&dir), &mut Vec::new()).unwrap();
    let ckpt = dir.join("checkpoint.json");
    let mut text = Vec::new();
    let first = cmd::eval(&eval_args(ckpt.clone(), tmp.path().join("a.csv")), &mut text).unwrap();
    cmd::eval(&eval_args(ckpt, tmp.path().join("b.csv")), &mut Vec::new()).unwrap();
    assert_eq!(first.evaluations.len(), 2);
    assert!(first.evaluations.iter().all(|e| e.returns.len() == 3));
    let a = fs::read_to_string(tmp.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("b.csv")).unwrap());
    assert_eq!(a.lines().count(), 3);
    assert!(String::from_utf8(text).unwrap().contains('±'));
}

#[test]
fn eval_rejects_zero_rollouts_and_foreign_configs() {
    let tmp = TempDir::new().unwrap();
    let dir = trained(&tmp, "r", &[]);
    let ckpt = dir.join("checkpoint.json");
    let o = run(&["eval", ckpt.to_str().unwrap(), "--n-eval", "0"]);
    assert!(!o.status.success());

    let own = run(&["eval", ckpt.to_str().unwrap(), "--config", dir.join("config.toml").to_str().unwrap()]);
    assert!(own.status.success(), "{}", stderr(&own));

    let other = tmp.path().join("other.toml");
    fs::write(&other, "preset = \"smoke\"\nseed = 9\n").unwrap();
    let o = run(&["eval", ckpt.to_str().unwrap(), "--config", other.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_a_checkpoint_that_contradicts_its_config() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    cmd::train(&train_args(&dir), &mut Vec::new()).unwrap();
    let path = dir.join("checkpoint.json");
    let mut json: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    json["config"]["policy_hidden"] = serde_json::json!([32]);
    fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
    let err = cmd::eval(&eval_args(path, tmp.path().join("x.csv")), &mut Vec::new()).unwrap_err();
    assert!(matches!(err, CliError::Mismatch(_)), "{err}");
}

fn analyze_args(ckpt: PathBuf, out: PathBuf) -> AnalyzeArgs {
    AnalyzeArgs {
        checkpoint: ckpt,
        split: SplitChoice::Train,
        tasks: Vec::new(),
        rollouts: 3,
        windows: 2,
        window_size: None,
        seed: Some(2),
        out: Some(out),
    }
}

#[test]
fn analysis_exports_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    cmd::train(&train_args(&dir), &mut Vec::new()).unwrap();
    let out = tmp.path().join("analysis");
    let outcome = cmd::analyze(&analyze_args(dir.join("checkpoint.json"), out.clone()), &mut Vec::new()).unwrap();
    assert_eq!(outcome.points, 3 * 3 * 2);

    let projection = fs::read_to_string(out.join("projection.csv")).unwrap();
    assert_eq!(projection.lines().next(), Some("x,y,label"));
    assert_eq!(projection.lines().count() - 1, outcome.points);

    let set = read_embeddings(&out.join("embeddings.csv")).unwrap();
    assert_eq!(set.len(), outcome.points);
    assert_eq!(set.dim(), Some(5));
    let recomputed = cluster_metrics(&set).unwrap();
    assert_eq!(recomputed, outcome.metrics);

    let report: toml::Table = fs::read_to_string(out.join(cmd::REPORT_FILE)).unwrap().parse().unwrap();
    assert_eq!(report["ratio"].as_float(), Some(outcome.metrics.ratio()));
}

#[test]
fn analysis_of_one_task_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    cmd::train(&train_args(&dir), &mut Vec::new()).unwrap();
    let mut args = analyze_args(dir.join("checkpoint.json"), tmp.path().join("a"));
    args.tasks = vec![1];
    assert!(matches!(cmd::analyze(&args, &mut Vec::new()), Err(CliError::Usage(_))));
    args.tasks = vec![0, 7];
    assert!(cmd::analyze(&args, &mut Vec::new()).is_err());
}

#[test]
fn analysis_of_an_oracle_checkpoint_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let dir = trained(&tmp, "r", &["--mode", "oracle"]);
    let o = run(&["analyze", dir.join("checkpoint.json").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn verify_passes_on_a_pristine_build() {
    let o = run(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(!table.contains("FAIL"));
}

fn flipped(a: &PosteriorGaussian, b: &PosteriorGaussian) -> f64 {
    -tcl_core::tcl::similarity(a, b)
}

#[test]
fn verify_fails_on_a_sign_error() {
    let hooks = VerifyHooks { similarity: flipped };
    let mut table = Vec::new();
    let err = cmd::verify(&VerifyArgs::default(), &hooks, &mut table).unwrap_err();
    assert!(matches!(err, CliError::VerifyFailed { .. }));
    assert!(String::from_utf8(table).unwrap().contains("FAIL"));
}
