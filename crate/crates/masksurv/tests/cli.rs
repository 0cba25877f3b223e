use std::path::Path;
use std::process::{Command, Output};

use masksurv::manifest::RunManifest;

fn masksurv(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_masksurv"));
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn quick_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let cfg = format!(
        "seed = 3\nfolds = 3\ntime_units = [\"1y\"]\n{body}\n[trainer]\nmax_epochs = 4\nearly_stop_patience = 3\n"
    );
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn bad_invocations_exit_with_usage_code() {
    for args in [&["train", "--model", "forest"][..], &["frobnicate"], &["crossval", "--time-unit", "1w"]] {
        let out = masksurv(args, &[]);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", text(&out.stderr));
    }
    let out = masksurv(&["evaluate"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--checkpoint"), "{}", text(&out.stderr));
}

#[test]
fn generate_writes_cohort_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = masksurv(&["generate", "--n", "50", "--seed", "1", "--out"], &[&out]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let table = masksurv::csv_io::load_csv(&out.join("cohort.csv")).unwrap();
    assert_eq!(table.len(), 50);
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.command, "generate");
    assert_eq!(m.master_seed, 1);
    assert!(m.input_hash.starts_with("sha256:") && m.finished_at.is_some());
    let bytes = std::fs::read(out.join("cohort.csv")).unwrap();
    assert_eq!(m.input_hash, masksurv::manifest::sha256_hex(&bytes));
}

#[test]
fn train_then_evaluate_and_attribute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "[data.generator]\nn = 150\ncoefficients = [1.5, -1.0, 0.5, 0.0]\nbaseline_scale = 0.0153\nweibull_shape = 1.2\nmissing_rate = 0.3\ncensoring_rate = 0.01\n");
    let run = dir.path().join("train");
    let o = masksurv(&["train", "--config"], &[&cfg, Path::new("--out"), &run]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    for f in ["model.ckpt", "curves.csv", "train_summary.json", "config.toml", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("model.ckpt");

    let o = masksurv(&["evaluate", "--config"], &[&cfg, Path::new("--checkpoint"), &ckpt]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).starts_with("ct_index 0."), "{}", text(&o.stdout));

    let att = dir.path().join("att");
    let o = masksurv(
        &["attribute", "--max-patients", "5", "--config"],
        &[&cfg, Path::new("--checkpoint"), &ckpt, Path::new("--out"), &att],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rows = csv::Reader::from_path(att.join("attribution_long.csv")).unwrap().records().count();
    // 5 patients x 4 features x 6 bins
    assert_eq!(rows, 120);
    assert!(att.join("attribution_summary.json").exists());

    let mlp = dir.path().join("mlp");
    let o = masksurv(&["train", "--model", "mlp", "--imputer", "knn", "--config"], &[&cfg, Path::new("--out"), &mlp]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let o = masksurv(&["attribute", "--config"], &[&cfg, Path::new("--checkpoint"), &mlp.join("model.ckpt"), Path::new("--out"), &att]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_without_uncensored_patients_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "[data.generator]\nn = 120\ncoefficients = [1.0, 0.5]\nbaseline_scale = 0.0153\nweibull_shape = 1.2\nmissing_rate = 0.1\ncensoring_rate = 0.01\n");
    let run = dir.path().join("train");
    let o = masksurv(&["train", "--model", "mlp", "--config"], &[&cfg, Path::new("--out"), &run]);
    assert!(o.status.success(), "{}", text(&o.stderr));

    let csv = dir.path().join("censored.csv");
    std::fs::write(&csv, "x1,x2,os,dead\ncont,cont,survival_months,event\n0.5,1.0,10,0\n-0.2,,30,0\n1.1,0.3,50,0\n").unwrap();
    let o = masksurv(&["evaluate", "--checkpoint"], &[&run.join("model.ckpt"), Path::new("--data"), &csv]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("undefined metric"), "{}", text(&o.stderr));
}

#[test]
fn malformed_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,s,e\ncont,survival_months,event\n1,3,1\n1,abc,0\n").unwrap();
    let out = dir.path().join("o");
    let o = masksurv(&["crossval", "--data"], &[&csv, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(1));
    let err = text(&o.stderr);
    assert!(err.contains("line 4") && err.contains("`s`"), "{err}");

    let cfg = dir.path().join("typo.toml");
    std::fs::write(&cfg, "fodls = 3\n").unwrap();
    let o = masksurv(&["crossval", "--config"], &[&cfg]);
    assert_eq!(o.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a model").unwrap();
    let o = masksurv(&["evaluate", "--checkpoint"], &[&junk, Path::new("--data"), &csv]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("checkpoint"));
}

#[test]
fn gradcheck_passes() {
    let o = masksurv(&["gradcheck", "--profile", "toy"], &[]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    for name in ["L1", "L2", "total", "layer_norm"] {
        assert!(out.contains(name), "{out}");
    }
    assert!(out.contains("all gradient checks within 1e-4"));
}

#[test]
fn crossval_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "[data.generator]\nn = 200\ncoefficients = [1.0, -0.75, 0.5, 0.0]\nbaseline_scale = 0.0153\nweibull_shape = 1.2\nmissing_rate = 0.3\ncensoring_rate = 0.01\n");
    let out = dir.path().join("cv");
    let o = masksurv(&["crossval", "--config"], &[&cfg, Path::new("--out"), &out]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    for f in ["fold_0.json", "fold_1.json", "fold_2.json", "aggregate.csv", "aggregate_long.csv", "error_by_time.csv", "manifest.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("fold_3.json").exists());
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], "model,imputer,1y");
    // transformer plus cox and mlp under two imputers
    assert_eq!(lines.len(), 6, "{agg}");
    assert!(lines[1].starts_with("transformer,none,"));
    assert!(out.join("curves").join("transformer_none_1y_fold0.csv").exists());

    let m = RunManifest::read(&out).unwrap();
    assert!(!m.dry_run && m.finished_at.is_some());
    assert_eq!(m.plans.len(), 1);
    assert_eq!(m.plans[0].n_bins, 6);
    assert_eq!(m.plans[0].architecture.n_layers, 2);

    let threaded = dir.path().join("threaded.toml");
    let body = std::fs::read_to_string(&cfg).unwrap().replace("folds = 3\n", "folds = 3\nparallel_folds = 3\n");
    std::fs::write(&threaded, body).unwrap();
    let out2 = dir.path().join("cv2");
    let o = masksurv(&["crossval", "--config"], &[&threaded, Path::new("--out"), &out2]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    for f in ["aggregate.csv", "aggregate_long.csv", "error_by_time.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f}");
    }
}
