use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nncon_cli::report::EvalRow;
use nncon_cli::shrink::ShrinkReport;
use serde_json::{json, Value};

fn nncon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nncon")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(data: Value) -> Value {
    json!({
        "seed": 3,
        "data": data,
        "problem": {"preset": "equal-opportunity"},
        "model": {"width": 16, "radius": 2.0},
        "optimizer": {"T": 600, "log_every": 50, "burn_in": 100},
        "baseline": true
    })
}

fn synthetic() -> Value {
    json!({"source": {"synthetic": {"n": 200, "d": 4, "bias_gap": 0.6, "seed": 1}}, "train_fraction": 0.75})
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", s(cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    nncon(&args)
}

#[test]
fn train_without_config_is_a_config_error() {
    let o = nncon(&["train"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn missing_csv_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = json!({"source": {"csv": {"path": "nowhere.csv", "schema": {
        "features": ["x1"], "label": "y", "label_map": {"1": 1.0, "0": -1.0}
    }}}});
    let cfg = write(dir.path(), "c.json", &small_config(data));
    let out = dir.path().join("run");
    let o = train(&cfg, &out, &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("nowhere.csv"));
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn unknown_field_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config(synthetic());
    v["optimizer"]["horizon_typo"] = json!(3);
    let cfg = write(dir.path(), "c.json", &v);
    let o = train(&cfg, &dir.path().join("run"), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("optimizer"), "{}", stderr(&o));
    assert!(stderr(&o).contains("horizon_typo"), "{}", stderr(&o));
}

#[test]
fn out_of_range_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config(synthetic());
    v["model"]["width"] = json!(0);
    let cfg = write(dir.path(), "c.json", &v);
    assert_eq!(code(&train(&cfg, &dir.path().join("run"), &[])), 2);
}

#[test]
fn failed_verification_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let suite = json!({"horizons": [64, 128, 256], "seeds": [0, 1], "slope_band": [5.0, 6.0]});
    let cfg = write(dir.path(), "regret.json", &suite);
    let out = dir.path().join("v");
    let o = nncon(&["verify-regret", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL regret slope in band"), "{stdout}");
    let verdict: Value = serde_json::from_str(&fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["pass"], json!(false));
    assert!(out.join("regret.csv").exists());
}

#[test]
fn missing_run_directory_is_a_config_error() {
    let o = nncon(&["evaluate", "--run", "/definitely/not/here"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn run_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config(synthetic()));
    let run = dir.path().join("run");
    let o = train(&cfg, &run, &["--plots"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "config.json",
        "meta.json",
        "trace.csv",
        "t_stoch.json",
        "last.json",
        "best.json",
        "unconstrained.json",
        "unconstrained_trace.csv",
        "objective.svg",
        "constraints.svg",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    // replaying the persisted config reproduces the run byte for byte
    let replay = dir.path().join("replay");
    let o = train(&run.join("config.json"), &replay, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["trace.csv", "t_stoch.json", "last.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(replay.join(f)).unwrap(), "{f} differs");
    }

    // a different seed gives a different trajectory
    let other = dir.path().join("other");
    assert_eq!(code(&train(&cfg, &other, &["--seed", "99"])), 0);
    assert_ne!(fs::read(run.join("trace.csv")).unwrap(), fs::read(other.join("trace.csv")).unwrap());

    let o = nncon(&["evaluate", "--run", s(&run), "--draws", "20000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<EvalRow> = serde_json::from_str(&fs::read_to_string(run.join("evaluation.json")).unwrap()).unwrap();
    assert!(run.join("evaluation.csv").exists());
    for split in ["train", "test"] {
        let expected = rows
            .iter()
            .find(|r| r.classifier == "t-stoch" && r.split == split && r.mode == "expected")
            .unwrap();
        let sampled = rows
            .iter()
            .find(|r| r.classifier == "t-stoch" && r.split == split && r.mode == "sampled")
            .unwrap();
        let se = sampled.accuracy_se.unwrap();
        assert!(sampled.draws.unwrap() >= 20000);
        assert!((sampled.metrics.accuracy - expected.metrics.accuracy).abs() <= 3.0 * se + 1e-12);
        for name in ["last", "best", "unconstrained"] {
            assert!(rows.iter().any(|r| r.classifier == name && r.split == split && r.mode == "deterministic"));
        }
    }

    let o = nncon(&["shrink", "--run", s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: ShrinkReport = serde_json::from_str(&fs::read_to_string(run.join("shrink_report.json")).unwrap()).unwrap();
    assert!(report.nnz <= 2);
    assert!(report.feasible_after);
    assert!(report.objective_after <= report.objective_before + 1e-12);

    // a huge slack leaves only the best snapshot
    let o = nncon(&["shrink", "--run", s(&run), "--epsilon", "1e6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: ShrinkReport = serde_json::from_str(&fs::read_to_string(run.join("shrink_report.json")).unwrap()).unwrap();
    assert_eq!(report.nnz, 1);
    assert_eq!(report.support_iterations, vec![report.best_iteration]);

    let o = nncon(&["shrink", "--run", s(&run), "--epsilon=-1"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn separable_csv_objective_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x1,x2,x3,label,group\n");
    for i in 0..120 {
        let u = (i as f64 * 0.61803).fract() * 2.0 - 1.0;
        let v = (i as f64 * 0.41421).fract() * 2.0 - 1.0;
        let w = (i as f64 * 0.73205).fract() * 2.0 - 1.0;
        let label = if u > 0.0 { "yes" } else { "no" };
        csv.push_str(&format!("{u},{v},{w},{label},{}\n", if i % 2 == 0 { "a" } else { "b" }));
    }
    fs::write(dir.path().join("toy.csv"), csv).unwrap();
    let data = json!({"source": {"csv": {"path": "toy.csv", "schema": {
        "features": ["x1", "x2", "x3"], "label": "label", "label_map": {"yes": 1.0, "no": -1.0},
        "group": "group", "group_map": {"a": "A", "b": "Ac"}
    }}}});
    let mut v = small_config(data);
    v["problem"] = json!({"preset": "unconstrained"});
    v["model"] = json!({"width": 64, "radius": 5.0});
    v["optimizer"] = json!({"T": 3000, "log_every": 100, "burn_in": 0});
    v["baseline"] = json!(false);
    let cfg = write(dir.path(), "c.json", &v);
    let run = dir.path().join("run");
    let o = train(&cfg, &run, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut rdr = csv::Reader::from_path(run.join("trace.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "objective_exact").unwrap();
    let obj: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[col].parse::<f64>().unwrap())
        .filter(|v| v.is_finite())
        .collect();
    assert!(obj.len() >= 10);
    let head: f64 = obj[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = obj[obj.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < 0.8 * head, "objective {head} -> {tail}");
}

#[test]
fn gen_data_writes_a_trainable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let o = nncon(&["gen-data", "--n", "300", "--d", "5", "--train-fraction", "0.8", "--seed", "4", "--out", s(&data_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&fs::read_to_string(data_dir.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], json!(300));
    assert_eq!(summary["dim"], json!(5));
    assert_eq!(fs::read_to_string(data_dir.join("data.csv")).unwrap().lines().count(), 301);

    let data: Value = serde_json::from_str(&fs::read_to_string(data_dir.join("data_config.json")).unwrap()).unwrap();
    let cfg = write(&data_dir, "train.json", &small_config(data));
    let run = dir.path().join("run");
    let o = train(&cfg, &run, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta: Value = serde_json::from_str(&fs::read_to_string(run.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["train_rows"], json!(240));
    assert_eq!(meta["test_rows"], json!(60));
}

#[test]
fn bad_gen_data_arguments_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = nncon(&["gen-data", "--bias-gap", "1.5", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn verify_linearization_with_small_suite_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let suite = json!({
        "width_sweep": {"widths": [16, 64, 256], "radii": [1.0], "input_dim": 4, "samples": 200, "nets_per_cell": 4},
        "radius_sweep": null,
        "output_bound": {"widths": [16, 64, 256], "input_dim": 4, "replicates": 200, "threshold": 10.0, "max_ratio": 2.0}
    });
    let cfg = write(dir.path(), "lin.json", &suite);
    let out = dir.path().join("v");
    let o = nncon(&["verify-linearization", "--config", s(&cfg), "--out", s(&out), "--plots"]);
    assert!([0, 3].contains(&code(&o)), "{}", stderr(&o));
    for f in ["verdict.json", "width_sweep.csv", "output_bound.csv", "width_fits.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(fs::read_dir(&out).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}
