use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 8] = [
    "--set",
    "days=400",
    "--set",
    "base_positives=3",
    "--set",
    "base_negatives=12",
    "--set",
    "images_per_class=16",
];

fn icewatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icewatch"))
        .args(args)
        .env_remove("ICEWATCH_SEED")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = icewatch(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    let mut args = vec!["gen-data", "--out", d];
    args.extend(TINY);
    run_ok(&args)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn gen_data_writes_every_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let log = gen(tmp.path());
    assert!(log.contains("32 scenes (16 glof, 16 no_glof)"));
    for f in ["velocity.csv", "temperature.csv", "temperature_night.csv", "images.iwt", "images_labels.csv"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    assert_eq!(read(tmp.path().join("velocity.csv")).lines().count(), 401);
    let bad = icewatch(&["gen-data", "--out", tmp.path().to_str().unwrap(), "--set", "base_positives=0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn seed_from_environment_matches_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut args = vec!["gen-data", "--set", "days=200", "--set", "base_positives=3", "--set", "base_negatives=3"];
    args.extend(["--set", "images_per_class=3"]);
    let with_flag = [&args[..], &["--seed", "5", "--out", a.to_str().unwrap()]].concat();
    run_ok(&with_flag);
    let out = Command::new(env!("CARGO_BIN_EXE_icewatch"))
        .args([&args[..], &["--out", b.to_str().unwrap()]].concat())
        .env("ICEWATCH_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(a.join("velocity.csv")).unwrap(), std::fs::read(b.join("velocity.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("images.iwt")).unwrap(), std::fs::read(b.join("images.iwt")).unwrap());
}

#[test]
fn train_eval_and_fuse_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    gen(tmp.path());

    let log = run_ok(&["train", "--model", "tempflow", "--lookback", "30", "--epochs", "2", "--out", d]);
    assert!(log.contains("model,epochs,final_train_loss,final_val_metric\ntempflow,2,"));
    assert!(read(tmp.path().join("tempflow/history.csv")).starts_with("epoch,train_mse,val_mse,"));

    run_ok(&["train", "--model", "terraflow", "--loss", "quantile", "--tau", "0.5", "--epochs", "1", "--out", d]);
    let hist = read(tmp.path().join("terraflow/history.csv"));
    assert!(hist.starts_with("epoch,train_quantile_loss,val_quantile_loss,val_mae,"));
    assert_eq!(hist.lines().count(), 2);

    run_ok(&["train", "--model", "riskflow", "--profile", "paper", "--out", d]);
    let manifest = read(tmp.path().join("riskflow/checkpoint/manifest.txt"));
    assert!(manifest.contains("meta epochs 5\nmeta batch 16\n"));
    assert_eq!(read(tmp.path().join("riskflow/history.csv")).lines().count(), 6);

    run_ok(&["eval", "--model", "riskflow", "--out", d]);
    let metrics = read(tmp.path().join("riskflow/metrics.csv"));
    let first: Vec<&str> = metrics.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, ["class", "no_glof (0)", "glof (1)", "accuracy", "macro avg", "weighted avg"]);
    assert!(read(tmp.path().join("riskflow/confusion.csv")).starts_with("truth,pred_0,pred_1\n"));
    let before = metrics.clone();
    run_ok(&["eval", "--model", "riskflow", "--out", d]);
    assert_eq!(read(tmp.path().join("riskflow/metrics.csv")), before);

    run_ok(&["eval", "--model", "terraflow", "--out", d]);
    assert!(read(tmp.path().join("terraflow/metrics.csv")).starts_with("model,n,mae,mse,baseline_mae,baseline_ratio\n"));

    let dates = tmp.path().join("dates.csv");
    std::fs::write(&dates, "date,image\n2015-12-20,3\n2015-02-15,20\n").unwrap();
    run_ok(&["fuse", "--out", d, "--dates", dates.to_str().unwrap()]);
    let report = read(tmp.path().join("risk_report.csv"));
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0][8] == "0" || rows[0][8] == "1");
    assert_eq!(rows[1][8], "");

    run_ok(&["fuse", "--out", d]);
    assert_eq!(read(tmp.path().join("risk_report.csv")).lines().count(), 1);
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    assert_eq!(icewatch(&["train", "--model", "tempflow", "--out", d]).status.code(), Some(2));
    assert_eq!(icewatch(&["fuse", "--out", d]).status.code(), Some(2));
    assert_eq!(icewatch(&["eval", "--model", "riskflow", "--out", d]).status.code(), Some(2));
    assert_eq!(icewatch(&["train", "--model", "cnn"]).status.code(), Some(2));
    assert_eq!(icewatch(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(icewatch(&["train", "--set", "colour=red"]).status.code(), Some(2));

    gen(tmp.path());
    run_ok(&["train", "--model", "tempflow", "--epochs", "1", "--out", d]);
    let from = tmp.path().join("tempflow/checkpoint");
    let to = tmp.path().join("riskflow/checkpoint");
    std::fs::create_dir_all(&to).unwrap();
    for entry in std::fs::read_dir(&from).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
    }
    let out = icewatch(&["eval", "--model", "riskflow", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tempflow"));
}

#[test]
fn divergent_training_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    gen(tmp.path());
    let out = icewatch(&["train", "--model", "terraflow", "--epochs", "3", "--lr", "1e300", "--out", d]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    let out = tmp.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            "# tiny run\nseed = 3\nout = {}\ndays = 200   # short\nbase_positives = 3\nbase_negatives = 3\nimages_per_class = 4\n",
            out.display()
        ),
    )
    .unwrap();
    run_ok(&["gen-data", "--config", cfg.to_str().unwrap(), "--set", "days=150"]);
    assert_eq!(read(out.join("velocity.csv")).lines().count(), 151);
    assert_eq!(read(out.join("images_labels.csv")).lines().count(), 9);
    std::fs::write(&cfg, "seed 3\n").unwrap();
    assert_eq!(icewatch(&["gen-data", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_reference_decisions() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["fuse", "--replay", "--out", tmp.path().to_str().unwrap()]);
    let report = read(tmp.path().join("risk_report.csv"));
    let decisions: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').nth(7).unwrap()).collect();
    assert_eq!(decisions, ["NO_GLOF", "NO_GLOF", "NO_GLOF", "ALERT", "ALERT", "NO_GLOF"]);
    run_ok(&["fuse", "--replay", "--out", tmp.path().to_str().unwrap(), "--set", "decision_rule=both-high"]);
    let report = read(tmp.path().join("risk_report.csv"));
    assert!(report.lines().skip(1).all(|l| !l.contains("NO_GLOF")));
}

#[test]
fn gradcheck_lists_every_op() {
    let log = run_ok(&["gradcheck"]);
    for op in ["conv2d", "maxpool2d", "softmax_rows", "layer_norm", "attention", "lstm_bptt_5_steps", "quantile_tau_0.9"] {
        assert!(log.lines().any(|l| l.starts_with(op) && l.ends_with("pass")), "{op}");
    }
    assert!(log.contains("0 failed"));
}

#[test]
fn ablate_emits_nine_rows_and_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    let log = run_ok(&[
        "ablate",
        "--out",
        d,
        "--set",
        "days=150",
        "--set",
        "ablation_tempflow_epochs=1",
        "--set",
        "ablation_terraflow_epochs=1",
    ]);
    assert_eq!(log.lines().filter(|l| l.starts_with("verdict ")).count(), 2);
    let csv = read(tmp.path().join("ablation.csv"));
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("seed,lookback,loss,"));
    assert_eq!(read(tmp.path().join("ablation_verdict.txt")).lines().count(), 2);
}
