use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bsdcnn::cli::sha256_hex;
use bsdcnn::{Model, ModelConfig};
use serde_json::Value;

fn bsdcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsdcnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run bsdcnn")
}

fn ok(args: &[&str]) -> Output {
    let out = bsdcnn(args);
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

/// A one-hour, two-electrode, 50 Hz recording with one seizure.
fn synth(dir: &Path, seed: u64, snr: f64) -> PathBuf {
    let out = dir.join(format!("data-{seed}-{snr}"));
    ok(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--electrodes",
        "2",
        "--fs",
        "50",
        "--hours",
        "1",
        "--seizures",
        "1",
        "--snr",
        &snr.to_string(),
        "--pil",
        "600",
        "--postictal",
        "600",
        "--out",
        s(&out),
    ]);
    out.join(format!("synth-{seed}.rec"))
}

const LABELING: [&str; 4] = ["--pil", "600", "--postictal", "600"];

fn train(rec: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(rec), "--out", s(out)];
    args.extend_from_slice(&LABELING);
    args.extend_from_slice(extra);
    ok(&args);
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic_and_validates_flags() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["synth", "--seed", "1", "--electrodes", "4", "--fs", "100", "--hours", "2", "--seizures", "1"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[&base[..], &["--out", s(&a)]].concat());
    ok(&[&base[..], &["--out", s(&b)]].concat());
    for f in ["synth-1.rec", "synth-1.ann"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = read_json(&a.join("synth-1.manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);

    let missing = bsdcnn(&base);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("Usage"));

    let infeasible = bsdcnn(&[
        "synth", "--seed", "1", "--electrodes", "4", "--fs", "100", "--hours", "1", "--seizures", "50", "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(infeasible.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&infeasible.stderr).contains("invalid config"));
}

#[test]
fn train_writes_loadable_models_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let rec = synth(dir.path(), 2, 2.0);

    let init = dir.path().join("init.bsdc");
    train(&rec, &init, &["--epochs", "0", "--seed", "9"]);
    let built = Model::build(ModelConfig::for_input(2, 1000), 9).unwrap();
    assert_eq!(fs::read(&init).unwrap(), built.to_bytes());

    let trained = dir.path().join("m.bsdc");
    train(&rec, &trained, &["--epochs", "1", "--seed", "9"]);
    let model = Model::load(&trained).unwrap();
    assert_ne!(model, built);
    let history = fs::read_to_string(dir.path().join("m.bsdc.history.tsv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch\tloss\tval_auc\tseconds");
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split('\t').count(), 4);

    let manifest = read_json(&dir.path().join("m.bsdc.manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["training"]["epochs"], 1);
    assert_eq!(manifest["config"]["model"]["conv_mode"], "1d-1d");
    let digest = &manifest["inputs"][0];
    assert_eq!(digest["sha256"], sha256_hex(&fs::read(&rec).unwrap()));

    let again = dir.path().join("again.bsdc");
    train(&rec, &again, &["--epochs", "1", "--seed", "9"]);
    assert_eq!(fs::read(&trained).unwrap(), fs::read(&again).unwrap());

    let two_d = dir.path().join("2d.bsdc");
    train(&rec, &two_d, &["--epochs", "1", "--conv-mode", "2d-2d"]);
    assert_eq!(Model::load(&two_d).unwrap().config().conv_mode.to_string(), "2d-2d");

    let wrong_profile = bsdcnn(&["train", "--data", s(&rec), "--profile", "aes", "--out", s(&dir.path().join("x"))]);
    assert_eq!(wrong_profile.status.code(), Some(1));
}

#[test]
fn eval_writes_metrics_and_roc() {
    let dir = tempfile::tempdir().unwrap();
    let rec = synth(dir.path(), 3, 0.0);
    let model = dir.path().join("null.bsdc");
    train(&rec, &model, &["--epochs", "0"]);
    let out = dir.path().join("ev");
    let mut args = vec!["eval", "--model", s(&model), "--data", s(&rec), "--out", s(&out)];
    args.extend_from_slice(&LABELING);
    ok(&args);

    let metrics_text = fs::read_to_string(out.join("metrics.json")).unwrap();
    assert_eq!(metrics_text.lines().count(), 1);
    let metrics: Value = serde_json::from_str(&metrics_text).unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.35..=0.65).contains(&auc), "null model AUC {auc}");
    assert!(metrics_text.starts_with("{\"auc\":"));
    let roc = fs::read_to_string(out.join("roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,tpr,fpr\ninf,0,0\n"));
    assert!(roc.trim_end().ends_with(",1,1"));
    assert!(out.join("scores.csv").exists());
    assert!(out.join("eval.manifest.json").exists());

    // Re-score the exported windows with a perfect oracle.
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    let oracle: String = scores
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return format!("{line}\n");
            }
            let mut f: Vec<String> = line.split(',').map(String::from).collect();
            f[4] = if f[2] == "preictal" { "0.9".into() } else { "0.1".into() };
            f.join(",") + "\n"
        })
        .collect();
    let oracle_path = dir.path().join("oracle.csv");
    fs::write(&oracle_path, &oracle).unwrap();
    let oracle_out = dir.path().join("oracle-ev");
    ok(&["eval", "--scores", s(&oracle_path), "--out", s(&oracle_out)]);
    let m = read_json(&oracle_out.join("metrics.json"));
    assert_eq!(m["auc"], 1.0);
    assert_eq!(m["seizure_sensitivity"], 1.0);
    assert_eq!(m["false_alarms"], 0);

    let single: String = oracle.lines().filter(|l| !l.contains(",interictal,")).map(|l| format!("{l}\n")).collect();
    let single_path = dir.path().join("single.csv");
    fs::write(&single_path, single).unwrap();
    let r = bsdcnn(&["eval", "--scores", s(&single_path), "--out", s(&dir.path().join("s"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("invalid dataset"));

    let missing = bsdcnn(&["eval", "--model", s(&dir.path().join("nope.bsdc")), "--data", s(&rec), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(bsdcnn(&["eval", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn report_model_text_and_csv() {
    let text = ok(&["report-model"]);
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.contains("memory_reduction_factor"));
    assert!(text.contains("compute_reduction_factor"));
    assert!(text.contains("BConv4"));

    let csv = String::from_utf8(ok(&["report-model", "--format", "csv"]).stdout).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "name,kind,scope,precision,parameter_count,parameter_bits,mac_count,binary_op_count"
    );
    assert!(csv.lines().nth(1).unwrap().starts_with("Conv1,"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.bsdc");
    Model::build(ModelConfig::for_input(2, 1000), 0).unwrap().save(&path).unwrap();
    let out = dir.path().join("r.csv");
    ok(&["report-model", "--model", s(&path), "--format", "csv", "--out", s(&out)]);
    assert!(fs::read_to_string(&out).unwrap().contains("\ntotal,"));

    let bad = bsdcnn(&["report-model", "--model", s(&dir.path().join("missing.bsdc"))]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn bench_checks_identity_and_rejects_zero_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let r = ok(&[
        "bench", "--electrodes", "2", "--samples", "1000", "--iters", "1", "--windows", "100", "--out", s(&out),
    ]);
    let report: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["identical"], true);
    assert_eq!(report["windows"], 100);
    for key in ["packed_windows_per_s", "naive_windows_per_s", "packed_ns_per_binary_op", "naive_ns_per_binary_op"] {
        assert!(report[key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert_eq!(read_json(&out), report);
    assert!(dir.path().join("bench.json.manifest.json").exists());
    assert_eq!(bsdcnn(&["bench", "--iters", "0"]).status.code(), Some(2));
}
