use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qst_core::dataset::{load_dataset, OPS_FILE};
use qst_core::povm::born_probabilities;
use qst_nn::checkpoint::load_checkpoint;
use qst_nn::model::operator_features;
use qst_nn::Tensor;

fn qst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qst")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qst(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the final stderr line of a failing run.
fn fails(args: &[&str]) -> (i32, String) {
    let out = qst(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let last = stderr.lines().last().unwrap_or_default().to_string();
    (out.status.code().unwrap(), last)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["generate", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

const TINY: [&str; 14] = [
    "--epochs", "3", "--batch", "8", "--warmup", "1", "--layers", "1", "--width", "8", "--heads", "2", "--mlp-ratio", "2",
];

#[test]
fn generate_writes_a_loadable_reproducible_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let flags = ["--qubits", "2", "--kind", "pure", "--measurement", "cube", "--samples", "100", "--copies", "1000", "--seed", "4"];
    let a = generate(tmp.path(), "a", &flags);
    let b = generate(tmp.path(), "b", &flags);
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.n_samples(), ds.n_detectors(), ds.dim()), (100, 9, 4));
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["copies"], 1000);
    assert_eq!(cfg["state_kind"], "pure");
}

#[test]
fn infinite_copies_give_exact_probabilities() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generate(tmp.path(), "d", &["--qubits", "2", "--kind", "mixed", "--samples", "5", "--copies", "inf"]);
    let ds = load_dataset(&dir).unwrap();
    for i in 0..5 {
        let p = born_probabilities(&ds.rho(i).unwrap(), ds.measurement()).unwrap();
        for (a, b) in p.values().iter().zip(ds.frequency_row(i)) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn existing_outputs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generate(tmp.path(), "d", &["--samples", "3"]);
    let (code, line) = fails(&["generate", "--out", s(&dir), "--samples", "3"]);
    assert_eq!(code, 10);
    assert!(line.starts_with("ERROR 10 output-exists: "), "{line}");
    ok(&["generate", "--out", s(&dir), "--samples", "4", "--force"]);
    assert_eq!(load_dataset(&dir).unwrap().n_samples(), 4);
}

#[test]
fn errors_end_with_a_parseable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, line) = fails(&["generate", "--bogus"]);
    assert_eq!(code, 2);
    assert!(line.starts_with("ERROR 2 usage: "), "{line}");

    let (code, line) = fails(&["generate", "--out", s(&tmp.path().join("x")), "--kind", "grey"]);
    assert_eq!(code, 3);
    assert!(line.starts_with("ERROR 3 config: "), "{line}");

    let dir = generate(tmp.path(), "d", &["--samples", "3"]);
    let mut bytes = fs::read(dir.join("freqs.f64")).unwrap();
    bytes[5] ^= 1;
    fs::write(dir.join("freqs.f64"), bytes).unwrap();
    let (code, line) = fails(&["lre", "--data", s(&dir), "--out", s(&tmp.path().join("l"))]);
    assert_eq!(code, 6);
    assert!(line.starts_with("ERROR 6 checksum: "), "{line}");

    let (code, line) = fails(&["lre", "--data", s(&tmp.path().join("missing")), "--out", s(&tmp.path().join("m"))]);
    assert_eq!(code, 4);
    assert!(line.starts_with("ERROR 4 io: "), "{line}");
}

#[test]
fn train_then_eval_reproduces_the_final_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "d", &["--qubits", "1", "--samples", "60", "--seed", "2"]);
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--seed", "5"];
    args.extend_from_slice(&TINY);
    ok(&args);
    for f in ["config.json", "report.csv", "summary.json", "timing.csv", "best/params.f64", "final/params.f64"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert!(report.starts_with("epoch,train_mse,train_bures,train_loss,eval_mean_infidelity,eval_mean_log_infidelity,lr"));

    let ev = tmp.path().join("ev");
    ok(&["eval", "--checkpoint", s(&run.join("final")), "--data", s(&data), "--out", s(&ev)]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let a = metrics["mean_infidelity"].as_f64().unwrap();
    let b = summary["test"]["mean_infidelity"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-12);
    assert_eq!(metrics["n_samples"], 60 / 11);
}

#[test]
fn external_frequencies_are_ingested() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "d", &["--qubits", "1", "--samples", "30", "--seed", "3"]);
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run)];
    args.extend_from_slice(&TINY);
    ok(&args);

    let ds = load_dataset(&data).unwrap();
    let mut csv = String::from("detector,outcome,frequency\n");
    // Rows in scrambled order; the reader places them by index.
    for eta in (0..3).rev() {
        for k in 0..2 {
            csv += &format!("{eta},{k},{:?}\n", ds.frequency_row(7)[eta * 2 + k]);
        }
    }
    let freqs = tmp.path().join("f.csv");
    fs::write(&freqs, csv).unwrap();
    let out = tmp.path().join("ext");
    ok(&["eval", "--checkpoint", s(&run.join("final")), "--freqs", s(&freqs), "--ops", s(&data.join(OPS_FILE)), "--out", s(&out)]);
    let pred: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("prediction.json")).unwrap()).unwrap();
    let alpha: Vec<f64> = serde_json::from_value(pred["alpha"].clone()).unwrap();

    let model = load_checkpoint(&run.join("final")).unwrap().model;
    let f = Tensor::new(&[1, 3, 2], ds.frequency_row(7).to_vec()).unwrap();
    let expected = model.predict(&f, &operator_features(ds.measurement())).unwrap();
    assert_eq!(alpha, expected.data());
    let trace: f64 = (0..2).map(|i| pred["rho_re"][i][i].as_f64().unwrap()).sum();
    assert!((trace - 1.0).abs() <= 1e-12);

    let other = generate(tmp.path(), "two", &["--qubits", "2", "--samples", "2"]);
    let (code, line) = fails(&[
        "eval", "--checkpoint", s(&run.join("final")), "--freqs", s(&freqs), "--ops", s(&other.join(OPS_FILE)), "--out", s(&tmp.path().join("bad")),
    ]);
    assert_eq!(code, 7);
    assert!(line.starts_with("ERROR 7 shape: "), "{line}");

    fs::write(&freqs, "detector,outcome,frequency\n0,0,0.5\n").unwrap();
    let (code, _) = fails(&[
        "eval", "--checkpoint", s(&run.join("final")), "--freqs", s(&freqs), "--ops", s(&data.join(OPS_FILE)), "--out", s(&tmp.path().join("bad2")),
    ]);
    assert_eq!(code, 7);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "d", &["--qubits", "1", "--samples", "20"]);
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{ "epochs": 2, "batch_size": 4, "beta": 0.5, "arch": { "d_L": 1, "d_S": 4, "d_H": 2, "d_rate": 1 } }"#).unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--beta", "0.25", "--warmup", "0"]);
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["epochs"], 2);
    assert_eq!(resolved["beta"], 0.25);
    assert_eq!(resolved["arch"]["d_S"], 4);
    assert_eq!(resolved["batch_size"], 4);
    // The resolved dump is itself a valid config file.
    let again = tmp.path().join("again");
    ok(&["train", "--config", s(&run.join("config.json")), "--out", s(&again)]);
    assert_eq!(fs::read(run.join("report.csv")).unwrap(), fs::read(again.join("report.csv")).unwrap());
}

#[test]
fn baseline_and_gradcheck_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "d", &["--qubits", "2", "--samples", "40", "--copies", "inf"]);
    let out = tmp.path().join("lre");
    ok(&["lre", "--data", s(&data), "--out", s(&out), "--all"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["n_samples"], 40);
    assert!(m["mean_infidelity"].as_f64().unwrap() <= 1e-8);

    let gc = tmp.path().join("gc");
    let stdout = ok(&["gradcheck", "--configs", "2", "--out", s(&gc)]);
    assert!(stdout.contains("qat_end_to_end"));
    let table = fs::read_to_string(gc.join("gradcheck.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with("true")));
    let (code, line) = fails(&["gradcheck", "--configs", "2", "--tolerance", "1e-300"]);
    assert_eq!(code, 11);
    assert!(line.starts_with("ERROR 11 gradcheck-failed: "), "{line}");
}

#[test]
fn experiment_commands_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), "d", &["--qubits", "1", "--samples", "24"]);

    let sw = tmp.path().join("sweep");
    let mut args = vec!["sweep", "--data", s(&data), "--out", s(&sw), "--grid-width", "4,8", "--grid-epochs", "1,2"];
    args.extend_from_slice(&TINY[2..]);
    let first = ok(&args);
    assert!(first.starts_with("4 cells, 4 trained now"), "{first}");
    assert_eq!(fs::read_to_string(sw.join("sweep.csv")).unwrap().lines().count(), 5);
    let (code, _) = fails(&args);
    assert_eq!(code, 10);
    args.push("--resume");
    assert!(ok(&args).starts_with("4 cells, 0 trained now"));

    let cs = tmp.path().join("cs");
    let mut args = vec!["copysweep", "--qubits", "1", "--samples", "22", "--copies", "100,inf", "--seeds", "1,2", "--methods", "qat,lre", "--out", s(&cs)];
    args.extend_from_slice(&TINY);
    ok(&args);
    let table = fs::read_to_string(cs.join("copysweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    assert!(table.contains("inf,lre,2,"));

    let la = tmp.path().join("la");
    let mut args = vec!["lossablation", "--data", s(&data), "--out", s(&la)];
    args.extend_from_slice(&TINY);
    ok(&args);
    let table = fs::read_to_string(la.join("lossablation.csv")).unwrap();
    let losses: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(losses, ["mse", "bures", "integrated"]);
    for name in losses {
        assert!(la.join(name).join("report.csv").exists());
    }
}
