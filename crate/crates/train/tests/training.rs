use std::fs;

use qst_core::dataset::{build_dataset, Dataset, DatasetConfig, MeasurementKind, StateKind};
use qst_core::povm::Copies;
use qst_nn::checkpoint::load_checkpoint;
use qst_nn::model::{default_config, Model, ModelKind};
use qst_nn::optim::LrKind;
use qst_train::config::{ArchOverrides, TrainConfig};
use qst_train::eval::{evaluate_alphas, evaluate_model, EvalMetrics};
use qst_train::trainer::{read_report, split_indices, BEST_DIR, FINAL_DIR, REPORT_FILE, SUMMARY_FILE};
use qst_train::{train, TrainError};

fn dataset(n_qubits: usize, n: usize, seed: u64) -> Dataset {
    build_dataset(&DatasetConfig {
        n_qubits,
        state_kind: StateKind::Pure,
        measurement_kind: MeasurementKind::Cube,
        n_samples: n,
        srm_detectors: 5,
        copies: Copies::Finite(10_000),
        seed,
    })
    .unwrap()
}

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs,
        warmup_epochs: 1,
        seed: 3,
        arch: ArchOverrides { d_l: Some(1), d_s: Some(8), d_h: Some(2), d_rate: Some(2) },
        ..TrainConfig::default()
    }
}

#[test]
fn single_sample_is_memorized() {
    let ds = dataset(2, 1, 11);
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 200,
        warmup_epochs: 20,
        arch: ArchOverrides { d_l: Some(2), ..Default::default() },
        ..TrainConfig::default()
    };
    let out = train(&cfg, &ds, None).unwrap();
    let last = out.report.records.last().unwrap();
    assert!(last.train_mse <= 1e-6, "train mse {}", last.train_mse);
    assert_eq!(out.report.summary.train_samples, 1);
}

#[test]
fn records_follow_the_epoch_and_eval_schedule() {
    let ds = dataset(1, 60, 1);
    let cfg = TrainConfig { eval_every: 3, ..tiny(7) };
    let report = train(&cfg, &ds, None).unwrap().report;
    assert_eq!(report.records.len(), 7);
    for r in &report.records {
        let expect_eval = r.epoch % 3 == 0 || r.epoch == 7;
        assert_eq!(r.eval_mean_infidelity.is_some(), expect_eval, "epoch {}", r.epoch);
        assert!((r.train_loss - (cfg.beta * r.train_bures + (1.0 - cfg.beta) * r.train_mse)).abs() <= 1e-10);
    }
    assert_eq!(report.summary.test_samples, 60 / 11);
    assert_eq!(report.summary.train_samples, 60 - 60 / 11);
    assert_eq!(report.records[6].eval_mean_infidelity, Some(report.summary.test.mean_infidelity));
}

#[test]
fn mse_only_run_trains_on_its_logged_mse() {
    let ds = dataset(1, 40, 2);
    let report = train(&TrainConfig { beta: 0.0, ..tiny(4) }, &ds, None).unwrap().report;
    for r in &report.records {
        assert_eq!(r.train_loss, r.train_mse);
    }
    let report = train(&TrainConfig { beta: 1.0, ..tiny(4) }, &ds, None).unwrap().report;
    for r in &report.records {
        assert_eq!(r.train_loss, r.train_bures);
    }
}

#[test]
fn runs_are_byte_identical() {
    let ds = dataset(1, 50, 4);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outs: Vec<_> = dirs.iter().map(|d| train(&tiny(5), &ds, Some(d.path())).unwrap()).collect();
    assert_eq!(outs[0].model.params().flat_values(), outs[1].model.params().flat_values());
    for file in [
        REPORT_FILE.to_string(),
        SUMMARY_FILE.to_string(),
        format!("{FINAL_DIR}/params.f64"),
        format!("{FINAL_DIR}/adam_state.f64"),
        format!("{FINAL_DIR}/manifest.json"),
        format!("{BEST_DIR}/params.f64"),
    ] {
        let a = fs::read(dirs[0].path().join(&file)).unwrap();
        let b = fs::read(dirs[1].path().join(&file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let other = train(&TrainConfig { seed: 4, ..tiny(5) }, &ds, None).unwrap();
    assert_ne!(other.model.params().flat_values(), outs[0].model.params().flat_values());
}

#[test]
fn saved_outputs_reproduce_the_final_evaluation() {
    let ds = dataset(1, 44, 5);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&tiny(6), &ds, Some(dir.path())).unwrap();
    let records = read_report(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(records, out.report.records);
    let ckpt = load_checkpoint(&dir.path().join(FINAL_DIR)).unwrap();
    assert_eq!(ckpt.model.params().flat_values(), out.model.params().flat_values());
    assert_eq!(ckpt.adam.as_ref(), Some(&out.adam));
    let (_, test) = split_indices(ds.n_samples(), 4);
    let again = evaluate_model(&ckpt.model, &ds, &test).unwrap();
    assert!((again.mean_infidelity - out.report.summary.test.mean_infidelity).abs() <= 1e-12);
    let best = load_checkpoint(&dir.path().join(BEST_DIR)).unwrap();
    assert_eq!(best.meta["epoch"], out.report.summary.best_epoch);
}

#[test]
fn evaluation_leaves_the_model_untouched() {
    let ds = dataset(1, 20, 6);
    let model = Model::new(&default_config(ModelKind::Qat, 1, 3, 1)).unwrap();
    let before = model.clone();
    let idx: Vec<usize> = (0..20).collect();
    let a = evaluate_model(&model, &ds, &idx).unwrap();
    let b = evaluate_model(&model, &ds, &idx).unwrap();
    assert_eq!(model, before);
    assert_eq!(a, b);
}

#[test]
fn stored_alphas_score_as_exact() {
    let ds = dataset(2, 30, 7);
    let idx: Vec<usize> = (0..30).collect();
    let m = evaluate_alphas(&ds, &idx, ds.alphas()).unwrap();
    assert!(m.mean_infidelity <= 1e-7, "{}", m.mean_infidelity);
    assert!(m.failures.is_empty());
}

#[test]
fn zero_predictions_are_reported_per_sample() {
    let ds = dataset(1, 6, 8);
    let idx = [1, 4];
    let mut model = Model::new(&default_config(ModelKind::Qat, 1, 3, 1)).unwrap();
    for name in ["head.weight", "head.bias"] {
        let id = model.params().by_name(name).unwrap();
        model.params_mut().get_mut(id).value.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let m = evaluate_model(&model, &ds, &idx).unwrap();
    assert_eq!(m.failures.iter().map(|f| f.index).collect::<Vec<_>>(), vec![1, 4]);
    assert!(m.failures[0].reason.contains("trace"), "{}", m.failures[0].reason);
    assert_eq!(m.mean_fidelity, 0.0);
    assert_eq!(m.mean_infidelity, 1.0);
}

#[test]
fn aggregates_match_hand_arithmetic() {
    let m = EvalMetrics::from_fidelities(&[0.9, 0.7], vec![]).unwrap();
    assert!((m.mean_fidelity - 0.8).abs() <= 1e-15);
    assert_eq!((m.min_fidelity, m.max_fidelity), (0.7, 0.9));
    assert!((m.variance_fidelity - 0.01).abs() <= 1e-15);
    assert!((m.mean_infidelity - 0.2).abs() <= 1e-15);
    let expected_log = (0.1f64.log10() + 0.3f64.log10()) / 2.0;
    assert!((m.mean_log_infidelity - expected_log).abs() <= 1e-12);
    assert!(EvalMetrics::from_fidelities(&[], vec![]).is_err());
}

#[test]
fn mismatched_model_and_data_are_rejected() {
    let ds = dataset(1, 5, 9);
    let model = Model::new(&default_config(ModelKind::Qat, 2, 9, 1)).unwrap();
    let err = evaluate_model(&model, &ds, &[0, 1]).unwrap_err();
    assert!(matches!(err, TrainError::DimensionMismatch(_)), "{err}");
}

#[test]
fn divergent_learning_rate_aborts_with_batch_index() {
    let ds = dataset(1, 64, 10);
    let cfg = TrainConfig { lr: Some(1e300), warmup_epochs: 0, lr_kind: LrKind::Constant, ..tiny(3) };
    match train(&cfg, &ds, None) {
        Err(TrainError::NonFiniteLoss { epoch, batch }) => assert!(epoch == 1 && batch >= 1, "{epoch} {batch}"),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let ds = dataset(1, 10, 1);
    for cfg in [
        TrainConfig { batch_size: 0, ..tiny(2) },
        TrainConfig { warmup_epochs: 5, ..tiny(2) },
        TrainConfig { beta: 1.5, ..tiny(2) },
        TrainConfig { arch: ArchOverrides { d_h: Some(3), ..tiny(2).arch }, ..tiny(2) },
        TrainConfig { model: ModelKind::Fcn, ..tiny(2) },
    ] {
        assert!(train(&cfg, &ds, None).is_err(), "{cfg:?}");
    }
}

#[test]
fn dense_baseline_trains() {
    let ds = dataset(1, 30, 12);
    let cfg = TrainConfig { model: ModelKind::Fcn, batch_size: 8, epochs: 3, warmup_epochs: 0, ..TrainConfig::default() };
    let out = train(&cfg, &ds, None).unwrap();
    assert!(out.report.records.iter().all(|r| r.train_loss.is_finite()));
    assert_eq!(out.report.summary.n_params, out.model.params().num_scalars());
}
