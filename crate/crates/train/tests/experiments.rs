use std::fs;

use qst_core::dataset::{build_dataset, Dataset, DatasetConfig, MeasurementKind, StateKind};
use qst_core::povm::Copies;
use qst_train::config::{ArchOverrides, TrainConfig};
use qst_train::experiments::{
    cell_hash, copy_sweep, loss_ablation, sweep, CopySweepConfig, Method, SweepCell, SweepGrid, SweepSpec, CELL_FILE,
    SWEEP_FILE,
};
use qst_train::train;

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs,
        warmup_epochs: 0,
        seed: 1,
        arch: ArchOverrides { d_l: Some(1), d_s: Some(8), d_h: Some(2), d_rate: Some(2) },
        ..TrainConfig::default()
    }
}

fn dataset(n: usize) -> Dataset {
    build_dataset(&DatasetConfig {
        n_qubits: 1,
        state_kind: StateKind::Mixed,
        measurement_kind: MeasurementKind::Cube,
        n_samples: n,
        srm_detectors: 5,
        copies: Copies::Finite(1000),
        seed: 2,
    })
    .unwrap()
}

fn sweep_config(methods: Vec<Method>, copies: Vec<i64>, seeds: Vec<u64>, n: usize) -> CopySweepConfig {
    CopySweepConfig {
        n_qubits: 2,
        state_kind: StateKind::Pure,
        measurement_kind: MeasurementKind::Cube,
        srm_detectors: 5,
        n_samples: n,
        copies,
        seeds,
        methods,
        train: TrainConfig { test_samples: Some(n / 2), ..tiny(1) },
    }
}

#[test]
fn copy_sweep_has_one_row_per_budget_and_method() {
    let cfg = sweep_config(vec![Method::Qat, Method::Lre], vec![100, 1000, -1], vec![5], 24);
    let dir = tempfile::tempdir().unwrap();
    let table = copy_sweep(&cfg, Some(dir.path())).unwrap();
    assert_eq!(table.rows.len(), 3 * 2);
    assert_eq!(table.cells.len(), 3 * 2);
    let lre_inf = table.rows.iter().find(|r| r.copies == "inf" && r.method == "lre").unwrap();
    assert!(lre_inf.mean_log_infidelity <= -8.0, "{}", lre_inf.mean_log_infidelity);
    let text = fs::read_to_string(dir.path().join("copysweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn regression_baseline_improves_with_copies() {
    let cfg = sweep_config(vec![Method::Lre], vec![100, 1000, 10_000], vec![1, 2, 3], 400);
    let table = copy_sweep(&cfg, None).unwrap();
    let logs: Vec<f64> = table.rows.iter().map(|r| r.mean_log_infidelity).collect();
    assert!(logs.windows(2).all(|w| w[1] < w[0]), "{logs:?}");
    assert!(table.rows.iter().all(|r| r.seeds == 3));
}

#[test]
fn loss_ablation_trains_three_weightings_on_shared_data() {
    let ds = dataset(40);
    let dir = tempfile::tempdir().unwrap();
    let ab = loss_ablation(&tiny(3), &ds, Some(dir.path())).unwrap();
    let names: Vec<(&str, f64)> = ab.rows.iter().map(|r| (r.loss.as_str(), r.beta)).collect();
    assert_eq!(names, vec![("mse", 0.0), ("bures", 1.0), ("integrated", 0.09)]);
    for (row, report) in ab.rows.iter().zip(&ab.reports) {
        assert_eq!(report.records.len(), 3);
        for r in &report.records {
            let want = row.beta * r.train_bures + (1.0 - row.beta) * r.train_mse;
            assert!((r.train_loss - want).abs() <= 1e-10);
        }
    }
    for r in &ab.reports[0].records {
        assert_eq!(r.train_loss, r.train_mse);
    }
    let plain = train(&TrainConfig { beta: 1.0, ..tiny(3) }, &ds, None).unwrap();
    assert_eq!(plain.report.records, ab.reports[1].records);
}

#[test]
fn grid_expands_to_its_product_and_resumes() {
    let ds = dataset(30);
    let spec = SweepSpec::Grid(SweepGrid {
        lr: vec![1e-3, 5e-3],
        d_s: vec![4, 8],
        epochs: vec![1, 2],
        ..SweepGrid::default()
    });
    assert_eq!(spec.cells().len(), 8);
    let dir = tempfile::tempdir().unwrap();
    let first = sweep(&tiny(2), &spec, &ds, dir.path()).unwrap();
    assert_eq!(first.rows.len(), 8);
    assert_eq!(first.computed.len(), 8);
    let csv_before = fs::read(dir.path().join(SWEEP_FILE)).unwrap();

    let again = sweep(&tiny(2), &spec, &ds, dir.path()).unwrap();
    assert!(again.computed.is_empty());
    let victim = &first.rows[5].cell;
    fs::remove_file(dir.path().join("cells").join(victim).join(CELL_FILE)).unwrap();
    let resumed = sweep(&tiny(2), &spec, &ds, dir.path()).unwrap();
    assert_eq!(resumed.computed, vec![victim.clone()]);
    assert_eq!(fs::read(dir.path().join(SWEEP_FILE)).unwrap(), csv_before);
}

#[test]
fn single_cell_sweep_matches_plain_training() {
    let ds = dataset(30);
    let base = tiny(3);
    let cell = SweepCell { d_rate: Some(3), ..SweepCell::default() };
    let dir = tempfile::tempdir().unwrap();
    let res = sweep(&base, &SweepSpec::Cells(vec![cell.clone()]), &ds, dir.path()).unwrap();
    let cfg = cell.apply(&base);
    assert_eq!(cfg.arch.d_rate, Some(3));
    let plain = train(&cfg, &ds, None).unwrap().report.summary;
    let row = &res.rows[0];
    assert_eq!(row.cell, cell_hash(&cfg).unwrap());
    assert_eq!(row.mean_infidelity, plain.test.mean_infidelity);
    assert_eq!(row.final_train_loss, plain.final_train_loss);
    assert_eq!(row.n_params, plain.n_params);
}
