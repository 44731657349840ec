use std::fs;

use qst_core::povm::cube_measurement;
use qst_nn::checkpoint::{load_checkpoint, save_checkpoint, PARAMS_FILE};
use qst_nn::gradcheck::random_frequencies;
use qst_nn::model::{default_config, operator_features, Model, ModelKind};
use qst_nn::optim::{adam_step, AdamConfig, AdamState};
use qst_nn::NnError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn weights_and_optimizer_state_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let ops = operator_features(&cube_measurement(1).unwrap());
    let freqs = random_frequencies(2, 3, 2, &mut r);
    for kind in [ModelKind::Qat, ModelKind::QatNoOe, ModelKind::Fcn] {
        let mut model = Model::new(&default_config(kind, 1, 3, 5)).unwrap();
        let mut adam = AdamState::new(model.params());
        model.params_mut().iter_mut().for_each(|p| p.grad.iter_mut().for_each(|g| *g = 0.25));
        adam_step(model.params_mut(), &mut adam, 1e-3, &AdamConfig::default());
        let meta = serde_json::json!({ "epoch": 3 });
        let path = dir.path().join(kind.to_string());
        save_checkpoint(&path, &model, Some(&adam), &meta).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.config(), model.config());
        assert_eq!(back.model.params().flat_values(), model.params().flat_values());
        assert_eq!(back.adam.as_ref(), Some(&adam));
        assert_eq!(back.meta, meta);
        assert_eq!(back.model.predict(&freqs, &ops).unwrap(), model.predict(&freqs, &ops).unwrap());

        save_checkpoint(&path, &model, None, &meta).unwrap();
        assert!(load_checkpoint(&path).unwrap().adam.is_none());
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(&default_config(ModelKind::Qat, 1, 3, 5)).unwrap();
    save_checkpoint(dir.path(), &model, None, &serde_json::Value::Null).unwrap();
    let params = dir.path().join(PARAMS_FILE);
    let mut bytes = fs::read(&params).unwrap();
    bytes[17] ^= 0x40;
    fs::write(&params, &bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(NnError::Checksum(_))));
    fs::write(dir.path().join("manifest.json"), "{").unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(NnError::Format(_))));
}
