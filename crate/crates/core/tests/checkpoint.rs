use std::path::PathBuf;

use echographs::model::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Mode, Model, ModelConfig};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_tiny_classifier.egrf")
}

fn golden_config() -> ModelConfig {
    ModelConfig {
        mode: Mode::MultiFrameClassifier,
        n_keypoints: 8,
        spiral_len: 3,
        feature_width: 8,
        decoder_width: 4,
        clip_len: 4,
        image_height: 16,
        image_width: 16,
        encoder_channels: [2, 3, 3, 4],
        ef_hidden: [6, 4, 3],
        classifier_hidden: 5,
    }
}

fn golden_model() -> Model {
    let mut m = Model::new(golden_config(), 2024).unwrap();
    m.train_step = 123;
    m
}

fn frames() -> Vec<Vec<f32>> {
    (0..4)
        .map(|k| (0..256).map(|i| ((i * 11 + k * 5) % 23) as f32 / 23.0).collect())
        .collect()
}

// Set ECHOGRAPHS_BLESS=1 to rewrite the file after an intentional format change.
#[test]
fn golden_file_matches_seeded_model() {
    let path = golden_path();
    if std::env::var_os("ECHOGRAPHS_BLESS").is_some() {
        save_checkpoint(&golden_model(), &path).unwrap();
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, encode_checkpoint(&golden_model()).unwrap());
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.train_step, 123);
    assert_eq!(loaded.config(), &golden_config());
    assert_eq!(encode_checkpoint(&loaded).unwrap(), bytes);
}

#[test]
fn loaded_golden_model_gives_identical_outputs() {
    let loaded = decode_checkpoint(&std::fs::read(golden_path()).unwrap()).unwrap();
    let fresh = golden_model();
    let f = frames();
    let refs: Vec<&[f32]> = f.iter().map(|v| v.as_slice()).collect();
    let a = loaded.predict_clip(&refs, 20).unwrap();
    let b = fresh.predict_clip(&refs, 20).unwrap();
    assert_eq!(a.ed_keypoints, b.ed_keypoints);
    assert_eq!(a.es_keypoints, b.es_keypoints);
    assert_eq!(a.ef_regressed.to_bits(), b.ef_regressed.to_bits());
    assert_eq!(a.ed_likelihood, b.ed_likelihood);
}

#[test]
fn save_load_round_trip_preserves_forward() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.egrf");
    let m = Model::new(ModelConfig { mode: Mode::SingleFrame, ..golden_config() }, 5).unwrap();
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let f = frames();
    assert_eq!(m.predict_frame(&f[0]).unwrap(), back.predict_frame(&f[0]).unwrap());
}
