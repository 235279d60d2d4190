use std::path::PathBuf;

use purse_core::geom3d::{CameraIntrinsics, ObjectModel};
use purse_core::pipeline::{default_intrinsics, ExperimentConfig};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn duck_file_matches_the_builtin_model() {
    let m: ObjectModel = serde_json::from_str(&std::fs::read_to_string(data("duck.json")).unwrap()).unwrap();
    assert_eq!(m, ObjectModel::synthetic_duck());
}

#[test]
fn intrinsics_file_matches_the_default() {
    let k: CameraIntrinsics = serde_json::from_str(&std::fs::read_to_string(data("intrinsics.json")).unwrap()).unwrap();
    assert_eq!(k, default_intrinsics());
}

#[test]
fn example_config_spells_out_the_defaults() {
    let mut cfg = ExperimentConfig::from_json_file(&data("config.json")).unwrap();
    assert!(cfg.model_path.is_some() && cfg.intrinsics_path.is_some());
    cfg.model_path = None;
    cfg.intrinsics_path = None;
    assert_eq!(
        serde_json::to_value(&cfg).unwrap(),
        serde_json::to_value(ExperimentConfig::default()).unwrap()
    );
}
