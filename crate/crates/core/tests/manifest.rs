use std::fs;
use std::path::Path;

use ordinal_affect::data::{
    load_manifest, write_trace_table, ExperimentManifest, FeatureTable, ItemEntry, ModelSection, Partition,
    Preprocessing, RepresentationConfig, SplitMode, SplitSpec, FORMAT_VERSION,
};
use ordinal_affect::model::{Matrix, TrainConfig};
use ordinal_affect::representation::{Family, Representation, Tag};
use ordinal_affect::trace::AnnotationTrace;

fn recola_manifest(dir: &Path, samples: usize, feature_rows: usize) -> ExperimentManifest {
    let mut items = Vec::new();
    for (k, part) in [Partition::Train, Partition::Dev].into_iter().enumerate() {
        let id = format!("utt_{k}");
        let traces: Vec<AnnotationTrace> = (0..3)
            .map(|m| {
                let values = (0..samples)
                    .map(|i| (0.3 * (i as f64 * 0.01 + m as f64).sin() + 0.1 * m as f64 - 0.1).clamp(-0.99, 0.99))
                    .collect();
                AnnotationTrace::new(format!("rater{m}"), values, 0.04).unwrap()
            })
            .collect();
        write_trace_table(&dir.join(format!("{id}_traces.csv")), &traces).unwrap();
        FeatureTable {
            item_id: id.clone(),
            feature_name: "boaw".into(),
            matrix: Matrix::new(feature_rows, 2, (0..feature_rows * 2).map(|v| v as f64 * 0.01).collect()).unwrap(),
        }
        .save(&dir.join(format!("{id}_features.csv")))
        .unwrap();
        items.push(ItemEntry {
            id: id.clone(),
            group: id.clone(),
            traces: format!("{id}_traces.csv").into(),
            features: format!("{id}_features.csv").into(),
            partition: Some(part),
        });
    }
    ExperimentManifest {
        format_version: FORMAT_VERSION,
        name: "recola-like".into(),
        seed: 0,
        preprocessing: Preprocessing::recola(),
        representation: RepresentationConfig {
            family: Family::BetaMapped,
            neighbor_radius: 1,
        },
        model: ModelSection::default(),
        train: TrainConfig::recola(),
        split: SplitSpec {
            mode: SplitMode::FixedTrainDev,
            k: 1,
            seed: None,
        },
        items,
        base_dir: dir.to_path_buf(),
    }
}

#[test]
fn recola_profile_manifest_loads_and_fits_beta() {
    let dir = tempfile::tempdir().unwrap();
    // 40 s at 25 Hz; the 4 s delay leaves 900 samples = 12 windows of 75.
    let manifest = recola_manifest(dir.path(), 1000, 13);
    let path = dir.path().join("manifest.toml");
    fs::write(&path, manifest.to_toml()).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded.preprocessing.samples_per_window().unwrap(), 75);
    assert_eq!(loaded.preprocessing.delay_samples().unwrap(), 100);
    let ds = loaded.load_dataset().unwrap();
    assert_eq!(ds.items.len(), 2);
    for item in &ds.items {
        assert_eq!(item.trace_set.window_count(), 12);
        assert_eq!(item.features.matrix.rows(), 12);
        assert_eq!(item.trace_set.bounds(), Some((-1.0, 1.0)));
        let rep = Representation::compute(&item.trace_set, Tag::Interval, Family::BetaMapped, 1).unwrap();
        assert_eq!(rep.columns(), ["window_index", "mu", "sigma", "alpha", "beta"]);
    }
    assert_eq!(ds.hash, loaded.load_dataset().unwrap().hash);
    assert_eq!(ds.hash.len(), 64);
}

#[test]
fn short_feature_table_is_rejected_naming_item() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = recola_manifest(dir.path(), 1000, 11);
    let path = dir.path().join("manifest.toml");
    fs::write(&path, manifest.to_toml()).unwrap();
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("utt_0") && err.contains("11 feature rows"), "{err}");
}

#[test]
fn gamevibe_profile_truncates_to_nineteen_windows() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = recola_manifest(dir.path(), 10, 1);
    manifest.preprocessing = Preprocessing::gamevibe();
    manifest.representation.family = Family::Gaussian;
    manifest.items.truncate(1);
    let traces: Vec<AnnotationTrace> = (0..4)
        .map(|m| AnnotationTrace::new(format!("p{m}"), (0..12 * 25).map(|i| (i * (m + 1)) as f64).collect(), 0.25).unwrap())
        .collect();
    write_trace_table(&dir.path().join("utt_0_traces.csv"), &traces).unwrap();
    FeatureTable {
        item_id: "utt_0".into(),
        feature_name: "latent".into(),
        matrix: Matrix::zeros(25, 4),
    }
    .save(&dir.path().join("utt_0_features.csv"))
    .unwrap();
    let ds = manifest.load_dataset().unwrap();
    assert_eq!(ds.items[0].trace_set.window_count(), 19);
    assert_eq!(ds.items[0].features.matrix.rows(), 19);
    assert_eq!(ds.items[0].trace_set.bounds(), None);
}

#[test]
fn beta_family_without_bounds_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = recola_manifest(dir.path(), 1000, 13);
    manifest.preprocessing.bounds = None;
    let err = manifest.validate_settings().unwrap_err().to_string();
    assert!(err.contains("bounds"), "{err}");
}

#[test]
fn manifest_toml_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = recola_manifest(dir.path(), 1000, 13);
    let back = ExperimentManifest::from_toml(&manifest.to_toml(), &dir.path().join("m.toml")).unwrap();
    assert_eq!(back, manifest);
}
