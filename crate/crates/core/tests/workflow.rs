//! Disk layout, manifests, model files and report regeneration.

use std::collections::BTreeMap;
use std::fs;

use dci_core::actors::{generate_actor, train_plan};
use dci_core::experiment::{actor_features, run_in_memory, ExperimentConfig};
use dci_core::store::{csm_manifest_name, ManifestLine, PoolImage, Store, TEST_MATCHED_MANIFEST, TEST_MISMATCHED_MANIFEST, TRAIN_MANIFEST};
use dci_core::workflow::{self, read_training_hashes};
use dci_core::Error;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.n_train_actors = 16;
    c.n_test_actors = 8;
    c.image_training_covers = 20;
    c.images_per_actor = (10, 14);
    c.image_learner.n_rounds = 20;
    c.actor_learner.n_rounds = 20;
    c
}

fn full_pipeline(config: &ExperimentConfig) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::new(dir.path());
    workflow::generate(config, &store).unwrap();
    workflow::train_models(config, &store).unwrap();
    workflow::evaluate(config, &store, config.threshold).unwrap();
    dir
}

#[test]
fn generation_layout_and_counts() {
    let config = small();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::new(dir.path());
    let summary = workflow::generate(&config, &store).unwrap();
    let train: Vec<ManifestLine> = store.read_jsonl(TRAIN_MANIFEST).unwrap();
    assert_eq!(train.len(), 16);
    for p in &config.csm_sweep {
        let members: Vec<serde_json::Value> = store.read_jsonl(&csm_manifest_name(*p)).unwrap();
        assert_eq!(members.len(), 8);
    }
    assert_eq!(summary.manifests.len(), 3 + 1 + 2 + 5);
    assert_eq!(summary.pool_images, 3 * 2 * 20);

    // every image file is referenced exactly once across manifests
    let mut refs: BTreeMap<String, usize> = BTreeMap::new();
    for name in [TRAIN_MANIFEST, TEST_MATCHED_MANIFEST, TEST_MISMATCHED_MANIFEST] {
        for line in store.read_jsonl::<ManifestLine>(name).unwrap() {
            for img in &line.images {
                *refs.entry(img.path.clone()).or_default() += 1;
            }
            assert!(line.images.len() >= 10 && line.images.len() <= 14);
            assert_eq!(line.ground_truth == "guilty", line.stegosystem.is_some());
            assert_eq!(line.is_csm, line.source_id != "S0");
        }
    }
    for sys in &config.systems {
        for row in store.read_jsonl::<PoolImage>(&dci_core::store::image_pool_manifest_name(*sys)).unwrap() {
            *refs.entry(row.path).or_default() += 1;
        }
    }
    assert!(refs.values().all(|&n| n == 1));
    let mut on_disk = 0;
    for shard in fs::read_dir(dir.path().join("images")).unwrap() {
        on_disk += fs::read_dir(shard.unwrap().path()).unwrap().count();
    }
    assert_eq!(on_disk, refs.len());
}

#[test]
fn generation_is_idempotent() {
    let config = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    workflow::generate(&config, &Store::new(a.path())).unwrap();
    workflow::generate(&config, &Store::new(b.path())).unwrap();
    workflow::generate(&config, &Store::new(b.path())).unwrap();
    for name in [TRAIN_MANIFEST, TEST_MATCHED_MANIFEST, &csm_manifest_name(50.0)] {
        let path = |d: &tempfile::TempDir| d.path().join("manifests").join(name);
        assert_eq!(fs::read(path(&a)).unwrap(), fs::read(path(&b)).unwrap());
    }
}

#[test]
fn training_writes_two_n_plus_two_models() {
    let config = small();
    let dir = full_pipeline(&config);
    let models: Vec<_> = fs::read_dir(dir.path().join("models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "training_manifest.json")
        .collect();
    assert_eq!(models.len(), 2 * 3 + 2);
    let hashes = read_training_hashes(&Store::new(dir.path())).unwrap();
    assert_eq!(hashes.models.len(), 8);
    assert!(hashes.inputs.contains_key(TRAIN_MANIFEST));

    // retraining from the same dataset reproduces every model byte
    let store = Store::new(dir.path());
    let before: Vec<Vec<u8>> = hashes.models.keys().map(|n| fs::read(store.model_path(n)).unwrap()).collect();
    workflow::train_models(&config, &store).unwrap();
    let after: Vec<Vec<u8>> = hashes.models.keys().map(|n| fs::read(store.model_path(n)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn disk_and_memory_runs_agree() {
    let config = small();
    let dir = full_pipeline(&config);
    let memory = run_in_memory(&config).unwrap();
    let summary = fs::read_to_string(dir.path().join("reports/summary.csv")).unwrap();
    assert_eq!(summary, memory.report.summary_csv());
    assert_eq!(summary.lines().count(), 1 + config.csm_sweep.len());
    let json = fs::read_to_string(dir.path().join("reports/summary.json")).unwrap();
    assert_eq!(json, memory.report.summary_json());
}

#[test]
fn summary_rebuilds_from_verdict_files() {
    let config = small();
    let dir = full_pipeline(&config);
    let store = Store::new(dir.path());
    let rebuilt = workflow::summary_from_verdicts(&config, &store, config.threshold).unwrap();
    let saved = fs::read_to_string(dir.path().join("reports/summary.csv")).unwrap();
    assert_eq!(rebuilt.summary_csv(), saved);
}

#[test]
fn missing_inputs_name_the_path() {
    let config = small();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::new(dir.path());
    match workflow::train_models(&config, &store) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with("manifests/image_pool_lsbm.jsonl")),
        other => panic!("expected missing file, got {other:?}"),
    }
    match workflow::evaluate(&config, &store, 0.7) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with("models/primary_lsbm.json")),
        other => panic!("expected missing file, got {other:?}"),
    }
}

#[test]
fn actor_features_stay_in_the_unit_interval() {
    let config = small();
    let dir = full_pipeline(&config);
    let models = workflow::load_models(&config, &Store::new(dir.path())).unwrap();
    for plan in train_plan(12, 99) {
        for population in [config.population(), config.test_population()] {
            let actor = generate_actor(&population, &config.sources(), &plan).unwrap();
            let f = actor_features(&config, &actor, &models.pairs).unwrap();
            assert_eq!(f.proposed_vector().len(), 6);
            assert!(f.proposed_vector().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
