//! Disk-backed generate / train / evaluate steps.
//!
//! Each step reads only what the previous one wrote under a [`Store`], and
//! produces the same numbers as [`crate::experiment::run_in_memory`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actors::{generate_actor, test_plan, train_plan, ActorFeatures, ActorPlan, ModelPair, PopulationConfig};
use crate::experiment::{
    actor_features, evaluate_point, image_training_set, train_actor_models, train_model_pair, ExperimentConfig,
    SweepPoint, SweepReport, TrainedModels,
};
use crate::imagery::CoverSourceSpec;
use crate::learner::BoostedModel;
use crate::seed;
use crate::store::{
    csm_manifest_name, hash_file, image_pool_manifest_name, sha256_hex, write_atomic, ManifestLine, PoolImage,
    Store, SweepMember, TEST_MATCHED_MANIFEST, TEST_MISMATCHED_MANIFEST, TRAINING_HASHES, TRAIN_MANIFEST,
};
use crate::verdict::{evaluate_rows, read_verdict_csv, write_verdict_csv};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const PROPOSED_MODEL: &str = "actor_proposed.json";
pub const BASELINE_MODEL: &str = "actor_baseline.json";

pub fn primary_model_name(system: crate::stego::StegoSystem) -> String {
    format!("primary_{}.json", system.name())
}

pub fn secondary_model_name(system: crate::stego::StegoSystem) -> String {
    format!("secondary_{}.json", system.name())
}

pub fn verdict_file_name(method: &str, csm_percent: f64) -> String {
    format!("verdicts_{method}_csm{:03}.csv", csm_percent.round() as u32)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub pool_images: usize,
    pub train_actors: usize,
    pub test_actors: usize,
    pub manifests: Vec<String>,
}

fn all_sources(config: &ExperimentConfig) -> Vec<CoverSourceSpec> {
    std::iter::once(config.training_source.clone())
        .chain(config.csm_sources.iter().cloned())
        .collect()
}

fn write_actor_manifest(
    store: &Store,
    name: &str,
    config: &ExperimentConfig,
    population: &PopulationConfig,
    plans: &[ActorPlan],
) -> Result<()> {
    let sources = config.sources();
    let lines = plans
        .iter()
        .map(|plan| store.manifest_line(&generate_actor(population, &sources, plan)?))
        .collect::<Result<Vec<_>>>()?;
    store.write_jsonl(name, &lines)
}

/// Writes images, manifests and the effective config.
pub fn generate(config: &ExperimentConfig, store: &Store) -> Result<GenSummary> {
    config.validate()?;
    store.create_dirs()?;
    write_atomic(&store.root().join(CONFIG_FILE), config.to_toml().as_bytes())?;
    let mut manifests = Vec::new();
    let mut pool_images = 0;
    for (k, &system) in config.systems.iter().enumerate() {
        let rows = image_training_set(config, k)?
            .iter()
            .map(|(img, label)| {
                Ok(PoolImage {
                    path: store.put_image(img)?,
                    label: *label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        pool_images += rows.len();
        let name = image_pool_manifest_name(system);
        store.write_jsonl(&name, &rows)?;
        manifests.push(name);
    }
    let train = train_plan(config.n_train_actors, config.seed);
    write_actor_manifest(store, TRAIN_MANIFEST, config, &config.population(), &train)?;
    manifests.push(TRAIN_MANIFEST.into());
    let test_population = config.test_population();
    for (name, percent) in [(TEST_MATCHED_MANIFEST, 0.0), (TEST_MISMATCHED_MANIFEST, 100.0)] {
        let plans = test_plan(config.n_test_actors, percent, config.seed)?;
        write_actor_manifest(store, name, config, &test_population, &plans)?;
        manifests.push(name.into());
    }
    for &p in &config.csm_sweep {
        let members: Vec<SweepMember> = test_plan(config.n_test_actors, p, config.seed)?
            .into_iter()
            .map(|plan| SweepMember {
                manifest: if plan.is_csm { TEST_MISMATCHED_MANIFEST } else { TEST_MATCHED_MANIFEST }.into(),
                actor_id: plan.actor_id,
            })
            .collect();
        let name = csm_manifest_name(p);
        store.write_jsonl(&name, &members)?;
        manifests.push(name);
    }
    Ok(GenSummary {
        pool_images,
        train_actors: config.n_train_actors,
        test_actors: config.n_test_actors,
        manifests,
    })
}

fn manifest_features(
    config: &ExperimentConfig,
    store: &Store,
    name: &str,
    pairs: &[ModelPair],
) -> Result<Vec<(String, ActorFeatures)>> {
    let sources = all_sources(config);
    store
        .read_jsonl::<ManifestLine>(name)?
        .iter()
        .map(|line| {
            let actor = store.load_actor(line, &sources)?;
            Ok((line.actor_id.clone(), actor_features(config, &actor, pairs)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingHashes {
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub models: BTreeMap<String, String>,
}

/// Fits all 2N + 2 models from a generated dataset and saves them.
pub fn train_models(config: &ExperimentConfig, store: &Store) -> Result<TrainedModels> {
    config.validate()?;
    let probes = config.probes();
    let mut inputs = BTreeMap::new();
    let mut pairs = Vec::with_capacity(config.systems.len());
    for (k, &system) in config.systems.iter().enumerate() {
        let name = image_pool_manifest_name(system);
        let rows: Vec<PoolImage> = store.read_jsonl(&name)?;
        inputs.insert(name.clone(), hash_file(&store.manifest_path(&name))?);
        let samples = rows
            .iter()
            .map(|r| Ok((store.get_image(&r.path)?, r.label)))
            .collect::<Result<Vec<_>>>()?;
        pairs.push(train_model_pair(
            &samples,
            &probes[k],
            config.feature_order,
            &config.image_learner,
            seed::derive(config.seed, "pool-fresh", k as u64),
        )?);
    }
    let train: Vec<ActorFeatures> = manifest_features(config, store, TRAIN_MANIFEST, &pairs)?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    inputs.insert(TRAIN_MANIFEST.into(), hash_file(&store.manifest_path(TRAIN_MANIFEST))?);
    let (proposed, baseline) = train_actor_models(config, &train)?;
    let models = TrainedModels {
        pairs,
        proposed,
        baseline,
    };
    save_models(config, store, &models, inputs)?;
    Ok(models)
}

fn save_models(
    config: &ExperimentConfig,
    store: &Store,
    models: &TrainedModels,
    inputs: BTreeMap<String, String>,
) -> Result<()> {
    let mut files: Vec<(String, &BoostedModel)> = Vec::new();
    for (pair, &system) in models.pairs.iter().zip(&config.systems) {
        files.push((primary_model_name(system), &pair.primary));
        files.push((secondary_model_name(system), &pair.secondary));
    }
    files.push((PROPOSED_MODEL.into(), &models.proposed));
    files.push((BASELINE_MODEL.into(), &models.baseline));
    let mut hashes = BTreeMap::new();
    for (name, model) in files {
        let json = model.to_json()?;
        hashes.insert(name.clone(), sha256_hex(json.as_bytes()));
        write_atomic(&store.model_path(&name), json.as_bytes())?;
    }
    let manifest = TrainingHashes {
        config_sha256: sha256_hex(config.to_toml().as_bytes()),
        inputs,
        models: hashes,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&store.model_path(TRAINING_HASHES), text.as_bytes())
}

pub fn load_models(config: &ExperimentConfig, store: &Store) -> Result<TrainedModels> {
    let pairs = config
        .systems
        .iter()
        .map(|&s| {
            Ok(ModelPair {
                primary: BoostedModel::load(store.model_path(&primary_model_name(s)))?,
                secondary: BoostedModel::load(store.model_path(&secondary_model_name(s)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModels {
        pairs,
        proposed: BoostedModel::load(store.model_path(PROPOSED_MODEL))?,
        baseline: BoostedModel::load(store.model_path(BASELINE_MODEL))?,
    })
}

/// Features of every test actor on disk, keyed by actor id.
pub fn test_features(
    config: &ExperimentConfig,
    store: &Store,
    pairs: &[ModelPair],
) -> Result<BTreeMap<String, ActorFeatures>> {
    let mut out = BTreeMap::new();
    for name in [TEST_MATCHED_MANIFEST, TEST_MISMATCHED_MANIFEST] {
        out.extend(manifest_features(config, store, name, pairs)?);
    }
    Ok(out)
}

pub fn sweep_members(store: &Store, csm_percent: f64) -> Result<Vec<String>> {
    Ok(store
        .read_jsonl::<SweepMember>(&csm_manifest_name(csm_percent))?
        .into_iter()
        .map(|m| m.actor_id)
        .collect())
}

/// Judges every sweep point with the saved models and writes the reports.
pub fn evaluate(config: &ExperimentConfig, store: &Store, threshold: f64) -> Result<SweepReport> {
    config.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} outside [0, 1]")));
    }
    let models = load_models(config, store)?;
    let features = test_features(config, store, &models.pairs)?;
    let points = config
        .csm_sweep
        .iter()
        .map(|&p| {
            let ids = sweep_members(store, p)?;
            evaluate_point(p, &ids, &features, &models.proposed, &models.baseline, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = SweepReport { points };
    write_reports(store, &report)?;
    Ok(report)
}

pub fn write_reports(store: &Store, report: &SweepReport) -> Result<()> {
    for point in &report.points {
        for (method, rows) in [("proposed", &point.proposed_verdicts), ("baseline", &point.baseline_verdicts)] {
            let mut buf = Vec::new();
            write_verdict_csv(&mut buf, rows)?;
            write_atomic(&store.report_path(&verdict_file_name(method, point.csm_percent)), &buf)?;
        }
    }
    write_atomic(&store.report_path("summary.csv"), report.summary_csv().as_bytes())?;
    write_atomic(&store.report_path("summary.json"), report.summary_json().as_bytes())
}

/// Recomputes the summary from the per-actor verdict files alone.
pub fn summary_from_verdicts(config: &ExperimentConfig, store: &Store, threshold: f64) -> Result<SweepReport> {
    let read = |name: String| {
        let path = store.report_path(&name);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        read_verdict_csv(file)
    };
    let points = config
        .csm_sweep
        .iter()
        .map(|&p| {
            let proposed_verdicts = read(verdict_file_name("proposed", p))?;
            let baseline_verdicts = read(verdict_file_name("baseline", p))?;
            Ok(SweepPoint {
                csm_percent: p,
                threshold,
                baseline: evaluate_rows(&baseline_verdicts)?,
                proposed: evaluate_rows(&proposed_verdicts)?,
                baseline_verdicts,
                proposed_verdicts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { points })
}

pub fn read_training_hashes(store: &Store) -> Result<TrainingHashes> {
    let path = store.model_path(TRAINING_HASHES);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
