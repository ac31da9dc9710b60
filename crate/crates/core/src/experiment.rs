//! Experiment configuration and the end-to-end harness.
//!
//! A run trains one primary/secondary classifier pair per stegosystem on
//! images from the training source, turns simulated actors into feature
//! vectors, trains the proposed and baseline actor classifiers, and
//! evaluates both across a sweep of mismatch levels. Everything derives
//! from the master seed, so equal configs give equal reports.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actors::{
    build_features, generate_actor, test_plan, train_plan, ActorFeatures, ActorPlan, ActorRecord, ModelPair,
    PopulationConfig, SourcePool,
};
use crate::dci::SeedPolicy;
use crate::features::{extract, FeatureOrder};
use crate::imagery::{generate_cover, CoverSourceSpec, Image};
use crate::learner::{train, BoostConfig, BoostedModel};
use crate::seed;
use crate::stego::{embed, subsequent_embed, StegoSpec, StegoSystem};
use crate::verdict::{
    judge, judge_baseline, train_actor_classifier, train_baseline_classifier, Evaluation,
    VerdictRow, DEFAULT_THRESHOLD,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub feature_order: FeatureOrder,
    pub systems: Vec<StegoSystem>,
    /// Payload range of embedded actor images and image-level training stegos.
    pub payload_range: (f64, f64),
    /// Payload of the re-embedding that builds the secondary sets.
    pub probe_payload_bpp: f64,
    pub images_per_actor: (usize, usize),
    pub stego_fraction_range: (f64, f64),
    /// Innocent share among training actors; `None` balances the N+1 classes.
    pub innocent_prior: Option<f64>,
    /// Innocent share among test actors.
    pub test_innocent_prior: f64,
    pub n_train_actors: usize,
    pub n_test_actors: usize,
    /// Training-source covers used to fit each image-level classifier pair.
    pub image_training_covers: usize,
    pub csm_sweep: Vec<f64>,
    pub threshold: f64,
    pub image_learner: BoostConfig,
    pub actor_learner: BoostConfig,
    pub training_source: CoverSourceSpec,
    pub csm_sources: Vec<CoverSourceSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s0 = CoverSourceSpec {
            source_id: "S0".into(),
            base_noise_sigma: 2.0,
            smoothing_kernel_radius: 1,
            quantization_step: 1,
            resample_factor: 1.0,
            rng_seed: 0x5EED_0000,
        };
        let s1 = CoverSourceSpec {
            source_id: "S1".into(),
            base_noise_sigma: 8.0,
            smoothing_kernel_radius: 2,
            resample_factor: 0.75,
            rng_seed: 0x5EED_0001,
            ..s0.clone()
        };
        let s2 = CoverSourceSpec {
            source_id: "S2".into(),
            smoothing_kernel_radius: 2,
            quantization_step: 4,
            rng_seed: 0x5EED_0002,
            ..s0.clone()
        };
        let population = PopulationConfig::default();
        ExperimentConfig {
            seed: 2024,
            width: population.width,
            height: population.height,
            feature_order: FeatureOrder::First,
            systems: population.systems,
            payload_range: population.payload_range,
            probe_payload_bpp: 0.4,
            images_per_actor: population.images_per_actor,
            stego_fraction_range: population.stego_fraction_range,
            innocent_prior: None,
            test_innocent_prior: 0.5,
            n_train_actors: 1000,
            n_test_actors: 400,
            image_training_covers: 1000,
            csm_sweep: vec![0.0, 25.0, 50.0, 75.0, 100.0],
            threshold: DEFAULT_THRESHOLD,
            image_learner: BoostConfig::default(),
            actor_learner: BoostConfig::default(),
            training_source: s0,
            csm_sources: vec![s1, s2],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    /// Multiplies actor and image-training counts by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidConfig(format!("scale {factor} must be positive")));
        }
        let scale = |n: usize, min: usize| ((n as f64 * factor).round() as usize).max(min);
        let classes = self.systems.len() + 1;
        let mut out = self.clone();
        out.n_train_actors = scale(self.n_train_actors, 4 * classes);
        out.n_test_actors = scale(self.n_test_actors, 4);
        out.image_training_covers = scale(self.image_training_covers, 10);
        out.validate()?;
        Ok(out)
    }

    pub fn population(&self) -> PopulationConfig {
        PopulationConfig {
            width: self.width,
            height: self.height,
            systems: self.systems.clone(),
            payload_range: self.payload_range,
            images_per_actor: self.images_per_actor,
            stego_fraction_range: self.stego_fraction_range,
            innocent_prior: self.innocent_prior,
        }
    }

    pub fn test_population(&self) -> PopulationConfig {
        PopulationConfig {
            innocent_prior: Some(self.test_innocent_prior),
            ..self.population()
        }
    }

    pub fn sources(&self) -> SourcePool {
        SourcePool {
            training: self.training_source.clone(),
            mismatched: self.csm_sources.clone(),
        }
    }

    /// Re-embedding spec per analyzed stegosystem.
    pub fn probes(&self) -> Vec<StegoSpec> {
        self.systems
            .iter()
            .enumerate()
            .map(|(k, &system)| StegoSpec {
                system,
                payload_bpp: self.probe_payload_bpp,
                key_seed: seed::derive(self.seed, "probe-key", k as u64),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.population().validate()?;
        self.test_population().validate()?;
        if self.width < 8 || self.height < 8 {
            return bad(format!("geometry {}x{} below 8x8", self.width, self.height));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in self.systems.iter() {
            if !seen.insert(*s) {
                return bad(format!("stegosystem {s} listed twice"));
            }
            if self.width < s.filter_support() || self.height < s.filter_support() {
                return bad(format!("geometry too small for {s}"));
            }
        }
        if !(self.probe_payload_bpp > 0.0 && self.probe_payload_bpp <= 1.0) {
            return bad(format!("probe payload {} outside (0, 1]", self.probe_payload_bpp));
        }
        if self.n_train_actors < self.systems.len() + 1 || self.n_test_actors == 0 {
            return bad("too few actors".into());
        }
        if self.image_training_covers < 2 {
            return bad("image_training_covers must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.csm_sweep.is_empty() || self.csm_sweep.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return bad("csm sweep points must lie in [0, 100]".into());
        }
        if self.csm_sources.is_empty() {
            return bad("at least one mismatched source is required".into());
        }
        self.image_learner.validate()?;
        self.actor_learner.validate()?;
        let all: Vec<&CoverSourceSpec> = std::iter::once(&self.training_source).chain(&self.csm_sources).collect();
        for (i, a) in all.iter().enumerate() {
            a.validate()?;
            for b in &all[i + 1..] {
                if a.source_id == b.source_id {
                    return bad(format!("duplicate source id {}", a.source_id));
                }
                if a.same_processing(b) {
                    return bad(format!("sources {} and {} are identical", a.source_id, b.source_id));
                }
            }
        }
        Ok(())
    }
}

/// Image-level training set for one stegosystem: every training-source
/// cover paired with a stego version at a random payload.
pub fn image_training_set(config: &ExperimentConfig, system_index: usize) -> Result<Vec<(Image, u8)>> {
    let system = config.systems[system_index];
    let k = system_index as u64;
    let mut rng = seed::rng(seed::derive(config.seed, "pool-payload", k));
    let (p0, p1) = config.payload_range;
    let mut out = Vec::with_capacity(2 * config.image_training_covers);
    for i in 0..config.image_training_covers as u64 {
        let cover_index = seed::derive(seed::derive(config.seed, "pool-cover", k), "image", i);
        let cover = generate_cover(&config.training_source, config.width, config.height, cover_index)?;
        let payload = if p0 == p1 { p0 } else { rng.gen_range(p0..=p1) };
        let key = seed::derive(seed::derive(config.seed, "pool-key", k), "image", i);
        let stego = embed(&cover, &StegoSpec::new(system, payload, key)?)?;
        out.push((cover, 0));
        out.push((stego, 1));
    }
    Ok(out)
}

/// Fits the primary classifier on the given images and the secondary one on
/// their re-embedded versions.
pub fn train_model_pair(
    samples: &[(Image, u8)],
    probe: &StegoSpec,
    order: FeatureOrder,
    learner: &BoostConfig,
    seed: u64,
) -> Result<ModelPair> {
    let seeds = SeedPolicy::new(seed);
    let labels: Vec<usize> = samples.iter().map(|(_, l)| usize::from(*l)).collect();
    let mut primary_rows = Vec::with_capacity(samples.len());
    let mut secondary_rows = Vec::with_capacity(samples.len());
    for (i, (image, _)) in samples.iter().enumerate() {
        primary_rows.push(extract(image, order)?.values);
        let again = subsequent_embed(image, probe, seeds.fresh_seed(probe, i))?;
        secondary_rows.push(extract(&again, order)?.values);
    }
    Ok(ModelPair {
        primary: train(&primary_rows, &labels, 2, learner)?,
        secondary: train(&secondary_rows, &labels, 2, learner)?,
    })
}

pub fn train_image_models(config: &ExperimentConfig) -> Result<Vec<ModelPair>> {
    let probes = config.probes();
    (0..config.systems.len())
        .map(|k| {
            let samples = image_training_set(config, k)?;
            train_model_pair(
                &samples,
                &probes[k],
                config.feature_order,
                &config.image_learner,
                seed::derive(config.seed, "pool-fresh", k as u64),
            )
        })
        .collect()
}

pub fn actor_features(config: &ExperimentConfig, actor: &ActorRecord, pairs: &[ModelPair]) -> Result<ActorFeatures> {
    build_features(actor, pairs, &config.probes(), &config.systems, config.feature_order)
}

pub fn features_for_plans(
    config: &ExperimentConfig,
    population: &PopulationConfig,
    plans: &[ActorPlan],
    pairs: &[ModelPair],
) -> Result<BTreeMap<String, ActorFeatures>> {
    let sources = config.sources();
    plans
        .iter()
        .map(|plan| {
            let actor = generate_actor(population, &sources, plan)?;
            Ok((plan.actor_id.clone(), actor_features(config, &actor, pairs)?))
        })
        .collect()
}

/// The three actor-level models of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModels {
    pub pairs: Vec<ModelPair>,
    pub proposed: BoostedModel,
    pub baseline: BoostedModel,
}

pub fn train_actor_models(config: &ExperimentConfig, train_features: &[ActorFeatures]) -> Result<(BoostedModel, BoostedModel)> {
    Ok((
        train_actor_classifier(train_features, &config.actor_learner)?,
        train_baseline_classifier(train_features, &config.actor_learner)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub csm_percent: f64,
    pub baseline_accuracy: Option<f64>,
    pub proposed_accuracy: Option<f64>,
    pub nc_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub csm_percent: f64,
    pub threshold: f64,
    pub baseline: Evaluation,
    pub proposed: Evaluation,
    #[serde(skip)]
    pub baseline_verdicts: Vec<VerdictRow>,
    #[serde(skip)]
    pub proposed_verdicts: Vec<VerdictRow>,
}

impl SweepPoint {
    pub fn row(&self) -> SweepRow {
        SweepRow {
            csm_percent: self.csm_percent,
            baseline_accuracy: self.baseline.accuracy,
            proposed_accuracy: self.proposed.accuracy,
            nc_fraction: self.proposed.nc_fraction,
        }
    }
}

/// Judges the actors of one sweep point with both classifiers.
pub fn evaluate_point(
    csm_percent: f64,
    actor_ids: &[String],
    features: &BTreeMap<String, ActorFeatures>,
    proposed: &BoostedModel,
    baseline: &BoostedModel,
    threshold: f64,
) -> Result<SweepPoint> {
    let mut proposed_verdicts = Vec::with_capacity(actor_ids.len());
    let mut baseline_verdicts = Vec::with_capacity(actor_ids.len());
    for id in actor_ids {
        let f = features
            .get(id)
            .ok_or_else(|| Error::InvalidConfig(format!("no features for actor {id}")))?;
        let p = judge(f, proposed, threshold)?;
        let b = judge_baseline(f, baseline)?;
        proposed_verdicts.push(VerdictRow {
            actor_id: id.clone(),
            ground_truth: f.label,
            decision: p.decision.code(),
            predicted_class: p.predicted_class,
            selected_acc: p.selected_acc,
        });
        baseline_verdicts.push(VerdictRow {
            actor_id: id.clone(),
            ground_truth: f.label,
            decision: b.decision.code(),
            predicted_class: b.predicted_class,
            selected_acc: b.selected_acc,
        });
    }
    Ok(SweepPoint {
        csm_percent,
        threshold,
        baseline: crate::verdict::evaluate_rows(&baseline_verdicts)?,
        proposed: crate::verdict::evaluate_rows(&proposed_verdicts)?,
        baseline_verdicts,
        proposed_verdicts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NaN".into(),
    }
}

impl SweepReport {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points.iter().map(SweepPoint::row).collect()
    }

    /// Summary table: one line per sweep point.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("csm_percent,baseline_accuracy,proposed_accuracy,nc_fraction\n");
        for r in self.rows() {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                r.csm_percent,
                fmt_metric(r.baseline_accuracy),
                fmt_metric(r.proposed_accuracy),
                r.nc_fraction
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.points).expect("report is serializable")
    }

    pub fn point(&self, csm_percent: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.csm_percent == csm_percent)
    }
}

/// All actor features of a run, keyed by actor id.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorFeatureSets {
    pub train: Vec<ActorFeatures>,
    pub test: BTreeMap<String, ActorFeatures>,
}

/// Test actors at every mismatch level are drawn from the fully matched and
/// fully mismatched pools, so featurizing both pools covers any sweep.
pub fn test_pool_plans(config: &ExperimentConfig) -> Result<Vec<ActorPlan>> {
    let mut plans = test_plan(config.n_test_actors, 0.0, config.seed)?;
    plans.extend(test_plan(config.n_test_actors, 100.0, config.seed)?);
    Ok(plans)
}

/// Actor ids of the test set at one mismatch level.
pub fn sweep_ids(config: &ExperimentConfig, csm_percent: f64) -> Result<Vec<String>> {
    Ok(test_plan(config.n_test_actors, csm_percent, config.seed)?
        .into_iter()
        .map(|p| p.actor_id)
        .collect())
}

pub fn sweep(
    config: &ExperimentConfig,
    features: &BTreeMap<String, ActorFeatures>,
    proposed: &BoostedModel,
    baseline: &BoostedModel,
    threshold: f64,
) -> Result<SweepReport> {
    let points = config
        .csm_sweep
        .iter()
        .map(|&p| {
            evaluate_point(p, &sweep_ids(config, p)?, features, proposed, baseline, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { points })
}

/// Result of a complete in-memory run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub models: TrainedModels,
    pub features: ActorFeatureSets,
    pub report: SweepReport,
}

impl ExperimentRun {
    /// Re-judges one sweep point at a different threshold.
    pub fn rejudge(&self, config: &ExperimentConfig, csm_percent: f64, threshold: f64) -> Result<SweepPoint> {
        evaluate_point(
            csm_percent,
            &sweep_ids(config, csm_percent)?,
            &self.features.test,
            &self.models.proposed,
            &self.models.baseline,
            threshold,
        )
    }
}

/// Runs the whole experiment without touching the filesystem.
pub fn run_in_memory(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let pairs = train_image_models(config)?;
    let train_plans = train_plan(config.n_train_actors, config.seed);
    let train: Vec<ActorFeatures> = features_for_plans(config, &config.population(), &train_plans, &pairs)?.into_values().collect();
    let test = features_for_plans(config, &config.test_population(), &test_pool_plans(config)?, &pairs)?;
    let (proposed, baseline) = train_actor_models(config, &train)?;
    let report = sweep(config, &test, &proposed, &baseline, config.threshold)?;
    Ok(ExperimentRun {
        models: TrainedModels {
            pairs,
            proposed,
            baseline,
        },
        features: ActorFeatureSets { train, test },
        report,
    })
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub source_id: String,
    pub system: StegoSystem,
    pub payload_bpp: f64,
    pub n_covers: usize,
    pub feature_order: FeatureOrder,
    pub overall_fraction: f64,
    pub directional_features: usize,
    pub feature_dim: usize,
    pub per_feature_fraction: Vec<f64>,
}

/// Directionality audit on `n_covers` training-source covers.
pub fn audit_directionality(
    config: &ExperimentConfig,
    system: StegoSystem,
    payload_bpp: f64,
    n_covers: usize,
) -> Result<AuditSummary> {
    if n_covers == 0 {
        return Err(Error::Empty("audit needs at least one cover"));
    }
    let covers = (0..n_covers as u64)
        .map(|i| {
            generate_cover(
                &config.training_source,
                config.width,
                config.height,
                seed::derive(config.seed, "audit-cover", i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = StegoSpec::new(system, payload_bpp, seed::derive(config.seed, "audit-key", 0))?;
    let report = crate::features::directionality_audit(&covers, &spec, config.feature_order, config.seed)?;
    Ok(AuditSummary {
        source_id: config.training_source.source_id.clone(),
        system,
        payload_bpp,
        n_covers,
        feature_order: config.feature_order,
        overall_fraction: report.overall_fraction,
        directional_features: report.directional_features().len(),
        feature_dim: report.per_feature_fraction.len(),
        per_feature_fraction: report.per_feature_fraction,
    })
}
