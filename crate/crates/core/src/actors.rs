//! Actor simulation and per-actor feature construction.
//!
//! An actor owns 10–50 images from a single cover source. Guilty actors
//! embed a random fraction of them with one stegosystem at independent
//! random payloads. Per stegosystem, the actor contributes two features: the
//! share of images the primary classifier flags, and the DCI accuracy
//! estimate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dci::{classify_observed, DciReport, Observed, SeedPolicy};
use crate::features::{extract, FeatureOrder};
use crate::imagery::{generate_cover, CoverSourceSpec, Image};
use crate::learner::BoostedModel;
use crate::seed;
use crate::stego::{embed, EmbeddingRecord, StegoSpec, StegoSystem};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Innocent,
    Guilty(StegoSystem),
}

impl GroundTruth {
    /// Class index among `systems`: 0 innocent, k + 1 for `systems[k]`.
    pub fn class_index(&self, systems: &[StegoSystem]) -> Result<usize> {
        match self {
            GroundTruth::Innocent => Ok(0),
            GroundTruth::Guilty(s) => systems
                .iter()
                .position(|x| x == s)
                .map(|k| k + 1)
                .ok_or_else(|| Error::InvalidConfig(format!("stegosystem {s} not in the analyzed set"))),
        }
    }

    pub fn is_guilty(&self) -> bool {
        matches!(self, GroundTruth::Guilty(_))
    }
}

/// Parameters shared by all simulated actors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub width: usize,
    pub height: usize,
    pub systems: Vec<StegoSystem>,
    pub payload_range: (f64, f64),
    pub images_per_actor: (usize, usize),
    pub stego_fraction_range: (f64, f64),
    /// Probability that an actor is innocent; `None` makes all N + 1 classes
    /// equally likely.
    pub innocent_prior: Option<f64>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            width: 64,
            height: 64,
            systems: StegoSystem::ALL.to_vec(),
            payload_range: (0.05, 0.40),
            images_per_actor: (10, 50),
            stego_fraction_range: (0.1, 1.0),
            innocent_prior: None,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.systems.is_empty() {
            return bad("at least one stegosystem is required".into());
        }
        let (lo, hi) = self.payload_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("payload range ({lo}, {hi}) must lie in (0, 1]"));
        }
        let (a, b) = self.images_per_actor;
        if !(10..=50).contains(&a) || !(a..=50).contains(&b) {
            return bad(format!("images per actor ({a}, {b}) must lie in [10, 50]"));
        }
        let (f0, f1) = self.stego_fraction_range;
        if !(f0 >= 0.1 && f0 <= f1 && f1 <= 1.0) {
            return bad(format!("stego fraction range ({f0}, {f1}) must lie in [0.1, 1]"));
        }
        if let Some(p) = self.innocent_prior {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("innocent prior {p} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn innocent_probability(&self) -> f64 {
        self.innocent_prior
            .unwrap_or(1.0 / (self.systems.len() + 1) as f64)
    }
}

/// The cover sources an actor can be drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcePool {
    pub training: CoverSourceSpec,
    pub mismatched: Vec<CoverSourceSpec>,
}

/// Everything needed to regenerate one actor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorPlan {
    pub actor_id: String,
    pub seed: u64,
    pub is_csm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    /// Index passed to the cover generator.
    pub cover_index: u64,
    pub embedding: EmbeddingRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorRecord {
    pub actor_id: String,
    pub seed: u64,
    pub images: Vec<Image>,
    pub entries: Vec<ImageEntry>,
    pub ground_truth: GroundTruth,
    pub stego_fraction: Option<f64>,
    pub source: CoverSourceSpec,
    pub is_csm: bool,
}

impl ActorRecord {
    pub fn stego_count(&self) -> usize {
        self.entries.iter().filter(|e| e.embedding.embed_count > 0).count()
    }
}

/// Stego images for a guilty actor: round half up, at least one.
pub fn stego_count(fraction: f64, n_images: usize) -> usize {
    ((fraction * n_images as f64 + 0.5).floor() as usize).clamp(1, n_images)
}

pub fn generate_actor(config: &PopulationConfig, sources: &SourcePool, plan: &ActorPlan) -> Result<ActorRecord> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(plan.seed, "actor", 0));
    let source = if plan.is_csm {
        if sources.mismatched.is_empty() {
            return Err(Error::Empty("mismatched source pool"));
        }
        sources.mismatched[rng.gen_range(0..sources.mismatched.len())].clone()
    } else {
        sources.training.clone()
    };
    let (lo, hi) = config.images_per_actor;
    let n = rng.gen_range(lo..=hi);
    let innocent = rng.gen::<f64>() < config.innocent_probability();
    let (ground_truth, stego_fraction, n_stego) = if innocent {
        (GroundTruth::Innocent, None, 0)
    } else {
        let system = config.systems[rng.gen_range(0..config.systems.len())];
        let (f0, f1) = config.stego_fraction_range;
        let f = if f0 == f1 { f0 } else { rng.gen_range(f0..=f1) };
        (GroundTruth::Guilty(system), Some(f), stego_count(f, n))
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut marked = vec![false; n];
    for &i in &order[..n_stego] {
        marked[i] = true;
    }

    let (p0, p1) = config.payload_range;
    let mut images = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for (i, &stego) in marked.iter().enumerate() {
        let cover_index = seed::derive(plan.seed, "cover", i as u64);
        let cover = generate_cover(&source, config.width, config.height, cover_index)?;
        let (image, embedding) = match (stego, ground_truth) {
            (true, GroundTruth::Guilty(system)) => {
                let payload = if p0 == p1 { p0 } else { rng.gen_range(p0..=p1) };
                let spec = StegoSpec::new(system, payload, seed::derive(plan.seed, "key", i as u64))?;
                (embed(&cover, &spec)?, EmbeddingRecord::stego(spec))
            }
            _ => (cover, EmbeddingRecord::COVER),
        };
        images.push(image);
        entries.push(ImageEntry {
            cover_index,
            embedding,
        });
    }
    Ok(ActorRecord {
        actor_id: plan.actor_id.clone(),
        seed: plan.seed,
        images,
        entries,
        ground_truth,
        stego_fraction,
        source,
        is_csm: plan.is_csm,
    })
}

/// Primary and secondary classifiers for one stegosystem.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair {
    pub primary: BoostedModel,
    pub secondary: BoostedModel,
}

/// Two features per analyzed stegosystem plus the class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorFeatures {
    pub ratios: Vec<f64>,
    pub acc_estimates: Vec<f64>,
    pub label: usize,
}

impl ActorFeatures {
    pub fn from_reports(reports: &[DciReport], label: usize) -> Self {
        ActorFeatures {
            ratios: reports.iter().map(|r| r.predicted_stego_ratio).collect(),
            acc_estimates: reports.iter().map(|r| r.estimated_accuracy).collect(),
            label,
        }
    }

    pub fn n_systems(&self) -> usize {
        self.ratios.len()
    }

    /// Input of the proposed classifier: ratios then accuracy estimates.
    pub fn proposed_vector(&self) -> Vec<f64> {
        self.ratios.iter().chain(&self.acc_estimates).copied().collect()
    }

    /// Input of the baseline classifier: ratios only.
    pub fn baseline_vector(&self) -> Vec<f64> {
        self.ratios.clone()
    }
}

/// Runs one DCI report per analyzed stegosystem over the actor's images.
///
/// `probes[k]` is the stegosystem spec used for the re-embedding under
/// `pairs[k]`. Image features are extracted once and shared.
pub fn dci_reports(
    actor: &ActorRecord,
    pairs: &[ModelPair],
    probes: &[StegoSpec],
    order: FeatureOrder,
) -> Result<Vec<DciReport>> {
    if actor.images.is_empty() {
        return Err(Error::Empty("actor has no images"));
    }
    if pairs.len() != probes.len() || pairs.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: probes.len(),
            actual: pairs.len(),
        });
    }
    let features = actor
        .images
        .iter()
        .map(|img| extract(img, order))
        .collect::<Result<Vec<_>>>()?;
    pairs
        .iter()
        .zip(probes)
        .enumerate()
        .map(|(k, (pair, probe))| {
            let seeds = SeedPolicy::new(seed::derive(actor.seed, "dci", k as u64));
            let outcomes = actor
                .images
                .iter()
                .zip(&features)
                .enumerate()
                .map(|(i, (img, f))| {
                    let observed = Observed {
                        image: img,
                        features: &f.values,
                    };
                    classify_observed(
                        &pair.primary,
                        &pair.secondary,
                        observed,
                        probe,
                        seeds.fresh_seed(probe, i),
                        order,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            DciReport::from_outcomes(outcomes)
        })
        .collect()
}

pub fn build_features(
    actor: &ActorRecord,
    pairs: &[ModelPair],
    probes: &[StegoSpec],
    systems: &[StegoSystem],
    order: FeatureOrder,
) -> Result<ActorFeatures> {
    let reports = dci_reports(actor, pairs, probes, order)?;
    Ok(ActorFeatures::from_reports(&reports, actor.ground_truth.class_index(systems)?))
}

/// Train and test actor plans.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPlan {
    pub train: Vec<ActorPlan>,
    pub test: Vec<ActorPlan>,
}

pub fn train_plan(n_train: usize, seed: u64) -> Vec<ActorPlan> {
    (0..n_train)
        .map(|i| ActorPlan {
            actor_id: format!("train-{i:05}"),
            seed: seed::derive(seed, "train-actor", i as u64),
            is_csm: false,
        })
        .collect()
}

/// Number of mismatched actors among `n_test` at `csm_percent`.
pub fn csm_count(n_test: usize, csm_percent: f64) -> usize {
    (n_test as f64 * csm_percent / 100.0).round() as usize
}

/// Test actors at one mismatch level.
///
/// Test actors come from two fixed pools (matched and mismatched), each
/// visited in a seeded random order. Raising the percentage swaps matched
/// actors for mismatched ones, so the sets at different levels are nested.
pub fn test_plan(n_test: usize, csm_percent: f64, seed: u64) -> Result<Vec<ActorPlan>> {
    if !(0.0..=100.0).contains(&csm_percent) {
        return Err(Error::InvalidConfig(format!("csm percent {csm_percent} outside [0, 100]")));
    }
    let n_csm = csm_count(n_test, csm_percent);
    let pool = |tag: &str, csm: bool, take: usize| -> Vec<ActorPlan> {
        let mut idx: Vec<usize> = (0..n_test).collect();
        idx.shuffle(&mut seed::rng(seed::derive(seed, tag, u64::MAX)));
        let mut chosen: Vec<usize> = idx.into_iter().take(take).collect();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|i| ActorPlan {
                actor_id: format!("{tag}-{i:05}"),
                seed: seed::derive(seed, tag, i as u64),
                is_csm: csm,
            })
            .collect()
    };
    let mut plans = pool("test-matched", false, n_test - n_csm);
    plans.extend(pool("test-mismatched", true, n_csm));
    Ok(plans)
}

pub fn generate_dataset(n_train: usize, n_test: usize, csm_percent: f64, seed: u64) -> Result<DatasetPlan> {
    Ok(DatasetPlan {
        train: train_plan(n_train, seed),
        test: test_plan(n_test, csm_percent, seed)?,
    })
}
