//! Detection of classifier inconsistencies.
//!
//! Every test image `A'` is re-embedded into `B'` with the same stegosystem
//! parameters and a fresh key. The primary (cover/stego) and secondary
//! (stego/double-stego) classifiers are run on both images; of the sixteen
//! possible answer combinations only two are consistent. The count of
//! inconsistencies over an actor's images gives the accuracy estimate
//! `1 − INC / (2·n)`.

use serde::{Deserialize, Serialize};

use crate::features::{extract, FeatureOrder};
use crate::imagery::Image;
use crate::learner::BoostedModel;
use crate::seed;
use crate::stego::{subsequent_embed, StegoSpec};
use crate::{Error, Result};

/// An image with its extracted features.
#[derive(Clone, Copy, Debug)]
pub struct Observed<'a> {
    pub image: &'a Image,
    pub features: &'a [f64],
}

/// Binary image classifier. For the primary role 0 = cover, 1 = stego; for
/// the secondary role 0 = stego, 1 = double stego.
pub trait ImageClassifier {
    fn classify(&self, sample: &Observed<'_>) -> Result<u8>;
}

impl ImageClassifier for BoostedModel {
    fn classify(&self, sample: &Observed<'_>) -> Result<u8> {
        Ok(u8::from(self.predict(sample.features)? != 0))
    }
}

impl<C: ImageClassifier + ?Sized> ImageClassifier for &C {
    fn classify(&self, sample: &Observed<'_>) -> Result<u8> {
        (**self).classify(sample)
    }
}

/// Adapts a closure into a classifier.
pub struct FnClassifier<F>(pub F);

impl<F: Fn(&Observed<'_>) -> u8> ImageClassifier for FnClassifier<F> {
    fn classify(&self, sample: &Observed<'_>) -> Result<u8> {
        Ok((self.0)(sample))
    }
}

/// The four answers for one image, in table column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadOutcome {
    /// Secondary classifier on `A'`: 0 stego, 1 double stego.
    pub cb_a: u8,
    /// Primary classifier on `B'`: 0 cover, 1 stego.
    pub ca_b: u8,
    /// Primary classifier on `A'`: 0 cover, 1 stego.
    pub ca_a: u8,
    /// Secondary classifier on `B'`: 0 stego, 1 double stego.
    pub cb_b: u8,
}

impl QuadOutcome {
    pub fn new(cb_a: u8, ca_b: u8, ca_a: u8, cb_b: u8) -> Self {
        debug_assert!(cb_a <= 1 && ca_b <= 1 && ca_a <= 1 && cb_b <= 1);
        QuadOutcome { cb_a, ca_b, ca_a, cb_b }
    }

    /// All sixteen outcomes, `cb_a` as the most significant bit.
    pub fn all() -> impl Iterator<Item = QuadOutcome> {
        (0u8..16).map(|b| QuadOutcome::new(b >> 3 & 1, b >> 2 & 1, b >> 1 & 1, b & 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageLabel {
    Cover,
    Stego,
    #[serde(rename = "NC")]
    NotClassified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageVerdict {
    pub outcome: QuadOutcome,
    pub label: ImageLabel,
    pub nc_type1: bool,
    pub nc_type2: bool,
}

/// Classification table: the final label and which consistency filters fire.
pub fn table_lookup(o: QuadOutcome) -> (ImageLabel, bool, bool) {
    // type 2: A' looks double-embedded, or B' looks like a cover
    let nc_type2 = o.cb_a == 1 || o.ca_b == 0;
    // type 1: primary on A' disagrees with secondary on B'
    let nc_type1 = !nc_type2 && o.ca_a != o.cb_b;
    let label = match (nc_type1 || nc_type2, o.ca_a) {
        (true, _) => ImageLabel::NotClassified,
        (false, 0) => ImageLabel::Cover,
        (false, _) => ImageLabel::Stego,
    };
    (label, nc_type1, nc_type2)
}

impl From<QuadOutcome> for ImageVerdict {
    fn from(outcome: QuadOutcome) -> Self {
        let (label, nc_type1, nc_type2) = table_lookup(outcome);
        ImageVerdict {
            outcome,
            label,
            nc_type1,
            nc_type2,
        }
    }
}

/// Accuracy estimate from an inconsistency count over `n_images` images.
pub fn estimated_accuracy(inc_count: usize, n_images: usize) -> f64 {
    1.0 - inc_count as f64 / (2.0 * n_images as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciReport {
    pub verdicts: Vec<ImageVerdict>,
    pub type1_count: usize,
    pub type2_count: usize,
    pub inc_count: usize,
    pub estimated_accuracy: f64,
    /// Fraction of images the primary classifier calls stego.
    pub predicted_stego_ratio: f64,
}

impl DciReport {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = QuadOutcome>) -> Result<Self> {
        let verdicts: Vec<ImageVerdict> = outcomes.into_iter().map(ImageVerdict::from).collect();
        if verdicts.is_empty() {
            return Err(Error::Empty("actor has no images"));
        }
        let n = verdicts.len();
        let type1_count = verdicts.iter().filter(|v| v.nc_type1).count();
        let type2_count = verdicts.iter().filter(|v| v.nc_type2).count();
        let flagged = verdicts.iter().filter(|v| v.outcome.ca_a == 1).count();
        let inc_count = type1_count + type2_count;
        Ok(DciReport {
            estimated_accuracy: estimated_accuracy(inc_count, n),
            predicted_stego_ratio: flagged as f64 / n as f64,
            verdicts,
            type1_count,
            type2_count,
            inc_count,
        })
    }

    pub fn n_images(&self) -> usize {
        self.verdicts.len()
    }
}

/// Where the fresh keys for the re-embedded test set come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master: u64,
}

impl SeedPolicy {
    pub fn new(master: u64) -> Self {
        SeedPolicy { master }
    }

    /// Key for re-embedding image `index`; never equal to `spec.key_seed`.
    pub fn fresh_seed(&self, spec: &StegoSpec, index: usize) -> u64 {
        let s = seed::derive(self.master, "dci-fresh", index as u64);
        if s == spec.key_seed {
            s ^ 1
        } else {
            s
        }
    }
}

/// Runs the four classifications for one test image whose features are
/// already known.
pub fn classify_observed<A, B>(
    model_a: &A,
    model_b: &B,
    a: Observed<'_>,
    spec: &StegoSpec,
    fresh_seed: u64,
    order: FeatureOrder,
) -> Result<QuadOutcome>
where
    A: ImageClassifier + ?Sized,
    B: ImageClassifier + ?Sized,
{
    let b_image = subsequent_embed(a.image, spec, fresh_seed)?;
    let b_features = extract(&b_image, order)?;
    let b = Observed {
        image: &b_image,
        features: &b_features.values,
    };
    Ok(QuadOutcome::new(
        model_b.classify(&a)?,
        model_a.classify(&b)?,
        model_a.classify(&a)?,
        model_b.classify(&b)?,
    ))
}

pub fn classify_quad<A, B>(
    model_a: &A,
    model_b: &B,
    a_image: &Image,
    spec: &StegoSpec,
    fresh_seed: u64,
    order: FeatureOrder,
) -> Result<QuadOutcome>
where
    A: ImageClassifier + ?Sized,
    B: ImageClassifier + ?Sized,
{
    let features = extract(a_image, order)?;
    let a = Observed {
        image: a_image,
        features: &features.values,
    };
    classify_observed(model_a, model_b, a, spec, fresh_seed, order)
}

pub fn dci_report<A, B>(
    model_a: &A,
    model_b: &B,
    images: &[Image],
    spec: &StegoSpec,
    seeds: &SeedPolicy,
    order: FeatureOrder,
) -> Result<DciReport>
where
    A: ImageClassifier + ?Sized,
    B: ImageClassifier + ?Sized,
{
    if images.is_empty() {
        return Err(Error::Empty("actor has no images"));
    }
    let outcomes = images
        .iter()
        .enumerate()
        .map(|(i, img)| classify_quad(model_a, model_b, img, spec, seeds.fresh_seed(spec, i), order))
        .collect::<Result<Vec<_>>>()?;
    DciReport::from_outcomes(outcomes)
}
