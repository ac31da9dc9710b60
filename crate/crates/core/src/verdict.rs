//! Final actor classification and evaluation.
//!
//! The proposed classifier reads `2N` features (ratios and accuracy
//! estimates) and rejects an actor as mismatched when the accuracy estimate
//! tied to its predicted class falls below a threshold. The baseline reads
//! the `N` ratios only and never rejects.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::actors::ActorFeatures;
use crate::learner::{argmax, train, BoostConfig, BoostedModel};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Innocent,
    /// Index of the stegosystem among the analyzed ones.
    Guilty(usize),
    InconclusiveCsm,
}

impl Decision {
    pub fn from_class(class: usize) -> Self {
        match class {
            0 => Decision::Innocent,
            k => Decision::Guilty(k - 1),
        }
    }

    /// Compact text form used in verdict CSVs.
    pub fn code(&self) -> String {
        match self {
            Decision::Innocent => "innocent".into(),
            Decision::Guilty(k) => format!("guilty:{k}"),
            Decision::InconclusiveCsm => "inconclusive_csm".into(),
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        match code {
            "innocent" => Ok(Decision::Innocent),
            "inconclusive_csm" => Ok(Decision::InconclusiveCsm),
            other => other
                .strip_prefix("guilty:")
                .and_then(|k| k.parse().ok())
                .map(Decision::Guilty)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown decision {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorVerdict {
    pub decision: Decision,
    pub predicted_class: usize,
    pub class_probabilities: Vec<f64>,
    pub selected_acc: f64,
    pub threshold: f64,
}

fn check_classes(features: &[ActorFeatures]) -> Result<usize> {
    let first = features.first().ok_or(Error::Empty("no actor features"))?;
    let n = first.n_systems();
    for f in features {
        if f.ratios.len() != n || f.acc_estimates.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: f.ratios.len().max(f.acc_estimates.len()),
            });
        }
    }
    Ok(n)
}

/// Trains the N + 1 class actor classifier on ratios and accuracy estimates.
pub fn train_actor_classifier(features: &[ActorFeatures], config: &BoostConfig) -> Result<BoostedModel> {
    let n = check_classes(features)?;
    let rows: Vec<Vec<f64>> = features.iter().map(ActorFeatures::proposed_vector).collect();
    let labels: Vec<usize> = features.iter().map(|f| f.label).collect();
    train(&rows, &labels, n + 1, config)
}

/// Trains the ratio-only baseline classifier.
pub fn train_baseline_classifier(features: &[ActorFeatures], config: &BoostConfig) -> Result<BoostedModel> {
    let n = check_classes(features)?;
    let rows: Vec<Vec<f64>> = features.iter().map(ActorFeatures::baseline_vector).collect();
    let labels: Vec<usize> = features.iter().map(|f| f.label).collect();
    train(&rows, &labels, n + 1, config)
}

pub fn judge(features: &ActorFeatures, model: &BoostedModel, threshold: f64) -> Result<ActorVerdict> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} outside [0, 1]")));
    }
    let n = features.n_systems();
    if model.n_classes != n + 1 || features.acc_estimates.len() != n {
        return Err(Error::DimensionMismatch {
            expected: model.n_classes,
            actual: n + 1,
        });
    }
    let class_probabilities = model.predict_proba(&features.proposed_vector())?;
    let predicted_class = argmax(&class_probabilities);
    let selected_acc = match predicted_class {
        0 => features.acc_estimates.iter().sum::<f64>() / n as f64,
        k => features.acc_estimates[k - 1],
    };
    let decision = if selected_acc < threshold {
        Decision::InconclusiveCsm
    } else {
        Decision::from_class(predicted_class)
    };
    Ok(ActorVerdict {
        decision,
        predicted_class,
        class_probabilities,
        selected_acc,
        threshold,
    })
}

pub fn judge_baseline(features: &ActorFeatures, model: &BoostedModel) -> Result<ActorVerdict> {
    let class_probabilities = model.predict_proba(&features.baseline_vector())?;
    let predicted_class = argmax(&class_probabilities);
    Ok(ActorVerdict {
        decision: Decision::from_class(predicted_class),
        predicted_class,
        class_probabilities,
        selected_acc: f64::NAN,
        threshold: 0.0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Guilty-vs-innocent accuracy over classified actors; `None` when every
    /// actor was rejected.
    pub accuracy: Option<f64>,
    pub nc_fraction: f64,
    pub confusion: Confusion,
    pub n_actors: usize,
    pub n_inconclusive: usize,
}

impl Evaluation {
    pub fn accuracy_or_nan(&self) -> f64 {
        self.accuracy.unwrap_or(f64::NAN)
    }
}

/// Scores decisions against ground-truth classes (0 = innocent).
///
/// Positives are guilty actors; naming the wrong stegosystem still counts
/// as a true positive. Rejected actors are left out of the confusion counts.
pub fn evaluate_decisions(items: impl IntoIterator<Item = (Decision, usize)>) -> Result<Evaluation> {
    let mut confusion = Confusion::default();
    let (mut total, mut rejected) = (0usize, 0usize);
    for (decision, truth) in items {
        total += 1;
        let guilty = truth != 0;
        match (decision, guilty) {
            (Decision::InconclusiveCsm, _) => rejected += 1,
            (Decision::Guilty(_), true) => confusion.tp += 1,
            (Decision::Guilty(_), false) => confusion.fp += 1,
            (Decision::Innocent, false) => confusion.tn += 1,
            (Decision::Innocent, true) => confusion.fn_ += 1,
        }
    }
    if total == 0 {
        return Err(Error::Empty("no verdicts to evaluate"));
    }
    let classified = total - rejected;
    let accuracy = (classified > 0).then(|| (confusion.tp + confusion.tn) as f64 / classified as f64);
    Ok(Evaluation {
        accuracy,
        nc_fraction: rejected as f64 / total as f64,
        confusion,
        n_actors: total,
        n_inconclusive: rejected,
    })
}

pub fn evaluate(verdicts: &[(ActorVerdict, usize)]) -> Result<Evaluation> {
    evaluate_decisions(verdicts.iter().map(|(v, t)| (v.decision, *t)))
}

/// One line of a verdict CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub actor_id: String,
    pub ground_truth: usize,
    pub decision: String,
    pub predicted_class: usize,
    pub selected_acc: f64,
}

pub fn write_verdict_csv<W: Write>(out: W, rows: &[VerdictRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io("<verdict csv>", e))?;
    Ok(())
}

pub fn read_verdict_csv<R: Read>(input: R) -> Result<Vec<VerdictRow>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Recomputes an evaluation from saved verdict rows.
pub fn evaluate_rows(rows: &[VerdictRow]) -> Result<Evaluation> {
    let items = rows
        .iter()
        .map(|r| Decision::parse(&r.decision).map(|d| (d, r.ground_truth)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_decisions(items)
}
