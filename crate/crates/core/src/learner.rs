//! Gradient-boosted decision stumps with a softmax log-loss.
//!
//! Each round fits one stump per class score to the current gradients
//! (Newton leaf values, exact greedy split search over presorted columns)
//! and applies the shrunken update. If an update would raise the training
//! loss it is halved until it does not, so the loss never increases.
//!
//! Two-class models keep class 0's score at zero and boost class 1 only,
//! which is plain logistic boosting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "dci-boosted-stumps";
pub const MODEL_VERSION: u32 = 1;

/// L2 regularization on leaf values; keeps Newton steps finite on pure leaves.
pub const LEAF_REG: f64 = 1e-3;

/// Relative gain margin below which two candidate splits count as tied.
/// Equal partitions reached through different features accumulate their
/// sums in different orders and can differ in the last bits.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-12;
const MAX_BACKTRACK: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_stumps_per_round: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds: 200,
            learning_rate: 0.1,
            max_stumps_per_round: 1,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds < 1 {
            return Err(Error::InvalidConfig("n_rounds must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must lie in (0, 1]",
                self.learning_rate
            )));
        }
        if self.max_stumps_per_round < 1 {
            return Err(Error::InvalidConfig("max_stumps_per_round must be >= 1".into()));
        }
        Ok(())
    }
}

/// Depth-one tree: `x[feature] < threshold` goes left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x[self.feature] < self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub format: String,
    pub version: u32,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub learning_rate: f64,
    pub n_rounds: usize,
    /// Stumps contributing to each class score, in fitting order.
    pub stumps: Vec<Vec<Stump>>,
    /// Training loss after each round (index 0 is the initial loss).
    pub loss_history: Vec<f64>,
}

impl BoostedModel {
    /// Model with no stumps: every class equally likely.
    pub fn empty(n_classes: usize, feature_dim: usize) -> Self {
        BoostedModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            n_classes,
            feature_dim,
            learning_rate: 0.1,
            n_rounds: 0,
            stumps: vec![Vec::new(); n_classes],
            loss_history: Vec::new(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.stumps
            .iter()
            .map(|class| class.iter().map(|s| s.eval(x)).sum())
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(softmax(&self.scores(x)))
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: BoostedModel =
            serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptModel(m));
        if self.format != MODEL_FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.n_classes < 2 || self.stumps.len() != self.n_classes {
            return bad(format!(
                "{} classes with {} stump lists",
                self.n_classes,
                self.stumps.len()
            ));
        }
        for s in self.stumps.iter().flatten() {
            if s.feature >= self.feature_dim {
                return bad(format!("stump feature {} >= dim {}", s.feature, self.feature_dim));
            }
            if !(s.threshold.is_finite() && s.left.is_finite() && s.right.is_finite()) {
                return bad("non-finite stump".into());
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BoostedModel::from_json(&text)
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Best split found by the greedy search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Columns with their row order sorted by value (ties by row index).
pub struct SortedColumns {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let columns: Vec<Vec<f64>> = (0..dim)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        SortedColumns { columns, order }
    }

    /// Exact greedy search maximizing the second-order gain
    /// `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)`. Earlier features and lower
    /// thresholds win ties (see [`GAIN_TIE_TOLERANCE`]). `None` when every
    /// column is constant.
    pub fn best_split(&self, grad: &[f64], hess: &[f64]) -> Option<Split> {
        let g_total: f64 = grad.iter().sum();
        let h_total: f64 = hess.iter().sum();
        let parent = g_total * g_total / (h_total + LEAF_REG);
        let mut best: Option<Split> = None;
        for (j, (col, order)) in self.columns.iter().zip(&self.order).enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in order.windows(2) {
                let (a, b) = (w[0] as usize, w[1] as usize);
                gl += grad[a];
                hl += hess[a];
                let (va, vb) = (col[a], col[b]);
                if va == vb {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = gl * gl / (hl + LEAF_REG) + gr * gr / (hr + LEAF_REG) - parent;
                if best.map_or(true, |s| gain > s.gain + GAIN_TIE_TOLERANCE * s.gain.abs().max(1.0)) {
                    let mut threshold = va + (vb - va) / 2.0;
                    if threshold <= va {
                        threshold = vb;
                    }
                    best = Some(Split {
                        feature: j,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn leaf_values(&self, split: &Split, grad: &[f64], hess: &[f64]) -> (f64, f64) {
        let col = &self.columns[split.feature];
        let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..col.len() {
            if col[i] < split.threshold {
                gl += grad[i];
                hl += hess[i];
            } else {
                gr += grad[i];
                hr += hess[i];
            }
        }
        (-gl / (hl + LEAF_REG), -gr / (hr + LEAF_REG))
    }
}

fn validate_training(rows: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<usize> {
    if rows.len() < 2 {
        return Err(Error::Empty("training needs at least two samples"));
    }
    if labels.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            actual: labels.len(),
        });
    }
    if n_classes < 2 {
        return Err(Error::InvalidConfig("n_classes must be >= 2".into()));
    }
    let dim = rows[0].len();
    if dim == 0 {
        return Err(Error::Empty("feature vectors are empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: j });
        }
    }
    let mut seen = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::InvalidConfig(format!("label {l} >= n_classes {n_classes}")));
        }
        seen[l] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::MissingClass(k));
    }
    Ok(dim)
}

fn mean_log_loss(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &y)| {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - s[y]
        })
        .sum();
    total / scores.len() as f64
}

pub fn train(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, config: &BoostConfig) -> Result<BoostedModel> {
    config.validate()?;
    let dim = validate_training(rows, labels, n_classes)?;
    let n = rows.len();
    let columns = SortedColumns::new(rows);
    let fitted: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };

    let mut model = BoostedModel::empty(n_classes, dim);
    model.learning_rate = config.learning_rate;
    model.n_rounds = config.n_rounds;
    let mut scores = vec![vec![0.0; n_classes]; n];
    let mut loss = mean_log_loss(&scores, labels);
    model.loss_history.push(loss);

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..config.n_rounds {
        for _ in 0..config.max_stumps_per_round {
            let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
            let mut proposals: Vec<(usize, Stump)> = Vec::with_capacity(fitted.len());
            for &k in &fitted {
                for i in 0..n {
                    let p = probs[i][k];
                    grad[i] = p - f64::from(u8::from(labels[i] == k));
                    hess[i] = (p * (1.0 - p)).max(1e-12);
                }
                let stump = match columns.best_split(&grad, &hess) {
                    Some(split) => {
                        let (left, right) = columns.leaf_values(&split, &grad, &hess);
                        Stump {
                            feature: split.feature,
                            threshold: split.threshold,
                            left,
                            right,
                        }
                    }
                    None => {
                        // constant features: fit a bias only
                        let v = -grad.iter().sum::<f64>() / (hess.iter().sum::<f64>() + LEAF_REG);
                        Stump {
                            feature: 0,
                            threshold: 0.0,
                            left: v,
                            right: v,
                        }
                    }
                };
                proposals.push((k, stump));
            }

            let mut step = config.learning_rate;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACK {
                let trial: Vec<Vec<f64>> = rows
                    .iter()
                    .zip(&scores)
                    .map(|(x, s)| {
                        let mut s = s.clone();
                        for (k, stump) in &proposals {
                            s[*k] += step * stump.eval(x);
                        }
                        s
                    })
                    .collect();
                let trial_loss = mean_log_loss(&trial, labels);
                if trial_loss <= loss {
                    accepted = Some((trial, trial_loss));
                    break;
                }
                step *= 0.5;
            }
            if let Some((trial, trial_loss)) = accepted {
                scores = trial;
                loss = trial_loss;
                for (k, stump) in proposals {
                    model.stumps[k].push(Stump {
                        left: step * stump.left,
                        right: step * stump.right,
                        ..stump
                    });
                }
            }
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Fraction of rows whose prediction equals the label.
pub fn accuracy(model: &BoostedModel, rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in rows.iter().zip(labels) {
        if model.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn separable() -> (Vec<Vec<f64>>, Vec<usize>) {
        (vec![vec![0.0], vec![0.1], vec![0.9], vec![1.0]], vec![0, 0, 1, 1])
    }

    fn cfg(rounds: usize) -> BoostConfig {
        BoostConfig {
            n_rounds: rounds,
            ..BoostConfig::default()
        }
    }

    #[test]
    fn separable_one_dimensional() {
        let (x, y) = separable();
        let model = train(&x, &y, 2, &cfg(10)).unwrap();
        assert_eq!(accuracy(&model, &x, &y).unwrap(), 1.0);
        // margin check at the largest step with guaranteed monotone loss
        let model = train(&x, &y, 2, &BoostConfig { learning_rate: 0.5, ..cfg(10) }).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            let p = model.predict_proba(row).unwrap();
            assert!(p[label] >= 0.9, "{p:?}");
        }
    }

    #[test]
    fn single_stump_cannot_fit_scrambled_labels() {
        // labels (0,1,0,1) along the line: no threshold separates them, so
        // accuracy after one stump is at most 3/4 (checked by enumerating
        // every threshold below)
        let x = vec![vec![0.0], vec![0.1], vec![0.9], vec![1.0]];
        let y = vec![0, 1, 0, 1];
        let best_by_enumeration = (0..=4)
            .flat_map(|cut| [(cut, 0usize), (cut, 1usize)])
            .map(|(cut, left_class)| {
                (0..4)
                    .filter(|&i| if i < cut { y[i] == left_class } else { y[i] != left_class })
                    .count()
            })
            .max()
            .unwrap();
        assert_eq!(best_by_enumeration, 3);
        let model = train(&x, &y, 2, &BoostConfig { n_rounds: 1, learning_rate: 0.1, max_stumps_per_round: 1 }).unwrap();
        assert!(accuracy(&model, &x, &y).unwrap() < 1.0);
    }

    #[test]
    fn probabilities_are_normalized() {
        let mut rng = seed::rng(3);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let model = train(&rows, &labels, 3, &cfg(20)).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let p = model.predict_proba(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(model.predict(&x).unwrap(), argmax(&p));
        }
    }

    #[test]
    fn empty_model_is_uniform() {
        let model = BoostedModel::empty(3, 2);
        let p = model.predict_proba(&[0.3, 0.1]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(model.predict(&[0.3, 0.1]).unwrap(), 0);
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = seed::rng(8);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.gen()).collect()).collect();
        // noisy labels so training cannot reach zero loss quickly
        let labels: Vec<usize> = rows
            .iter()
            .map(|r| if r[0] + 0.3 * rng.gen::<f64>() > 0.6 { 1 } else { (r[1] > 0.5) as usize * 2 })
            .collect();
        let model = train(&rows, &labels, 3, &cfg(100)).unwrap();
        for w in model.loss_history.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        assert!(model.loss_history.last().unwrap() < &model.loss_history[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = seed::rng(4);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<usize> = rows.iter().map(|r| (r[2] > 0.4) as usize).collect();
        let a = train(&rows, &labels, 2, &cfg(30)).unwrap();
        let b = train(&rows, &labels, 2, &cfg(30)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn training_input_errors() {
        let (x, _) = separable();
        assert!(matches!(train(&x, &[0, 0, 0, 0], 2, &cfg(1)), Err(Error::MissingClass(1))));
        let ragged = vec![vec![0.0], vec![0.1, 0.2]];
        assert!(matches!(train(&ragged, &[0, 1], 2, &cfg(1)), Err(Error::DimensionMismatch { .. })));
        let nan = vec![vec![0.0], vec![f64::NAN]];
        assert!(matches!(train(&nan, &[0, 1], 2, &cfg(1)), Err(Error::NonFinite { row: 1, col: 0 })));
        assert!(train(&x, &[0, 1], 2, &cfg(1)).is_err());
    }

    #[test]
    fn constant_features_fit_a_bias() {
        let rows = vec![vec![1.0]; 6];
        let labels = vec![0, 1, 1, 1, 1, 1];
        let model = train(&rows, &labels, 2, &cfg(20)).unwrap();
        assert_eq!(model.predict(&[1.0]).unwrap(), 1);
    }

    #[test]
    fn json_round_trip_and_corruption() {
        let (x, y) = separable();
        let model = train(&x, &y, 2, &cfg(5)).unwrap();
        let text = model.to_json().unwrap();
        let back = BoostedModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert!(matches!(
            BoostedModel::from_json(&text[..text.len() / 2]),
            Err(Error::CorruptModel(_))
        ));
        let bumped = text.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(BoostedModel::from_json(&bumped), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn dimension_guard() {
        let model = BoostedModel::empty(2, 196);
        assert!(matches!(
            model.predict(&vec![0.0; 9604]),
            Err(Error::DimensionMismatch { expected: 196, actual: 9604 })
        ));
    }
}
