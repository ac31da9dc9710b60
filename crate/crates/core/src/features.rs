//! SPAM-style residual co-occurrence features and the directionality audit.
//!
//! For each of four directions (horizontal, vertical, diagonal,
//! anti-diagonal) the first-order difference residual is truncated to
//! `[-T, T]` and the joint histogram of consecutive residuals along that
//! direction is accumulated and normalized to sum to one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::imagery::Image;
use crate::seed;
use crate::stego::{embed, subsequent_embed, StegoSpec};
use crate::{Error, Result};

pub const TRUNCATION: i16 = 3;
const BINS: usize = (2 * TRUNCATION as usize) + 1;
const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];

/// Co-occurrence depth of the extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureOrder {
    /// Pairs of consecutive residuals: 4 · 7² = 196 features.
    #[default]
    First,
    /// Runs of four consecutive residuals: 4 · 7⁴ = 9604 features.
    Second,
}

impl FeatureOrder {
    fn run_length(self) -> usize {
        match self {
            FeatureOrder::First => 2,
            FeatureOrder::Second => 4,
        }
    }

    pub fn block_len(self) -> usize {
        BINS.pow(self.run_length() as u32)
    }

    pub fn dim(self) -> usize {
        DIRECTIONS.len() * self.block_len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }
}

pub fn extract(image: &Image, order: FeatureOrder) -> Result<FeatureVector> {
    let (w, h) = (image.width(), image.height());
    let run = order.run_length();
    // a run of `run` residuals spans run + 1 pixels along each axis
    if w < run + 1 || h < run + 1 {
        return Err(Error::InvalidDimensions {
            width: w,
            height: h,
        });
    }
    let px = image.pixels();
    let block = order.block_len();
    let mut values = vec![0.0; DIRECTIONS.len() * block];
    let mut counts = vec![0u32; block];
    let span = run as isize;
    for (di, &(dx, dy)) in DIRECTIONS.iter().enumerate() {
        counts.iter_mut().for_each(|c| *c = 0);
        let (x0, x1) = if dx < 0 { (span as usize, w) } else { (0, w - (dx * span) as usize) };
        let y1 = h - (dy * span) as usize;
        let step = dy * w as isize + dx;
        let mut total = 0u32;
        for y in 0..y1 {
            for x in x0..x1 {
                let base = (y * w + x) as isize;
                let mut code = 0usize;
                for k in 0..span {
                    let a = px[(base + k * step) as usize] as i16;
                    let b = px[(base + (k + 1) * step) as usize] as i16;
                    let r = (b - a).clamp(-TRUNCATION, TRUNCATION);
                    code = code * BINS + (r + TRUNCATION) as usize;
                }
                counts[code] += 1;
                total += 1;
            }
        }
        let norm = f64::from(total);
        for (v, &c) in values[di * block..(di + 1) * block].iter_mut().zip(&counts) {
            *v = f64::from(c) / norm;
        }
    }
    Ok(FeatureVector { values })
}

/// Bin of a first-order block holding the residual pair `(r1, r2)`.
pub fn pair_bin(direction: usize, r1: i16, r2: i16) -> usize {
    direction * FeatureOrder::First.block_len()
        + (r1 + TRUNCATION) as usize * BINS
        + (r2 + TRUNCATION) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalityReport {
    /// Fraction of covers with Δfᵢ·Δ²fᵢ > 0, per feature.
    pub per_feature_fraction: Vec<f64>,
    pub overall_fraction: f64,
}

impl DirectionalityReport {
    pub fn directional_features(&self) -> Vec<usize> {
        self.per_feature_fraction
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0.5)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Audits the residual features for directionality under `spec`.
pub fn directionality_audit(
    covers: &[Image],
    spec: &StegoSpec,
    order: FeatureOrder,
    seed: u64,
) -> Result<DirectionalityReport> {
    directionality_audit_with(covers, spec, seed, |img| extract(img, order).map(|v| v.values))
}

/// Audit with an arbitrary feature map. Each cover is embedded once and
/// re-embedded under an independent key; a feature counts as directional on
/// a cover when both variations are nonzero and share sign.
pub fn directionality_audit_with<F>(
    covers: &[Image],
    spec: &StegoSpec,
    seed: u64,
    features: F,
) -> Result<DirectionalityReport>
where
    F: Fn(&Image) -> Result<Vec<f64>>,
{
    if covers.is_empty() {
        return Err(Error::Empty("directionality audit needs covers"));
    }
    let mut hits: Vec<usize> = Vec::new();
    for (i, cover) in covers.iter().enumerate() {
        let i = i as u64;
        let first = spec.with_key(seed::derive(seed, "audit-first", i));
        let mut second = seed::derive(seed, "audit-second", i);
        if second == first.key_seed {
            second ^= 1;
        }
        let stego = embed(cover, &first)?;
        let double = subsequent_embed(&stego, &first, second)?;
        let (f0, f1, f2) = (features(cover)?, features(&stego)?, features(&double)?);
        if hits.is_empty() {
            hits = vec![0; f0.len()];
        }
        if f1.len() != hits.len() || f2.len() != hits.len() || f0.len() != hits.len() {
            return Err(Error::DimensionMismatch {
                expected: hits.len(),
                actual: f0.len(),
            });
        }
        for (j, hit) in hits.iter_mut().enumerate() {
            if (f1[j] - f0[j]) * (f2[j] - f1[j]) > 0.0 {
                *hit += 1;
            }
        }
    }
    let n = covers.len() as f64;
    let per_feature_fraction: Vec<f64> = hits.iter().map(|&h| h as f64 / n).collect();
    let overall_fraction = if per_feature_fraction.is_empty() {
        0.0
    } else {
        per_feature_fraction.iter().sum::<f64>() / per_feature_fraction.len() as f64
    };
    Ok(DirectionalityReport {
        per_feature_fraction,
        overall_fraction,
    })
}

/// Writes one row per vector; a label column is appended when given.
pub fn write_feature_csv<W: Write>(out: W, rows: &[FeatureVector], labels: Option<&[usize]>) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
    }
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for (i, row) in rows.iter().enumerate() {
        let mut record: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
        if let Some(labels) = labels {
            record.push(labels[i].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{generate_cover, CoverSourceSpec};
    use crate::stego::StegoSystem;

    fn source(q: u32) -> CoverSourceSpec {
        CoverSourceSpec {
            source_id: "f".into(),
            base_noise_sigma: 3.0,
            smoothing_kernel_radius: 0,
            quantization_step: q,
            resample_factor: 1.0,
            rng_seed: 17,
        }
    }

    fn block_sums(v: &FeatureVector, order: FeatureOrder) -> Vec<f64> {
        v.values.chunks(order.block_len()).map(|c| c.iter().sum()).collect()
    }

    #[test]
    fn dimensions() {
        assert_eq!(FeatureOrder::First.dim(), 196);
        assert_eq!(FeatureOrder::Second.dim(), 9604);
        let img = generate_cover(&source(1), 32, 32, 0).unwrap();
        assert_eq!(extract(&img, FeatureOrder::Second).unwrap().dim(), 9604);
    }

    #[test]
    fn constant_image_is_a_point_mass() {
        let img = Image::filled(16, 16, 77).unwrap();
        let v = extract(&img, FeatureOrder::First).unwrap();
        for d in 0..4 {
            for j in 0..49 {
                let expected = if d * 49 + j == pair_bin(d, 0, 0) { 1.0 } else { 0.0 };
                assert_eq!(v.values[d * 49 + j], expected);
            }
        }
    }

    #[test]
    fn blocks_are_normalized() {
        for order in [FeatureOrder::First, FeatureOrder::Second] {
            let img = generate_cover(&source(1), 40, 24, 3).unwrap();
            let v = extract(&img, order).unwrap();
            for s in block_sums(&v, order) {
                assert!((s - 1.0).abs() < 1e-9);
            }
            assert!(v.values.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn shift_invariance() {
        let img = generate_cover(&source(1), 64, 64, 4).unwrap();
        let shifted: Vec<u8> = img.pixels().iter().map(|&p| p.clamp(0, 245) + 10).collect();
        // only valid where no pixel was clamped
        assert!(img.pixels().iter().all(|&p| p <= 245));
        let shifted = Image::new(64, 64, shifted).unwrap();
        assert_eq!(
            extract(&img, FeatureOrder::First).unwrap(),
            extract(&shifted, FeatureOrder::First).unwrap()
        );
    }

    #[test]
    fn known_residual_pattern() {
        // horizontal ramp with slope 1: every horizontal pair is (1, 1)
        let pixels: Vec<u8> = (0..16 * 16).map(|i| (i % 16) as u8 * 1 + 50).collect();
        let img = Image::new(16, 16, pixels).unwrap();
        let v = extract(&img, FeatureOrder::First).unwrap();
        assert_eq!(v.values[pair_bin(0, 1, 1)], 1.0);
        assert_eq!(v.values[pair_bin(1, 0, 0)], 1.0);
        assert_eq!(v.values[pair_bin(2, 1, 1)], 1.0);
        assert_eq!(v.values[pair_bin(3, -1, -1)], 1.0);
    }

    #[test]
    fn audit_flags_constant_feature_as_non_directional() {
        let covers: Vec<Image> = (0..30).map(|i| generate_cover(&source(1), 32, 32, i).unwrap()).collect();
        let spec = StegoSpec::new(StegoSystem::LsbMatching, 0.4, 0).unwrap();
        let report = directionality_audit_with(&covers, &spec, 1, |_| Ok(vec![3.0])).unwrap();
        assert_eq!(report.per_feature_fraction, vec![0.0]);
        assert!(directionality_audit_with(&[], &spec, 1, |_| Ok(vec![3.0])).is_err());
    }

    #[test]
    fn odd_pixel_fraction_is_directional_on_parity_biased_covers() {
        // quantization step 2 makes every cover pixel even
        let covers: Vec<Image> = (0..50).map(|i| generate_cover(&source(2), 32, 32, i).unwrap()).collect();
        let spec = StegoSpec::new(StegoSystem::LsbMatching, 0.4, 0).unwrap();
        let odd = |img: &Image| {
            let n = img.pixels().iter().filter(|&&p| p % 2 == 1).count();
            Ok(vec![n as f64 / img.pixels().len() as f64])
        };
        let report = directionality_audit_with(&covers, &spec, 9, odd).unwrap();
        assert!(report.overall_fraction > 0.5, "{}", report.overall_fraction);
    }

    #[test]
    fn csv_rows_and_labels() {
        let rows = vec![FeatureVector::from(vec![0.5, 0.25]), FeatureVector::from(vec![1.0, 0.0])];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows, Some(&[0, 1])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0.5,0.25,0\n1,0,1\n");
        assert!(write_feature_csv(Vec::new(), &rows, Some(&[0])).is_err());
    }
}
