//! ±1 embedding simulators.
//!
//! All three systems share one engine: a per-pixel cost map is turned into
//! change probabilities by the payload-limited sender (minimal expected cost
//! at a fixed entropy), and changes are then sampled from a key-seeded
//! stream. LSB matching is the uniform-cost special case.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imagery::Image;
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StegoSystem {
    LsbMatching,
    AdaptiveHill,
    AdaptiveVar,
}

impl StegoSystem {
    pub const ALL: [StegoSystem; 3] = [
        StegoSystem::LsbMatching,
        StegoSystem::AdaptiveHill,
        StegoSystem::AdaptiveVar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StegoSystem::LsbMatching => "lsbm",
            StegoSystem::AdaptiveHill => "hill",
            StegoSystem::AdaptiveVar => "var",
        }
    }

    /// Side length of the cost filter footprint; smaller images are rejected.
    pub fn filter_support(self) -> usize {
        match self {
            StegoSystem::LsbMatching => 1,
            StegoSystem::AdaptiveHill => HILL_SPREAD,
            StegoSystem::AdaptiveVar => VAR_WINDOW,
        }
    }
}

impl std::fmt::Display for StegoSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StegoSpec {
    pub system: StegoSystem,
    pub payload_bpp: f64,
    pub key_seed: u64,
}

impl StegoSpec {
    pub fn new(system: StegoSystem, payload_bpp: f64, key_seed: u64) -> Result<Self> {
        let spec = StegoSpec {
            system,
            payload_bpp,
            key_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.payload_bpp > 0.0 && self.payload_bpp <= 1.0) {
            return Err(Error::InvalidPayload(self.payload_bpp));
        }
        Ok(())
    }

    pub fn with_key(&self, key_seed: u64) -> StegoSpec {
        StegoSpec { key_seed, ..*self }
    }
}

/// How many times an image has been through the embedder: 0 cover, 1 stego,
/// 2 double stego.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub spec: Option<StegoSpec>,
    pub embed_count: u8,
}

impl EmbeddingRecord {
    pub const COVER: EmbeddingRecord = EmbeddingRecord {
        spec: None,
        embed_count: 0,
    };

    pub fn stego(spec: StegoSpec) -> Self {
        EmbeddingRecord {
            spec: Some(spec),
            embed_count: 1,
        }
    }

    /// Record of the image after one more embedding with `spec`.
    pub fn then(&self, spec: StegoSpec) -> Self {
        EmbeddingRecord {
            spec: Some(spec),
            embed_count: self.embed_count + 1,
        }
    }
}

/// Embeds a simulated payload into `cover`.
pub fn embed(cover: &Image, spec: &StegoSpec) -> Result<Image> {
    let rates = change_rates(cover, spec)?;
    Ok(apply_changes(cover, &rates, spec.key_seed))
}

/// Re-embeds with the same parameters under a different key and message.
pub fn subsequent_embed(image: &Image, spec: &StegoSpec, fresh_seed: u64) -> Result<Image> {
    if fresh_seed == spec.key_seed {
        return Err(Error::SeedCollision(fresh_seed));
    }
    embed(image, &spec.with_key(fresh_seed))
}

/// Per-pixel probabilities of a +1 and a −1 change.
#[derive(Clone, Debug)]
pub struct ChangeRates {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub lambda: f64,
}

impl ChangeRates {
    pub fn expected_changes(&self) -> f64 {
        self.plus.iter().chain(&self.minus).sum()
    }

    /// Entropy of the change pattern in bits per pixel.
    pub fn entropy_bpp(&self) -> f64 {
        let total: f64 = self
            .plus
            .iter()
            .zip(&self.minus)
            .map(|(&p, &m)| {
                let stay = 1.0 - p - m;
                -[p, m, stay]
                    .into_iter()
                    .filter(|&q| q > 0.0)
                    .map(|q| q * q.log2())
                    .sum::<f64>()
            })
            .sum();
        total / self.plus.len() as f64
    }
}

pub fn change_rates(cover: &Image, spec: &StegoSpec) -> Result<ChangeRates> {
    spec.validate()?;
    let costs = cost_map(cover, spec.system)?;
    let directions: Vec<Directions> = cover.pixels().iter().map(|&p| Directions::of(p)).collect();
    let n_pixels = costs.len() as f64;
    let (lambda, _) = if spec.system == StegoSystem::LsbMatching {
        // uniform costs: pixels differ only by how many directions they allow
        let one_sided = directions.iter().filter(|d| d.count() < 2.0).count() as f64;
        let group_dirs = [Directions { up: true, down: true }, Directions { up: true, down: false }];
        let weights = [n_pixels - one_sided, one_sided];
        let cells = Cells {
            costs: &[1.0, 1.0],
            dirs: &group_dirs,
            weights: Some(&weights),
            n_pixels,
        };
        solve_lambda(&cells, spec.payload_bpp)
    } else {
        let cells = Cells {
            costs: &costs,
            dirs: &directions,
            weights: None,
            n_pixels,
        };
        solve_lambda(&cells, spec.payload_bpp)
    };
    let mut plus = Vec::with_capacity(costs.len());
    let mut minus = Vec::with_capacity(costs.len());
    for (&c, d) in costs.iter().zip(&directions) {
        let p = d.rate(lambda * c);
        plus.push(if d.up { p } else { 0.0 });
        minus.push(if d.down { p } else { 0.0 });
    }
    Ok(ChangeRates {
        plus,
        minus,
        lambda,
    })
}

fn apply_changes(cover: &Image, rates: &ChangeRates, key_seed: u64) -> Image {
    let mut rng = seed::rng(seed::derive(key_seed, "embed", 0));
    let pixels = cover
        .pixels()
        .iter()
        .zip(rates.plus.iter().zip(&rates.minus))
        .map(|(&px, (&p, &m))| {
            let u: f64 = rng.gen();
            if u < p {
                px + 1
            } else if u < p + m {
                px - 1
            } else {
                px
            }
        })
        .collect();
    Image::new(cover.width(), cover.height(), pixels).expect("geometry preserved")
}

/// Allowed change directions; saturated pixels move inward only.
#[derive(Clone, Copy, Debug)]
struct Directions {
    up: bool,
    down: bool,
}

impl Directions {
    fn of(pixel: u8) -> Self {
        Directions {
            up: pixel < 255,
            down: pixel > 0,
        }
    }

    fn count(self) -> f64 {
        f64::from(u8::from(self.up) + u8::from(self.down))
    }

    /// Probability of each allowed change at scaled cost `a = λ·ρ`.
    #[inline]
    fn rate(self, a: f64) -> f64 {
        1.0 / (a.exp() + self.count())
    }

    /// Entropy in nats of the pixel's change distribution at scaled cost
    /// `a`, and its derivative with respect to `a`.
    #[inline]
    fn entropy_nats(self, a: f64) -> (f64, f64) {
        let k = self.count();
        let e = (-a).exp();
        let p = e / (1.0 + k * e);
        ((k * e).ln_1p() + a * k * p, -a * k * p * (1.0 - k * p))
    }
}

pub const PAYLOAD_TOLERANCE: f64 = 1e-6;
pub const MAX_SOLVER_ITERATIONS: usize = 200;

/// Mean entropy (bits/pixel) of the Gibbs change distribution at
/// multiplier `lambda`, with its derivative in `lambda`.
fn mean_entropy(cells: &Cells<'_>, lambda: f64) -> (f64, f64) {
    let (mut h, mut dh) = (0.0, 0.0);
    for (i, (&c, &d)) in cells.costs.iter().zip(cells.dirs).enumerate() {
        let (v, dv) = d.entropy_nats(lambda * c);
        let w = cells.weights.map_or(1.0, |w| w[i]);
        h += w * v;
        dh += w * dv * c;
    }
    let scale = std::f64::consts::LN_2 * cells.n_pixels;
    (h / scale, dh / scale)
}

/// Solver input: per-cell costs and directions, optionally weighted by how
/// many pixels share the cell.
struct Cells<'a> {
    costs: &'a [f64],
    dirs: &'a [Directions],
    weights: Option<&'a [f64]>,
    n_pixels: f64,
}

/// Finds the Lagrange multiplier whose change distribution carries
/// `payload` bits per pixel. Returns `(lambda, achieved_payload)`.
///
/// Entropy is decreasing in λ ≥ 0; a payload at or above the λ = 0 maximum
/// yields λ = 0. The root is bracketed by doubling and then refined by
/// bisection, taking a Newton step instead whenever it lands strictly
/// inside the current bracket.
fn solve_lambda(cells: &Cells<'_>, payload: f64) -> (f64, f64) {
    let (h0, _) = mean_entropy(cells, 0.0);
    if payload >= h0 - PAYLOAD_TOLERANCE {
        return (0.0, h0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut h, mut dh) = mean_entropy(cells, hi);
    while h > payload && hi < f64::MAX / 2.0 {
        lo = hi;
        hi *= 2.0;
        (h, dh) = mean_entropy(cells, hi);
    }
    let mut x = hi;
    for _ in 0..MAX_SOLVER_ITERATIONS {
        if (h - payload).abs() <= PAYLOAD_TOLERANCE * 0.1 {
            break;
        }
        if h > payload {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - (h - payload) / dh;
        x = if dh < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        (h, dh) = mean_entropy(cells, x);
    }
    (x, h)
}

/// Solves the payload-limited sender for an arbitrary cost map with no
/// saturated pixels. Exposed for solver tests and diagnostics.
pub fn solve_for_costs(costs: &[f64], payload_bits_per_pixel: f64) -> ChangeRates {
    let dirs = vec![Directions { up: true, down: true }; costs.len()];
    let cells = Cells {
        costs,
        dirs: &dirs,
        weights: None,
        n_pixels: costs.len() as f64,
    };
    let (lambda, _) = solve_lambda(&cells, payload_bits_per_pixel);
    let rates: Vec<f64> = costs.iter().map(|&c| dirs[0].rate(lambda * c)).collect();
    ChangeRates {
        plus: rates.clone(),
        minus: rates,
        lambda,
    }
}

/// Ternary entropy in bits of a symmetric ±1 change with per-side rate `beta`.
pub fn ternary_entropy(beta: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    2.0 * h(beta) + h(1.0 - 2.0 * beta)
}

const MIN_COST: f64 = 1e-4;
const MAX_COST: f64 = 1e8;
const HILL_RESIDUAL_SPREAD: usize = 3;
const HILL_SPREAD: usize = 15;
const VAR_WINDOW: usize = 5;

/// Embedding cost of each pixel; strictly positive and finite.
pub fn cost_map(image: &Image, system: StegoSystem) -> Result<Vec<f64>> {
    let (w, h) = (image.width(), image.height());
    let support = system.filter_support();
    if w < support || h < support {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            support,
        });
    }
    let px: Vec<f64> = image.pixels().iter().map(|&p| f64::from(p)).collect();
    let costs = match system {
        StegoSystem::LsbMatching => vec![1.0; w * h],
        StegoSystem::AdaptiveHill => {
            const KB: [[f64; 3]; 3] = [[-1.0, 2.0, -1.0], [2.0, -4.0, 2.0], [-1.0, 2.0, -1.0]];
            let mut residual = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (dy, row) in KB.iter().enumerate() {
                        for (dx, k) in row.iter().enumerate() {
                            acc += k * px[reflect(y, dy, h) * w + reflect(x, dx, w)];
                        }
                    }
                    residual[y * w + x] = acc.abs();
                }
            }
            let xi = mean_filter(&residual, w, h, HILL_RESIDUAL_SPREAD);
            let inv: Vec<f64> = xi.iter().map(|&v| 1.0 / (v + 1e-10)).collect();
            mean_filter(&inv, w, h, HILL_SPREAD)
        }
        StegoSystem::AdaptiveVar => {
            let mean = mean_filter(&px, w, h, VAR_WINDOW);
            let sq: Vec<f64> = px.iter().map(|v| v * v).collect();
            let mean_sq = mean_filter(&sq, w, h, VAR_WINDOW);
            mean.iter()
                .zip(&mean_sq)
                .map(|(m, s)| 1.0 / ((s - m * m).max(0.0) + 0.01))
                .collect()
        }
    };
    Ok(costs.into_iter().map(|c| c.clamp(MIN_COST, MAX_COST)).collect())
}

/// Index of `i + d - 1` (a 3-tap neighbourhood) with mirror padding.
#[inline]
fn reflect(i: usize, d: usize, n: usize) -> usize {
    let j = i as isize + d as isize - 1;
    if j < 0 {
        (-j) as usize
    } else if j as usize >= n {
        2 * (n - 1) - j as usize
    } else {
        j as usize
    }
}

/// Separable `size`×`size` mean filter with symmetric padding.
fn mean_filter(src: &[f64], w: usize, h: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mirror = |v: isize, n: usize| -> usize {
        let n = n as isize;
        let mut v = v;
        if v < 0 {
            v = -v - 1;
        }
        if v >= n {
            v = 2 * n - v - 1;
        }
        v.clamp(0, n - 1) as usize
    };
    let norm = size as f64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| src[y * w + mirror(x as isize + d, w)]).sum();
            tmp[y * w + x] = s / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| tmp[mirror(y as isize + d, h) * w + x]).sum();
            out[y * w + x] = s / norm;
        }
    }
    out
}
