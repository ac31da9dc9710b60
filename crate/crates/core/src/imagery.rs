//! Grayscale images, binary PGM I/O and synthetic cover sources.
//!
//! A cover source is a small deterministic processing pipeline
//! (texture → smoothing → resampling → quantization → clamp). Different
//! parameter sets yield images whose residual statistics differ, which is
//! how the experiments manufacture cover-source mismatch.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub const MIN_SIDE: usize = 8;

/// Row-major 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Number of pixels that differ from `other`; panics on a size mismatch.
    pub fn count_changed(&self, other: &Image) -> usize {
        assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Serializes as binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = PgmCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        if magic != "P5" {
            return Err(Error::UnsupportedFormat(magic));
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval != 255 {
            return Err(Error::UnsupportedDepth(maxval));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => {
                return Err(Error::MalformedHeader(
                    "missing whitespace after maxval".into(),
                ))
            }
        }
        let (width, height) = (width as usize, height as usize);
        check_dims(width, height)?;
        let expected = width * height;
        let raster = &bytes[cursor.pos..];
        if raster.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                actual: raster.len(),
            });
        }
        Image::new(width, height, raster[..expected].to_vec())
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::MalformedHeader(format!("bad {what} {tok:?}")))
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::from_pgm(&bytes)
}

pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.to_pgm()).map_err(|e| Error::io(path, e))
}

/// Parameters of a synthetic cover source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverSourceSpec {
    pub source_id: String,
    pub base_noise_sigma: f64,
    pub smoothing_kernel_radius: usize,
    pub quantization_step: u32,
    pub resample_factor: f64,
    pub rng_seed: u64,
}

impl CoverSourceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("source {}: {msg}", self.source_id)));
        if !(self.base_noise_sigma.is_finite() && self.base_noise_sigma >= 0.0) {
            return bad(format!("base_noise_sigma {} must be >= 0", self.base_noise_sigma));
        }
        if self.quantization_step < 1 {
            return bad("quantization_step must be >= 1".into());
        }
        if !(self.resample_factor > 0.5 && self.resample_factor <= 2.0) {
            return bad(format!(
                "resample_factor {} must lie in (0.5, 2.0]",
                self.resample_factor
            ));
        }
        Ok(())
    }

    /// True when both specs run the same pipeline, ignoring the id.
    pub fn same_processing(&self, other: &CoverSourceSpec) -> bool {
        self.base_noise_sigma == other.base_noise_sigma
            && self.smoothing_kernel_radius == other.smoothing_kernel_radius
            && self.quantization_step == other.quantization_step
            && self.resample_factor == other.resample_factor
            && self.rng_seed == other.rng_seed
    }
}

/// Amplitude of the low-frequency scene component relative to the noise sigma.
const SCENE_GAIN: f64 = 4.0;
/// Control-point spacing of the low-frequency scene component, in pixels.
const SCENE_CELL: usize = 16;

/// Generates cover number `index` of a source. Pure in all arguments.
pub fn generate_cover(spec: &CoverSourceSpec, width: usize, height: usize, index: u64) -> Result<Image> {
    check_dims(width, height)?;
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.rng_seed, "cover", index));

    // texture is synthesized at the pre-resampling resolution
    let bw = ((width as f64 / spec.resample_factor).round() as usize).max(2);
    let bh = ((height as f64 / spec.resample_factor).round() as usize).max(2);
    let mut plane = base_texture(spec.base_noise_sigma, bw, bh, &mut rng);
    if spec.smoothing_kernel_radius > 0 {
        plane = box_blur(&plane, bw, bh, spec.smoothing_kernel_radius);
    }
    if (bw, bh) != (width, height) {
        plane = resample_bilinear(&plane, bw, bh, width, height);
    }
    let q = f64::from(spec.quantization_step);
    let pixels = plane
        .into_iter()
        .map(|v| ((v / q).round() * q).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(width, height, pixels)
}

fn base_texture(sigma: f64, w: usize, h: usize, rng: &mut impl Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![128.0; w * h];
    }
    let cw = w / SCENE_CELL + 2;
    let ch = h / SCENE_CELL + 2;
    let grid: Vec<f64> = (0..cw * ch)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let scene = resample_bilinear(&grid, cw, ch, w, h);
    scene
        .into_iter()
        .map(|s| 128.0 + sigma * (SCENE_GAIN * s + rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn box_blur(src: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let norm = (2 * radius + 1) as f64;
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| src[y * w + clampi(x as isize + d, w)]).sum();
            tmp[y * w + x] = s / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| tmp[clampi(y as isize + d, h) * w + x]).sum();
            out[y * w + x] = s / norm;
        }
    }
    out
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
fn resample_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}
