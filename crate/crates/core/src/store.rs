//! On-disk dataset, model and report layout.
//!
//! ```text
//! <root>/images/<hh>/<sha256>.pgm       content-addressed images
//! <root>/manifests/image_pool_<sys>.jsonl
//! <root>/manifests/train.jsonl
//! <root>/manifests/test_matched.jsonl, test_mismatched.jsonl
//! <root>/manifests/test_csm<ppp>.jsonl  actor ids per sweep point
//! <root>/models/*.json
//! <root>/reports/*
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actors::{ActorRecord, GroundTruth, ImageEntry};
use crate::imagery::{read_image, CoverSourceSpec, Image};
use crate::stego::{EmbeddingRecord, StegoSpec, StegoSystem};
use crate::{Error, Result};

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MATCHED_MANIFEST: &str = "test_matched.jsonl";
pub const TEST_MISMATCHED_MANIFEST: &str = "test_mismatched.jsonl";
pub const TRAINING_HASHES: &str = "training_manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn csm_manifest_name(csm_percent: f64) -> String {
    format!("test_csm{:03}.jsonl", csm_percent.round() as u32)
}

pub fn image_pool_manifest_name(system: StegoSystem) -> String {
    format!("image_pool_{}.jsonl", system.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    /// Relative to the dataset root.
    pub path: String,
    pub embed_count: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bpp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_seed: Option<u64>,
    pub cover_index: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub actor_id: String,
    pub source_id: String,
    /// `innocent` or `guilty`.
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stegosystem: Option<StegoSystem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stego_fraction: Option<f64>,
    pub is_csm: bool,
    pub seed: u64,
    pub images: Vec<ManifestImage>,
}

/// One labeled image of an image-level training pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolImage {
    pub path: String,
    pub label: u8,
}

/// Sweep-point manifest line: the actor and the pool manifest holding it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepMember {
    pub actor_id: String,
    pub manifest: String,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(name)
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.root.join("models").join(name)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn create_dirs(&self) -> Result<()> {
        for d in ["images", "manifests", "models", "reports"] {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Writes `image` under its content hash and returns the relative path.
    pub fn put_image(&self, image: &Image) -> Result<String> {
        let bytes = image.to_pgm();
        let hash = sha256_hex(&bytes);
        let rel = format!("images/{}/{}.pgm", &hash[..2], hash);
        let path = self.root.join(&rel);
        if !path.exists() {
            let dir = path.parent().expect("image path has a parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_atomic(&path, &bytes)?;
        }
        Ok(rel)
    }

    pub fn get_image(&self, rel: &str) -> Result<Image> {
        let path = self.root.join(rel);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        read_image(&path)
    }

    pub fn manifest_line(&self, actor: &ActorRecord) -> Result<ManifestLine> {
        let images = actor
            .images
            .iter()
            .zip(&actor.entries)
            .map(|(img, entry)| {
                let spec = entry.embedding.spec.as_ref();
                Ok(ManifestImage {
                    path: self.put_image(img)?,
                    embed_count: entry.embedding.embed_count,
                    payload_bpp: spec.map(|s| s.payload_bpp),
                    key_seed: spec.map(|s| s.key_seed),
                    cover_index: entry.cover_index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (ground_truth, stegosystem) = match actor.ground_truth {
            GroundTruth::Innocent => ("innocent".to_string(), None),
            GroundTruth::Guilty(s) => ("guilty".to_string(), Some(s)),
        };
        Ok(ManifestLine {
            actor_id: actor.actor_id.clone(),
            source_id: actor.source.source_id.clone(),
            ground_truth,
            stegosystem,
            stego_fraction: actor.stego_fraction,
            is_csm: actor.is_csm,
            seed: actor.seed,
            images,
        })
    }

    /// Rebuilds an actor from its manifest line, reading every image.
    pub fn load_actor(&self, line: &ManifestLine, sources: &[CoverSourceSpec]) -> Result<ActorRecord> {
        let source = sources
            .iter()
            .find(|s| s.source_id == line.source_id)
            .cloned()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown source {}", line.source_id)))?;
        let ground_truth = match (line.ground_truth.as_str(), line.stegosystem) {
            ("innocent", None) => GroundTruth::Innocent,
            ("guilty", Some(s)) => GroundTruth::Guilty(s),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "actor {} has inconsistent ground truth",
                    line.actor_id
                )))
            }
        };
        let mut images = Vec::with_capacity(line.images.len());
        let mut entries = Vec::with_capacity(line.images.len());
        for m in &line.images {
            images.push(self.get_image(&m.path)?);
            let embedding = match (m.embed_count, line.stegosystem, m.payload_bpp, m.key_seed) {
                (0, _, _, _) => EmbeddingRecord::COVER,
                (n, Some(system), Some(payload_bpp), Some(key_seed)) => EmbeddingRecord {
                    spec: Some(StegoSpec {
                        system,
                        payload_bpp,
                        key_seed,
                    }),
                    embed_count: n,
                },
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "image {} of actor {} lacks embedding parameters",
                        m.path, line.actor_id
                    )))
                }
            };
            entries.push(ImageEntry {
                cover_index: m.cover_index,
                embedding,
            });
        }
        Ok(ActorRecord {
            actor_id: line.actor_id.clone(),
            seed: line.seed,
            images,
            entries,
            ground_truth,
            stego_fraction: line.stego_fraction,
            source,
            is_csm: line.is_csm,
        })
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut buf, row)?;
            buf.push(b'\n');
        }
        write_atomic(&self.manifest_path(name), &buf)
    }

    pub fn read_jsonl<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<T>> {
        let path = self.manifest_path(name);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
