//! Face datasets: manifests, age binning, train/test split and random
//! male–female pairing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec::Exec;
use crate::face_geometry::{align_face, AlignedFace, ControlVector, LandmarkSet};
use crate::image_io::load_image;
use crate::networks::{AgeStage, AttributeLabel, Gender};
use crate::{Error, Result};

pub mod toy;

pub use toy::{
    attribute_components, generate_toy_dataset, generate_toy_face, toy_component_oracle, Attribution,
    ComponentDescriptor, ToyFaceSpec,
};

/// Age in years to stage: A 0–5, B 6–15, C 16–45, D above 45.
pub fn age_to_stage(years: i64) -> Result<AgeStage> {
    match years {
        y if y < 0 => Err(Error::validation("age_years", format!("must be nonnegative, got {y}"))),
        0..=5 => Ok(AgeStage::A),
        6..=15 => Ok(AgeStage::B),
        16..=45 => Ok(AgeStage::C),
        _ => Ok(AgeStage::D),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub gender: Gender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_years: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_stage: Option<AgeStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_path: Option<PathBuf>,
}

impl ManifestEntry {
    /// The explicit stage, else the one derived from `age_years`.
    pub fn stage(&self) -> Result<AgeStage> {
        match (self.age_stage, self.age_years) {
            (Some(s), _) => Ok(s),
            (None, Some(y)) => age_to_stage(y),
            (None, None) => Err(Error::validation(
                "age_stage",
                format!("{}: neither age_years nor age_stage given", self.image_path.display()),
            )),
        }
    }

    pub fn label(&self) -> Result<AttributeLabel> {
        Ok(AttributeLabel::new(self.stage()?, self.gender))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against; not serialised.
    #[serde(skip)]
    pub base: PathBuf,
}

impl DatasetManifest {
    /// Reads a manifest whose relative paths are relative to its directory.
    /// Every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        for e in &m.entries {
            e.stage()?;
            for p in std::iter::once(&e.image_path).chain(e.landmarks_path.as_ref()) {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(Error::validation("entries", format!("{} does not exist", full.display())));
                }
            }
        }
        if m.entries.is_empty() {
            return Err(Error::EmptyDataset(format!("{} lists no faces", path.display())));
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One face with its labels.
#[derive(Debug, Clone)]
pub struct FaceRecord {
    pub id: String,
    pub face: AlignedFace,
    pub label: AttributeLabel,
}

/// Loads and aligns every manifest entry onto an S canvas. Entries without
/// landmarks must already be S×S.
pub fn load_faces(manifest: &DatasetManifest, size: usize, exec: Exec) -> Result<Vec<FaceRecord>> {
    exec.map(&manifest.entries, |e| -> Result<FaceRecord> {
        let img = load_image(&manifest.resolve(&e.image_path))?;
        let face = match &e.landmarks_path {
            Some(lp) => align_face(img.view(), &LandmarkSet::load(&manifest.resolve(lp))?, size)?,
            None => {
                let (h, w, _) = img.dim();
                if h != size || w != size {
                    return Err(Error::validation(
                        "landmarks_path",
                        format!("{}: {h}×{w} image needs landmarks to align onto {size}×{size}", e.image_path.display()),
                    ));
                }
                AlignedFace::new(img)?
            }
        };
        Ok(FaceRecord {
            id: e.image_path.to_string_lossy().into_owned(),
            face,
            label: e.label()?,
        })
    })
    .into_iter()
    .collect()
}

/// True when `id` falls in the held-out 10%: first 8 bytes of SHA-256 as a
/// big-endian integer, modulo 10, equal to 0.
pub fn is_held_out(id: &str) -> bool {
    let d = Sha256::digest(id.as_bytes());
    u64::from_be_bytes(d[..8].try_into().unwrap()) % 10 == 0
}

/// Deterministic 90/10 split by hash of the record id.
pub fn split_records(records: Vec<FaceRecord>) -> (Vec<FaceRecord>, Vec<FaceRecord>) {
    records.into_iter().partition(|r| !is_held_out(&r.id))
}

/// Indices into a face pool plus the control vector of one training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndex {
    pub male: usize,
    pub female: usize,
    pub vector: ControlVector,
}

/// Infinite reproducible stream of pairs over a pool with known genders:
/// a uniform male, a uniform female and a uniform control vector per pair,
/// sampled with replacement.
#[derive(Debug, Clone)]
pub struct PairSampler {
    males: Vec<usize>,
    females: Vec<usize>,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(genders: &[Gender], seed: u64) -> Result<Self> {
        Self::with_rng(genders, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(genders: &[Gender], rng: ChaCha8Rng) -> Result<Self> {
        let males: Vec<usize> = (0..genders.len()).filter(|&i| genders[i] == Gender::M).collect();
        let females: Vec<usize> = (0..genders.len()).filter(|&i| genders[i] == Gender::F).collect();
        if males.is_empty() || females.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "pairing needs both genders, pool has {} male and {} female faces",
                males.len(),
                females.len()
            )));
        }
        Ok(PairSampler { males, females, rng })
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }
}

impl Iterator for PairSampler {
    type Item = PairIndex;

    fn next(&mut self) -> Option<PairIndex> {
        let male = self.males[self.rng.random_range(0..self.males.len())];
        let female = self.females[self.rng.random_range(0..self.females.len())];
        let vector = ControlVector::from_code(self.rng.random_range(0..32u8));
        Some(PairIndex { male, female, vector })
    }
}

pub fn make_pairs(genders: &[Gender], seed: u64, count: usize) -> Result<Vec<PairIndex>> {
    Ok(PairSampler::new(genders, seed)?.take(count).collect())
}
