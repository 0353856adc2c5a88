//! Binary container for a finished run.
//!
//! Layout (little-endian): `SLAB` magic, u32 format version, zlib-compressed
//! JSON payload, then a u64 checksum made of the first eight bytes of the
//! SHA-256 of everything before it.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{LogisticMeta, MemberPipeline, StackingEnsemble, VotingEnsemble, VotingMode};
use crate::error::{Error, Result};
use crate::pipeline::{ConfigId, ExperimentConfig};
use crate::report::ExperimentReport;
use crate::view::FittedView;

pub const MAGIC: &[u8; 4] = b"SLAB";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedView {
    pub config: ConfigId,
    pub view: FittedView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub config: ExperimentConfig,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    /// Every configuration's view as fit on the training split.
    pub views: Vec<NamedView>,
    pub members: Vec<MemberPipeline>,
    pub stacking_meta: LogisticMeta,
    pub stacking_folds: usize,
    pub report: ExperimentReport,
}

impl Artifact {
    pub fn voting(&self, mode: VotingMode) -> Result<VotingEnsemble> {
        VotingEnsemble::new(self.members.clone(), mode)
    }

    pub fn stacking(&self) -> StackingEnsemble {
        StackingEnsemble {
            members: self.members.clone(),
            meta: self.stacking_meta.clone(),
            oof_folds: self.stacking_folds,
            n_classes: self.label_names.len(),
        }
    }

    /// Labels from a member (by model id) or an ensemble (by name).
    pub fn predict(&self, name: &str, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        use crate::model::Classifier;
        if let Some(m) = self.members.iter().find(|m| m.name == name) {
            return m.fitted.predict(x);
        }
        if name == crate::pipeline::STACKING_NAME {
            return self.stacking().predict(x);
        }
        match VotingMode::ALL.into_iter().find(|m| m.id() == name) {
            Some(mode) => self.voting(mode)?.predict(x),
            None => Err(Error::InvalidArgument(format!("artifact has no model or ensemble named `{name}`"))),
        }
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn encode(a: &Artifact) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(a).map_err(|e| Error::Artifact(format!("serialize: {e}")))?;
    let mut out = Vec::with_capacity(json.len() / 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    let mut z = ZlibEncoder::new(out, Compression::default());
    z.write_all(&json).map_err(|e| Error::Artifact(e.to_string()))?;
    let mut out = z.finish().map_err(|e| Error::Artifact(e.to_string()))?;
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Artifact> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Artifact("not an artifact file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ARTIFACT_VERSION {
        return Err(Error::IncompatibleVersion {
            found: version,
            expected: ARTIFACT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Artifact("checksum mismatch".into()));
    }
    let mut json = Vec::new();
    ZlibDecoder::new(&body[8..])
        .read_to_end(&mut json)
        .map_err(|e| Error::Artifact(format!("decompress: {e}")))?;
    serde_json::from_slice(&json).map_err(|e| Error::Artifact(format!("payload: {e}")))
}

pub fn save_artifact(a: &Artifact, path: &Path) -> Result<()> {
    let bytes = encode(a)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
