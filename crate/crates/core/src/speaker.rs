//! Visual speaker embeddings.
//!
//! Embeddings are produced outside this crate by a face-recognition model and
//! stored as a single f32 blob of shape `[512]`. [`stub_embedding`] provides
//! deterministic stand-ins for tests and synthetic corpora.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::blob::{self, Blob, BlobData};
use crate::rng;

pub const SPEAKER_DIM: usize = 512;

/// Preferred blob name inside a speaker file.
pub const BLOB_NAME: &str = "speaker";

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f32>,
}

impl SpeakerEmbedding {
    pub fn new(vector: Vec<f32>) -> Result<Self> {
        if vector.len() != SPEAKER_DIM {
            return Err(Error::InvalidArgument(format!(
                "speaker embedding must have {SPEAKER_DIM} values, got {}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("speaker embedding is not finite".into()));
        }
        Ok(Self { vector })
    }

    pub fn zeros() -> Self {
        Self {
            vector: vec![0.0; SPEAKER_DIM],
        }
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm. A zero vector is left unchanged.
    pub fn l2_normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            vector: self.vector.iter().map(|&v| (v as f64 / n) as f32).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![SPEAKER_DIM], self.vector.clone()).expect("fixed dimension")
    }

    pub fn to_blob(&self) -> Blob {
        Blob::from_tensor(BLOB_NAME, &self.to_tensor())
    }
}

/// Reads a speaker embedding blob file. The file must hold one f32 blob of
/// shape `[512]`, or several blobs one of which is named `speaker`.
pub fn load_speaker_embedding(path: &Path, l2_normalize: bool) -> Result<SpeakerEmbedding> {
    let blobs = blob::load(path)?;
    let b = match blobs.as_slice() {
        [only] => only,
        many => blob::find(many, BLOB_NAME)?,
    };
    if b.shape != [SPEAKER_DIM] {
        return Err(Error::Format(format!(
            "{}: speaker embedding must have shape [{SPEAKER_DIM}], got {:?}",
            path.display(),
            b.shape
        )));
    }
    let BlobData::F32(values) = &b.data else {
        return Err(Error::Format(format!(
            "{}: speaker embedding must be f32, got {:?}",
            path.display(),
            b.data.dtype()
        )));
    };
    let emb = SpeakerEmbedding::new(values.clone())?;
    Ok(if l2_normalize { emb.l2_normalized() } else { emb })
}

pub fn save_speaker_embedding(path: &Path, emb: &SpeakerEmbedding) -> Result<()> {
    blob::save(path, &[emb.to_blob()])
}

/// Deterministic unit-norm Gaussian vector for `(identity_id, seed)`.
pub fn stub_embedding(identity_id: u64, seed: u64) -> SpeakerEmbedding {
    let mut r = rng::stream(seed, &format!("speaker-stub:{identity_id}"));
    let raw: Vec<f64> = (0..SPEAKER_DIM).map(|_| rng::normal(&mut r)).collect();
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    SpeakerEmbedding {
        vector: raw.iter().map(|v| (v / n) as f32).collect(),
    }
}
