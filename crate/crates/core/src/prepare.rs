//! Turns manifest records into training examples: log-mel frames trimmed to a
//! multiple of four, reconciled durations, oracle targets and the speaker
//! embedding.

use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::dsp::{self, MelConfig};
use crate::error::{Error, Result};
use crate::io::blob::{self, Blob};
use crate::io::manifest::{Manifest, ManifestRecord};
use crate::network::SUBSAMPLE;
use crate::speaker::{self, SpeakerEmbedding};
use crate::text::{self, AlignmentRecord, DurationVector, Lexicon, PhonemeSequence, Vocabulary};
use crate::train::{Example, OracleEncoderSpec};

pub const MEL_BLOB: &str = "mel";
pub const TARGET_BLOB: &str = "target";

pub struct PrepareContext {
    pub vocab: Vocabulary,
    pub lexicon: Option<Lexicon>,
    pub mel: MelConfig,
    pub oracle: OracleEncoderSpec,
    /// Seed for stub speaker embeddings.
    pub speaker_seed: u64,
    pub l2_normalize_speaker: bool,
}

impl PrepareContext {
    pub fn new(seed: u64, latent_dim: usize) -> Result<Self> {
        let mel = MelConfig::default();
        Ok(Self {
            vocab: Vocabulary::builtin(),
            lexicon: None,
            oracle: OracleEncoderSpec::new(seed, mel.n_mels, latent_dim)?,
            mel,
            speaker_seed: seed,
            l2_normalize_speaker: false,
        })
    }
}

/// Everything derived from one record.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub example: Example,
    pub mel: Tensor<f32>,
    pub durations: DurationVector,
    pub sequence: PhonemeSequence,
}

fn load_single_blob(path: &Path, name: &str) -> Result<Tensor<f32>> {
    let blobs = blob::load(path)?;
    let b = match blobs.as_slice() {
        [only] => only,
        many => blob::find(many, name)?,
    };
    b.to_tensor()
}

pub fn load_mel(rec: &ManifestRecord, cfg: &MelConfig) -> Result<Tensor<f32>> {
    match (&rec.mel_path, &rec.wav_path) {
        (Some(p), _) => load_single_blob(p, MEL_BLOB),
        (None, Some(p)) => Ok(dsp::mel_spectrogram(&dsp::read_wav(p)?, cfg)?.frames),
        (None, None) => Err(Error::Format(format!("record {}: no audio", rec.id))),
    }
}

pub fn load_speaker(rec: &ManifestRecord, ctx: &PrepareContext) -> Result<SpeakerEmbedding> {
    match (&rec.speaker_path, rec.speaker_stub_id) {
        (Some(p), _) => speaker::load_speaker_embedding(p, ctx.l2_normalize_speaker),
        (None, Some(id)) => Ok(speaker::stub_embedding(id, ctx.speaker_seed)),
        (None, None) => Err(Error::Format(format!("record {}: no speaker", rec.id))),
    }
}

/// Phoneme sequence of a record: tokenized text with aligned silences, or the
/// alignment labels themselves when the record has no text.
pub fn phoneme_sequence(rec: &ManifestRecord, align: &AlignmentRecord, ctx: &PrepareContext) -> Result<PhonemeSequence> {
    match &rec.text {
        Some(t) => {
            let lex = ctx
                .lexicon
                .as_ref()
                .ok_or_else(|| Error::Config(format!("record {} has text but no lexicon was given", rec.id)))?;
            text::tokenize_aligned(t, lex, &ctx.vocab, align)
        }
        None => ctx.vocab.encode(&align.labels()),
    }
}

/// Removes frames from the end of `durations` until they sum to `total`.
pub fn trim_durations(durations: &[usize], total: usize) -> Vec<usize> {
    let mut out = durations.to_vec();
    let mut excess = out.iter().sum::<usize>().saturating_sub(total);
    for d in out.iter_mut().rev() {
        let take = excess.min(*d);
        *d -= take;
        excess -= take;
    }
    out
}

/// Reconciles durations against all `l_a` mel frames, then trims the
/// training example (durations and targets) to the largest multiple of four
/// frames.
pub fn prepare_record(rec: &ManifestRecord, ctx: &PrepareContext) -> Result<Prepared> {
    let mel = load_mel(rec, &ctx.mel)?;
    let l_a = mel.rows();
    let kept = l_a - l_a % SUBSAMPLE;
    if kept == 0 {
        return Err(Error::InvalidArgument(format!("record {}: only {l_a} mel frames", rec.id)));
    }
    let align = AlignmentRecord::load(&rec.align_path)?;
    let sequence = phoneme_sequence(rec, &align, ctx)?;
    let durations = match &rec.durations_path {
        Some(p) => {
            let line = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let d = DurationVector::parse_csv_line(&line)?;
            if d.len() != sequence.len() || d.total() != l_a {
                return Err(Error::Format(format!(
                    "{}: {} durations summing to {}, expected {} summing to {l_a}",
                    p.display(),
                    d.len(),
                    d.total(),
                    sequence.len()
                )));
            }
            d
        }
        None => text::aligned_durations(&align, &sequence, &ctx.vocab, ctx.mel.fps(), l_a)?,
    };
    let target = match &rec.target_path {
        Some(p) => {
            let t = load_single_blob(p, TARGET_BLOB)?;
            if t.shape() != [kept / SUBSAMPLE, ctx.oracle.dim()] {
                return Err(Error::Format(format!(
                    "record {}: target shape {:?}, expected [{}, {}]",
                    rec.id,
                    t.shape(),
                    kept / SUBSAMPLE,
                    ctx.oracle.dim()
                )));
            }
            t
        }
        None => {
            let trimmed = Tensor::new(vec![kept, mel.cols()], mel.data()[..kept * mel.cols()].to_vec())?;
            ctx.oracle.targets(&trimmed)?
        }
    };
    let example = Example {
        id: rec.id.clone(),
        phonemes: sequence.ids().to_vec(),
        durations: trim_durations(durations.values(), kept),
        speaker: load_speaker(rec, ctx)?,
        target,
    };
    Ok(Prepared {
        example,
        mel,
        durations,
        sequence,
    })
}

/// Per-record outcome of a corpus pass; failures do not stop the others.
pub struct CorpusReport<T> {
    pub ok: Vec<T>,
    pub failed: Vec<(String, Error)>,
}

/// Prepares every record in id order.
pub fn prepare_manifest(manifest: &Manifest, ctx: &PrepareContext) -> CorpusReport<Prepared> {
    let mut records: Vec<&ManifestRecord> = manifest.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut report = CorpusReport {
        ok: Vec::new(),
        failed: Vec::new(),
    };
    for rec in records {
        match prepare_record(rec, ctx) {
            Ok(p) => report.ok.push(p),
            Err(e) => report.failed.push((rec.id.clone(), e)),
        }
    }
    report
}

/// Writes `<id>.mel.blob`, `<id>.durations` and `<id>.target.blob` under
/// `out` and returns the record pointing at them.
pub fn write_prepared(rec: &ManifestRecord, p: &Prepared, out: &Path) -> Result<ManifestRecord> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let file = |suffix: &str| -> PathBuf { out.join(format!("{}.{suffix}", rec.id)) };
    let (mel_path, dur_path, target_path) = (file("mel.blob"), file("durations"), file("target.blob"));
    blob::save(&mel_path, &[Blob::from_tensor(MEL_BLOB, &p.mel)])?;
    std::fs::write(&dur_path, p.durations.to_csv_line()).map_err(|e| Error::io(&dur_path, e))?;
    blob::save(&target_path, &[Blob::from_tensor(TARGET_BLOB, &p.example.target)])?;
    Ok(ManifestRecord {
        mel_path: Some(mel_path),
        wav_path: None,
        target_path: Some(target_path),
        durations_path: Some(dur_path),
        ..rec.clone()
    })
}
