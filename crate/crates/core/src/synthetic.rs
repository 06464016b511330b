//! Desk-scale synthetic corpus: short utterances of seeded tones whose
//! phoneme durations are a fixed function of the phoneme id.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dsp::{self, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::io::manifest::{Manifest, ManifestRecord};
use crate::rng;
use crate::text::{AlignmentEntry, AlignmentRecord, Vocabulary};

/// First vocabulary id used for synthetic phonemes; lower ids are `<pad>`,
/// `sil` and `spn`.
pub const FIRST_PHONEME: usize = 3;
pub const MIN_DURATION: usize = 2;
pub const MAX_DURATION: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub utterances: usize,
    /// Mel frames per utterance at 100 fps.
    pub frames: usize,
    pub speakers: u64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            utterances: 8,
            frames: 96,
            speakers: 2,
            seed: 0,
        }
    }
}

/// One generated utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticUtterance {
    pub id: String,
    pub labels: Vec<String>,
    pub durations: Vec<usize>,
    pub speaker_stub_id: u64,
    pub wav: Waveform,
}

impl SyntheticUtterance {
    /// Alignment with interval boundaries on mel frame boundaries.
    pub fn alignment(&self, mel_fps: f64) -> Result<AlignmentRecord> {
        let mut start = 0;
        let entries = self
            .labels
            .iter()
            .zip(&self.durations)
            .map(|(l, &d)| {
                let e = AlignmentEntry {
                    label: l.clone(),
                    start_sec: start as f64 / mel_fps,
                    end_sec: (start + d) as f64 / mel_fps,
                };
                start += d;
                e
            })
            .collect();
        AlignmentRecord::new(entries)
    }
}

/// Duration of every phoneme id from [`FIRST_PHONEME`] on: a seeded
/// permutation of the ids dealt round-robin over `MIN_DURATION..=MAX_DURATION`.
pub fn phoneme_durations(vocab_size: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (FIRST_PHONEME..vocab_size).collect();
    shuffle(&mut ids, &mut rng::stream(seed, "synthetic:durations"));
    let span = MAX_DURATION - MIN_DURATION + 1;
    let mut table = vec![0; vocab_size];
    for (k, id) in ids.into_iter().enumerate() {
        table[id] = MIN_DURATION + k % span;
    }
    table
}

fn shuffle<T>(xs: &mut [T], r: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = (rng::unit(r) * (i + 1) as f64) as usize;
        xs.swap(i, j);
    }
}

fn pick(candidates: &[usize], r: &mut rand_chacha::ChaCha8Rng) -> usize {
    candidates[(rng::unit(r) * candidates.len() as f64) as usize]
}

/// Phoneme ids whose table durations sum to exactly `frames`.
fn utterance_ids(table: &[usize], frames: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let with = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (FIRST_PHONEME..table.len()).filter(|&i| pred(table[i])).collect()
    };
    let mut ids = Vec::new();
    let mut remaining = frames;
    while remaining > 2 * MAX_DURATION {
        let id = pick(&with(&|_| true), r);
        ids.push(id);
        remaining -= table[id];
    }
    // Close with one or two phonemes that fit the remainder exactly.
    if remaining > MAX_DURATION {
        let first = remaining - MAX_DURATION.min(remaining - MIN_DURATION).max(remaining / 2);
        let id = pick(&with(&|d| d == first), r);
        ids.push(id);
        remaining -= first;
    }
    ids.push(pick(&with(&|d| d == remaining), r));
    ids
}

/// Sum of two seeded sinusoids per phoneme id, with short linear ramps at
/// phoneme boundaries.
fn synthesize(ids: &[usize], table: &[usize], hop: usize, seed: u64) -> Vec<f32> {
    let mut out = Vec::new();
    for &id in ids {
        let mut r = rng::stream(seed, &format!("synthetic:tone:{id}"));
        let f1 = 150.0 + 850.0 * rng::unit(&mut r);
        let f2 = 1000.0 + 3000.0 * rng::unit(&mut r);
        let n = table[id] * hop;
        let ramp = (hop / 4).max(1);
        for k in 0..n {
            let t = k as f64 / SAMPLE_RATE as f64;
            let env = (k.min(n - 1 - k) as f64 / ramp as f64).min(1.0);
            let s = 0.3 * (std::f64::consts::TAU * f1 * t).sin() + 0.15 * (std::f64::consts::TAU * f2 * t).sin();
            out.push((env * s) as f32);
        }
    }
    out
}

pub fn generate(config: &SyntheticConfig, vocab: &Vocabulary, mel: &dsp::MelConfig) -> Result<Vec<SyntheticUtterance>> {
    if config.utterances == 0 || config.speakers == 0 {
        return Err(Error::InvalidArgument("synthetic corpus needs utterances and speakers".into()));
    }
    if config.frames < MIN_DURATION {
        return Err(Error::InvalidArgument(format!("frames must be >= {MIN_DURATION}")));
    }
    if vocab.len() < FIRST_PHONEME + MAX_DURATION - MIN_DURATION + 1 {
        return Err(Error::InvalidArgument("vocabulary too small for the synthetic corpus".into()));
    }
    let table = phoneme_durations(vocab.len(), config.seed);
    // The last frame's window ends exactly at the final sample.
    let samples = mel.n_fft + (config.frames - 1) * mel.hop;
    let width = (config.utterances - 1).to_string().len();
    (0..config.utterances)
        .map(|i| {
            let mut r = rng::stream(config.seed, &format!("synthetic:utterance:{i}"));
            let ids = utterance_ids(&table, config.frames, &mut r);
            let mut audio = synthesize(&ids, &table, mel.hop, config.seed);
            audio.resize(samples, 0.0);
            let labels = ids
                .iter()
                .map(|&id| vocab.label(id).expect("id within vocabulary").to_string())
                .collect();
            Ok(SyntheticUtterance {
                id: format!("syn{i:0width$}"),
                labels,
                durations: ids.iter().map(|&id| table[id]).collect(),
                speaker_stub_id: i as u64 % config.speakers,
                wav: Waveform::new(audio, SAMPLE_RATE)?,
            })
        })
        .collect()
}

/// Writes `wav/<id>.wav`, `align/<id>.tsv` and `manifest.jsonl` under `out`
/// and returns the manifest path.
pub fn write_corpus(out: &Path, utterances: &[SyntheticUtterance], mel: &dsp::MelConfig) -> Result<PathBuf> {
    for sub in ["wav", "align"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = Manifest::default();
    for u in utterances {
        let wav_rel = PathBuf::from(format!("wav/{}.wav", u.id));
        let align_rel = PathBuf::from(format!("align/{}.tsv", u.id));
        dsp::write_wav(&out.join(&wav_rel), &u.wav)?;
        let align = out.join(&align_rel);
        std::fs::write(&align, u.alignment(mel.fps())?.to_tsv()).map_err(|e| Error::io(&align, e))?;
        manifest.records.push(ManifestRecord {
            id: u.id.clone(),
            wav_path: Some(wav_rel),
            align_path: align_rel,
            speaker_stub_id: Some(u.speaker_stub_id),
            ..Default::default()
        });
    }
    let path = out.join("manifest.jsonl");
    manifest.save(&path)?;
    Ok(path)
}

/// SHA-256 of every regular file under `dir`, as `(relative path, hex)`
/// sorted by path.
pub fn digests(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(dir).expect("walked from dir");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                let hex = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                out.push((rel, hex));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(seed: u64) -> Vec<SyntheticUtterance> {
        let cfg = SyntheticConfig {
            seed,
            ..Default::default()
        };
        generate(&cfg, &Vocabulary::builtin(), &dsp::MelConfig::default()).unwrap()
    }

    #[test]
    fn durations_are_a_function_of_the_phoneme() {
        let vocab = Vocabulary::builtin();
        let table = phoneme_durations(vocab.len(), 0);
        let utts = corpus(0);
        assert_eq!(utts.len(), 8);
        for u in &utts {
            assert_eq!(u.durations.iter().sum::<usize>(), 96);
            for (l, &d) in u.labels.iter().zip(&u.durations) {
                let id = vocab.id(l).unwrap();
                assert!(id >= FIRST_PHONEME);
                assert_eq!(table[id], d);
                assert!((MIN_DURATION..=MAX_DURATION).contains(&d));
            }
        }
        for d in MIN_DURATION..=MAX_DURATION {
            assert!(table.iter().filter(|&&t| t == d).count() >= 9);
        }
    }

    #[test]
    fn audio_yields_96_mel_frames() {
        let mel = dsp::MelConfig::default();
        for u in corpus(1) {
            assert_eq!(u.wav.samples().len(), 16_000);
            assert_eq!(dsp::mel_spectrogram(&u.wav, &mel).unwrap().len(), 96);
        }
    }

    #[test]
    fn speakers_alternate() {
        let ids: Vec<u64> = corpus(2).iter().map(|u| u.speaker_stub_id).collect();
        assert_eq!(ids, [0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn seeded() {
        assert_eq!(corpus(3), corpus(3));
        assert_ne!(corpus(3), corpus(4));
    }

    #[test]
    fn every_remainder_closes_exactly() {
        let table = phoneme_durations(72, 9);
        let mut r = rng::stream(9, "remainders");
        for frames in MIN_DURATION..200 {
            let ids = utterance_ids(&table, frames, &mut r);
            assert_eq!(ids.iter().map(|&i| table[i]).sum::<usize>(), frames, "frames {frames}");
        }
    }

    #[test]
    fn written_corpus_has_stable_digests() {
        let mel = dsp::MelConfig::default();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = write_corpus(a.path(), &corpus(5), &mel).unwrap();
        write_corpus(b.path(), &corpus(5), &mel).unwrap();
        let da = digests(a.path()).unwrap();
        assert_eq!(da, digests(b.path()).unwrap());
        assert_eq!(da.len(), 17);
        assert_eq!(Manifest::load(&m).unwrap().records.len(), 8);
    }
}
