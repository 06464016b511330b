//! Waveform to log-mel spectrogram.
//!
//! Framing has no center padding: frame `t` covers samples
//! `[t·hop, t·hop + window)`, so a signal of `n` samples yields
//! `1 + floor((n − window) / hop)` frames. With the defaults (16 kHz, hop 160,
//! window 800) that is 100 frames per second and 96 frames for one second of
//! audio.
//!
//! Each frame is multiplied by a periodic Hann window, transformed with an
//! `n_fft`-point real FFT (no zero padding beyond the window), and the
//! magnitude spectrum is projected onto an HTK-scale triangular mel filterbank
//! with unit peaks. Output values are `ln(max(energy, log_floor))`. There is no
//! pre-emphasis and no per-utterance normalization.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Audio("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 800,
            hop: 160,
            n_mels: 80,
            fmin: 55.0,
            fmax: 7600.0,
            log_floor: (-5.0f64).exp(),
        }
    }
}

impl MelConfig {
    pub fn fps(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Frames produced for `n` samples, or `None` if shorter than one window.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        (n >= self.n_fft).then(|| 1 + (n - self.n_fft) / self.hop)
    }

    pub fn log_floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// `l_a × n_mels` log-mel frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor<f32>,
    pub fps: f64,
}

impl MelSpectrogram {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency in Hz of every mel band.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    mel_edges(cfg)[1..=cfg.n_mels].to_vec()
}

fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filters, `n_mels` rows of `n_fft/2 + 1` weights each.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let edges = mel_edges(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn validate(wav: &Waveform, cfg: &MelConfig) -> Result<usize> {
    if wav.sample_rate != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "expected {} Hz audio, got {} Hz",
            cfg.sample_rate, wav.sample_rate
        )));
    }
    if cfg.hop == 0 || cfg.n_mels == 0 || cfg.n_fft < 2 {
        return Err(Error::Audio("hop, n_mels and n_fft must be positive".into()));
    }
    if !(cfg.fmin >= 0.0 && cfg.fmin < cfg.fmax && cfg.fmax <= cfg.sample_rate as f64 / 2.0) {
        return Err(Error::Audio(format!(
            "invalid mel range {}..{} Hz",
            cfg.fmin, cfg.fmax
        )));
    }
    cfg.frame_count(wav.samples.len()).ok_or_else(|| {
        Error::Audio(format!(
            "audio has {} samples, shorter than one {}-sample window",
            wav.samples.len(),
            cfg.n_fft
        ))
    })
}

/// Linear mel energies, `l_a × n_mels`, before the log.
pub fn mel_energies(wav: &Waveform, cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    let frames = validate(wav, cfg)?;
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let window = hann_window(cfg.n_fft);
    let bank = mel_filterbank(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut mag = vec![0.0; n_bins];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let seg = &wav.samples[t * cfg.hop..t * cfg.hop + cfg.n_fft];
        for (b, (&s, &w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new(s as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        out.push(
            bank.iter()
                .map(|filt| filt.iter().zip(&mag).map(|(w, m)| w * m).sum())
                .collect(),
        );
    }
    Ok(out)
}

pub fn mel_spectrogram(wav: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let energies = mel_energies(wav, cfg)?;
    let rows = energies.len();
    let data = energies
        .into_iter()
        .flatten()
        .map(|e| e.max(cfg.log_floor).ln() as f32)
        .collect();
    Ok(MelSpectrogram {
        frames: Tensor::new(vec![rows, cfg.n_mels], data)?,
        fps: cfg.fps(),
    })
}

/// Mel frames per video frame (4 for 25 fps video against 100 fps mel).
pub fn frames_per_video_frame(video_fps: u32, mel_fps: u32) -> Result<usize> {
    if video_fps == 0 || mel_fps % video_fps != 0 {
        return Err(Error::InvalidArgument(format!(
            "mel rate {mel_fps} fps is not an integer multiple of video rate {video_fps} fps"
        )));
    }
    Ok((mel_fps / video_fps) as usize)
}

/// Reads 16-bit PCM WAV. Stereo is averaged to mono; 48 kHz input is reduced
/// to 16 kHz by averaging groups of three samples. Other rates are returned
/// unchanged and rejected later by [`mel_spectrogram`].
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "{}: expected 16-bit PCM, got {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let raw = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let ch = spec.channels as usize;
    let mono: Vec<f32> = match ch {
        1 => raw,
        0 => return Err(Error::Audio("zero channels".into())),
        _ => raw
            .chunks_exact(ch)
            .map(|c| c.iter().sum::<f32>() / ch as f32)
            .collect(),
    };
    if spec.sample_rate == 3 * SAMPLE_RATE {
        let down = mono.chunks_exact(3).map(|c| c.iter().sum::<f32>() / 3.0).collect();
        return Waveform::new(down, SAMPLE_RATE);
    }
    Waveform::new(mono, spec.sample_rate)
}

/// Writes mono 16-bit PCM, clamping to [-1, 1].
pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wav.samples {
        w.write_sample(quantize(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, amp: f64) -> Waveform {
        let s = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    /// Naive O(N²) DFT magnitude, independent of the FFT path.
    fn reference_frame(seg: &[f32], bank: &[Vec<f64>]) -> Vec<f64> {
        let n = seg.len();
        let win = hann_window(n);
        let mags: Vec<f64> = (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &s) in seg.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += s as f64 * win[i] * a.cos();
                    im += s as f64 * win[i] * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        bank.iter()
            .map(|f| f.iter().zip(&mags).map(|(w, m)| w * m).sum())
            .collect()
    }

    #[test]
    fn one_second_gives_96_frames() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&sine(200.0, 16000, 0.5), &cfg).unwrap();
        assert_eq!(mel.len(), 96);
        assert_eq!(mel.n_mels(), 80);
        assert_eq!(mel.fps, 100.0);
    }

    #[test]
    fn silence_is_log_floor() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&Waveform::new(vec![0.0; 4000], 16000).unwrap(), &cfg).unwrap();
        assert!(mel.frames.data().iter().all(|&v| v == -5.0));
    }

    #[test]
    fn sine_peaks_at_nearest_band_and_matches_naive_dft() {
        let cfg = MelConfig::default();
        let wav = sine(440.0, 4000, 0.5);
        let energies = mel_energies(&wav, &cfg).unwrap();
        let centers = mel_center_frequencies(&cfg);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        let bank = mel_filterbank(&cfg);
        for (t, frame) in energies.iter().enumerate() {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, nearest, "frame {t}");
            let reference = reference_frame(&wav.samples()[t * 160..t * 160 + 800], &bank);
            for (a, b) in frame.iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn hop_shift_shifts_frames() {
        let cfg = MelConfig::default();
        let base: Vec<f32> = (0..6400).map(|i| ((i * 7919 % 1000) as f32 / 1000.0) - 0.5).collect();
        let a = Waveform::new(base[160..].to_vec(), 16000).unwrap();
        let b = Waveform::new(base.clone(), 16000).unwrap();
        let (ma, mb) = (mel_spectrogram(&a, &cfg).unwrap(), mel_spectrogram(&b, &cfg).unwrap());
        assert_eq!(mb.len(), ma.len() + 1);
        for t in 0..ma.len() {
            let (ra, rb) = (ma.frames.row(t), mb.frames.row(t + 1));
            assert!(ra.iter().zip(rb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn doubling_amplitude_never_decreases_energy() {
        let cfg = MelConfig::default();
        let a = mel_energies(&sine(1234.0, 2000, 0.2), &cfg).unwrap();
        let b = mel_energies(&sine(1234.0, 2000, 0.4), &cfg).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!(ra.iter().zip(rb).all(|(x, y)| y >= x));
        }
    }

    #[test]
    fn rejects_wrong_rate_and_short_audio() {
        let cfg = MelConfig::default();
        assert!(mel_spectrogram(&Waveform::new(vec![0.0; 2000], 22050).unwrap(), &cfg).is_err());
        assert!(mel_spectrogram(&Waveform::new(vec![0.0; 799], 16000).unwrap(), &cfg).is_err());
        assert_eq!(mel_spectrogram(&Waveform::new(vec![0.0; 800], 16000).unwrap(), &cfg).unwrap().len(), 1);
    }

    #[test]
    fn video_ratio() {
        assert_eq!(frames_per_video_frame(25, 100).unwrap(), 4);
        assert_eq!(frames_per_video_frame(100, 100).unwrap(), 1);
        assert!(frames_per_video_frame(30, 100).is_err());
    }

    #[test]
    fn wav_roundtrip_and_48k_decimation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let wav = sine(300.0, 1600, 0.5);
        write_wav(&p, &wav).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert!(back.samples().iter().zip(wav.samples()).all(|(a, b)| (a - b).abs() < 1e-4));

        let p48 = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 48000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p48, spec).unwrap();
        for _ in 0..300 {
            w.write_sample(1000i16).unwrap();
            w.write_sample(3000i16).unwrap();
        }
        w.finalize().unwrap();
        let down = read_wav(&p48).unwrap();
        assert_eq!(down.sample_rate(), 16000);
        assert_eq!(down.samples().len(), 100);
        assert!((down.samples()[0] - 2000.0 / 32768.0).abs() < 1e-6);
    }
}
