use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::{DurationDomain, NetworkConfig, TaemParams, SUBSAMPLE};
use crate::rng;
use crate::speaker::SpeakerEmbedding;

/// Sinusoidal table: `sin(pos / 10000^(2i/dim))` in even columns and the
/// matching cosine in odd columns.
pub fn positional_encoding<T: Real>(length: usize, dim: usize) -> Result<Tensor<T>> {
    if length == 0 || dim == 0 {
        return Err(Error::InvalidArgument("positional encoding needs positive length and dim".into()));
    }
    let mut data = Vec::with_capacity(length * dim);
    for pos in 0..length {
        for j in 0..dim {
            let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / dim as f64);
            data.push(T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![length, dim], data)
}

/// Row indices that repeat row `i` `durations[i]` times.
pub fn length_regulate_indices(durations: &[usize]) -> Vec<usize> {
    durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat(i).take(d))
        .collect()
}

/// Inference durations: each prediction becomes `max(round(frames), 1)`, then
/// the final entry grows until the total is a multiple of [`SUBSAMPLE`], which
/// repeats the last regulated row.
pub fn round_durations(predictions: &[f64], domain: DurationDomain) -> Vec<usize> {
    let mut d: Vec<usize> = predictions
        .iter()
        .map(|&p| {
            let f = domain.frames(p).round();
            if f >= 1.0 {
                f as usize
            } else {
                1
            }
        })
        .collect();
    let total: usize = d.iter().sum();
    if let Some(last) = d.last_mut() {
        *last += (SUBSAMPLE - total % SUBSAMPLE) % SUBSAMPLE;
    }
    d
}

/// Inverted dropout with masks drawn from a stream private to one utterance at
/// one training step.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64, step: u64, utterance: usize) -> Self {
        Self {
            p,
            rng: rng::stream(seed, &format!("dropout:{step}:{utterance}")),
        }
    }

    fn mask<T: Real>(&mut self, shape: &[usize]) -> Tensor<T> {
        let keep = T::of(1.0 / (1.0 - self.p));
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| if rng::unit(&mut self.rng) < self.p { T::zero() } else { keep })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("mask shape matches")
    }
}

/// Tape vars produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[l_v, latent_dim]` text-driven audio features.
    pub z_t: Var,
    /// `[l_t, 1]` raw duration predictions.
    pub durations: Var,
    /// `[l_t, hidden]` phoneme encoder output.
    pub encoded: Var,
    /// Durations used by the length regulator.
    pub used_durations: Vec<usize>,
}

/// Forward-pass builder over parameter leaves already recorded on a tape.
pub struct Net<'a> {
    config: &'a NetworkConfig,
    index: &'a HashMap<String, usize>,
    vars: Vec<Var>,
    dropout: Option<Dropout>,
}

impl<'a> Net<'a> {
    /// `vars` must come from [`TaemParams::bind`] (or the same order).
    pub fn new<T: Real>(params: &'a TaemParams<T>, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != params.tensors().len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter vars, got {}",
                params.tensors().len(),
                vars.len()
            )));
        }
        Ok(Self {
            config: params.config(),
            index: params.index(),
            vars,
            dropout: None,
        })
    }

    pub fn with_dropout(mut self, dropout: Option<Dropout>) -> Self {
        self.dropout = dropout.filter(|d| d.p > 0.0);
        self
    }

    fn p(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }

    fn drop<T: Real>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self.dropout.as_mut() {
            Some(d) => {
                let mask = tape.constant(d.mask(tape.value(x).shape()))?;
                tape.mul(x, mask)
            }
            None => Ok(x),
        }
    }

    fn linear<T: Real>(&self, tape: &mut Tape<T>, x: Var, w: &str, b: &str) -> Result<Var> {
        let y = tape.matmul(x, self.p(w))?;
        tape.add_bias(y, self.p(b))
    }

    fn layer_norm<T: Real>(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        tape.layer_norm(x, self.p(&format!("{prefix}.gamma")), self.p(&format!("{prefix}.beta")))
    }

    /// Token embeddings plus the speaker embedding at every position.
    pub fn embed_phonemes<T: Real>(&self, tape: &mut Tape<T>, ids: &[usize], spk: &SpeakerEmbedding) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty phoneme sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::OutOfRange {
                what: "phoneme id",
                index: bad,
                size: self.config.vocab_size,
            });
        }
        let tokens = tape.embedding(self.p("embedding"), ids)?;
        let s = spk.to_tensor().cast::<T>().reshape(vec![1, self.config.speaker_dim()])?;
        let mut s = tape.constant(s)?;
        if self.config.needs_speaker_projection() {
            s = tape.matmul(s, self.p("spk_proj"))?;
        }
        let s = tape.gather_rows(s, &vec![0; ids.len()])?;
        tape.add(tokens, s)
    }

    pub(crate) fn self_attention<T: Real>(&self, tape: &mut Tape<T>, x: Var, p: &str) -> Result<Var> {
        let q = self.linear(tape, x, &format!("{p}.wq"), &format!("{p}.bq"))?;
        let k = tape.matmul(x, self.p(&format!("{p}.wk")))?;
        let v = self.linear(tape, x, &format!("{p}.wv"), &format!("{p}.bv"))?;
        let dh = self.config.hidden / self.config.heads;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = tape.slice(q, 1, a, b)?;
            let kh = tape.slice(k, 1, a, b)?;
            let vh = tape.slice(v, 1, a, b)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let weights = tape.softmax(scores)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
        self.linear(tape, cat, &format!("{p}.wo"), &format!("{p}.bo"))
    }

    /// `y = LN(x + Attn(x))`, `out = LN(y + FFN(y))` with unmasked attention
    /// and a convolutional feed-forward layer.
    pub fn fft_block<T: Real>(&mut self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let c = self.config;
        let a = self.self_attention(tape, x, &format!("{prefix}.attn"))?;
        let a = self.drop(tape, a)?;
        let y = tape.add(x, a)?;
        let y = self.layer_norm(tape, y, &format!("{prefix}.ln1"))?;

        let w = |n: &str| self.p(&format!("{prefix}.ffn.{n}"));
        let f = tape.conv1d(y, w("w1"), Some(w("b1")), 1, c.ffn_kernel / 2)?;
        let f = tape.relu(f)?;
        let f = tape.conv1d(f, w("w2"), Some(w("b2")), 1, c.ffn_kernel_out / 2)?;
        let f = self.drop(tape, f)?;
        let out = tape.add(y, f)?;
        self.layer_norm(tape, out, &format!("{prefix}.ln2"))
    }

    fn add_positions<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if !self.config.positional_encoding {
            return Ok(x);
        }
        let (len, dim) = (tape.value(x).rows(), tape.value(x).cols());
        let pe = tape.constant(positional_encoding(len, dim)?)?;
        tape.add(x, pe)
    }

    /// Phoneme encoder over an embedded sequence.
    pub fn encode<T: Real>(&mut self, tape: &mut Tape<T>, embedded: Var) -> Result<Var> {
        let mut x = self.add_positions(tape, embedded)?;
        for b in 0..self.config.encoder_blocks {
            x = self.fft_block(tape, x, &format!("encoder.{b}"))?;
        }
        Ok(x)
    }

    /// Raw per-phoneme predictions `[l_t, 1]`. Gradients do not reach the
    /// encoder through this path.
    pub fn duration_predictor<T: Real>(&self, tape: &mut Tape<T>, encoded: Var) -> Result<Var> {
        let pad = self.config.dp_kernel / 2;
        let x = tape.stop_gradient(encoded)?;
        let x = tape.conv1d(x, self.p("dp.conv1.w"), Some(self.p("dp.conv1.b")), 1, pad)?;
        let x = tape.relu(x)?;
        let x = self.layer_norm(tape, x, "dp.ln1")?;
        let x = tape.conv1d(x, self.p("dp.conv2.w"), Some(self.p("dp.conv2.b")), 1, pad)?;
        let x = tape.relu(x)?;
        let x = self.layer_norm(tape, x, "dp.ln2")?;
        self.linear(tape, x, "dp.linear.w", "dp.linear.b")
    }

    /// Repeats row `i` of `x` `durations[i]` times.
    pub fn length_regulate<T: Real>(tape: &mut Tape<T>, x: Var, durations: &[usize]) -> Result<Var> {
        let rows = tape.value(x).rows();
        if durations.len() != rows {
            return Err(Error::InvalidArgument(format!(
                "{} durations for {rows} phonemes",
                durations.len()
            )));
        }
        if durations.iter().all(|&d| d == 0) {
            return Err(Error::InvalidArgument("all durations are zero".into()));
        }
        tape.gather_rows(x, &length_regulate_indices(durations))
    }

    /// Refinement blocks then two stride-2 convolutions: `[l_a, hidden]` to
    /// `[l_a / 4, latent_dim]`.
    pub fn refine_and_subsample<T: Real>(&mut self, tape: &mut Tape<T>, regulated: Var) -> Result<Var> {
        let len = tape.value(regulated).rows();
        if len < SUBSAMPLE || len % SUBSAMPLE != 0 {
            return Err(Error::InvalidArgument(format!(
                "regulated length {len} must be a positive multiple of {SUBSAMPLE}"
            )));
        }
        let mut x = self.add_positions(tape, regulated)?;
        for b in 0..self.config.refine_blocks {
            x = self.fft_block(tape, x, &format!("refine.{b}"))?;
        }
        let x = tape.conv1d(x, self.p("sub.conv1.w"), Some(self.p("sub.conv1.b")), 2, 1)?;
        let x = tape.relu(x)?;
        tape.conv1d(x, self.p("sub.conv2.w"), Some(self.p("sub.conv2.b")), 2, 1)
    }

    /// Full forward pass. With `durations` the length regulator is teacher
    /// forced; without, the predictions are rounded by [`round_durations`].
    pub fn forward<T: Real>(
        &mut self,
        tape: &mut Tape<T>,
        ids: &[usize],
        spk: &SpeakerEmbedding,
        durations: Option<&[usize]>,
    ) -> Result<Forward> {
        let embedded = self.embed_phonemes(tape, ids, spk)?;
        let encoded = self.encode(tape, embedded)?;
        let predicted = self.duration_predictor(tape, encoded)?;
        let used_durations = match durations {
            Some(d) => d.to_vec(),
            None => {
                let raw: Vec<f64> = tape.value(predicted).data().iter().map(|v| v.as_f64()).collect();
                round_durations(&raw, self.config.duration_domain)
            }
        };
        let regulated = Self::length_regulate(tape, encoded, &used_durations)?;
        let z_t = self.refine_and_subsample(tape, regulated)?;
        Ok(Forward {
            z_t,
            durations: predicted,
            encoded,
            used_durations,
        })
    }
}

/// Inference output.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub z_t: Tensor<f32>,
    /// Raw predictions in the configured duration domain.
    pub predicted: Vec<f32>,
    pub durations: Vec<usize>,
}

/// Runs the network with predicted durations.
pub fn infer(params: &TaemParams<f32>, ids: &[usize], spk: &SpeakerEmbedding) -> Result<Inference> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape)?;
    let out = Net::new(params, vars)?.forward(&mut tape, ids, spk, None)?;
    Ok(Inference {
        z_t: tape.value(out.z_t).clone(),
        predicted: tape.value(out.durations).data().to_vec(),
        durations: out.used_durations,
    })
}
