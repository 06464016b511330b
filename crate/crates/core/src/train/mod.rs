//! Objectives, oracle targets and the optimisation loop.

mod losses;
mod oracle;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, AdamState, AdamW, GradCheckReport, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::checkpoint;
use crate::network::{Dropout, Net, NetworkConfig, TaemParams, SUBSAMPLE};
use crate::rng;
use crate::speaker::{self, SpeakerEmbedding};

pub use losses::{loss_contrastive, loss_dis, loss_dur};
pub use oracle::OracleEncoderSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "contrastive")]
    Contrastive,
    #[serde(rename = "mse+contrastive")]
    MseContrastive,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Contrastive, LossMode::Mse, LossMode::MseContrastive];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Mse => "mse",
            LossMode::Contrastive => "contrastive",
            LossMode::MseContrastive => "mse+contrastive",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("loss_mode must be mse, contrastive or mse+contrastive, got `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Utterances per step, clipped to the corpus size.
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub temperature: f64,
    pub dis_weight: f64,
    pub dur_weight: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 64,
            max_steps: 2000,
            seed: 0,
            loss_mode: LossMode::Mse,
            temperature: 0.07,
            dis_weight: 1.0,
            dur_weight: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Keys that only control how long a run lasts or how often it is saved;
    /// they may change between a checkpoint and its resumption.
    pub const RUN_CONTROL_KEYS: [&'static str; 2] = ["max_steps", "checkpoint_every"];

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.lr > 0.0 {
            self.optimizer().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.dis_weight < 0.0 || self.dur_weight < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// One prepared training utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub phonemes: Vec<usize>,
    /// Ground-truth mel frames per phoneme; sums to `4 · target.rows()`.
    pub durations: Vec<usize>,
    pub speaker: SpeakerEmbedding,
    /// `[l_v, latent_dim]` oracle targets.
    pub target: Tensor<f32>,
}

impl Example {
    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(format!("utterance {}: {msg}", self.id)));
        if self.phonemes.is_empty() || self.phonemes.len() != self.durations.len() {
            return fail(format!(
                "{} phonemes but {} durations",
                self.phonemes.len(),
                self.durations.len()
            ));
        }
        let total: usize = self.durations.iter().sum();
        if total != SUBSAMPLE * self.target.rows() {
            return fail(format!("durations sum to {total} but the target has {} frames", self.target.rows()));
        }
        if self.target.cols() != config.latent_dim {
            return fail(format!("target width {} != latent_dim {}", self.target.cols(), config.latent_dim));
        }
        Ok(())
    }
}

/// Losses of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Batch mean of the frame-averaged squared distance, whatever the mode.
    pub loss_dis: f64,
    /// Batch mean of the duration loss.
    pub loss_dur: f64,
    /// The optimised objective.
    pub loss_total: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "step,loss_dis,loss_dur,loss_total,wall_ms\n";

impl StepStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3}\n",
            self.step, self.loss_dis, self.loss_dur, self.loss_total, self.wall_ms
        )
    }
}

/// Utterance indices of the 1-based `step`. Batches walk an endless sequence
/// of per-epoch shuffles, each drawn from the stream `(seed, "epoch:<e>")`.
pub fn batch_indices(seed: u64, step: u64, batch: usize, corpus: usize) -> Vec<usize> {
    let start = (step - 1) as usize * batch;
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (start..start + batch)
        .map(|pos| {
            let epoch = pos / corpus;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, epoch_order(seed, epoch, corpus)));
            }
            cached.as_ref().unwrap().1[pos % corpus]
        })
        .collect()
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &format!("epoch:{epoch}"));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng::unit(&mut r) * (i + 1) as f64) as usize;
        order.swap(i, j);
    }
    order
}

/// Records the batch objective on `tape`. Returns `(total, mean L_dis, mean
/// L_dur)`. With `step = None` dropout is disabled.
pub fn batch_objective<T: Real>(
    tape: &mut Tape<T>,
    params: &TaemParams<T>,
    vars: &[Var],
    batch: &[&Example],
    train: &TrainConfig,
    step: Option<u64>,
) -> Result<(Var, Var, Var)> {
    let config = params.config();
    let mut dis = Vec::with_capacity(batch.len());
    let mut dur = Vec::with_capacity(batch.len());
    let mut z_ts = Vec::with_capacity(batch.len());
    let mut z_as = Vec::with_capacity(batch.len());
    for (j, ex) in batch.iter().enumerate() {
        let dropout = step.map(|s| Dropout::new(config.dropout, train.seed, s, j));
        let mut net = Net::new(params, vars.to_vec())?.with_dropout(dropout);
        let out = net.forward(tape, &ex.phonemes, &ex.speaker, Some(&ex.durations))?;
        let z_a = tape.constant(ex.target.cast::<T>())?;
        dis.push(loss_dis(tape, out.z_t, z_a)?);
        dur.push(loss_dur(tape, out.durations, &ex.durations, config.duration_domain)?);
        z_ts.push(out.z_t);
        z_as.push(z_a);
    }
    let mean = |tape: &mut Tape<T>, xs: &[Var]| -> Result<Var> {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = tape.add(acc, x)?;
        }
        tape.scale(acc, 1.0 / xs.len() as f64)
    };
    let mean_dis = mean(tape, &dis)?;
    let mean_dur = mean(tape, &dur)?;
    let contrastive = |tape: &mut Tape<T>| -> Result<Var> {
        let zt = if z_ts.len() == 1 { z_ts[0] } else { tape.concat(&z_ts, 0)? };
        let za = if z_as.len() == 1 { z_as[0] } else { tape.concat(&z_as, 0)? };
        loss_contrastive(tape, zt, za, train.temperature)
    };
    let distill = match train.loss_mode {
        LossMode::Mse => mean_dis,
        LossMode::Contrastive => contrastive(tape)?,
        LossMode::MseContrastive => {
            let c = contrastive(tape)?;
            tape.add(mean_dis, c)?
        }
    };
    let a = tape.scale(distill, train.dis_weight)?;
    let b = tape.scale(mean_dur, train.dur_weight)?;
    let total = tape.add(a, b)?;
    Ok((total, mean_dis, mean_dur))
}

/// Parameters, optimiser moments and the step counter of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub params: TaemParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed steps.
    pub step: u64,
}

impl Trainer {
    /// Fresh parameters initialised from `train.seed`.
    pub fn new(network: NetworkConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let params = TaemParams::init(&network, train.seed)?;
        let adam = AdamState::zeros_like(params.tensors());
        Ok(Self {
            network,
            train,
            params,
            adam,
            step: 0,
        })
    }

    /// Runs one optimisation step over the next batch of `data`.
    pub fn step(&mut self, data: &[Example]) -> Result<StepStats> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let started = Instant::now();
        let step = self.step + 1;
        let b = self.train.batch_size.min(data.len());
        let batch: Vec<&Example> = batch_indices(self.train.seed, step, b, data.len())
            .into_iter()
            .map(|i| &data[i])
            .collect();

        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape)?;
        let (total, dis, dur) = batch_objective(&mut tape, &self.params, &vars, &batch, &self.train, Some(step))?;
        let stats = StepStats {
            step,
            loss_dis: tape.value(dis).item() as f64,
            loss_dur: tape.value(dur).item() as f64,
            loss_total: tape.value(total).item() as f64,
            wall_ms: 0.0,
        };
        if self.train.lr > 0.0 {
            let mut grads = tape.backward(total)?;
            let grads: Vec<Tensor<f32>> = vars
                .iter()
                .map(|&v| grads.take(v).expect("parameter leaves carry gradients"))
                .collect();
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(self.params.names()[i].clone()));
            }
            self.train
                .optimizer()
                .step(self.params.tensors_mut(), &grads, &mut self.adam)?;
        }
        self.step = step;
        Ok(StepStats {
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            ..stats
        })
    }
}

pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Trains until `trainer.train.max_steps`, appending to `<out>/log.csv` and
/// saving `<out>/checkpoint.ckpt` every `checkpoint_every` steps and at the
/// end. A failing step (for example a non-finite loss or gradient) returns the
/// error and leaves the last saved checkpoint in place. When resuming, log
/// rows after the checkpoint's step are dropped first.
pub fn run_training(
    trainer: &mut Trainer,
    data: &[Example],
    out: &Path,
    mut observe: impl FnMut(&StepStats),
) -> Result<()> {
    for ex in data {
        ex.validate(&trainer.network)?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = String::from(LOG_HEADER);
    if trainer.step > 0 && log_path.exists() {
        let old = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        for line in old.lines().skip(1) {
            let step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if step.is_some_and(|s| s <= trainer.step) {
                log.push_str(line);
                log.push('\n');
            }
        }
    }
    std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    let mut file = std::fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let every = trainer.train.checkpoint_every;
    while trainer.step < trainer.train.max_steps {
        let stats = trainer.step(data)?;
        file.write_all(stats.csv_row().as_bytes())
            .map_err(|e| Error::io(&log_path, e))?;
        observe(&stats);
        if every > 0 && stats.step % every == 0 {
            checkpoint::save_checkpoint(&ckpt, trainer)?;
        }
    }
    checkpoint::save_checkpoint(&ckpt, trainer)
}

/// Parameters and utterance at which gradients are checked: `l_t` random
/// phonemes, durations as even as possible summing to `l_a`, a stub speaker,
/// the duration head's bias at the mean duration and targets within 0.05 of
/// the initial output, so both losses are of order one.
pub fn probe_point(config: &NetworkConfig, seed: u64, l_t: usize, l_a: usize) -> Result<(TaemParams<f64>, Example)> {
    if l_t == 0 || l_a < l_t || l_a % SUBSAMPLE != 0 {
        return Err(Error::InvalidArgument(format!(
            "probe needs 0 < l_t <= l_a and l_a a multiple of {SUBSAMPLE}, got l_t={l_t}, l_a={l_a}"
        )));
    }
    let mut r = rng::stream(seed, "probe");
    let phonemes = (0..l_t)
        .map(|_| (rng::unit(&mut r) * config.vocab_size as f64) as usize)
        .collect();
    let mut durations = vec![l_a / l_t; l_t];
    let mut order: Vec<usize> = (0..l_t).collect();
    for i in (1..l_t).rev() {
        order.swap(i, (rng::unit(&mut r) * (i + 1) as f64) as usize);
    }
    order.iter().take(l_a % l_t).for_each(|&i| durations[i] += 1);

    let mut params = TaemParams::<f64>::init(config, seed)?;
    let mean = config.duration_domain.target(l_a / l_t) + (l_a % l_t) as f64 / l_t as f64;
    params
        .get_mut("dp.linear.b")
        .expect("duration head bias")
        .data_mut()
        .fill(mean);
    let mut example = Example {
        id: "probe".into(),
        phonemes,
        durations,
        speaker: speaker::stub_embedding(0, seed),
        target: Tensor::zeros(&[l_a / SUBSAMPLE, config.latent_dim]),
    };
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape)?;
    let out = Net::new(&params, vars)?.forward(&mut tape, &example.phonemes, &example.speaker, Some(&example.durations))?;
    let z_t = tape.value(out.z_t);
    let target = z_t.data().iter().map(|&z| (z + 0.05 * rng::symmetric(&mut r)) as f32).collect();
    example.target = Tensor::new(z_t.shape().to_vec(), target)?;
    Ok((params, example))
}

/// `L_dis + L_dur` of one utterance with dropout off, where the duration
/// predictor reads `dp_input` instead of the live encoder output. With
/// `dp_input` equal to the encoder output at the current parameters this has
/// the same value and analytic gradient as [`batch_objective`]; its finite
/// differences are the derivative the stop-gradient defines.
pub fn surrogate_objective<T: Real>(
    tape: &mut Tape<T>,
    params: &TaemParams<T>,
    vars: &[Var],
    example: &Example,
    dp_input: &Tensor<T>,
) -> Result<Var> {
    let config = params.config();
    let mut net = Net::new(params, vars.to_vec())?;
    let embedded = net.embed_phonemes(tape, &example.phonemes, &example.speaker)?;
    let encoded = net.encode(tape, embedded)?;
    let frozen = tape.constant(dp_input.clone())?;
    let predicted = net.duration_predictor(tape, frozen)?;
    let regulated = Net::length_regulate(tape, encoded, &example.durations)?;
    let z_t = net.refine_and_subsample(tape, regulated)?;
    let z_a = tape.constant(example.target.cast::<T>())?;
    let dis = loss_dis(tape, z_t, z_a)?;
    let dur = loss_dur(tape, predicted, &example.durations, config.duration_domain)?;
    tape.add(dis, dur)
}

/// Encoder output `[l_t, hidden]` at `params`.
pub fn encoder_output<T: Real>(params: &TaemParams<T>, example: &Example) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape)?;
    let mut net = Net::new(params, vars)?;
    let embedded = net.embed_phonemes(&mut tape, &example.phonemes, &example.speaker)?;
    let encoded = net.encode(&mut tape, embedded)?;
    Ok(tape.value(encoded).clone())
}

/// Checks the gradient of `L_dis + L_dur` with respect to every parameter in
/// 64-bit arithmetic at the [`probe_point`], through
/// [`surrogate_objective`] with the predictor input frozen at the initial
/// parameters.
pub fn check_gradients(
    config: &NetworkConfig,
    seed: u64,
    l_t: usize,
    l_a: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let (params, example) = probe_point(config, seed, l_t, l_a)?;
    let dp_input = encoder_output(&params, &example)?;
    grad_check(
        |tape, vars| surrogate_objective(tape, &params, vars, &example, &dp_input),
        params.tensors(),
        epsilon,
    )
}
