use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::SUBSAMPLE;
use crate::rng;

/// Fixed random encoder standing in for a pretrained audio encoder:
/// `z_a,i = tanh(flatten(mel[4i..4i+4]) · P)` with `P` drawn once from a seed
/// and never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleEncoderSpec {
    seed: u64,
    projection: Tensor<f32>,
}

impl OracleEncoderSpec {
    pub const GAIN: f64 = 0.5;

    /// `P` is `(4·n_mels) × dim`, uniform in `±GAIN·sqrt(3 / (4·n_mels))`, row
    /// major from the stream `(seed, "oracle-encoder")`.
    pub fn new(seed: u64, n_mels: usize, dim: usize) -> Result<Self> {
        if n_mels == 0 || dim == 0 {
            return Err(Error::InvalidArgument("oracle encoder needs positive sizes".into()));
        }
        let fan_in = SUBSAMPLE * n_mels;
        let limit = Self::GAIN * (3.0 / fan_in as f64).sqrt();
        let mut r = rng::stream(seed, "oracle-encoder");
        let data = (0..fan_in * dim).map(|_| (limit * rng::symmetric(&mut r)) as f32).collect();
        Ok(Self {
            seed,
            projection: Tensor::new(vec![fan_in, dim], data)?,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Tensor<f32> {
        &self.projection
    }

    pub fn dim(&self) -> usize {
        self.projection.cols()
    }

    /// Targets `[l_a / 4, dim]` for `l_a × n_mels` log-mel frames.
    pub fn targets(&self, mel: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (l_a, n_mels) = (mel.rows(), mel.cols());
        let fan_in = self.projection.rows();
        if SUBSAMPLE * n_mels != fan_in {
            return Err(Error::shape("oracle_targets", mel.shape(), self.projection.shape()));
        }
        if l_a % SUBSAMPLE != 0 {
            return Err(Error::InvalidArgument(format!(
                "mel length {l_a} is not a multiple of {SUBSAMPLE}"
            )));
        }
        let dim = self.dim();
        let p = self.projection.data();
        let mut out = Vec::with_capacity(l_a / SUBSAMPLE * dim);
        for window in mel.data().chunks(fan_in) {
            let mut acc = vec![0f64; dim];
            for (k, &x) in window.iter().enumerate() {
                let row = &p[k * dim..(k + 1) * dim];
                acc.iter_mut().zip(row).for_each(|(a, &w)| *a += x as f64 * w as f64);
            }
            out.extend(acc.into_iter().map(|a| a.tanh() as f32));
        }
        Tensor::new(vec![l_a / SUBSAMPLE, dim], out)
    }
}
