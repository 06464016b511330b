//! The text-to-audio embedding network.
//!
//! A phoneme sequence is embedded, the speaker embedding is added to every
//! position, and a stack of feed-forward transformer blocks encodes it. A
//! duration predictor estimates per-phoneme frame counts, the length regulator
//! expands the encoding to mel-frame resolution, a second block stack refines
//! it, and two stride-2 convolutions subsample to video-frame resolution.

mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::speaker::SPEAKER_DIM;

pub use model::{
    infer, length_regulate_indices, positional_encoding, round_durations, Dropout, Forward, Inference, Net,
};
pub use params::TaemParams;

/// Mel frames per output (video) frame.
pub const SUBSAMPLE: usize = 4;

/// How the duration predictor's scalar output relates to a frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationDomain {
    /// The output is the frame count itself.
    Linear,
    /// The output is `ln(1 + frames)`.
    Log,
}

impl DurationDomain {
    /// Regression target for a ground-truth frame count.
    pub fn target(self, frames: usize) -> f64 {
        match self {
            DurationDomain::Linear => frames as f64,
            DurationDomain::Log => (frames as f64).ln_1p(),
        }
    }

    /// Frame count implied by a raw prediction, before rounding.
    pub fn frames(self, prediction: f64) -> f64 {
        match self {
            DurationDomain::Linear => prediction,
            DurationDomain::Log => prediction.exp_m1(),
        }
    }
}

impl std::str::FromStr for DurationDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(DurationDomain::Linear),
            "log" => Ok(DurationDomain::Log),
            _ => Err(Error::Config(format!("duration_domain must be linear or log, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Inner width of the convolutional feed-forward layer.
    pub ffn_inner: usize,
    pub ffn_kernel: usize,
    pub ffn_kernel_out: usize,
    pub encoder_blocks: usize,
    pub refine_blocks: usize,
    pub dp_filter: usize,
    pub dp_kernel: usize,
    pub dropout: f64,
    pub latent_dim: usize,
    pub duration_domain: DurationDomain,
    pub positional_encoding: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::text::Vocabulary::builtin().len(),
            hidden: 512,
            heads: 2,
            ffn_inner: 1024,
            ffn_kernel: 9,
            ffn_kernel_out: 1,
            encoder_blocks: 4,
            refine_blocks: 4,
            dp_filter: 512,
            dp_kernel: 3,
            dropout: 0.1,
            latent_dim: 512,
            duration_domain: DurationDomain::Linear,
            positional_encoding: true,
        }
    }
}

impl NetworkConfig {
    /// Reduced width and depth. The feed-forward inner width stays at twice the
    /// hidden width and the duration predictor filter at the hidden width.
    pub fn scaled(hidden: usize, blocks: usize) -> Self {
        Self {
            hidden,
            ffn_inner: 2 * hidden,
            dp_filter: hidden,
            encoder_blocks: blocks,
            refine_blocks: blocks,
            ..Self::default()
        }
    }

    /// Gradient-check configuration: vocabulary 8, width 16, one block per
    /// stack, no dropout.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 8,
            dropout: 0.0,
            ..Self::scaled(16, 1)
        }
    }

    pub fn speaker_dim(&self) -> usize {
        SPEAKER_DIM
    }

    /// A learned projection maps the speaker embedding to the hidden width when
    /// the two differ.
    pub fn needs_speaker_projection(&self) -> bool {
        self.hidden != SPEAKER_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_inner", self.ffn_inner),
            ("ffn_kernel", self.ffn_kernel),
            ("ffn_kernel_out", self.ffn_kernel_out),
            ("dp_filter", self.dp_filter),
            ("dp_kernel", self.dp_kernel),
            ("latent_dim", self.latent_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return fail(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        for (name, k) in [
            ("ffn_kernel", self.ffn_kernel),
            ("ffn_kernel_out", self.ffn_kernel_out),
            ("dp_kernel", self.dp_kernel),
        ] {
            if k % 2 == 0 {
                return fail(format!("{name} must be odd, got {k}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}
