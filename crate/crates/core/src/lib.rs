//! Text-to-audio embedding: maps a phoneme sequence plus a 512-d visual speaker
//! embedding into the per-video-frame audio latent space of an audio-driven
//! talking-face model.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod io;
pub mod network;
pub mod prepare;
pub mod rng;
pub mod speaker;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
