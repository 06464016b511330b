//! `taem`: prepare data, train, run inference, check gradients, evaluate and
//! generate the synthetic corpus.
//!
//! Every command takes `--config <file>` (flat `key = value`), repeated
//! `--set key=value` overrides and `--seed`. Dedicated flags override both.
//! Keys that no part of the command consumes are an error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use taem::io::config::FlatConfig;

#[derive(Parser)]
#[command(name = "taem", version, about = "Text-to-audio embedding module")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides a configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl Common {
    /// The configuration file (or an empty one) with `--set`, `--seed` and
    /// `flags` applied in that order.
    pub fn resolve(&self, flags: &[(&str, Option<String>)]) -> Result<FlatConfig> {
        let mut cfg = match &self.config {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::new("<flags>"),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim());
        }
        if let Some(s) = self.seed {
            cfg.set("seed", s.to_string());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v.clone());
            }
        }
        Ok(cfg)
    }
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Audio and alignments to log-mel blobs, durations and oracle targets.
    ///
    /// Keys: manifest, out, seed, latent_dim, lexicon, l2_normalize_speaker.
    Prepare {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the network; writes log.csv and checkpoint.ckpt under --out.
    ///
    /// Keys: every network and training key, plus manifest, out, resume,
    /// data_seed, lexicon, l2_normalize_speaker.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Text or phonemes plus a speaker embedding to a z_t blob.
    ///
    /// Keys: checkpoint, out, text, phonemes, lexicon, speaker,
    /// speaker_stub, l2_normalize_speaker, seed.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
        /// Space-separated phoneme labels.
        #[arg(long)]
        phonemes: Option<String>,
        /// Speaker embedding blob.
        #[arg(long)]
        speaker: Option<PathBuf>,
        /// Stub speaker identity, used when no embedding file is given.
        #[arg(long)]
        speaker_stub: Option<u64>,
    },
    /// End-to-end gradient check of L_dis + L_dur in 64-bit arithmetic.
    ///
    /// Keys: every network key (defaults to the tiny configuration), seed,
    /// phonemes, frames, epsilon, threshold.
    Gradcheck,
    /// PSNR, SSIM and LMD of generated frames against the ground truth.
    ///
    /// Keys: manifest, outputs, out.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory with `<id>/frames/` and `<id>/landmarks.tsv`.
        #[arg(long)]
        outputs: Option<PathBuf>,
        /// Report file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes the synthetic overfit corpus and prints its SHA-256 digests.
    ///
    /// Keys: out, utterances, frames, speakers, seed.
    MakeSynthetic {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<ExitCode> {
    let Cli { common, command } = Cli::parse();
    match command {
        Command::Prepare { manifest, out } => {
            let cfg = common.resolve(&[("manifest", path_flag(&manifest)), ("out", path_flag(&out))])?;
            commands::prepare(cfg)
        }
        Command::Train {
            manifest,
            out,
            resume,
            max_steps,
        } => {
            let cfg = common.resolve(&[
                ("manifest", path_flag(&manifest)),
                ("out", path_flag(&out)),
                ("resume", path_flag(&resume)),
                ("max_steps", max_steps.map(|s| s.to_string())),
            ])?;
            commands::train(cfg)
        }
        Command::Infer {
            checkpoint,
            out,
            text,
            phonemes,
            speaker,
            speaker_stub,
        } => {
            let cfg = common.resolve(&[
                ("checkpoint", path_flag(&checkpoint)),
                ("out", path_flag(&out)),
                ("text", text),
                ("phonemes", phonemes),
                ("speaker", path_flag(&speaker)),
                ("speaker_stub", speaker_stub.map(|s| s.to_string())),
            ])?;
            commands::infer(cfg)
        }
        Command::Gradcheck => commands::gradcheck(common.resolve(&[])?),
        Command::Eval { manifest, outputs, out } => {
            let cfg = common.resolve(&[
                ("manifest", path_flag(&manifest)),
                ("outputs", path_flag(&outputs)),
                ("out", path_flag(&out)),
            ])?;
            commands::eval(cfg)
        }
        Command::MakeSynthetic { out } => commands::make_synthetic(common.resolve(&[("out", path_flag(&out))])?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
