use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use taem::autodiff::Tensor;
use taem::dsp::MelConfig;
use taem::eval::{eval_report, LSE_NOTE};
use taem::io::blob::{self, Blob, BlobData};
use taem::io::checkpoint;
use taem::io::config::FlatConfig;
use taem::io::manifest::Manifest;
use taem::network::{infer as run_inference, NetworkConfig};
use taem::prepare::{prepare_manifest, write_prepared, PrepareContext, Prepared};
use taem::speaker::{self, SpeakerEmbedding};
use taem::synthetic::{self, SyntheticConfig};
use taem::text::{self, Lexicon, Vocabulary};
use taem::train::{self, TrainConfig, Trainer};

fn required_path(cfg: &mut FlatConfig, key: &str) -> Result<PathBuf> {
    cfg.take(key)
        .map(PathBuf::from)
        .with_context(|| format!("missing required key `{key}`"))
}

fn optional_path(cfg: &mut FlatConfig, key: &str) -> Option<PathBuf> {
    cfg.take(key).map(PathBuf::from)
}

/// Reads the keys shared by `prepare` and `train` into a context.
fn prepare_context(cfg: &mut FlatConfig, seed: u64, latent_dim: usize) -> Result<PrepareContext> {
    let mut ctx = PrepareContext::new(seed, latent_dim)?;
    if let Some(p) = optional_path(cfg, "lexicon") {
        ctx.lexicon = Some(Lexicon::load(&p)?);
    }
    if let Some(b) = cfg.take_parsed("l2_normalize_speaker")? {
        ctx.l2_normalize_speaker = b;
    }
    Ok(ctx)
}

/// Prepares every record, logging failures; errors if any record failed.
fn prepare_all(manifest: &Manifest, ctx: &PrepareContext) -> (Vec<Prepared>, usize) {
    let report = prepare_manifest(manifest, ctx);
    for (id, e) in &report.failed {
        log::error!("{id}: {e}");
    }
    (report.ok, report.failed.len())
}

pub fn prepare(mut cfg: FlatConfig) -> Result<ExitCode> {
    let manifest_path = required_path(&mut cfg, "manifest")?;
    let out = required_path(&mut cfg, "out")?;
    let seed = cfg.take_parsed("seed")?.unwrap_or(0);
    let latent_dim = cfg.take_parsed("latent_dim")?.unwrap_or(NetworkConfig::default().latent_dim);
    let ctx = prepare_context(&mut cfg, seed, latent_dim)?;
    cfg.finish()?;

    let manifest = Manifest::load(&manifest_path)?;
    let (ok, failed) = prepare_all(&manifest, &ctx);
    let mut prepared = Manifest::default();
    println!("utterance_id,frames,phonemes");
    for p in &ok {
        let rec = manifest.get(&p.example.id).expect("prepared ids come from the manifest");
        prepared.records.push(write_prepared(rec, p, &out)?);
        println!("{},{},{}", p.example.id, p.mel.rows(), p.sequence.len());
    }
    prepared.rebase(&out)?;
    prepared.save(&out.join("manifest.jsonl"))?;
    log::info!("prepared {} of {} utterances into {}", ok.len(), manifest.records.len(), out.display());
    if failed > 0 {
        log::error!("{failed} utterance(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train(mut cfg: FlatConfig) -> Result<ExitCode> {
    let mut network = NetworkConfig::default();
    let mut train = TrainConfig::default();
    cfg.apply(&mut network)?;
    cfg.apply(&mut train)?;
    let manifest_path = required_path(&mut cfg, "manifest")?;
    let out = required_path(&mut cfg, "out")?;
    let resume = optional_path(&mut cfg, "resume");
    let data_seed = cfg.take_parsed("data_seed")?.unwrap_or(0);
    let ctx = prepare_context(&mut cfg, data_seed, network.latent_dim)?;
    cfg.finish()?;
    network.validate()?;
    train.validate()?;

    let manifest = Manifest::load(&manifest_path)?;
    let (ok, failed) = prepare_all(&manifest, &ctx);
    if failed > 0 {
        bail!("{failed} utterance(s) could not be prepared");
    }
    let data: Vec<_> = ok.into_iter().map(|p| p.example).collect();

    let mut trainer = match &resume {
        Some(p) => {
            let mut t = checkpoint::load_checkpoint(p)?;
            checkpoint::check_resume(&t, &network, &train)?;
            t.train = train;
            log::info!("resuming from step {} of {}", t.step, p.display());
            t
        }
        None => Trainer::new(network, train)?,
    };
    log::info!(
        "training {} parameters on {} utterances for {} steps",
        trainer.params.param_count(),
        data.len(),
        trainer.train.max_steps
    );
    let result = train::run_training(&mut trainer, &data, &out, |s| {
        if s.step == 1 || s.step % 100 == 0 {
            log::info!("step {} loss_dis {:.5} loss_dur {:.5}", s.step, s.loss_dis, s.loss_dur);
        }
    });
    if let Err(e) = result {
        log::error!(
            "training stopped at step {}: {e}; the last saved checkpoint is kept",
            trainer.step + 1
        );
        return Ok(ExitCode::FAILURE);
    }
    log::info!("wrote {}", out.join(train::CHECKPOINT_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn load_speaker(cfg: &mut FlatConfig, seed: u64) -> Result<SpeakerEmbedding> {
    let l2 = cfg.take_parsed("l2_normalize_speaker")?.unwrap_or(false);
    let stub: Option<u64> = cfg.take_parsed("speaker_stub")?;
    match (optional_path(cfg, "speaker"), stub) {
        (Some(p), None) => Ok(speaker::load_speaker_embedding(&p, l2)?),
        (None, Some(id)) => Ok(speaker::stub_embedding(id, seed)),
        (None, None) => bail!("give `speaker` (embedding file) or `speaker_stub`"),
        (Some(_), Some(_)) => bail!("`speaker` and `speaker_stub` are exclusive"),
    }
}

pub fn infer(mut cfg: FlatConfig) -> Result<ExitCode> {
    let ckpt = required_path(&mut cfg, "checkpoint")?;
    let out = required_path(&mut cfg, "out")?;
    let seed = cfg.take_parsed("seed")?.unwrap_or(0);
    let vocab = Vocabulary::builtin();
    let sequence = match (cfg.take("text"), cfg.take("phonemes")) {
        (Some(t), None) => {
            let lexicon = Lexicon::load(&required_path(&mut cfg, "lexicon")?)?;
            text::tokenize(&t, &lexicon, &vocab)?
        }
        (None, Some(p)) => vocab.encode(&p.split_whitespace().collect::<Vec<_>>())?,
        (None, None) => bail!("give `text` (with `lexicon`) or `phonemes`"),
        (Some(_), Some(_)) => bail!("`text` and `phonemes` are exclusive"),
    };
    let spk = load_speaker(&mut cfg, seed)?;
    cfg.finish()?;

    let trainer = checkpoint::load_checkpoint(&ckpt)?;
    let result = run_inference(&trainer.params, sequence.ids(), &spk)?;
    let durations: Vec<i64> = result.durations.iter().map(|&d| d as i64).collect();
    let n = durations.len();
    let blobs = [
        Blob::from_tensor("z_t", &result.z_t),
        Blob::new("durations", vec![n], BlobData::I64(durations))?,
        Blob::from_tensor("predicted", &Tensor::new(vec![n], result.predicted)?),
    ];
    blob::save(&out, &blobs)?;
    let line: Vec<String> = result.durations.iter().map(usize::to_string).collect();
    println!("{}", line.join(","));
    log::info!("z_t {:?} written to {}", result.z_t.shape(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(mut cfg: FlatConfig) -> Result<ExitCode> {
    let mut network = NetworkConfig::tiny();
    cfg.apply(&mut network)?;
    let seed = cfg.take_parsed("seed")?.unwrap_or(0);
    let l_t = cfg.take_parsed("phonemes")?.unwrap_or(5);
    let l_a = cfg.take_parsed("frames")?.unwrap_or(16);
    let epsilon = cfg.take_parsed("epsilon")?.unwrap_or(1e-4);
    let threshold: f64 = cfg.take_parsed("threshold")?.unwrap_or(1e-4);
    cfg.finish()?;
    network.validate()?;

    let started = std::time::Instant::now();
    let report = train::check_gradients(&network, seed, l_t, l_a, epsilon)?;
    log::info!(
        "{} entries checked in {:.1} s; worst {:?}: analytic {:e}, numeric {:e}",
        report.entries_checked,
        started.elapsed().as_secs_f64(),
        report.worst,
        report.analytic,
        report.numeric
    );
    println!("{:e}", report.max_relative_error);
    Ok(if report.max_relative_error < threshold {
        ExitCode::SUCCESS
    } else {
        log::error!("max relative error {:e} >= {threshold:e}", report.max_relative_error);
        ExitCode::FAILURE
    })
}

pub fn eval(mut cfg: FlatConfig) -> Result<ExitCode> {
    let manifest = Manifest::load(&required_path(&mut cfg, "manifest")?)?;
    let outputs = required_path(&mut cfg, "outputs")?;
    let out = optional_path(&mut cfg, "out");
    cfg.take("seed");
    cfg.finish()?;

    let report = eval_report(&manifest, &outputs);
    for (id, why) in &report.skipped {
        log::warn!("skipped {id}: {why}");
    }
    log::info!("LSE-C, LSE-D: {LSE_NOTE}");
    let csv = report.to_csv();
    match out {
        Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(if report.skipped.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn make_synthetic(mut cfg: FlatConfig) -> Result<ExitCode> {
    let out = required_path(&mut cfg, "out")?;
    let d = SyntheticConfig::default();
    let config = SyntheticConfig {
        utterances: cfg.take_parsed("utterances")?.unwrap_or(d.utterances),
        frames: cfg.take_parsed("frames")?.unwrap_or(d.frames),
        speakers: cfg.take_parsed("speakers")?.unwrap_or(d.speakers),
        seed: cfg.take_parsed("seed")?.unwrap_or(d.seed),
    };
    cfg.finish()?;
    let mel = MelConfig::default();
    let utterances = synthetic::generate(&config, &Vocabulary::builtin(), &mel)?;
    let manifest = synthetic::write_corpus(&out, &utterances, &mel)?;
    for (path, hex) in synthetic::digests(&out)? {
        println!("{hex}  {path}");
    }
    log::info!("{} utterances, manifest {}", utterances.len(), manifest.display());
    Ok(ExitCode::SUCCESS)
}
