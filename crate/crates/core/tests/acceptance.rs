//! Acceptance criteria. Runs every check, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use taem::autodiff::{Tape, Tensor};
use taem::dsp::MelConfig;
use taem::eval::{lmd, psnr, ssim, FrameImage, LandmarkSet};
use taem::io::{blob, checkpoint, manifest::Manifest};
use taem::network::{infer, Net, NetworkConfig, TaemParams};
use taem::prepare::{prepare_manifest, PrepareContext};
use taem::speaker::{stub_embedding, SpeakerEmbedding};
use taem::synthetic::{self, SyntheticConfig};
use taem::text::Vocabulary;
use taem::train::{self, batch_objective, loss_dis, Example, LossMode, TrainConfig, Trainer};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn synthetic_corpus(dir: &Path) -> Result<Vec<Example>, String> {
    let mel = MelConfig::default();
    let utts = synthetic::generate(&SyntheticConfig::default(), &Vocabulary::builtin(), &mel).map_err(err)?;
    let path = synthetic::write_corpus(dir, &utts, &mel).map_err(err)?;
    let manifest = Manifest::load(&path).map_err(err)?;
    let report = prepare_manifest(&manifest, &PrepareContext::new(0, 512).map_err(err)?);
    if let Some((id, e)) = report.failed.first() {
        return Err(format!("{id}: {e}"));
    }
    Ok(report.ok.into_iter().map(|p| p.example).collect())
}

/// Batch means of `(L_dis, L_dur)` over `data` with dropout off.
fn eval_losses(params: &TaemParams<f32>, data: &[Example], train: &TrainConfig) -> Result<(f64, f64), String> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape).map_err(err)?;
    let batch: Vec<&Example> = data.iter().collect();
    let (_, dis, dur) = batch_objective(&mut tape, params, &vars, &batch, train, None).map_err(err)?;
    Ok((tape.value(dis).item() as f64, tape.value(dur).item() as f64))
}

fn length_regulator() -> Check {
    let started = Instant::now();
    let zp = Tensor::<f64>::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]]).map_err(err)?;
    let mut tape = Tape::new();
    let x = tape.constant(zp.clone()).map_err(err)?;
    let y = Net::length_regulate(&mut tape, x, &[3, 1, 2]).map_err(err)?;
    let got = tape.value(y);
    let expected: Vec<&[f64]> = [0, 0, 0, 1, 2, 2].iter().map(|&i| zp.row(i)).collect();
    let same = got.rows() == 6 && (0..6).all(|r| got.row(r) == expected[r]);
    let t = started.elapsed();
    ensure(same && t < Duration::from_secs(1), format!("rows {:?}, {t:.2?}", got.shape()))
}

fn gradient_check() -> Check {
    let started = Instant::now();
    let report = train::check_gradients(&NetworkConfig::tiny(), 0, 5, 16, 1e-4).map_err(err)?;
    let t = started.elapsed();
    ensure(
        report.max_relative_error < 1e-4 && t < Duration::from_secs(60),
        format!(
            "max relative error {:.3e} over {} entries, {t:.1?}",
            report.max_relative_error, report.entries_checked
        ),
    )
}

fn stop_gradient() -> Check {
    let config = NetworkConfig::tiny();
    let params = TaemParams::<f64>::init(&config, 3).map_err(err)?;
    let example = Example {
        id: "u".into(),
        phonemes: vec![1, 5, 2, 7, 3],
        durations: vec![4, 2, 3, 3, 4],
        speaker: stub_embedding(1, 0),
        target: Tensor::zeros(&[4, config.latent_dim]),
    };
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape).map_err(err)?;
    let (_, _, dur) = batch_objective(&mut tape, &params, &vars, &[&example], &TrainConfig::default(), None).map_err(err)?;
    let mut grads = tape.backward(dur).map_err(err)?;
    let mut checked = 0;
    let mut nonzero = Vec::new();
    for (name, &v) in params.names().iter().zip(&vars) {
        if name == "embedding" || name.starts_with("encoder.") || name.starts_with("spk_proj") {
            checked += 1;
            let g = grads.take(v).ok_or("missing gradient")?;
            if g.data().iter().any(|&x| x != 0.0) {
                nonzero.push(name.clone());
            }
        }
    }
    ensure(
        checked > 0 && nonzero.is_empty(),
        format!("{checked} phoneme-encoder tensors, nonzero: {nonzero:?}"),
    )
}

fn overfit(data: &[Example]) -> Check {
    let started = Instant::now();
    let mut trainer = Trainer::new(NetworkConfig::scaled(128, 2), TrainConfig::default()).map_err(err)?;
    let (dis0, dur0) = eval_losses(&trainer.params, data, &trainer.train)?;
    let mut first = None;
    let mut last = None;
    while trainer.step < 2000 {
        let s = trainer.step(data).map_err(err)?;
        first.get_or_insert(s);
        last = Some(s);
    }
    let (first, last) = (first.unwrap(), last.unwrap());
    let (dis, dur) = eval_losses(&trainer.params, data, &trainer.train)?;
    let t = started.elapsed();
    let drop = 1.0 - dis / dis0;
    ensure(
        drop >= 0.95 && dur < 0.1 && t < Duration::from_secs(600),
        format!(
            "eval L_dis {dis0:.3} -> {dis:.4} ({:.2}% drop), eval L_dur {dur0:.3} -> {dur:.4}; \
             training log L_dis {:.3} -> {:.4}, L_dur {:.3} -> {:.4}; {t:.0?}",
            100.0 * drop,
            first.loss_dis,
            last.loss_dis,
            first.loss_dur,
            last.loss_dur
        ),
    )
}

fn shape_contract(data: &[Example]) -> Check {
    let params = TaemParams::<f32>::init(&NetworkConfig::tiny(), 0).map_err(err)?;
    let ids = [1, 2, 3, 4, 5];
    let mut bad = Vec::new();
    for l_a in (8..=128).step_by(4) {
        let mut d = vec![l_a / 5; 5];
        d[0] += l_a % 5;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape).map_err(err)?;
        let out = Net::new(&params, vars)
            .map_err(err)?
            .forward(&mut tape, &ids, &SpeakerEmbedding::zeros(), Some(&d))
            .map_err(err)?;
        if tape.value(out.z_t).shape() != [l_a / 4, 512] {
            bad.push(l_a);
        }
    }
    let targets_ok = data.iter().all(|e| e.target.shape() == [24, 512] && e.durations.iter().sum::<usize>() == 96);
    let full = TaemParams::<f32>::init(&NetworkConfig::default(), 0).map_err(err)?;
    let ex = &data[0];
    let mut tape = Tape::new();
    let vars = full.bind(&mut tape).map_err(err)?;
    let out = Net::new(&full, vars)
        .map_err(err)?
        .forward(&mut tape, &ex.phonemes, &ex.speaker, Some(&ex.durations))
        .map_err(err)?;
    let shape = tape.value(out.z_t).shape().to_vec();
    ensure(
        bad.is_empty() && targets_ok && shape == [24, 512],
        format!("l_a=96 gives z_t {shape:?}; mismatched l_a: {bad:?}"),
    )
}

fn distance_golden() -> Check {
    let value = |z_t: Tensor<f64>, z_a: Tensor<f64>| -> Result<f64, String> {
        let mut tape = Tape::new();
        let a = tape.constant(z_t).map_err(err)?;
        let b = tape.constant(z_a).map_err(err)?;
        let l = loss_dis(&mut tape, a, b).map_err(err)?;
        Ok(tape.value(l).item())
    };
    let mut e = vec![0.0; 512];
    e[100] = 2.0;
    let one = value(Tensor::new(vec![1, 512], e.clone()).map_err(err)?, Tensor::zeros(&[1, 512]))?;
    let mut zt = e.clone();
    zt.extend_from_slice(&e);
    let dup = value(Tensor::new(vec![2, 512], zt).map_err(err)?, Tensor::zeros(&[2, 512]))?;
    ensure(one == 4.0 && dup == 4.0, format!("single frame {one}, duplicated {dup}"))
}

fn metric_goldens() -> Check {
    let mut r = taem::rng::stream(0, "frame");
    let data: Vec<u8> = (0..64 * 48 * 3).map(|_| (20.0 + 200.0 * taem::rng::unit(&mut r)) as u8).collect();
    let img = FrameImage::new(64, 48, 3, data.clone()).map_err(err)?;
    let off = FrameImage::new(64, 48, 3, data.iter().map(|&v| v + 1).collect()).map_err(err)?;
    let p_same = psnr(&img, &img).map_err(err)?;
    let p_off = psnr(&img, &off).map_err(err)?;
    let s = ssim(&img, &img).map_err(err)?;
    let truth = LandmarkSet::new(vec![vec![(10.0, 12.0), (14.0, 11.0), (12.0, 16.0)]; 3]).map_err(err)?;
    let moved = LandmarkSet::new(
        truth
            .frames()
            .iter()
            .map(|f| f.iter().map(|&(x, y)| (x + 7.5, y - 3.25)).collect())
            .collect(),
    )
    .map_err(err)?;
    let l = lmd(&moved, &truth).map_err(err)?;
    ensure(
        p_same == 100.0 && (p_off - 48.13).abs() <= 0.01 && (s - 1.0).abs() <= 1e-9 && l.abs() <= 1e-9,
        format!("psnr {p_same} / {p_off:.4} dB, ssim {s}, lmd {l:e}"),
    )
}

fn loss_bits(log: &str) -> Vec<String> {
    log.lines()
        .skip(1)
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

fn determinism(data: &[Example], dir: &Path) -> Check {
    let network = NetworkConfig::scaled(32, 1);
    let train = TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        max_steps: 20,
        seed: 7,
        ..Default::default()
    };
    let (full, split) = (dir.join("full"), dir.join("split"));
    let mut a = Trainer::new(network.clone(), train.clone()).map_err(err)?;
    train::run_training(&mut a, data, &full, |_| {}).map_err(err)?;

    let mut b = Trainer::new(network.clone(), TrainConfig { max_steps: 12, ..train.clone() }).map_err(err)?;
    train::run_training(&mut b, data, &split, |_| {}).map_err(err)?;
    let mut b = checkpoint::load_checkpoint(&split.join(train::CHECKPOINT_FILE)).map_err(err)?;
    checkpoint::check_resume(&b, &network, &train).map_err(err)?;
    b.train = train;
    train::run_training(&mut b, data, &split, |_| {}).map_err(err)?;

    let read = |p: &Path| std::fs::read_to_string(p.join(train::LOG_FILE)).map_err(err);
    let (la, lb) = (loss_bits(&read(&full)?), loss_bits(&read(&split)?));
    let ckpt = |p: &Path| std::fs::read(p.join(train::CHECKPOINT_FILE)).map_err(err);
    let same_ckpt = ckpt(&full)? == ckpt(&split)?;

    let params = &a.params;
    let write = |name: &str| -> Result<Vec<u8>, String> {
        let out = infer(params, &[3, 9, 14, 4], &stub_embedding(1, 0)).map_err(err)?;
        let path = dir.join(name);
        blob::save(&path, &[blob::Blob::from_tensor("z_t", &out.z_t)]).map_err(err)?;
        std::fs::read(path).map_err(err)
    };
    let same_infer = write("a.blob")? == write("b.blob")?;
    ensure(
        la.len() == 20 && la == lb && same_ckpt && same_infer,
        format!(
            "{} vs {} logged steps, trajectories equal: {}, checkpoints equal: {same_ckpt}, infer bytes equal: {same_infer}",
            la.len(),
            lb.len(),
            la == lb
        ),
    )
}

fn speaker_conditioning() -> Check {
    let params = TaemParams::<f32>::init(&NetworkConfig::default(), 0).map_err(err)?;
    let ids = [3, 9, 14, 4, 22];
    let d = [4, 3, 5, 2, 2];
    let run = |spk: &SpeakerEmbedding| -> Result<Tensor<f32>, String> {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape).map_err(err)?;
        let out = Net::new(&params, vars).map_err(err)?.forward(&mut tape, &ids, spk, Some(&d)).map_err(err)?;
        Ok(tape.value(out.z_t).clone())
    };
    let (a, b) = (run(&stub_embedding(0, 0))?, run(&stub_embedding(1, 0))?);
    let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape).map_err(err)?;
    let x = Net::new(&params, vars)
        .map_err(err)?
        .embed_phonemes(&mut tape, &ids, &SpeakerEmbedding::zeros())
        .map_err(err)?;
    let table = params.get("embedding").ok_or("no embedding table")?;
    let lookup = ids.iter().enumerate().all(|(r, &id)| tape.value(x).row(r) == table.row(id));
    ensure(
        differing > 0 && lookup,
        format!("{differing} of {} z_t elements differ; zero embedding is a lookup: {lookup}", a.data().len()),
    )
}

fn ablation(data: &[Example]) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in LossMode::ALL {
        let train = TrainConfig {
            lr: 1e-3,
            max_steps: 150,
            loss_mode: mode,
            ..Default::default()
        };
        let mut t = Trainer::new(NetworkConfig::scaled(64, 1), train).map_err(err)?;
        let mut finite = true;
        while t.step < t.train.max_steps {
            match t.step(data) {
                Ok(s) => finite &= s.loss_total.is_finite() && s.loss_dis.is_finite(),
                Err(e) => {
                    finite = false;
                    lines.push(format!("{}: {e}", mode.as_str()));
                    break;
                }
            }
        }
        let (dis, _) = eval_losses(&t.params, data, &t.train)?;
        ok &= finite && dis.is_finite();
        lines.push(format!("{} final L_dis {dis:.4}", mode.as_str()));
    }
    ensure(ok, lines.join("; "))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let data = synthetic_corpus(&dir.path().join("corpus"));
    let with_data = |f: &dyn Fn(&[Example]) -> Check| match &data {
        Ok(d) => f(d),
        Err(e) => Err(format!("synthetic corpus: {e}")),
    };
    let results = [
        ("1 length regulator example", length_regulator()),
        ("2 gradient check", gradient_check()),
        ("3 stop-gradient", stop_gradient()),
        ("4 overfit smoke test", with_data(&overfit)),
        ("5 shape contract", with_data(&shape_contract)),
        ("6 distance golden", distance_golden()),
        ("7 metric goldens", metric_goldens()),
        ("8 determinism", with_data(&|d| determinism(d, dir.path()))),
        ("9 speaker conditioning", speaker_conditioning()),
        ("10 loss-mode ablation", with_data(&ablation)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
