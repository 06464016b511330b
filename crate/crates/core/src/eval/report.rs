use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::manifest::{Manifest, ManifestRecord};

use super::{load_frames, load_landmarks, lmd, psnr, ssim};

/// Reported in place of LSE-C and LSE-D, which need a pretrained SyncNet.
pub const LSE_NOTE: &str = "n/a (requires pretrained SyncNet)";

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceMetrics {
    pub id: String,
    /// Frame means.
    pub psnr: f64,
    pub ssim: f64,
    pub lmd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by id.
    pub rows: Vec<UtteranceMetrics>,
    /// Utterances skipped, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl EvalReport {
    /// Column means over evaluated utterances, in id order.
    pub fn means(&self) -> Option<(f64, f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let (p, s, l) = self
            .rows
            .iter()
            .fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.psnr, a.1 + r.ssim, a.2 + r.lmd));
        Some((p / n, s / n, l / n))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utterance_id,psnr,ssim,lmd,lse_c,lse_d\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6},{:.6},n/a,n/a\n", r.id, r.psnr, r.ssim, r.lmd));
        }
        match self.means() {
            Some((p, s, l)) => out.push_str(&format!("mean,{p:.6},{s:.6},{l:.6},n/a,n/a\n")),
            None => out.push_str("mean,n/a,n/a,n/a,n/a,n/a\n"),
        }
        out
    }
}

/// Generated frames of utterance `id` live in `<outputs>/<id>/frames/`, its
/// landmarks in `<outputs>/<id>/landmarks.tsv`.
pub fn generated_paths(outputs: &Path, id: &str) -> (PathBuf, PathBuf) {
    let d = outputs.join(id);
    (d.join("frames"), d.join("landmarks.tsv"))
}

fn evaluate(rec: &ManifestRecord, outputs: &Path) -> Result<UtteranceMetrics> {
    let (gen_frames, gen_landmarks) = generated_paths(outputs, &rec.id);
    let missing = |what: &str| Error::InvalidArgument(format!("manifest record has no {what}"));
    let gt_frames = rec.frames_dir.as_deref().ok_or_else(|| missing("frames_dir"))?;
    let gt_landmarks = rec.landmarks_path.as_deref().ok_or_else(|| missing("landmarks_path"))?;
    let absent: Vec<String> = [gt_frames, gt_landmarks, &gen_frames, &gen_landmarks]
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !absent.is_empty() {
        return Err(Error::InvalidArgument(format!("missing {}", absent.join(", "))));
    }
    let (a, b) = (load_frames(&gen_frames)?, load_frames(gt_frames)?);
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} generated frames vs {} ground-truth frames",
            a.len(),
            b.len()
        )));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        p += psnr(x, y)?;
        s += ssim(x, y)?;
    }
    let n = a.len() as f64;
    Ok(UtteranceMetrics {
        id: rec.id.clone(),
        psnr: p / n,
        ssim: s / n,
        lmd: lmd(&load_landmarks(&gen_landmarks)?, &load_landmarks(gt_landmarks)?)?,
    })
}

/// Compares generated frames and landmarks under `outputs` with the ground
/// truth named by `manifest`. Utterances that cannot be evaluated are skipped
/// and listed.
pub fn eval_report(manifest: &Manifest, outputs: &Path) -> EvalReport {
    let mut records: Vec<&ManifestRecord> = manifest.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut report = EvalReport {
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for rec in records {
        match evaluate(rec, outputs) {
            Ok(m) => report.rows.push(m),
            Err(e) => report.skipped.push((rec.id.clone(), e.to_string())),
        }
    }
    report
}
