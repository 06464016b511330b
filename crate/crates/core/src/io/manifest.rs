//! JSON-lines dataset manifest, one utterance per line.
//!
//! ```text
//! {"id":"u0","wav_path":"wav/u0.wav","align_path":"align/u0.tsv","speaker_stub_id":3}
//! ```
//!
//! Relative paths are resolved against the manifest's directory. When `text`
//! is absent the alignment labels are taken as the phoneme sequence.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<PathBuf>,
    pub align_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_stub_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub durations_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ManifestRecord {
    fn check(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Format("record has an empty id".into()));
        }
        if self.mel_path.is_none() && self.wav_path.is_none() {
            return Err(Error::Format(format!("record {}: needs mel_path or wav_path", self.id)));
        }
        match (&self.speaker_path, self.speaker_stub_id) {
            (None, None) => Err(Error::Format(format!(
                "record {}: needs speaker_path or speaker_stub_id",
                self.id
            ))),
            (Some(_), Some(_)) => Err(Error::Format(format!(
                "record {}: speaker_path and speaker_stub_id are exclusive",
                self.id
            ))),
            _ => Ok(()),
        }
    }

    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [
            self.mel_path.as_mut(),
            self.wav_path.as_mut(),
            Some(&mut self.align_path),
            self.speaker_path.as_mut(),
            self.target_path.as_mut(),
            self.durations_path.as_mut(),
            self.frames_dir.as_mut(),
            self.landmarks_path.as_mut(),
        ]
        .into_iter()
        .flatten()
    }

    /// Referenced paths that do not exist.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        [
            self.mel_path.as_ref(),
            self.wav_path.as_ref(),
            Some(&self.align_path),
            self.speaker_path.as_ref(),
            self.target_path.as_ref(),
            self.durations_path.as_ref(),
            self.frames_dir.as_ref(),
            self.landmarks_path.as_ref(),
        ]
        .into_iter()
        .flatten()
        .filter(|p| !p.exists())
        .cloned()
        .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Parses JSON lines. Blank lines are skipped; ids must be unique.
    pub fn parse(text: &str, base: &Path, name: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: name.to_string(),
                line: n + 1,
                msg: e.to_string(),
            })?;
            rec.check().map_err(|e| Error::Parse {
                path: name.to_string(),
                line: n + 1,
                msg: e.to_string(),
            })?;
            if !ids.insert(rec.id.clone()) {
                return Err(Error::Parse {
                    path: name.to_string(),
                    line: n + 1,
                    msg: format!("duplicate id `{}`", rec.id),
                });
            }
            for p in rec.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, &path.display().to_string())
    }

    /// One compact JSON object per line, in record order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Rewrites every path relative to `dir` when it lies under `dir`, and
    /// as an absolute path otherwise, so the manifest can be saved in `dir`.
    pub fn rebase(&mut self, dir: &Path) -> Result<()> {
        let dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        for rec in &mut self.records {
            for p in rec.paths_mut() {
                let abs = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
                *p = match abs.strip_prefix(&dir) {
                    Ok(rel) => rel.to_path_buf(),
                    Err(_) => abs,
                };
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}
