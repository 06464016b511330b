//! Training checkpoints.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic       8 bytes  "TAEMCKPT"
//! version     u32      (currently 1; newer versions are rejected)
//! seed        u64      master seed
//! step        u64      completed optimisation steps
//! config_len  u32
//! config      canonical JSON {"network": …, "train": …} with sorted keys
//! blobs       TAEMBLOB stream: param/<name>, adam.m/<name>, adam.v/<name>,
//!             adam.step (i64, shape [1])
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::autodiff::AdamState;
use crate::error::{Error, Result};
use crate::io::blob::{self, Blob, BlobData};
use crate::network::{NetworkConfig, TaemParams};
use crate::train::{TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"TAEMCKPT";
pub const VERSION: u32 = 1;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const ADAM_STEP: &str = "adam.step";

/// `{"network": …, "train": …}` serialised with sorted keys.
pub fn canonical_config(network: &NetworkConfig, train: &TrainConfig) -> Result<String> {
    let v = serde_json::json!({ "network": network, "train": train });
    Ok(serde_json::to_string(&v)?)
}

/// The configuration a resumed run must agree on: everything except
/// [`TrainConfig::RUN_CONTROL_KEYS`].
pub fn fingerprint(network: &NetworkConfig, train: &TrainConfig) -> Result<Value> {
    let mut v = serde_json::json!({ "network": network, "train": train });
    let t = v["train"].as_object_mut().expect("train serialises to an object");
    for k in TrainConfig::RUN_CONTROL_KEYS {
        t.remove(k);
    }
    Ok(v)
}

/// Errors unless `saved` was produced under the same fingerprint.
pub fn check_resume(saved: &Trainer, network: &NetworkConfig, train: &TrainConfig) -> Result<()> {
    let (a, b) = (fingerprint(&saved.network, &saved.train)?, fingerprint(network, train)?);
    if a == b {
        return Ok(());
    }
    let mut diffs = Vec::new();
    for section in ["network", "train"] {
        let (x, y) = (a[section].as_object().unwrap(), b[section].as_object().unwrap());
        for (k, v) in x {
            if y.get(k) != Some(v) {
                diffs.push(format!("{k}: checkpoint {v}, requested {}", y.get(k).unwrap_or(&Value::Null)));
            }
        }
    }
    Err(Error::Config(format!("configuration differs from checkpoint: {}", diffs.join("; "))))
}

pub fn write_checkpoint<W: Write>(w: &mut W, t: &Trainer) -> Result<()> {
    let config = canonical_config(&t.network, &t.train)?;
    let mut blobs = t.params.to_blobs(PARAM);
    for (prefix, moments) in [(ADAM_M, &t.adam.m), (ADAM_V, &t.adam.v)] {
        blobs.extend(
            t.params
                .names()
                .iter()
                .zip(moments)
                .map(|(n, m)| Blob::from_tensor(format!("{prefix}{n}"), m)),
        );
    }
    blobs.push(Blob::new(ADAM_STEP, vec![1], BlobData::I64(vec![t.adam.step as i64]))?);
    let io = |e| Error::Format(format!("writing checkpoint: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&t.train.seed.to_le_bytes()).map_err(io)?;
    w.write_all(&t.step.to_le_bytes()).map_err(io)?;
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(config.as_bytes()).map_err(io)?;
    blob::write_blobs(w, &blobs).map_err(io)
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Trainer> {
    if &read_array::<_, 8>(r)? != MAGIC {
        return Err(Error::Format("bad magic, not a TAEMCKPT file".into()));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version == 0 || version > VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads up to {VERSION})"
        )));
    }
    let seed = u64::from_le_bytes(read_array(r)?);
    let step = u64::from_le_bytes(read_array(r)?);
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)
        .map_err(|e| Error::Format(format!("truncated checkpoint config: {e}")))?;
    let config: Value = serde_json::from_slice(&config)?;
    let network: NetworkConfig = serde_json::from_value(config["network"].clone())?;
    let train: TrainConfig = serde_json::from_value(config["train"].clone())?;
    if train.seed != seed {
        return Err(Error::Format(format!("header seed {seed} disagrees with config seed {}", train.seed)));
    }
    let blobs = blob::read_blobs(r)?;
    let params = TaemParams::<f32>::from_blobs(&network, &blobs, PARAM)?;
    let moments = |prefix: &str| -> Result<Vec<_>> {
        Ok(TaemParams::<f32>::from_blobs(&network, &blobs, prefix)?.tensors().to_vec())
    };
    let adam_step = match &blob::find(&blobs, ADAM_STEP)?.data {
        BlobData::I64(v) if v.len() == 1 && v[0] >= 0 => v[0] as u64,
        _ => return Err(Error::Format(format!("`{ADAM_STEP}` must be one non-negative i64"))),
    };
    Ok(Trainer {
        adam: AdamState {
            step: adam_step,
            m: moments(ADAM_M)?,
            v: moments(ADAM_V)?,
        },
        network,
        train,
        params,
        step,
    })
}

/// Writes through a temporary file in the same directory, so an existing
/// checkpoint at `path` is replaced only by a complete one.
pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&mut w, t)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn trainer() -> Trainer {
        let train = TrainConfig {
            seed: 11,
            lr: 3e-3,
            ..Default::default()
        };
        let mut t = Trainer::new(NetworkConfig::tiny(), train).unwrap();
        for (k, m) in t.adam.m.iter_mut().enumerate() {
            m.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = (k * 7 + i) as f32 * 1e-3);
        }
        t.adam.v[0].data_mut()[0] = f32::MIN_POSITIVE;
        t.adam.step = 3;
        t.step = 3;
        t
    }

    fn bytes(t: &Trainer) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, t).unwrap();
        buf
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let t = trainer();
        let buf = bytes(&t);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(bytes(&back), buf);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &t).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), buf);
        assert_eq!(load_checkpoint(&p).unwrap(), t);
    }

    #[test]
    fn header_is_little_endian_with_sorted_json() {
        let t = trainer();
        let buf = bytes(&t);
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf[8..12], 1u32.to_le_bytes());
        assert_eq!(buf[12..20], 11u64.to_le_bytes());
        assert_eq!(buf[20..28], 3u64.to_le_bytes());
        let len = u32::from_le_bytes(buf[28..32].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&buf[32..32 + len]).unwrap();
        assert!(json.starts_with("{\"network\":{\"dp_filter\":"), "{json}");
        assert_eq!(json, canonical_config(&t.network, &t.train).unwrap());
    }

    #[test]
    fn future_version_and_garbage_are_rejected() {
        let mut buf = bytes(&trainer());
        buf[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Format(_))));
        let mut buf = bytes(&trainer());
        buf[0] = b'X';
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
        let buf = bytes(&trainer());
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn resume_fingerprint_ignores_run_control() {
        let t = trainer();
        let mut train = t.train.clone();
        train.max_steps = 9;
        train.checkpoint_every = 1;
        check_resume(&t, &t.network, &train).unwrap();
        train.lr = 1e-3;
        let err = check_resume(&t, &t.network, &train).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
        let mut net = t.network.clone();
        net.dropout = 0.5;
        assert!(check_resume(&t, &net, &t.train).is_err());
    }
}
