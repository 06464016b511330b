//! Named tensor blob container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "TAEMBLOB"
//! version u32      (currently 1; newer versions are rejected)
//! count   u32      number of blobs
//! per blob:
//!   name_len u32, name (UTF-8)
//!   dtype    u8    1 = f32, 2 = f64, 3 = u8, 4 = i64
//!   rank     u32
//!   extents  u64 × rank
//!   payload  product(extents) × dtype size, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TAEMBLOB";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    I64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U8 => 3,
            DType::I64 => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            1 => DType::F32,
            2 => DType::F64,
            3 => DType::U8,
            4 => DType::I64,
            c => return Err(Error::Format(format!("unknown dtype code {c}"))),
        })
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I64(Vec<i64>),
}

impl BlobData {
    pub fn dtype(&self) -> DType {
        match self {
            BlobData::F32(_) => DType::F32,
            BlobData::F64(_) => DType::F64,
            BlobData::U8(_) => DType::U8,
            BlobData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::F64(v) => v.len(),
            BlobData::U8(v) => v.len(),
            BlobData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: BlobData,
}

impl Blob {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: BlobData) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Format(format!("blob `{name}`: extents must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Format(format!(
                "blob `{name}`: shape {shape:?} needs {numel} values, payload has {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => BlobData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => BlobData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    /// Converts to a tensor of the same dtype; a dtype mismatch is an error.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match (&self.data, T::DTYPE) {
            (BlobData::F32(v), DType::F32) => v.iter().map(|&x| T::of(x as f64)).collect(),
            (BlobData::F64(v), DType::F64) => v.iter().map(|&x| T::of(x)).collect(),
            (d, want) => {
                return Err(Error::Format(format!(
                    "blob `{}` has dtype {:?}, expected {want:?}",
                    self.name,
                    d.dtype()
                )))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }
}

pub fn find<'a>(blobs: &'a [Blob], name: &str) -> Result<&'a Blob> {
    blobs
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::Format(format!("missing blob `{name}`")))
}

pub fn write_blobs<W: Write>(w: &mut W, blobs: &[Blob]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(blobs.len() as u32).to_le_bytes())?;
    for b in blobs {
        w.write_all(&(b.name.len() as u32).to_le_bytes())?;
        w.write_all(b.name.as_bytes())?;
        w.write_all(&[b.data.dtype().code()])?;
        w.write_all(&(b.shape.len() as u32).to_le_bytes())?;
        for &d in &b.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &b.data {
            BlobData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            BlobData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            BlobData::U8(v) => w.write_all(v)?,
            BlobData::I64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated blob stream: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

pub fn read_blobs<R: Read>(r: &mut R) -> Result<Vec<Blob>> {
    let magic: [u8; 8] = read_exact(r)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a TAEMBLOB stream".into()));
    }
    let version = read_u32(r)?;
    if version == 0 || version > VERSION {
        return Err(Error::Format(format!(
            "unsupported blob format version {version} (this build reads up to {VERSION})"
        )));
    }
    let count = read_u32(r)?;
    let mut blobs = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated blob name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("blob name is not UTF-8".into()))?;
        let dtype = DType::from_code(read_exact::<_, 1>(r)?[0])?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(r)?) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("blob `{name}`: extent overflow")))?;
        let mut payload = vec![0u8; numel * dtype.size()];
        r.read_exact(&mut payload)
            .map_err(|e| Error::Format(format!("blob `{name}`: truncated payload: {e}")))?;
        let data = match dtype {
            DType::F32 => BlobData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => BlobData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => BlobData::U8(payload),
            DType::I64 => BlobData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        blobs.push(Blob::new(name, shape, data)?);
    }
    Ok(blobs)
}

pub fn save(path: &Path, blobs: &[Blob]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_blobs(&mut w, blobs).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Blob>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_blobs(&mut BufReader::new(file))
}
