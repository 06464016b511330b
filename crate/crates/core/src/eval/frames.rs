use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::blob::{self, BlobData};

/// 8-bit image, row-major with interleaved channels (1 or 3).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl FrameImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 || data.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// ITU-R BT.601 luma; grayscale images are returned as is.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }
}

/// Reads a PNG, or a tensor blob holding one u8 tensor of shape `[h, w]` or
/// `[h, w, c]`.
pub fn load_frame(path: &Path) -> Result<FrameImage> {
    if path.extension().is_some_and(|e| e == "blob") {
        let blobs = blob::load(path)?;
        let [b] = blobs.as_slice() else {
            return Err(Error::Format(format!("{}: expected one frame blob", path.display())));
        };
        let BlobData::U8(data) = &b.data else {
            return Err(Error::Format(format!("{}: frame blob must be u8", path.display())));
        };
        return match b.shape[..] {
            [h, w] => FrameImage::new(h, w, 1, data.clone()),
            [h, w, c] => FrameImage::new(h, w, c, data.clone()),
            _ => Err(Error::Format(format!("{}: frame blob has rank {}", path.display(), b.shape.len()))),
        };
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        FrameImage::new(h, w, 3, img.to_rgb8().into_raw())
    } else {
        FrameImage::new(h, w, 1, img.to_luma8().into_raw())
    }
}

/// Every `.png` or `.blob` file in `dir`, in file-name order.
pub fn load_frames(dir: &Path) -> Result<Vec<FrameImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "png" || e == "blob"));
    paths.sort();
    paths.iter().map(|p| load_frame(p)).collect()
}

/// Lip landmarks per frame; every frame has the same number of points.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    frames: Vec<Vec<(f64, f64)>>,
}

impl LandmarkSet {
    pub fn new(frames: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if first.is_empty() || frames.iter().any(|f| f.len() != first.len()) {
                return Err(Error::InvalidArgument("landmark frames need equal, nonzero point counts".into()));
            }
        }
        if frames.iter().flatten().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(Error::InvalidArgument("non-finite landmark coordinate".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Vec<(f64, f64)>] {
        &self.frames
    }

    pub fn points(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// TSV lines `frame<TAB>idx<TAB>x<TAB>y`; frames and indices are dense and
/// zero-based but may appear in any order.
pub fn parse_landmarks(text: &str, name: &str) -> Result<LandmarkSet> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: name.to_string(),
            line: n + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [frame, idx, x, y] = f[..] else {
            return Err(err(format!("expected 4 tab-separated fields, got {}", f.len())));
        };
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("`{s}`: {e}")));
        let real = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        rows.push((int(frame)?, int(idx)?, real(x)?, real(y)?));
    }
    let frames = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let points = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut grid: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None; points]; frames];
    for (f, i, x, y) in rows {
        if grid[f][i].replace((x, y)).is_some() {
            return Err(Error::Format(format!("{name}: duplicate landmark {i} in frame {f}")));
        }
    }
    let frames = grid
        .into_iter()
        .enumerate()
        .map(|(f, pts)| {
            pts.into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Format(format!("{name}: frame {f} is missing landmarks")))
        })
        .collect::<Result<Vec<_>>>()?;
    LandmarkSet::new(frames)
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, &path.display().to_string())
}
