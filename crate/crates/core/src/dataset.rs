//! IDX files (the MNIST family container), datasets and epoch partitioning.
//!
//! IDX headers are big-endian: a magic number (`0x00000803` = 2051 for
//! images, `0x00000801` = 2049 for labels), the item count, and for images
//! the row and column counts. The payload is one unsigned byte per pixel or
//! label. Files ending in `.gz` are decompressed transparently.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|ext| ext == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_be_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(b))
}

fn read_payload(r: &mut dyn Read, len: usize) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(len);
    r.take(len as u64).read_to_end(&mut data)?;
    if data.len() != len {
        return Err(Error::Format(format!(
            "truncated IDX payload: expected {len} bytes, found {}",
            data.len()
        )));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after IDX payload".into()));
    }
    Ok(data)
}

fn expect_magic(found: u32, expected: u32, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "bad IDX magic for {what}: expected {expected}, found {found}"
        )));
    }
    Ok(())
}

pub fn parse_idx_images(r: &mut dyn Read) -> Result<IdxImages> {
    expect_magic(read_be_u32(r)?, IMAGES_MAGIC, "images")?;
    let count = read_be_u32(r)? as usize;
    let rows = read_be_u32(r)? as usize;
    let cols = read_be_u32(r)? as usize;
    let pixels = read_payload(r, count * rows * cols)?;
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(r: &mut dyn Read) -> Result<Vec<u8>> {
    expect_magic(read_be_u32(r)?, LABELS_MAGIC, "labels")?;
    let count = read_be_u32(r)? as usize;
    read_payload(r, count)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&mut *open(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&mut *open(path.as_ref())?)
}

/// Feature matrix in `[0, 1]` plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `N × D`, one flattened sample per row.
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, classes: num_classes });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self { name: name.into(), features, labels, num_classes })
    }

    /// Flattens each image row-major and scales bytes by 1/255.
    pub fn from_idx(
        name: impl Into<String>,
        images: &IdxImages,
        labels: &[u8],
        num_classes: usize,
    ) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: images.count,
                found: labels.len(),
            });
        }
        let dim = images.rows * images.cols;
        let features = Array2::from_shape_vec(
            (images.count, dim),
            images.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        Self::new(name, features, labels.iter().map(|&l| l as usize).collect(), num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Seeded random subset of `n` distinct samples (all of them if `n >= len`).
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx
    }
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Looks for `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` in `dir`.
pub fn locate(dir: &Path, prefix: &str, kind: &str) -> Result<PathBuf> {
    let base = format!("{prefix}-{kind}-ubyte");
    for name in [base.clone(), format!("{base}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found in {}", base, dir.display()),
    )))
}

pub fn load_splits(dir: impl AsRef<Path>, name: &str) -> Result<Splits> {
    let dir = dir.as_ref();
    let train_images = load_idx_images(locate(dir, "train", "images-idx3")?)?;
    let train_labels = load_idx_labels(locate(dir, "train", "labels-idx1")?)?;
    let test_images = load_idx_images(locate(dir, "t10k", "images-idx3")?)?;
    let test_labels = load_idx_labels(locate(dir, "t10k", "labels-idx1")?)?;
    let num_classes = train_labels
        .iter()
        .chain(&test_labels)
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    Ok(Splits {
        train: Dataset::from_idx(name, &train_images, &train_labels, num_classes)?,
        test: Dataset::from_idx(name, &test_images, &test_labels, num_classes)?,
    })
}

/// Shuffles `0..n` and cuts it into consecutive chunks of `chunk_size`,
/// dropping the ragged tail.
pub fn shuffle_partition<R: Rng + ?Sized>(n: usize, chunk_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(chunk_size > 0, "chunk size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks_exact(chunk_size)
        .map(|c| c.to_vec())
        .collect()
}
