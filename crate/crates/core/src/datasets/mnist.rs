//! MNIST-style IDX files, optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::DatasetSplit;
use crate::{Error, Result, Tensor};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!("IDX image body has {} bytes, header implies {}", body.len(), n * rows * cols)));
    }
    Ok((n, rows, cols, body.iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("IDX label body has {} bytes, header implies {n}", body.len())));
    }
    if let Some(&bad) = body.iter().find(|&&b| b > 9) {
        return Err(Error::Format(format!("label {bad} outside [0, 9]")));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn read_maybe_gz(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(fs::read(plain)?);
    }
    let gz: PathBuf = dir.join(format!("{name}.gz"));
    if gz.exists() {
        let mut out = Vec::new();
        GzDecoder::new(fs::File::open(gz)?).read_to_end(&mut out)?;
        return Ok(out);
    }
    Err(Error::MissingFile(plain))
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<DatasetSplit> {
    let (n, rows, cols, px) = parse_idx_images(&read_maybe_gz(dir, images)?)?;
    let lb = parse_idx_labels(&read_maybe_gz(dir, labels)?)?;
    if lb.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", lb.len())));
    }
    let names = (0..10).map(|d| d.to_string()).collect();
    DatasetSplit::new(Tensor::new(vec![n, rows, cols, 1], px)?, lb, names)
}

/// Train and test splits from the four standard IDX files in `dir`.
pub fn load_mnist_idx(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    Ok((
        load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}
