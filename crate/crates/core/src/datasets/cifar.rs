//! CIFAR-10 / CIFAR-100 binary versions.
//!
//! A record is the label byte(s) followed by 3072 pixel bytes: the 1024-byte
//! red plane, then green, then blue, each row-major over 32x32.

use std::fs;
use std::path::{Path, PathBuf};

use super::DatasetSplit;
use crate::{Error, Result, Tensor};

pub const CIFAR_IMAGE_BYTES: usize = 32 * 32 * 3;
const CIFAR10_BATCH_RECORDS: usize = 10_000;

pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

/// CIFAR-100 label granularity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarLabel {
    Coarse,
    #[default]
    Fine,
}

/// Parses records with `label_bytes` leading label bytes, keeping the label
/// at `label_index`. `expected` fixes the record count.
pub fn parse_cifar_records(
    bytes: &[u8],
    label_bytes: usize,
    label_index: usize,
    expected: usize,
    path: &Path,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let record = label_bytes + CIFAR_IMAGE_BYTES;
    let want = (expected * record) as u64;
    if bytes.len() as u64 != want {
        return Err(Error::CorruptFile { path: path.to_path_buf(), expected: want, actual: bytes.len() as u64 });
    }
    let mut images = Vec::with_capacity(expected * CIFAR_IMAGE_BYTES);
    let mut labels = Vec::with_capacity(expected);
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[label_index] as usize);
        let px = &rec[label_bytes..];
        let (r, rest) = px.split_at(1024);
        let (g, b) = rest.split_at(1024);
        for i in 0..1024 {
            images.push(r[i] as f32 / 255.0);
            images.push(g[i] as f32 / 255.0);
            images.push(b[i] as f32 / 255.0);
        }
    }
    Ok((images, labels))
}

fn resolve_dir(dir: &Path, nested: &str, probe: &str) -> PathBuf {
    let sub = dir.join(nested);
    if !dir.join(probe).exists() && sub.join(probe).exists() {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

fn class_names(path: &Path, fallback: impl Fn() -> Vec<String>) -> Vec<String> {
    fs::read_to_string(path)
        .ok()
        .map(|s| s.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect::<Vec<_>>())
        .filter(|names| !names.is_empty())
        .unwrap_or_else(fallback)
}

fn split(images: Vec<f32>, labels: Vec<usize>, names: Vec<String>) -> Result<DatasetSplit> {
    let n = labels.len();
    DatasetSplit::new(Tensor::new(vec![n, 32, 32, 3], images)?, labels, names)
}

/// Train (50000) and test (10000) splits from `data_batch_{1..5}.bin` and
/// `test_batch.bin`, either in `dir` or in `dir/cifar-10-batches-bin`.
pub fn load_cifar10(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let dir = resolve_dir(dir, "cifar-10-batches-bin", "data_batch_1.bin");
    let names = class_names(&dir.join("batches.meta.txt"), || {
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()
    });
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for b in 1..=5 {
        let path = dir.join(format!("data_batch_{b}.bin"));
        let (im, lb) = parse_cifar_records(&read(&path)?, 1, 0, CIFAR10_BATCH_RECORDS, &path)?;
        images.extend(im);
        labels.extend(lb);
    }
    let path = dir.join("test_batch.bin");
    let (test_images, test_labels) = parse_cifar_records(&read(&path)?, 1, 0, CIFAR10_BATCH_RECORDS, &path)?;
    Ok((split(images, labels, names.clone())?, split(test_images, test_labels, names)?))
}

/// Train (50000) and test (10000) splits from `train.bin` / `test.bin`,
/// either in `dir` or in `dir/cifar-100-binary`.
pub fn load_cifar100(dir: &Path, label: CifarLabel) -> Result<(DatasetSplit, DatasetSplit)> {
    let dir = resolve_dir(dir, "cifar-100-binary", "train.bin");
    let (index, count, names_file) = match label {
        CifarLabel::Coarse => (0, 20, "coarse_label_names.txt"),
        CifarLabel::Fine => (1, 100, "fine_label_names.txt"),
    };
    let names = class_names(&dir.join(names_file), || (0..count).map(|c| format!("class_{c}")).collect());
    let train_path = dir.join("train.bin");
    let (im, lb) = parse_cifar_records(&read(&train_path)?, 2, index, 50_000, &train_path)?;
    let test_path = dir.join("test.bin");
    let (tim, tlb) = parse_cifar_records(&read(&test_path)?, 2, index, 10_000, &test_path)?;
    Ok((split(im, lb, names.clone())?, split(tim, tlb, names)?))
}
