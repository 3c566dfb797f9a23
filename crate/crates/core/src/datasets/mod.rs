//! Image datasets: loaders, synthetic blobs, preprocessing and subsampling.
//!
//! Images are NHWC `f32` tensors. Every split carries a 64-bit FNV-1a
//! fingerprint of its shape, pixels and labels so that caches can detect
//! which data they were computed from.

mod cifar;
mod mnist;
mod synth;

use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::{derive_stream, Error, Result, Tensor};

pub use cifar::{load_cifar10, load_cifar100, parse_cifar_records, CifarLabel, CIFAR10_CLASSES, CIFAR_IMAGE_BYTES};
pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};
pub use synth::{synth_blobs, BlobSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    images: Tensor<f32>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    fingerprint: u64,
}

fn fingerprint(images: &Tensor<f32>, labels: &[usize]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write_u64(images.shape().len() as u64);
    for &d in images.shape() {
        h.write_u64(d as u64);
    }
    let mut buf = Vec::with_capacity(images.len() * 4);
    for v in images.data() {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    h.write(&buf);
    for &y in labels {
        h.write_u32(y as u32);
    }
    h.finish()
}

impl DatasetSplit {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Shape(format!("images must be NHWC, got {:?}", images.shape())));
        }
        if labels.len() != images.batch_size() {
            return Err(Error::DimensionMismatch { expected: images.batch_size(), actual: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Format(format!("label {bad} with {} classes", class_names.len())));
        }
        let fingerprint = fingerprint(&images, &labels);
        Ok(DatasetSplit { images, labels, class_names, fingerprint })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `[H, W, C]`.
    pub fn image_shape(&self) -> &[usize] {
        self.images.item_shape()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<DatasetSplit> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("index {bad} out of range for {} examples", self.len())));
        }
        let images = self.images.select(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        DatasetSplit::new(images, labels, self.class_names.clone())
    }

    fn with_images(&self, images: Tensor<f32>) -> DatasetSplit {
        let fingerprint = fingerprint(&images, &self.labels);
        DatasetSplit { images, labels: self.labels.clone(), class_names: self.class_names.clone(), fingerprint }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Affine map of the train range onto `[0, 1]`; data already inside
    /// `[0, 1]` is left untouched.
    #[default]
    UnitRange,
    /// Subtract the train channel mean, divide by the train channel std.
    PerChannelStandardize,
    None,
}

/// Statistics fitted on a train split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mode: NormalizeMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Channels whose std fell below the guard and were only centered.
    pub degenerate_channels: Vec<usize>,
}

const STD_GUARD: f64 = 1e-8;

impl Normalizer {
    pub fn fit(train: &DatasetSplit, mode: NormalizeMode) -> Normalizer {
        let data = train.images.data();
        let channels = *train.images.shape().last().unwrap();
        match mode {
            NormalizeMode::None => Normalizer { mode, shift: vec![0.0], scale: vec![1.0], degenerate_channels: vec![] },
            NormalizeMode::UnitRange => {
                let lo = data.iter().fold(f32::INFINITY, |a, &b| a.min(b)) as f64;
                let hi = data.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
                if data.is_empty() || (lo >= 0.0 && hi <= 1.0) {
                    Normalizer { mode, shift: vec![0.0], scale: vec![1.0], degenerate_channels: vec![] }
                } else if hi - lo < STD_GUARD {
                    Normalizer { mode, shift: vec![lo], scale: vec![1.0], degenerate_channels: vec![0] }
                } else {
                    Normalizer { mode, shift: vec![lo], scale: vec![hi - lo], degenerate_channels: vec![] }
                }
            }
            NormalizeMode::PerChannelStandardize => {
                let mut sum = vec![0.0f64; channels];
                for (i, &v) in data.iter().enumerate() {
                    sum[i % channels] += v as f64;
                }
                let count = (data.len() / channels).max(1) as f64;
                let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
                let mut sq = vec![0.0f64; channels];
                for (i, &v) in data.iter().enumerate() {
                    let d = v as f64 - mean[i % channels];
                    sq[i % channels] += d * d;
                }
                let mut degenerate = Vec::new();
                let scale = sq
                    .iter()
                    .enumerate()
                    .map(|(c, s)| {
                        let std = (s / count).sqrt();
                        if std < STD_GUARD {
                            degenerate.push(c);
                            1.0
                        } else {
                            std
                        }
                    })
                    .collect();
                Normalizer { mode, shift: mean, scale, degenerate_channels: degenerate }
            }
        }
    }

    pub fn apply(&self, split: &DatasetSplit) -> Result<DatasetSplit> {
        if self.mode == NormalizeMode::None || (self.shift == [0.0] && self.scale == [1.0]) {
            return Ok(split.clone());
        }
        let channels = *split.images.shape().last().unwrap();
        let per_channel = self.shift.len() > 1 || self.mode == NormalizeMode::PerChannelStandardize;
        if per_channel && self.shift.len() != channels {
            return Err(Error::DimensionMismatch { expected: self.shift.len(), actual: channels });
        }
        let mut images = split.images.clone();
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            let c = if per_channel { i % channels } else { 0 };
            *v = ((*v as f64 - self.shift[c]) / self.scale[c]) as f32;
        }
        Ok(split.with_images(images))
    }
}

/// Fits on `train` and applies the same statistics to both splits.
pub fn normalize(
    train: &DatasetSplit,
    test: &DatasetSplit,
    mode: NormalizeMode,
) -> Result<(DatasetSplit, DatasetSplit, Normalizer)> {
    let norm = Normalizer::fit(train, mode);
    Ok((norm.apply(train)?, norm.apply(test)?, norm))
}

/// Exactly `per_class` examples of every class, chosen by a seeded shuffle
/// within each class; original order is kept.
pub fn subsample(split: &DatasetSplit, per_class: usize, seed: u64) -> Result<DatasetSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); split.classes()];
    for (i, &y) in split.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut chosen = Vec::with_capacity(per_class * split.classes());
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::InsufficientExamples { class, available: idx.len(), requested: per_class });
        }
        derive_stream(seed, class as u64).shuffle(&mut idx);
        chosen.extend_from_slice(&idx[..per_class]);
    }
    chosen.sort_unstable();
    split.select(&chosen)
}
