//! Gaussian blobs for fast end-to-end tests.

use serde::{Deserialize, Serialize};

use super::DatasetSplit;
use crate::{derive_stream, Error, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    /// Examples per class in each of train and test.
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
    /// Reshape each example to `[H, W, C]`; defaults to `[1, 1, dim]`.
    #[serde(default)]
    pub image_shape: Option<[usize; 3]>,
}

/// Unit-covariance Gaussians centred at `separation * u_c` for random unit
/// directions `u_c`. Train and test use independent streams.
pub fn synth_blobs(spec: &BlobSpec) -> Result<(DatasetSplit, DatasetSplit)> {
    if spec.dim == 0 || spec.classes == 0 {
        return Err(Error::InvalidArgument("blobs need dim >= 1 and classes >= 1".into()));
    }
    let shape = spec.image_shape.unwrap_or([1, 1, spec.dim]);
    if shape.iter().product::<usize>() != spec.dim {
        return Err(Error::Shape(format!("image shape {shape:?} does not hold {} values", spec.dim)));
    }
    let mut dirs = derive_stream(spec.seed, 0);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| dirs.standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| spec.separation * x / norm).collect()
        })
        .collect();
    let names: Vec<String> = (0..spec.classes).map(|c| format!("blob_{c}")).collect();
    let make = |stream: u64| -> Result<DatasetSplit> {
        let mut s = derive_stream(spec.seed, stream);
        let n = spec.classes * spec.per_class;
        let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
        let mut data = Vec::with_capacity(n * spec.dim);
        for &y in &labels {
            data.extend(means[y].iter().map(|m| (m + s.standard_normal()) as f32));
        }
        let images = Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)?;
        DatasetSplit::new(images, labels, names.clone())
    };
    Ok((make(1)?, make(2)?))
}
