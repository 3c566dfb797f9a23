//! Random-network embeddings and kernel estimates.
//!
//! Column `j` of a feature matrix is the scalar output of the network drawn
//! from stream `j` of the base seed, so a matrix with `n` columns is a prefix
//! of any extraction with more columns. The `1/sqrt(n)` factor is a flag on
//! the matrix rather than baked into the stored values, which lets a single
//! extraction serve every smaller `n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{make_architecture, ArchOverrides, ArchitectureSpec, Preset};
use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::init::{InitKind, InitScheme};
use crate::layers::LayerSpec;
use crate::network::build_network;
use crate::scalar::{Accumulation, Scalar};
use crate::tensor::{Matrix, Tensor};

/// Everything needed to regenerate a feature matrix from its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub arch: ArchitectureSpec,
    pub base_seed: u64,
    /// Whether values are scaled by `1/sqrt(n)`.
    pub scaled: bool,
}

/// `N x n` matrix of network outputs, one row per example and one column
/// per sampled network.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    rows: usize,
    cols: usize,
    raw: Vec<T>,
    manifest: FeatureManifest,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Wraps unscaled network outputs laid out row-major.
    pub fn from_raw(rows: usize, cols: usize, raw: Vec<T>, manifest: FeatureManifest) -> Result<Self> {
        if rows == 0 || cols == 0 || raw.len() != rows * cols {
            return Err(Error::Shape(format!("{rows} x {cols} feature matrix with {} values", raw.len())));
        }
        Ok(Self { rows, cols, raw, manifest })
    }

    /// Number of examples.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of sampled networks.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn manifest(&self) -> &FeatureManifest {
        &self.manifest
    }

    /// Unscaled network outputs, row-major.
    pub fn raw(&self) -> &[T] {
        &self.raw
    }

    pub fn scale(&self) -> T {
        if self.manifest.scaled {
            T::of(1.0 / (self.cols as f64).sqrt())
        } else {
            T::one()
        }
    }

    pub fn value(&self, row: usize, col: usize) -> T {
        self.raw[row * self.cols + col] * self.scale()
    }

    /// The embedding of example `row`.
    pub fn row(&self, row: usize) -> Vec<T> {
        let s = self.scale();
        self.raw[row * self.cols..(row + 1) * self.cols].iter().map(|&v| v * s).collect()
    }

    /// All embeddings, row-major.
    pub fn values(&self) -> Vec<T> {
        let s = self.scale();
        self.raw.iter().map(|&v| v * s).collect()
    }

    /// The first `n` columns, rescaled for `n` when scaling is on.
    pub fn prefix(&self, n: usize) -> Result<FeatureMatrix<T>> {
        if n == 0 || n > self.cols {
            return Err(Error::InvalidArgument(format!("prefix of {n} columns from {}", self.cols)));
        }
        let mut raw = Vec::with_capacity(self.rows * n);
        for r in 0..self.rows {
            raw.extend_from_slice(&self.raw[r * self.cols..r * self.cols + n]);
        }
        Ok(FeatureMatrix { rows: self.rows, cols: n, raw, manifest: self.manifest.clone() })
    }

    /// `<phi(x_a), phi(x_b)>` accumulated in 64 bits over columns in order.
    /// Matches [`estimate_kernel`] on the same seeds.
    pub fn kernel(&self, a: usize, b: usize) -> f64 {
        let ra = &self.raw[a * self.cols..(a + 1) * self.cols];
        let rb = &self.raw[b * self.cols..(b + 1) * self.cols];
        let sum: f64 = ra.iter().zip(rb).map(|(x, y)| x.to_f64_lossless() * y.to_f64_lossless()).sum();
        if self.manifest.scaled {
            sum / self.cols as f64
        } else {
            sum
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    pub scaled: bool,
    pub accumulation: Accumulation,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { scaled: true, accumulation: Accumulation::Native }
    }
}

/// Embeds `inputs` (`N x item shape`) with `n` random scalar-output networks.
pub fn extract_features<T: Scalar>(
    arch: &ArchitectureSpec,
    inputs: &Tensor<T>,
    n: usize,
    base_seed: u64,
) -> Result<FeatureMatrix<T>> {
    extract_features_with(arch, inputs, n, base_seed, ExtractOptions::default())
}

pub fn extract_features_with<T: Scalar>(
    arch: &ArchitectureSpec,
    inputs: &Tensor<T>,
    n: usize,
    base_seed: u64,
    options: ExtractOptions,
) -> Result<FeatureMatrix<T>> {
    if arch.output_dim != 1 {
        return Err(Error::HeadDimension(arch.output_dim));
    }
    let columns = extract_columns(arch, inputs, 0..n, base_seed, options.accumulation)?;
    let rows = inputs.batch_size();
    let mut raw = vec![T::zero(); rows * n];
    for (j, column) in columns.iter().enumerate() {
        for (i, v) in column.iter().enumerate() {
            raw[i * n + j] = *v;
        }
    }
    FeatureMatrix::from_raw(rows, n, raw, FeatureManifest { arch: arch.clone(), base_seed, scaled: options.scaled })
}

/// Raw output columns for networks `range`, each of length `N * k`.
/// Columns are computed in parallel; each depends only on its own stream.
pub fn extract_columns<T: Scalar>(
    arch: &ArchitectureSpec,
    inputs: &Tensor<T>,
    range: std::ops::Range<usize>,
    base_seed: u64,
    accumulation: Accumulation,
) -> Result<Vec<Vec<T>>> {
    if range.is_empty() {
        return Err(Error::InvalidArgument("at least one network is required".into()));
    }
    let item_shape = inputs.item_shape().to_vec();
    range
        .into_par_iter()
        .map(|j| {
            let net = build_network::<T>(arch, &item_shape, base_seed, j as u64)?.with_accumulation(accumulation);
            let out = net.forward(inputs).map_err(|e| match e {
                Error::NumericOverflow { .. } => Error::NonFiniteFeature { example: 0, column: j, base_seed },
                other => other,
            })?;
            if let Some(example) = out.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { example: example / arch.output_dim, column: j, base_seed });
            }
            Ok(out.into_data())
        })
        .collect()
}

/// Embedding with a `k`-dimensional head: network `j` contributes columns
/// `j*k .. (j+1)*k`, and the scale is `1/sqrt(n)` with `n` networks. The
/// outputs of one network are correlated, so this is not an NRF.
pub fn extract_multi_output<T: Scalar>(
    arch: &ArchitectureSpec,
    inputs: &Tensor<T>,
    n: usize,
    base_seed: u64,
) -> Result<Matrix<T>> {
    let k = arch.output_dim;
    let columns = extract_columns(arch, inputs, 0..n, base_seed, Accumulation::Native)?;
    let rows = inputs.batch_size();
    let scale = T::of(1.0 / (n as f64).sqrt());
    let mut out = Matrix::zeros(rows, n * k);
    for (j, column) in columns.iter().enumerate() {
        for i in 0..rows {
            for c in 0..k {
                out.set(i, j * k + c, column[i * k + c] * scale);
            }
        }
    }
    Ok(out)
}

/// Finite-sample kernel value with the spread of its summands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEstimate {
    /// Mean of the per-network inner products.
    pub value: f64,
    pub n: usize,
    /// Unbiased sample variance of the per-network inner products.
    pub variance: f64,
}

impl KernelEstimate {
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}

/// `(1/n) sum_i <f_i(x), f_i(x2)>` over the same networks used by
/// [`extract_features`] with this seed. `x` and `x2` are single examples
/// without a batch axis.
pub fn estimate_kernel<T: Scalar>(
    arch: &ArchitectureSpec,
    x: &Tensor<T>,
    x2: &Tensor<T>,
    n: usize,
    base_seed: u64,
) -> Result<KernelEstimate> {
    if x.shape() != x2.shape() {
        return Err(Error::ShapeMismatch { expected: x.shape().to_vec(), actual: x2.shape().to_vec() });
    }
    let mut shape = vec![1];
    shape.extend(x.shape());
    let batch = Tensor::concat(&[x.clone().reshape(shape.clone())?, x2.clone().reshape(shape)?])?;
    Ok(estimate_kernel_pairs(arch, &batch, &[(0, 1)], n, base_seed)?.remove(0))
}

/// Kernel estimates for several `(a, b)` pairs of examples in `inputs`,
/// building each network once. Per-network products are kept so that the
/// spread of the estimate is available.
pub fn estimate_kernel_pairs<T: Scalar>(
    arch: &ArchitectureSpec,
    inputs: &Tensor<T>,
    pairs: &[(usize, usize)],
    n: usize,
    base_seed: u64,
) -> Result<Vec<KernelEstimate>> {
    if n == 0 {
        return Err(Error::InvalidArgument("at least one network is required".into()));
    }
    let rows = inputs.batch_size();
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= rows || *b >= rows) {
        return Err(Error::InvalidArgument(format!("pair ({a}, {b}) out of range for {rows} examples")));
    }
    let k = arch.output_dim;
    // products[j][p]: network j, pair p
    let products: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let net = build_network::<T>(arch, inputs.item_shape(), base_seed, j as u64)?;
            let out = net.forward(inputs)?;
            let f = out.data();
            Ok(pairs
                .iter()
                .map(|&(a, b)| {
                    (0..k).map(|c| f[a * k + c].to_f64_lossless() * f[b * k + c].to_f64_lossless()).sum()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..pairs.len())
        .map(|p| {
            let value = products.iter().map(|v| v[p]).sum::<f64>() / n as f64;
            let variance = if n > 1 {
                products.iter().map(|v| (v[p] - value).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            KernelEstimate { value, n, variance }
        })
        .collect())
}

/// `Phi Phi^T`, computed on the upper triangle and mirrored.
pub fn gram<T: Scalar>(features: &FeatureMatrix<T>) -> Matrix<f64> {
    let n = features.rows();
    let values: Vec<f64> = features.values().iter().map(|v| v.to_f64_lossless()).collect();
    let cols = features.cols();
    let mut g = Matrix::zeros(n, n);
    for a in 0..n {
        let ra = &values[a * cols..(a + 1) * cols];
        for b in a..n {
            let rb = &values[b * cols..(b + 1) * cols];
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            g.set(a, b, dot);
            g.set(b, a, dot);
        }
    }
    g
}

/// Architectures whose prior kernel has a closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelOracle {
    /// `x -> <w, x>` with `w ~ N(0, sigma^2 I)`.
    Linear { sigma: f64 },
    /// `x -> <v, relu(W x)>`, `W` of `hidden` rows with entries
    /// `N(0, sigma_w^2)`, `v ~ N(0, sigma_v^2 I)`, no biases.
    ReluOneHidden { hidden: usize, sigma_w: f64, sigma_v: f64 },
}

impl KernelOracle {
    /// The matching architecture. Both layers share one initializer, so the
    /// ReLU oracle is realizable only with `sigma_w == sigma_v`.
    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        match *self {
            Self::Linear { sigma } => make_architecture(
                Preset::Linear,
                ArchOverrides {
                    init: Some(InitScheme::untruncated(InitKind::PlainNormal { std: sigma })),
                    ..Default::default()
                },
            ),
            Self::ReluOneHidden { hidden, sigma_w, sigma_v } => {
                if sigma_w != sigma_v {
                    return Err(Error::InvalidArgument(
                        "one-hidden-layer oracle network needs sigma_w == sigma_v".into(),
                    ));
                }
                make_architecture(
                    Preset::Custom {
                        layers: vec![
                            LayerSpec::Flatten,
                            LayerSpec::Dense { units: hidden },
                            LayerSpec::Activation(ActivationKind::Relu),
                        ],
                    },
                    ArchOverrides {
                        init: Some(InitScheme::untruncated(InitKind::PlainNormal { std: sigma_w })),
                        ..Default::default()
                    },
                )
            }
        }
    }
}

/// Closed-form prior kernel.
///
/// The ReLU case is the degree-one arc-cosine kernel:
/// `sigma_v^2 H sigma_w^2 |x||x2| (sin t + (pi - t) cos t) / (2 pi)`.
pub fn analytic_kernel(oracle: KernelOracle, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), actual: x2.len() });
    }
    let dot: f64 = x.iter().zip(x2).map(|(a, b)| a * b).sum();
    match oracle {
        KernelOracle::Linear { sigma } => Ok(sigma * sigma * dot),
        KernelOracle::ReluOneHidden { hidden, sigma_w, sigma_v } => {
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nx2 = x2.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || nx2 == 0.0 {
                return Err(Error::UndefinedAngle);
            }
            let cos = (dot / (nx * nx2)).clamp(-1.0, 1.0);
            let theta = cos.acos();
            let j = theta.sin() + (std::f64::consts::PI - theta) * cos;
            Ok(sigma_v.powi(2) * hidden as f64 * sigma_w.powi(2) * nx * nx2 * j / (2.0 * std::f64::consts::PI))
        }
    }
}
