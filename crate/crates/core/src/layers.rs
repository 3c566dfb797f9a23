//! Layer specifications, materialized layers and their inference semantics.
//!
//! Activations are `N x H x W x C` for spatial layers and `N x D` for dense
//! layers. Convolution kernels are `(kh, kw, in, out)`; dense kernels are
//! `(in, out)`.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::scalar::{Accumulation, Scalar};
use crate::tensor::Tensor;

/// Upper bound on the im2col buffer, in elements.
const PATCH_BUDGET: usize = 1 << 23;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, zero padding split with the
    /// smaller half before.
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: [usize; 2], stride: usize, padding: Padding },
    MaxPool { window: usize, stride: usize },
    AvgPool { window: usize, stride: usize },
    GlobalAvgPool,
    BatchNorm { eps: f64 },
    /// `inner(x) + shortcut(x)` when `skip`, `inner(x)` otherwise. An empty
    /// `projection` is the identity shortcut.
    Residual { inner: Vec<LayerSpec>, projection: Vec<LayerSpec>, skip: bool },
    Flatten,
    Activation(ActivationKind),
}

fn spatial(input: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match input {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Shape(format!("{what} expects an H x W x C input, got {other:?}"))),
    }
}

/// Output extent and leading padding along one axis.
fn conv_extent(size: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Shape("zero kernel or stride".into()));
    }
    match padding {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(size);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if kernel > size {
                return Err(Error::Shape(format!("window {kernel} larger than input extent {size}")));
            }
            Ok(((size - kernel) / stride + 1, 0))
        }
    }
}

fn fold_shapes(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for layer in layers {
        shape = layer.output_shape(&shape)?;
    }
    Ok(shape)
}

impl LayerSpec {
    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Self::Dense { units } => match input {
                [_] => Ok(vec![*units]),
                other => Err(Error::Shape(format!("dense expects a flat input, got {other:?}"))),
            },
            Self::Conv2d { filters, kernel, stride, padding } => {
                let (h, w, _) = spatial(input, "conv2d")?;
                let (oh, _) = conv_extent(h, kernel[0], *stride, *padding)?;
                let (ow, _) = conv_extent(w, kernel[1], *stride, *padding)?;
                Ok(vec![oh, ow, *filters])
            }
            Self::MaxPool { window, stride } | Self::AvgPool { window, stride } => {
                let (h, w, c) = spatial(input, "pooling")?;
                let (oh, _) = conv_extent(h, *window, *stride, Padding::Valid)?;
                let (ow, _) = conv_extent(w, *window, *stride, Padding::Valid)?;
                Ok(vec![oh, ow, c])
            }
            Self::GlobalAvgPool => {
                let (_, _, c) = spatial(input, "global average pooling")?;
                Ok(vec![c])
            }
            Self::BatchNorm { .. } | Self::Activation(_) => {
                if input.is_empty() {
                    return Err(Error::Shape("empty input shape".into()));
                }
                Ok(input.to_vec())
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Residual { inner, projection, skip } => {
                let out = fold_shapes(inner, input)?;
                if *skip {
                    let shortcut = fold_shapes(projection, input)?;
                    if shortcut != out {
                        return Err(Error::ShapeMismatch { expected: out, actual: shortcut });
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Dense { units } => format!("dense({units})"),
            Self::Conv2d { filters, kernel, stride, .. } => {
                format!("conv2d({filters}, {}x{}, stride {stride})", kernel[0], kernel[1])
            }
            Self::MaxPool { window, stride } => format!("max_pool({window}, stride {stride})"),
            Self::AvgPool { window, stride } => format!("avg_pool({window}, stride {stride})"),
            Self::GlobalAvgPool => "global_avg_pool".into(),
            Self::BatchNorm { eps } => format!("batch_norm(eps {eps})"),
            Self::Residual { skip, .. } => format!("residual_block(skip={skip})"),
            Self::Flatten => "flatten".into(),
            Self::Activation(kind) => kind.label(),
        }
    }
}

/// A layer with materialized parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Dense { kernel: Tensor<T>, bias: Tensor<T> },
    Conv2d { kernel: Tensor<T>, bias: Tensor<T>, stride: usize, padding: Padding },
    MaxPool { window: usize, stride: usize },
    AvgPool { window: usize, stride: usize },
    GlobalAvgPool,
    /// Inference-mode batch normalization over the last axis.
    BatchNorm { scale: Vec<T>, shift: Vec<T>, mean: Vec<T>, variance: Vec<T>, eps: f64 },
    Residual { inner: Vec<Layer<T>>, projection: Vec<Layer<T>>, skip: bool },
    Flatten,
    Activation(ActivationKind),
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> String {
        match self {
            Self::Dense { kernel, .. } => format!("dense({})", kernel.shape()[1]),
            Self::Conv2d { kernel, stride, .. } => {
                let s = kernel.shape();
                format!("conv2d({}, {}x{}, stride {stride})", s[3], s[0], s[1])
            }
            Self::MaxPool { window, stride } => format!("max_pool({window}, stride {stride})"),
            Self::AvgPool { window, stride } => format!("avg_pool({window}, stride {stride})"),
            Self::GlobalAvgPool => "global_avg_pool".into(),
            Self::BatchNorm { eps, .. } => format!("batch_norm(eps {eps})"),
            Self::Residual { skip, .. } => format!("residual_block(skip={skip})"),
            Self::Flatten => "flatten".into(),
            Self::Activation(kind) => kind.label(),
        }
    }

    /// Number of scalar parameters, including batch-norm statistics.
    pub fn param_count(&self) -> usize {
        match self {
            Self::Dense { kernel, bias } | Self::Conv2d { kernel, bias, .. } => kernel.len() + bias.len(),
            Self::BatchNorm { scale, .. } => 4 * scale.len(),
            Self::Residual { inner, projection, .. } => {
                inner.iter().chain(projection).map(Layer::param_count).sum()
            }
            _ => 0,
        }
    }

    /// Batch-norm layers on the longest path through this layer.
    pub fn batch_norm_depth(&self) -> usize {
        match self {
            Self::BatchNorm { .. } => 1,
            Self::Residual { inner, projection, skip } => {
                let inner_depth: usize = inner.iter().map(Layer::batch_norm_depth).sum();
                let shortcut: usize = if *skip { projection.iter().map(Layer::batch_norm_depth).sum() } else { 0 };
                inner_depth.max(shortcut)
            }
            _ => 0,
        }
    }

    /// Default-initialized inference batch norm over `channels`.
    pub fn batch_norm(channels: usize, eps: f64) -> Self {
        Self::BatchNorm {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            mean: vec![T::zero(); channels],
            variance: vec![T::one(); channels],
            eps,
        }
    }
}

/// Applies one layer to a batch.
pub fn apply_layer<T: Scalar>(layer: &Layer<T>, input: &Tensor<T>, acc: Accumulation) -> Result<Tensor<T>> {
    match layer {
        Layer::Dense { kernel, bias } => dense(input, kernel, bias, acc),
        Layer::Conv2d { kernel, bias, stride, padding } => conv2d(input, kernel, bias, *stride, *padding, acc),
        Layer::MaxPool { window, stride } => pool(input, *window, *stride, PoolKind::Max),
        Layer::AvgPool { window, stride } => pool(input, *window, *stride, PoolKind::Avg),
        Layer::GlobalAvgPool => global_avg_pool(input),
        Layer::BatchNorm { scale, shift, mean, variance, eps } => {
            batch_norm(input, scale, shift, mean, variance, *eps)
        }
        Layer::Residual { inner, projection, skip } => {
            let mut out = input.clone();
            for l in inner {
                out = apply_layer(l, &out, acc)?;
            }
            if *skip {
                let mut shortcut = input.clone();
                for l in projection {
                    shortcut = apply_layer(l, &shortcut, acc)?;
                }
                if shortcut.shape() != out.shape() {
                    return Err(Error::ShapeMismatch {
                        expected: out.shape().to_vec(),
                        actual: shortcut.shape().to_vec(),
                    });
                }
                for (o, s) in out.data_mut().iter_mut().zip(shortcut.data()) {
                    *o = *o + *s;
                }
            }
            Ok(out)
        }
        Layer::Flatten => {
            let n = input.batch_size();
            let d = input.item_len();
            input.clone().reshape(vec![n, d])
        }
        Layer::Activation(kind) => Ok(crate::activation::apply_activation(*kind, input)),
    }
}

fn dense<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, acc: Accumulation) -> Result<Tensor<T>> {
    let (din, dout) = (kernel.shape()[0], kernel.shape()[1]);
    let [n, d] = *input.shape() else {
        return Err(Error::Shape(format!("dense expects N x D input, got {:?}", input.shape())));
    };
    if d != din {
        return Err(Error::ShapeMismatch { expected: vec![n, din], actual: input.shape().to_vec() });
    }
    let mut out = Tensor::zeros(vec![n, dout]);
    T::gemm(acc, n, din, dout, input.data(), kernel.data(), T::zero(), out.data_mut());
    add_channel_bias(out.data_mut(), bias.data());
    Ok(out)
}

fn add_channel_bias<T: Scalar>(data: &mut [T], bias: &[T]) {
    if bias.iter().all(|b| b.is_zero()) {
        return;
    }
    for row in data.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

fn shape4<T: Scalar>(input: &Tensor<T>) -> Result<[usize; 4]> {
    match *input.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::Shape(format!("expected N x H x W x C input, got {:?}", input.shape()))),
    }
}

fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
    acc: Accumulation,
) -> Result<Tensor<T>> {
    let [n, h, w, c] = shape4(input)?;
    let &[kh, kw, cin, cout] = kernel.shape() else {
        return Err(Error::Shape(format!("conv kernel must be 4-D, got {:?}", kernel.shape())));
    };
    if c != cin {
        return Err(Error::ShapeMismatch { expected: vec![n, h, w, cin], actual: input.shape().to_vec() });
    }
    let (oh, pad_top) = conv_extent(h, kh, stride, padding)?;
    let (ow, pad_left) = conv_extent(w, kw, stride, padding)?;
    let patch_len = kh * kw * cin;
    let positions = oh * ow;
    let mut out = Tensor::zeros(vec![n, oh, ow, cout]);

    let per_chunk = (PATCH_BUDGET / (positions * patch_len).max(1)).max(1);
    let mut patches: Vec<T> = Vec::new();
    let src = input.data();
    let item = h * w * c;
    for start in (0..n).step_by(per_chunk) {
        let end = (start + per_chunk).min(n);
        let rows = (end - start) * positions;
        patches.clear();
        patches.resize(rows * patch_len, T::zero());
        for e in start..end {
            let image = &src[e * item..(e + 1) * item];
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((e - start) * positions + oy * ow + ox) * patch_len;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad_left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let from = (iy as usize * w + ix as usize) * c;
                            let to = row + (ky * kw + kx) * cin;
                            patches[to..to + cin].copy_from_slice(&image[from..from + c]);
                        }
                    }
                }
            }
        }
        let out_rows = &mut out.data_mut()[start * positions * cout..end * positions * cout];
        T::gemm(acc, rows, patch_len, cout, &patches, kernel.data(), T::zero(), out_rows);
    }
    add_channel_bias(out.data_mut(), bias.data());
    Ok(out)
}

#[derive(Clone, Copy)]
enum PoolKind {
    Max,
    Avg,
}

fn pool<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize, kind: PoolKind) -> Result<Tensor<T>> {
    let [n, h, w, c] = shape4(input)?;
    let (oh, _) = conv_extent(h, window, stride, Padding::Valid)?;
    let (ow, _) = conv_extent(w, window, stride, Padding::Valid)?;
    let mut out = Tensor::zeros(vec![n, oh, ow, c]);
    let src = input.data();
    let norm = T::of(1.0 / (window * window) as f64);
    let dst = out.data_mut();
    for e in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((e * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let mut accum = match kind {
                        PoolKind::Max => T::neg_infinity(),
                        PoolKind::Avg => T::zero(),
                    };
                    for dy in 0..window {
                        for dx in 0..window {
                            let v = src[((e * h + oy * stride + dy) * w + ox * stride + dx) * c + ch];
                            accum = match kind {
                                PoolKind::Max => accum.max(v),
                                PoolKind::Avg => accum + v,
                            };
                        }
                    }
                    dst[base + ch] = match kind {
                        PoolKind::Max => accum,
                        PoolKind::Avg => accum * norm,
                    };
                }
            }
        }
    }
    Ok(out)
}

fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = shape4(input)?;
    let mut out = Tensor::zeros(vec![n, c]);
    let norm = T::of(1.0 / (h * w) as f64);
    let src = input.data();
    for e in 0..n {
        let row = &mut out.data_mut()[e * c..(e + 1) * c];
        for p in 0..h * w {
            let pixel = &src[(e * h * w + p) * c..(e * h * w + p + 1) * c];
            for (r, v) in row.iter_mut().zip(pixel) {
                *r = *r + *v;
            }
        }
        for r in row.iter_mut() {
            *r = *r * norm;
        }
    }
    Ok(out)
}

fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    mean: &[T],
    variance: &[T],
    eps: f64,
) -> Result<Tensor<T>> {
    let channels = *input.shape().last().unwrap();
    if channels != scale.len() {
        return Err(Error::DimensionMismatch { expected: scale.len(), actual: channels });
    }
    let factor: Vec<T> = scale
        .iter()
        .zip(variance)
        .map(|(s, v)| T::of(s.to_f64_lossless() / (v.to_f64_lossless() + eps).sqrt()))
        .collect();
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(channels) {
        for (ch, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[ch]) * factor[ch] + shift[ch];
        }
    }
    Ok(out)
}
