//! Materialized random networks and the forward pass.

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::init::{init_tensor, Fan, InitKind, InitScheme};
use crate::layers::{apply_layer, Layer, LayerSpec};
use crate::rng::{derive_stream, RngStream};
use crate::scalar::{Accumulation, Scalar};
use crate::tensor::Tensor;

/// Examples per forward chunk; bounds activation memory.
const FORWARD_CHUNK: usize = 128;

/// One draw of the weights of an architecture. Immutable once built.
#[derive(Clone, Debug)]
pub struct NetworkInstance<T> {
    arch: ArchitectureSpec,
    input_shape: Vec<usize>,
    output_dim: usize,
    layers: Vec<Layer<T>>,
    base_seed: u64,
    stream_index: u64,
    param_count: usize,
    fallbacks: Vec<String>,
    accumulation: Accumulation,
}

struct Materializer<'a> {
    init: InitScheme,
    stream: RngStream,
    fallbacks: &'a mut Vec<String>,
}

impl Materializer<'_> {
    fn layers<T: Scalar>(&mut self, specs: &[LayerSpec], input: &[usize], head: Option<usize>) -> Result<Vec<Layer<T>>> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            out.push(self.layer(spec, &shape, head == Some(i))?);
            shape = spec.output_shape(&shape)?;
        }
        Ok(out)
    }

    fn layer<T: Scalar>(&mut self, spec: &LayerSpec, input: &[usize], is_head: bool) -> Result<Layer<T>> {
        Ok(match spec {
            LayerSpec::Dense { units } => {
                let shape = [input[0], *units];
                let mut scheme = self.init;
                if scheme.kind == InitKind::DeltaOrthogonal {
                    self.note(format!("dense({units}): delta_orthogonal -> orthogonal"));
                    scheme.kind = InitKind::Orthogonal;
                }
                if is_head && *units == 1 && scheme.kind == InitKind::Orthogonal {
                    self.note("head: orthogonal -> lecun_normal for a single output".into());
                    scheme.kind = InitKind::LecunNormal;
                }
                let kernel = init_tensor(scheme, &shape, Fan::for_shape(&shape)?, &mut self.stream)?;
                Layer::Dense { kernel, bias: Tensor::zeros(vec![*units]) }
            }
            LayerSpec::Conv2d { filters, kernel, stride, padding } => {
                let shape = [kernel[0], kernel[1], input[2], *filters];
                let fan = Fan::for_shape(&shape)?;
                let weights = if self.init.kind == InitKind::Orthogonal {
                    let flat = [kernel[0] * kernel[1] * input[2], *filters];
                    init_tensor::<T>(self.init, &flat, fan, &mut self.stream)?.reshape(shape.to_vec())?
                } else {
                    init_tensor(self.init, &shape, fan, &mut self.stream)?
                };
                Layer::Conv2d { kernel: weights, bias: Tensor::zeros(vec![*filters]), stride: *stride, padding: *padding }
            }
            LayerSpec::MaxPool { window, stride } => Layer::MaxPool { window: *window, stride: *stride },
            LayerSpec::AvgPool { window, stride } => Layer::AvgPool { window: *window, stride: *stride },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::BatchNorm { eps } => Layer::batch_norm(*input.last().unwrap(), *eps),
            LayerSpec::Residual { inner, projection, skip } => {
                // projection weights are drawn even when the shortcut is off,
                // so toggling `skip` leaves every other weight unchanged
                Layer::Residual {
                    inner: self.layers(inner, input, None)?,
                    projection: self.layers(projection, input, None)?,
                    skip: *skip,
                }
            }
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Activation(kind) => Layer::Activation(*kind),
        })
    }

    fn note(&mut self, message: String) {
        if !self.fallbacks.contains(&message) {
            self.fallbacks.push(message);
        }
    }
}

/// Draws the weights of `arch` from stream `stream_index` of `base_seed`.
///
/// Batch-norm layers get scale 1, shift 0, running mean 0 and running
/// variance 1; biases are zero. Randomness is consumed only by weight
/// kernels, in layer order, so adding or removing batch norm does not change
/// the other weights.
pub fn build_network<T: Scalar>(
    arch: &ArchitectureSpec,
    input_shape: &[usize],
    base_seed: u64,
    stream_index: u64,
) -> Result<NetworkInstance<T>> {
    let specs = arch.resolve()?;
    let output = arch.output_shape(input_shape)?;
    let mut fallbacks = Vec::new();
    let mut m = Materializer { init: arch.init, stream: derive_stream(base_seed, stream_index), fallbacks: &mut fallbacks };
    let layers: Vec<Layer<T>> = m.layers(&specs, input_shape, Some(specs.len() - 1))?;
    let param_count = layers.iter().map(Layer::param_count).sum();
    Ok(NetworkInstance {
        arch: arch.clone(),
        input_shape: input_shape.to_vec(),
        output_dim: output[0],
        layers,
        base_seed,
        stream_index,
        param_count,
        fallbacks,
        accumulation: Accumulation::Native,
    })
}

impl<T: Scalar> NetworkInstance<T> {
    pub fn with_accumulation(mut self, accumulation: Accumulation) -> Self {
        self.accumulation = accumulation;
        self
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Total number of scalars in the network (the size of theta).
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn seed(&self) -> (u64, u64) {
        (self.base_seed, self.stream_index)
    }

    /// Initializer substitutions made while building, e.g. orthogonal
    /// schemes on layers that cannot take them.
    pub fn fallbacks(&self) -> &[String] {
        &self.fallbacks
    }

    /// Batch-norm layers on the longest path from input to output.
    pub fn batch_norm_depth(&self) -> usize {
        self.layers.iter().map(Layer::batch_norm_depth).sum()
    }

    /// Logits for a batch shaped `N x input_shape`, as `N x k`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.item_shape() != self.input_shape.as_slice() {
            let mut expected = vec![batch.shape()[0]];
            expected.extend(&self.input_shape);
            return Err(Error::ShapeMismatch { expected, actual: batch.shape().to_vec() });
        }
        let n = batch.batch_size();
        let mut out = Vec::with_capacity(n * self.output_dim);
        for start in (0..n).step_by(FORWARD_CHUNK) {
            let chunk = batch.slice_batch(start..(start + FORWARD_CHUNK).min(n));
            out.extend(self.forward_chunk(chunk)?.into_data());
        }
        Tensor::new(vec![n, self.output_dim], out)
    }

    fn forward_chunk(&self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        for (index, layer) in self.layers.iter().enumerate() {
            x = apply_layer(layer, &x, self.accumulation)?;
            if !x.is_finite() {
                return Err(Error::NumericOverflow { index, layer: layer.name() });
            }
        }
        Ok(x)
    }
}
