//! Declarative architectures and their resolution into layer lists.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::init::{InitKind, InitScheme};
use crate::layers::{LayerSpec, Padding};

pub const DEFAULT_BATCHNORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Single dense head on the flattened input (a random projection).
    Linear,
    /// Two hidden dense layers of 128 units.
    Mlp,
    CnnS,
    CnnM,
    /// LeNet-5 layout (6 and 16 filters, dense 120 and 84).
    Lenet,
    /// ResNet-18 adapted to 32x32 inputs: 3x3 stem, no stem pooling.
    Resnet18Cifar,
    /// ResNet-v1 of depth 18, 34, 50, 101, 152 or 200 with the CIFAR stem.
    ResnetDeeper { depth: usize },
    /// Explicit body; the output head is appended.
    Custom { layers: Vec<LayerSpec> },
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "linear" => Self::Linear,
            "mlp" => Self::Mlp,
            "cnn_s" => Self::CnnS,
            "cnn_m" => Self::CnnM,
            "lenet" => Self::Lenet,
            "resnet18_cifar" => Self::Resnet18Cifar,
            other => {
                let depth = other
                    .strip_prefix("resnet")
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| Error::UnknownPreset(other.to_string()))?;
                Self::ResnetDeeper { depth }
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            Self::Linear => "linear".into(),
            Self::Mlp => "mlp".into(),
            Self::CnnS => "cnn_s".into(),
            Self::CnnM => "cnn_m".into(),
            Self::Lenet => "lenet".into(),
            Self::Resnet18Cifar => "resnet18_cifar".into(),
            Self::ResnetDeeper { depth } => format!("resnet{depth}"),
            Self::Custom { .. } => "custom".into(),
        }
    }

    fn is_resnet(&self) -> bool {
        matches!(self, Self::Resnet18Cifar | Self::ResnetDeeper { .. })
    }

    pub fn default_init(&self) -> InitScheme {
        if self.is_resnet() {
            InitScheme::new(InitKind::HeNormal)
        } else {
            InitScheme::new(InitKind::GlorotNormal)
        }
    }
}

/// Optional changes to a preset's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchOverrides {
    #[serde(default)]
    pub width_multiplier: Option<f64>,
    #[serde(default)]
    pub depth_multiplier: Option<usize>,
    #[serde(default)]
    pub activation: Option<ActivationKind>,
    #[serde(default)]
    pub init: Option<InitScheme>,
    #[serde(default)]
    pub use_batchnorm: Option<bool>,
    #[serde(default)]
    pub use_skip: Option<bool>,
    #[serde(default)]
    pub output_dim: Option<usize>,
    #[serde(default)]
    pub batchnorm_eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchRepr {
    preset: Preset,
    #[serde(default)]
    width_multiplier: Option<f64>,
    #[serde(default)]
    depth_multiplier: Option<usize>,
    #[serde(default)]
    activation: Option<ActivationKind>,
    #[serde(default)]
    init: Option<InitScheme>,
    #[serde(default)]
    use_batchnorm: Option<bool>,
    #[serde(default)]
    use_skip: Option<bool>,
    #[serde(default)]
    output_dim: Option<usize>,
    #[serde(default)]
    batchnorm_eps: Option<f64>,
}

impl TryFrom<ArchRepr> for ArchitectureSpec {
    type Error = Error;

    fn try_from(r: ArchRepr) -> Result<Self> {
        make_architecture(
            r.preset,
            ArchOverrides {
                width_multiplier: r.width_multiplier,
                depth_multiplier: r.depth_multiplier,
                activation: r.activation,
                init: r.init,
                use_batchnorm: r.use_batchnorm,
                use_skip: r.use_skip,
                output_dim: r.output_dim,
                batchnorm_eps: r.batchnorm_eps,
            },
        )
    }
}

/// A fully resolved architecture. Deserialization accepts any subset of the
/// fields besides `preset` and fills the rest with the preset defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArchRepr")]
pub struct ArchitectureSpec {
    pub preset: Preset,
    pub width_multiplier: f64,
    pub depth_multiplier: usize,
    /// Replaces every hidden activation; `None` keeps ReLU.
    pub activation: Option<ActivationKind>,
    pub init: InitScheme,
    pub use_batchnorm: bool,
    pub use_skip: bool,
    pub output_dim: usize,
    pub batchnorm_eps: f64,
}

pub fn make_architecture(preset: Preset, overrides: ArchOverrides) -> Result<ArchitectureSpec> {
    let spec = ArchitectureSpec {
        init: overrides.init.unwrap_or_else(|| preset.default_init()),
        use_batchnorm: overrides.use_batchnorm.unwrap_or(preset.is_resnet()),
        width_multiplier: overrides.width_multiplier.unwrap_or(1.0),
        depth_multiplier: overrides.depth_multiplier.unwrap_or(1),
        activation: overrides.activation,
        use_skip: overrides.use_skip.unwrap_or(true),
        output_dim: overrides.output_dim.unwrap_or(1),
        batchnorm_eps: overrides.batchnorm_eps.unwrap_or(DEFAULT_BATCHNORM_EPS),
        preset,
    };
    spec.validate()?;
    Ok(spec)
}

fn resnet_layout(depth: usize) -> Result<(bool, [usize; 4])> {
    // (bottleneck, blocks per stage)
    Ok(match depth {
        18 => (false, [2, 2, 2, 2]),
        34 => (false, [3, 4, 6, 3]),
        50 => (true, [3, 4, 6, 3]),
        101 => (true, [3, 4, 23, 3]),
        152 => (true, [3, 8, 36, 3]),
        200 => (true, [3, 24, 36, 3]),
        other => return Err(Error::UnknownPreset(format!("resnet{other}"))),
    })
}

struct Builder<'a> {
    spec: &'a ArchitectureSpec,
    layers: Vec<LayerSpec>,
}

impl Builder<'_> {
    fn width(&self, base: usize) -> usize {
        ((base as f64 * self.spec.width_multiplier).round() as usize).max(1)
    }

    fn activation(&self) -> LayerSpec {
        LayerSpec::Activation(self.spec.activation.unwrap_or(ActivationKind::Relu))
    }

    fn batch_norm(&self) -> Option<LayerSpec> {
        self.spec.use_batchnorm.then_some(LayerSpec::BatchNorm { eps: self.spec.batchnorm_eps })
    }

    /// Affine layer, optional batch norm, activation.
    fn hidden(&mut self, affine: LayerSpec) {
        self.layers.push(affine);
        self.layers.extend(self.batch_norm());
        self.layers.push(self.activation());
    }

    fn conv(&self, filters: usize, kernel: usize, stride: usize) -> LayerSpec {
        LayerSpec::Conv2d { filters, kernel: [kernel, kernel], stride, padding: Padding::Same }
    }

    fn with_bn(&self, affine: LayerSpec) -> Vec<LayerSpec> {
        let mut v = vec![affine];
        v.extend(self.batch_norm());
        v
    }

    fn residual(&mut self, inner: Vec<LayerSpec>, in_channels: usize, out_channels: usize, stride: usize) {
        let projection = if stride != 1 || in_channels != out_channels {
            self.with_bn(self.conv(out_channels, 1, stride))
        } else {
            Vec::new()
        };
        self.layers.push(LayerSpec::Residual { inner, projection, skip: self.spec.use_skip });
        self.layers.push(self.activation());
    }

    fn resnet(&mut self, depth: usize) -> Result<()> {
        let (bottleneck, blocks) = resnet_layout(depth)?;
        let stem = self.width(64);
        self.hidden(self.conv(stem, 3, 1));
        let mut channels = stem;
        for (stage, &count) in blocks.iter().enumerate() {
            let filters = self.width(64 << stage);
            for block in 0..count {
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                let mut inner = Vec::new();
                let out_channels = if bottleneck {
                    inner.extend(self.with_bn(self.conv(filters, 1, 1)));
                    inner.push(self.activation());
                    inner.extend(self.with_bn(self.conv(filters, 3, stride)));
                    inner.push(self.activation());
                    inner.extend(self.with_bn(self.conv(4 * filters, 1, 1)));
                    4 * filters
                } else {
                    inner.extend(self.with_bn(self.conv(filters, 3, stride)));
                    inner.push(self.activation());
                    inner.extend(self.with_bn(self.conv(filters, 3, 1)));
                    filters
                };
                self.residual(inner, channels, out_channels, stride);
                channels = out_channels;
            }
        }
        self.layers.push(LayerSpec::GlobalAvgPool);
        Ok(())
    }
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::IncompatibleOverride(format!(
                "width multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if self.depth_multiplier == 0 {
            return Err(Error::IncompatibleOverride("depth multiplier must be at least 1".into()));
        }
        if self.depth_multiplier != 1 && self.preset != Preset::Mlp {
            return Err(Error::IncompatibleOverride(format!(
                "depth multiplier applies to the mlp preset only, not {}",
                self.preset.name()
            )));
        }
        if self.output_dim == 0 {
            return Err(Error::IncompatibleOverride("output dimension must be at least 1".into()));
        }
        if !(self.batchnorm_eps > 0.0) {
            return Err(Error::IncompatibleOverride("batch-norm epsilon must be positive".into()));
        }
        if let Some(kind) = self.activation {
            kind.validate()?;
        }
        if let InitKind::PlainNormal { std } = self.init.kind {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::IncompatibleOverride(format!("normal std {std} must be non-negative")));
            }
        }
        if let Preset::ResnetDeeper { depth } = self.preset {
            resnet_layout(depth)?;
        }
        Ok(())
    }

    /// Body followed by the dense output head.
    pub fn resolve(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let mut b = Builder { spec: self, layers: Vec::new() };
        match &self.preset {
            Preset::Linear => b.layers.push(LayerSpec::Flatten),
            Preset::Mlp => {
                b.layers.push(LayerSpec::Flatten);
                for _ in 0..2 * self.depth_multiplier {
                    b.hidden(LayerSpec::Dense { units: b.width(128) });
                }
            }
            Preset::CnnS => {
                for filters in [32, 64] {
                    b.hidden(b.conv(b.width(filters), 5, 1));
                    b.layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
                }
                b.layers.push(LayerSpec::Flatten);
                b.hidden(LayerSpec::Dense { units: b.width(512) });
            }
            Preset::CnnM => {
                for (i, filters) in [32, 64, 64, 32].into_iter().enumerate() {
                    b.hidden(b.conv(b.width(filters), 5, 1));
                    if i < 2 {
                        b.layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
                    }
                }
                b.layers.push(LayerSpec::Flatten);
                b.hidden(LayerSpec::Dense { units: b.width(512) });
            }
            Preset::Lenet => {
                for filters in [6, 16] {
                    b.hidden(b.conv(b.width(filters), 5, 1));
                    b.layers.push(LayerSpec::AvgPool { window: 2, stride: 2 });
                }
                b.layers.push(LayerSpec::Flatten);
                for units in [120, 84] {
                    b.hidden(LayerSpec::Dense { units: b.width(units) });
                }
            }
            Preset::Resnet18Cifar => b.resnet(18)?,
            Preset::ResnetDeeper { depth } => b.resnet(*depth)?,
            Preset::Custom { layers } => {
                for layer in layers {
                    let affine = matches!(layer, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. });
                    b.layers.push(layer.clone());
                    if affine {
                        b.layers.extend(b.batch_norm());
                    }
                }
            }
        }
        b.layers.push(LayerSpec::Dense { units: self.output_dim });
        Ok(b.layers)
    }

    /// Per-example output shape for `input_shape`, by shape inference.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input_shape.to_vec();
        for layer in self.resolve()? {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Units of the hidden dense layers.
    pub fn hidden_widths(&self) -> Result<Vec<usize>> {
        let layers = self.resolve()?;
        Ok(layers[..layers.len() - 1]
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { units } => Some(*units),
                _ => None,
            })
            .collect())
    }

    /// Filter counts of the top-level convolutions.
    pub fn conv_filters(&self) -> Result<Vec<usize>> {
        Ok(self
            .resolve()?
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv2d { filters, .. } => Some(*filters),
                _ => None,
            })
            .collect())
    }

    pub fn activation_label(&self) -> String {
        self.activation.unwrap_or(ActivationKind::Relu).label()
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        let mut id = self.preset.name();
        if self.width_multiplier != 1.0 {
            id.push_str(&format!("_w{}", self.width_multiplier));
        }
        if self.depth_multiplier != 1 {
            id.push_str(&format!("_d{}", self.depth_multiplier));
        }
        if self.preset.is_resnet() {
            if !self.use_batchnorm {
                id.push_str("+nobn");
            }
            if !self.use_skip {
                id.push_str("+noskip");
            }
        } else if self.use_batchnorm {
            id.push_str("+bn");
        }
        if self.output_dim != 1 {
            id.push_str(&format!("_k{}", self.output_dim));
        }
        id
    }
}
