use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    /// ELU with `alpha = 1`.
    Elu,
    Sigmoid,
    Tanh,
    /// `gain * leaky_relu(x, slope)`.
    ScaledLeakyRelu { slope: f64, gain: f64 },
    Identity,
}

impl ActivationKind {
    /// Scaled leaky ReLU with the gain `sqrt(2 / (1 + slope^2))`, which keeps
    /// `E[f(z)^2] = 1` for standard normal `z`.
    pub fn scaled_leaky_relu(slope: f64) -> Self {
        Self::ScaledLeakyRelu { slope, gain: (2.0 / (1.0 + slope * slope)).sqrt() }
    }

    pub fn validate(&self) -> Result<()> {
        let slope_ok = |s: f64| (0.0..1.0).contains(&s);
        match *self {
            Self::LeakyRelu { slope } if !slope_ok(slope) => {
                Err(Error::InvalidArgument(format!("leaky relu slope {slope} outside [0, 1)")))
            }
            Self::ScaledLeakyRelu { slope, .. } if !slope_ok(slope) => {
                Err(Error::InvalidArgument(format!("leaky relu slope {slope} outside [0, 1)")))
            }
            Self::ScaledLeakyRelu { gain, .. } if !(gain > 0.0 && gain.is_finite()) => {
                Err(Error::InvalidArgument(format!("activation gain {gain} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// Positively homogeneous of degree one: `f(c x) = c f(x)` for `c > 0`.
    pub fn is_positively_homogeneous(&self) -> bool {
        matches!(self, Self::Relu | Self::LeakyRelu { .. } | Self::ScaledLeakyRelu { .. } | Self::Identity)
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Relu => "relu".into(),
            Self::LeakyRelu { slope } => format!("leaky_relu({slope})"),
            Self::Elu => "elu".into(),
            Self::Sigmoid => "sigmoid".into(),
            Self::Tanh => "tanh".into(),
            Self::ScaledLeakyRelu { slope, gain } => format!("scaled_leaky_relu({slope},{gain:.4})"),
            Self::Identity => "identity".into(),
        }
    }

    #[inline]
    pub fn eval<T: Scalar>(&self, x: T) -> T {
        let zero = T::zero();
        match *self {
            Self::Relu => x.max(zero),
            Self::LeakyRelu { slope } => {
                if x >= zero { x } else { T::of(slope) * x }
            }
            Self::Elu => {
                if x >= zero { x } else { x.exp_m1() }
            }
            Self::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Self::Tanh => x.tanh(),
            Self::ScaledLeakyRelu { slope, gain } => {
                let y = if x >= zero { x } else { T::of(slope) * x };
                T::of(gain) * y
            }
            Self::Identity => x,
        }
    }

    pub fn apply_in_place<T: Scalar>(&self, data: &mut [T]) {
        for v in data {
            *v = self.eval(*v);
        }
    }
}

pub fn apply_activation<T: Scalar>(kind: ActivationKind, x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    kind.apply_in_place(out.data_mut());
    out
}
