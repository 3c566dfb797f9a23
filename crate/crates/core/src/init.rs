//! Weight initialization schemes.
//!
//! Dense kernels are laid out `(fan_in, fan_out)`, convolution kernels
//! `(kh, kw, in_channels, out_channels)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of a standard normal truncated to `[-2, 2]`.
pub const TRUNCATED_NORMAL_STD: f64 = 0.879_625_661_034_239_8;

/// Truncation bound, in units of the pre-truncation standard deviation.
pub const TRUNCATION_BOUND: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GlorotNormal,
    GlorotUniform,
    HeNormal,
    HeUniform,
    LecunNormal,
    Orthogonal,
    DeltaOrthogonal,
    PlainNormal { std: f64 },
    Zeros,
}

/// Initialization distribution: a kind plus whether normals are truncated
/// at two standard deviations (and rescaled to keep the target variance).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub kind: InitKind,
    #[serde(default = "default_truncation")]
    pub truncation: bool,
}

fn default_truncation() -> bool {
    true
}

impl InitScheme {
    pub fn new(kind: InitKind) -> Self {
        Self { kind, truncation: true }
    }

    pub fn untruncated(kind: InitKind) -> Self {
        Self { kind, truncation: false }
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            InitKind::GlorotNormal => "glorot_normal".to_string(),
            InitKind::GlorotUniform => "glorot_uniform".to_string(),
            InitKind::HeNormal => "he_normal".to_string(),
            InitKind::HeUniform => "he_uniform".to_string(),
            InitKind::LecunNormal => "lecun_normal".to_string(),
            InitKind::Orthogonal => "orthogonal".to_string(),
            InitKind::DeltaOrthogonal => "delta_orthogonal".to_string(),
            InitKind::PlainNormal { std } => format!("normal({std})"),
            InitKind::Zeros => "zeros".to_string(),
        };
        let normal = matches!(
            self.kind,
            InitKind::GlorotNormal | InitKind::HeNormal | InitKind::LecunNormal | InitKind::PlainNormal { .. }
        );
        if normal && !self.truncation {
            format!("{base}_untruncated")
        } else {
            base
        }
    }

    /// Variance of each entry implied by the scheme, for the elementwise
    /// schemes. `None` for orthogonal schemes.
    pub fn target_variance(&self, fan: Fan) -> Option<f64> {
        let (fi, fo) = (fan.fan_in as f64, fan.fan_out as f64);
        match self.kind {
            InitKind::GlorotNormal | InitKind::GlorotUniform => Some(2.0 / (fi + fo)),
            InitKind::HeNormal | InitKind::HeUniform => Some(2.0 / fi),
            InitKind::LecunNormal => Some(1.0 / fi),
            InitKind::PlainNormal { std } => Some(std * std),
            InitKind::Zeros => Some(0.0),
            InitKind::Orthogonal | InitKind::DeltaOrthogonal => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fan {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Fan {
    pub fn new(fan_in: usize, fan_out: usize) -> Self {
        Self { fan_in, fan_out }
    }

    /// Fans of a dense `(in, out)` or convolution `(kh, kw, in, out)` kernel.
    /// Convolutions multiply both fans by the receptive field size.
    pub fn for_shape(shape: &[usize]) -> Result<Self> {
        match shape {
            [fan_in, fan_out] => Ok(Self::new(*fan_in, *fan_out)),
            [kh, kw, cin, cout] => Ok(Self::new(kh * kw * cin, kh * kw * cout)),
            other => Err(Error::Shape(format!("no fan rule for kernel shape {other:?}"))),
        }
    }
}

/// Draws a tensor of `shape` from `scheme`.
pub fn init_tensor<T: Scalar>(
    scheme: InitScheme,
    shape: &[usize],
    fan: Fan,
    stream: &mut RngStream,
) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("cannot initialize shape {shape:?}")));
    }
    let len: usize = shape.iter().product();
    let needs_fan = !matches!(scheme.kind, InitKind::Zeros | InitKind::PlainNormal { .. });
    if needs_fan && (fan.fan_in == 0 || fan.fan_out == 0) {
        return Err(Error::DegenerateFan { fan_in: fan.fan_in, fan_out: fan.fan_out });
    }

    let data: Vec<f64> = match scheme.kind {
        InitKind::Zeros => vec![0.0; len],
        InitKind::GlorotNormal | InitKind::HeNormal | InitKind::LecunNormal | InitKind::PlainNormal { .. } => {
            let std = scheme.target_variance(fan).unwrap().sqrt();
            sample_normal(len, std, scheme.truncation, stream)
        }
        InitKind::GlorotUniform | InitKind::HeUniform => {
            let limit = (3.0 * scheme.target_variance(fan).unwrap()).sqrt();
            (0..len).map(|_| stream.uniform_range(-limit, limit)).collect()
        }
        InitKind::Orthogonal => {
            let [rows, cols] = shape else {
                return Err(Error::Shape(format!("orthogonal init needs a 2-D shape, got {shape:?}")));
            };
            orthogonal(*rows, *cols, stream)
        }
        InitKind::DeltaOrthogonal => {
            let [kh, kw, cin, cout] = shape else {
                return Err(Error::Shape(format!(
                    "delta-orthogonal init needs a (kh, kw, in, out) shape, got {shape:?}"
                )));
            };
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::Shape(format!(
                    "delta-orthogonal init needs odd spatial extent, got {kh}x{kw}"
                )));
            }
            let center = orthogonal(*cin, *cout, stream);
            let mut data = vec![0.0; len];
            let offset = ((kh / 2) * kw + kw / 2) * cin * cout;
            data[offset..offset + cin * cout].copy_from_slice(&center);
            data
        }
    };
    Tensor::new(shape.to_vec(), data.into_iter().map(T::of).collect())
}

fn sample_normal(len: usize, std: f64, truncation: bool, stream: &mut RngStream) -> Vec<f64> {
    if truncation {
        let scale = std / TRUNCATED_NORMAL_STD;
        (0..len).map(|_| scale * stream.truncated_normal(TRUNCATION_BOUND)).collect()
    } else {
        (0..len).map(|_| std * stream.standard_normal()).collect()
    }
}

/// Row-major `rows x cols` matrix with orthonormal columns (when
/// `rows >= cols`) or orthonormal rows (otherwise), Haar distributed.
fn orthogonal(rows: usize, cols: usize, stream: &mut RngStream) -> Vec<f64> {
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let gaussian = DMatrix::<f64>::from_fn(tall, short, |_, _| stream.standard_normal());
    let qr = gaussian.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution uniform over the Stiefel manifold
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn max_gram_error(data: &[f32], rows: usize, cols: usize) -> f64 {
        // Gram over the smaller dimension
        let (outer, inner, by_cols) = if rows >= cols { (cols, rows, true) } else { (rows, cols, false) };
        let at = |i: usize, p: usize| -> f64 {
            if by_cols { data[p * cols + i] as f64 } else { data[i * cols + p] as f64 }
        };
        let mut worst: f64 = 0.0;
        for a in 0..outer {
            for b in 0..outer {
                let dot: f64 = (0..inner).map(|p| at(a, p) * at(b, p)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    #[test]
    fn fans_for_dense_and_conv() {
        assert_eq!(Fan::for_shape(&[10, 3]).unwrap(), Fan::new(10, 3));
        assert_eq!(Fan::for_shape(&[5, 5, 3, 32]).unwrap(), Fan::new(75, 800));
        assert!(Fan::for_shape(&[3]).is_err());
    }

    #[test]
    fn square_orthogonal() {
        let mut s = derive_stream(0, 0);
        let t: Tensor<f32> = init_tensor(InitScheme::new(InitKind::Orthogonal), &[64, 64], Fan::new(64, 64), &mut s).unwrap();
        assert!(max_gram_error(t.data(), 64, 64) < 1e-5);
    }

    #[test]
    fn rectangular_orthogonal() {
        let mut s = derive_stream(0, 1);
        for (r, c) in [(100, 7), (7, 100), (1, 1), (512, 1)] {
            let t: Tensor<f32> =
                init_tensor(InitScheme::new(InitKind::Orthogonal), &[r, c], Fan::new(r, c), &mut s).unwrap();
            assert!(max_gram_error(t.data(), r, c) < 1e-5, "{r}x{c}");
        }
    }

    #[test]
    fn delta_orthogonal_center_only() {
        let mut s = derive_stream(0, 2);
        let t: Tensor<f32> = init_tensor(
            InitScheme::new(InitKind::DeltaOrthogonal),
            &[3, 3, 16, 16],
            Fan::for_shape(&[3, 3, 16, 16]).unwrap(),
            &mut s,
        )
        .unwrap();
        let slice = 16 * 16;
        for pos in 0..9 {
            let block = &t.data()[pos * slice..(pos + 1) * slice];
            if pos == 4 {
                assert!(max_gram_error(block, 16, 16) < 1e-5);
            } else {
                assert!(block.iter().all(|&v| v == 0.0), "position {pos} not zero");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut s = derive_stream(0, 3);
        let orth = InitScheme::new(InitKind::Orthogonal);
        assert!(matches!(init_tensor::<f32>(orth, &[2, 2, 2], Fan::new(4, 4), &mut s), Err(Error::Shape(_))));
        let delta = InitScheme::new(InitKind::DeltaOrthogonal);
        assert!(matches!(init_tensor::<f32>(delta, &[4, 4], Fan::new(4, 4), &mut s), Err(Error::Shape(_))));
        assert!(matches!(init_tensor::<f32>(delta, &[2, 2, 4, 4], Fan::new(16, 16), &mut s), Err(Error::Shape(_))));
        assert!(matches!(init_tensor::<f32>(orth, &[], Fan::new(4, 4), &mut s), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_fan_is_degenerate() {
        let mut s = derive_stream(0, 4);
        let he = InitScheme::new(InitKind::HeNormal);
        assert!(matches!(
            init_tensor::<f32>(he, &[3, 3], Fan::new(0, 3), &mut s),
            Err(Error::DegenerateFan { .. })
        ));
    }

    #[test]
    fn zeros_are_zero() {
        let mut s = derive_stream(0, 5);
        let t: Tensor<f64> = init_tensor(InitScheme::new(InitKind::Zeros), &[4, 4], Fan::new(4, 4), &mut s).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncated_entries_are_bounded() {
        let mut s = derive_stream(0, 6);
        let scheme = InitScheme::new(InitKind::HeNormal);
        let fan = Fan::new(50, 50);
        let t: Tensor<f64> = init_tensor(scheme, &[50, 2000], fan, &mut s).unwrap();
        let sigma = (2.0f64 / 50.0).sqrt() / TRUNCATED_NORMAL_STD;
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * sigma));
    }

    #[test]
    fn truncated_normal_std_constant() {
        // E[z^2 | |z| <= 2] = 1 - 2*2*pdf(2)/(2*cdf(2)-1)
        let pdf2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mass = 0.954_499_736_103_641_6;
        let var = 1.0 - 4.0 * pdf2 / mass;
        assert!((var.sqrt() - TRUNCATED_NORMAL_STD).abs() < 1e-12);
    }

    #[test]
    fn reproducible_for_equal_stream_state() {
        let scheme = InitScheme::new(InitKind::GlorotUniform);
        let a: Tensor<f32> = init_tensor(scheme, &[8, 8], Fan::new(8, 8), &mut derive_stream(11, 2)).unwrap();
        let b: Tensor<f32> = init_tensor(scheme, &[8, 8], Fan::new(8, 8), &mut derive_stream(11, 2)).unwrap();
        assert_eq!(a, b);
    }
}
