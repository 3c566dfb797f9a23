//! Scalar abstraction shared by the tensor, network and feature code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Accumulator width for matrix products.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// Accumulate in the storage type.
    #[default]
    Native,
    /// Accumulate in 64 bits and round the result back.
    Wide,
}

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// Lossy conversion from `f64` (round to nearest).
    fn of(x: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    /// `c <- alpha * a b + beta * c` for row-major `a` (m x k), `b` (k x n)
    /// and `c` (m x n).
    fn gemm_native(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    fn gemm(acc: Accumulation, m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        match acc {
            Accumulation::Native => Self::gemm_native(m, k, n, Self::one(), a, b, beta, c),
            Accumulation::Wide => {
                let a64: Vec<f64> = a.iter().map(|v| v.to_f64_lossless()).collect();
                let b64: Vec<f64> = b.iter().map(|v| v.to_f64_lossless()).collect();
                let mut c64: Vec<f64> = c.iter().map(|v| v.to_f64_lossless()).collect();
                f64::gemm_native(m, k, n, 1.0, &a64, &b64, beta.to_f64_lossless(), &mut c64);
                for (dst, src) in c.iter_mut().zip(c64) {
                    *dst = Self::of(src);
                }
            }
        }
    }
}

fn check_extents(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert_eq!(a, m * k, "gemm: lhs has {a} elements, expected {m}x{k}");
    assert_eq!(b, k * n, "gemm: rhs has {b} elements, expected {k}x{n}");
    assert_eq!(c, m * n, "gemm: output has {c} elements, expected {m}x{n}");
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn of(x: f64) -> Self {
        x as f32
    }

    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    fn gemm_native(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
        check_extents(m, k, n, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: extents checked above; all matrices are dense row-major.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn of(x: f64) -> Self {
        x
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }

    fn gemm_native(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
        check_extents(m, k, n, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: extents checked above; all matrices are dense row-major.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}
