//! Floating-point element types the tensor core can compute in.
//!
//! Everything numeric is generic over [`Scalar`]; gradient checks run in
//! `f64`, training runs default to `f32`. The trait carries a GEMM hook so
//! matrix products go through optimized kernels for both widths.

use std::fmt::{Debug, Display};

/// Element type of tensors: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Type name as spelled in configs ("f32" / "f64").
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Smallest value greater than `self`.
    fn next_up(self) -> Self;

    /// Largest value less than `self`.
    fn next_down(self) -> Self;

    /// `c ← a·b + beta·c` for row-major matrices, with optional transposed
    /// reads of `a` and `b`. `a` is m×k (k×m when `ta`), `b` is k×n (n×k
    /// when `tb`), `c` is m×n.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn next_up(self) -> Self {
                <$t>::next_up(self)
            }

            #[inline]
            fn next_down(self) -> Self {
                <$t>::next_down(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                ta: bool,
                b: &[Self],
                tb: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: a has wrong length");
                assert_eq!(b.len(), k * n, "gemm: b has wrong length");
                assert_eq!(c.len(), m * n, "gemm: c has wrong length");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c.iter_mut() {
                        *v *= beta;
                    }
                    return;
                }
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
