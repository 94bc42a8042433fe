//! Depthwise binomial (Gaussian) smoothing and its Laplacian complement.
//!
//! The blur runs per channel at stride 1 with mirrored borders, so output
//! dims equal input dims and a constant image stays constant. The
//! Laplacian is defined as the residual `x − blur(x)`, which makes
//! `blur(x) + laplacian(x) == x` hold exactly.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Border handling for the depthwise filter.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum PadMode {
    /// Mirror including the edge pixel (…, x1, x0 | x0, x1, …).
    #[default]
    Reflect,
    /// Wrap around.
    Circular,
}

/// Normalized binomial smoothing kernel, separable by construction.
#[derive(Clone, Debug)]
pub struct GaussianKernel {
    size: usize,
    row: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// Kernels of size 2, 3 or 5 built from the binomial rows
    /// `[1,1]/2`, `[1,2,1]/4`, `[1,4,6,4,1]/16`.
    pub fn new(size: usize) -> Result<Self> {
        let row: Vec<f64> = match size {
            2 => vec![1.0, 1.0],
            3 => vec![1.0, 2.0, 1.0],
            5 => vec![1.0, 4.0, 6.0, 4.0, 1.0],
            other => {
                return Err(Error::InvalidArgument {
                    op: "gaussian_kernel",
                    detail: format!("unsupported size {other}; expected 2, 3 or 5"),
                })
            }
        };
        let norm: f64 = row.iter().sum();
        let row: Vec<f64> = row.into_iter().map(|v| v / norm).collect();
        let mut weights = Vec::with_capacity(size * size);
        for u in &row {
            for v in &row {
                weights.push(u * v);
            }
        }
        Ok(GaussianKernel { size, row, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// 1-D binomial row (normalized).
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    /// 2-D weights, row-major, summing to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Rows before the anchor pixel; the kernel covers
    /// `[-pad_before, size-1-pad_before]` around each output position.
    fn pad_before(&self) -> usize {
        self.size / 2
    }
}

#[inline]
fn mirror(t: isize, len: usize) -> usize {
    if t < 0 {
        (-t - 1) as usize
    } else if t as usize >= len {
        2 * len - 1 - t as usize
    } else {
        t as usize
    }
}

#[inline]
fn wrap(t: isize, len: usize) -> usize {
    t.rem_euclid(len as isize) as usize
}

/// Depthwise stride-1 filter with the given border mode; shared by the
/// forward pass and the (self-adjoint up to scatter) backward pass.
fn depthwise_apply<T: Scalar>(
    x: &[T],
    shape: Shape,
    kernel: &[T],
    size: usize,
    before: usize,
    mode: PadMode,
    scatter: bool,
) -> Vec<T> {
    let (h, w) = (shape.h, shape.w);
    let planes = shape.n * shape.c;
    let mut out = vec![T::zero(); shape.numel()];
    let index = |t: isize, len: usize| -> usize {
        match mode {
            PadMode::Reflect => mirror(t, len),
            PadMode::Circular => wrap(t, len),
        }
    };
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..h {
            for j in 0..w {
                if scatter {
                    let g = x[base + i * w + j];
                    for u in 0..size {
                        let sy = index(i as isize + u as isize - before as isize, h);
                        for v in 0..size {
                            let sx = index(j as isize + v as isize - before as isize, w);
                            out[base + sy * w + sx] += kernel[u * size + v] * g;
                        }
                    }
                } else {
                    let mut acc = T::zero();
                    for u in 0..size {
                        let sy = index(i as isize + u as isize - before as isize, h);
                        for v in 0..size {
                            let sx = index(j as isize + v as isize - before as isize, w);
                            acc += kernel[u * size + v] * x[base + sy * w + sx];
                        }
                    }
                    out[base + i * w + j] = acc;
                }
            }
        }
    }
    out
}

/// Depthwise Gaussian smoothing; same shape out, differentiable w.r.t. `x`
/// (the kernel is fixed).
pub fn gaussian_blur<T: Scalar>(
    x: &Tensor<T>,
    kernel: &GaussianKernel,
    mode: PadMode,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h < kernel.size() || s.w < kernel.size() {
        return Err(Error::InvalidArgument {
            op: "gaussian_blur",
            detail: format!("input {}x{} smaller than kernel {k}x{k}", s.h, s.w, k = kernel.size()),
        });
    }
    let kv: Arc<Vec<T>> = Arc::new(kernel.weights().iter().map(|&v| T::from_f64(v)).collect());
    let size = kernel.size();
    let before = kernel.pad_before();
    let out = depthwise_apply(x.values(), s, &kv, size, before, mode, false);
    crate::tensor::record_unary_op(
        "gaussian_blur",
        Tensor::from_vec(s, out)?,
        x,
        move |g| depthwise_apply(g, s, &kv, size, before, mode, true),
    )
}

/// Low/high-frequency split of `x`: the Gaussian-filtered component and its
/// residual, sharing one filter evaluation. On dyadic-grid data (anything
/// quantized to power-of-two steps, e.g. 8-bit images) every operation is
/// exact and the branches sum back to `x` bitwise; on full-mantissa data
/// the sum is within one ulp per element.
pub fn blur_residual_pair<T: Scalar>(
    x: &Tensor<T>,
    kernel: &GaussianKernel,
    mode: PadMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let low = gaussian_blur(x, kernel, mode)?;
    let high = x.sub(&low)?;
    Ok((low, high))
}

/// High-frequency residual `x − gaussian_blur(x)`.
pub fn laplacian<T: Scalar>(
    x: &Tensor<T>,
    kernel: &GaussianKernel,
    mode: PadMode,
) -> Result<Tensor<T>> {
    blur_residual_pair(x, kernel, mode).map(|(_, hi)| hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values_match_binomial_outer_products() {
        let k3 = GaussianKernel::new(3).unwrap();
        let expect3: Vec<f64> = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
            .iter()
            .map(|v| v / 16.0)
            .collect();
        for (a, b) in k3.weights().iter().zip(expect3.iter()) {
            assert!((a - b).abs() < 1e-15);
        }

        let k2 = GaussianKernel::new(2).unwrap();
        for w in k2.weights() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn kernels_are_normalized_and_symmetric() {
        for size in [2usize, 3, 5] {
            let k = GaussianKernel::new(size).unwrap();
            let sum: f64 = k.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "size {size} sums to {sum}");
            // horizontal and vertical flips leave the weights unchanged
            for u in 0..size {
                for v in 0..size {
                    let w = k.weights()[u * size + v];
                    assert_eq!(w, k.weights()[(size - 1 - u) * size + v]);
                    assert_eq!(w, k.weights()[u * size + (size - 1 - v)]);
                }
            }
        }
    }

    #[test]
    fn unsupported_size_is_rejected() {
        assert!(GaussianKernel::new(4).is_err());
        assert!(GaussianKernel::new(0).is_err());
    }

    #[test]
    fn constant_image_stays_constant() {
        for size in [2usize, 3, 5] {
            let k = GaussianKernel::new(size).unwrap();
            let x = Tensor::<f64>::full(Shape::new(1, 2, 6, 6), 0.37);
            let y = gaussian_blur(&x, &k, PadMode::Reflect).unwrap();
            for v in y.values() {
                assert!((v - 0.37).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn impulse_center_weight_for_3x3_kernel() {
        let k = GaussianKernel::new(3).unwrap();
        let mut v = vec![0.0f64; 49];
        v[3 * 7 + 3] = 1.0;
        let x = Tensor::from_vec(Shape::new(1, 1, 7, 7), v).unwrap();
        let l = laplacian(&x, &k, PadMode::Reflect).unwrap();
        let center = l.values()[3 * 7 + 3];
        assert!((center - 0.75).abs() < 1e-14, "got {center}");
    }

    #[test]
    fn blur_plus_laplacian_recovers_dyadic_images_bit_exactly() {
        // 8-bit image data lives on a power-of-two grid, where the whole
        // decomposition is exact integer arithmetic in disguise
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for size in [2usize, 3, 5] {
            let k = GaussianKernel::new(size).unwrap();
            let values: Vec<f64> = (0..2 * 3 * 8 * 8)
                .map(|_| f64::from(rng.gen_range(0u16..=255)) / 256.0)
                .collect();
            let x = Tensor::from_vec(Shape::new(2, 3, 8, 8), values).unwrap();
            let (g, l) = blur_residual_pair(&x, &k, PadMode::Reflect).unwrap();
            let sum = g.add(&l).unwrap();
            assert_eq!(sum.values(), x.values(), "kernel size {size}");
        }
    }

    #[test]
    fn blur_plus_laplacian_is_within_one_ulp_on_full_mantissa_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let k = GaussianKernel::new(5).unwrap();
        let values: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| rng.gen::<f64>()).collect();
        let x = Tensor::from_vec(Shape::new(2, 3, 8, 8), values).unwrap();
        let (g, l) = blur_residual_pair(&x, &k, PadMode::Reflect).unwrap();
        let sum = g.add(&l).unwrap();
        for (s, v) in sum.values().iter().zip(x.values().iter()) {
            assert!((s - v).abs() <= v.abs() * f64::EPSILON);
        }
    }

    #[test]
    fn laplacian_is_input_minus_blur_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let k = GaussianKernel::new(3).unwrap();
        let values: Vec<f64> = (0..5 * 5).map(|_| rng.gen::<f64>()).collect();
        let x = Tensor::from_vec(Shape::new(1, 1, 5, 5), values).unwrap();
        let (g, l) = blur_residual_pair(&x, &k, PadMode::Reflect).unwrap();
        let diff = x.sub(&g).unwrap();
        assert_eq!(l.values(), diff.values());
    }

    #[test]
    fn linear_ramp_interior_is_unchanged() {
        // binomial filters preserve affine signals away from the border
        let k = GaussianKernel::new(5).unwrap();
        let values: Vec<f64> = (0..64).map(|i| (i % 8) as f64).collect();
        let x = Tensor::from_vec(Shape::new(1, 1, 8, 8), values).unwrap();
        let y = gaussian_blur(&x, &k, PadMode::Reflect).unwrap();
        for i in 2..6 {
            for j in 2..6 {
                let got = y.values()[i * 8 + j];
                assert!(
                    (got - j as f64).abs() < 1e-12,
                    "ramp bent at ({i},{j}): {got}"
                );
            }
        }
    }

    #[test]
    fn circular_blur_commutes_with_circular_shift() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let k = GaussianKernel::new(3).unwrap();
        let shape = Shape::new(1, 1, 8, 8);
        let values: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let x = Tensor::from_vec(shape, values.clone()).unwrap();

        let shift = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 64];
            for i in 0..8 {
                for j in 0..8 {
                    out[((i + 1) % 8) * 8 + j] = v[i * 8 + j];
                }
            }
            out
        };

        let shifted = Tensor::from_vec(shape, shift(&values)).unwrap();
        let blur_then_shift = shift(gaussian_blur(&x, &k, PadMode::Circular).unwrap().values());
        let shift_then_blur = gaussian_blur(&shifted, &k, PadMode::Circular).unwrap();
        for (a, b) in shift_then_blur.values().iter().zip(blur_then_shift.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn reflect_blur_commutes_with_shift_in_the_interior() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let k = GaussianKernel::new(5).unwrap();
        let shape = Shape::new(1, 1, 10, 10);
        let values: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let x = Tensor::from_vec(shape, values.clone()).unwrap();

        let mut shifted = vec![0.0; 100];
        for i in 0..10 {
            for j in 0..10 {
                shifted[((i + 1) % 10) * 10 + j] = values[i * 10 + j];
            }
        }
        let xs = Tensor::from_vec(shape, shifted).unwrap();
        let yb = gaussian_blur(&x, &k, PadMode::Reflect).unwrap();
        let ysb = gaussian_blur(&xs, &k, PadMode::Reflect).unwrap();
        // radius 2 kernel, 1px shift: rows ≥ 3 from either border are clean
        for i in 3..7 {
            for j in 3..7 {
                let a = ysb.values()[(i + 1) * 10 + j];
                let b = yb.values()[i * 10 + j];
                assert!((a - b).abs() < 1e-13, "mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn circular_padding_preserves_the_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for size in [2usize, 3, 5] {
            let k = GaussianKernel::new(size).unwrap();
            let values: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
            let x = Tensor::from_vec(Shape::new(1, 1, 8, 8), values).unwrap();
            let y = gaussian_blur(&x, &k, PadMode::Circular).unwrap();
            let mean = |t: &Tensor<f64>| t.values().iter().sum::<f64>() / 64.0;
            assert!((mean(&x) - mean(&y)).abs() < 1e-10);
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        let k = GaussianKernel::new(5).unwrap();
        let x = Tensor::<f64>::ones(Shape::new(1, 1, 4, 4));
        assert!(gaussian_blur(&x, &k, PadMode::Reflect).is_err());
    }
}
