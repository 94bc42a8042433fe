//! Single-level 2-D Haar transform with orthonormal scaling, plus the
//! approximate-only / detail-only reconstructions used by WADCA pooling.
//!
//! On each non-overlapping 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a+b+c+d)/2    lh = (a−b+c−d)/2   (horizontal detail, along width)
//! hl = (a+b−c−d)/2    hh = (a−b−c+d)/2   (vertical detail, along height)
//! ```
//!
//! The 1/2 factor makes the transform orthonormal: energy is conserved and
//! the inverse uses the same coefficients, so adjoints in the backward pass
//! are the opposite transform applied to the gradient.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{record_multi_op, record_unary_op, Shape, Tensor};

/// The four half-resolution Haar subbands of a tensor.
#[derive(Clone, Debug)]
pub struct WaveletCoeffs<T: Scalar> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Scalar> WaveletCoeffs<T> {
    fn check(&self) -> Result<()> {
        let s = self.ll.shape();
        for (name, t) in [("lh", &self.lh), ("hl", &self.hl), ("hh", &self.hh)] {
            if t.shape() != s {
                return Err(Error::ShapeMismatch {
                    op: "WaveletCoeffs",
                    axis: "all",
                    detail: format!("ll is {} but {} is {}", s, name, t.shape()),
                });
            }
        }
        Ok(())
    }

    /// Σ‖subband‖² — equals ‖x‖² for coefficients of an even-sized x.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|t| t.values().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
            .sum()
    }
}

fn require_even(op: &'static str, s: Shape) -> Result<()> {
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::InvalidArgument {
            op,
            detail: format!("spatial dims must be even, got {}x{} (pad before transforming)", s.h, s.w),
        });
    }
    Ok(())
}

/// Per-subband analysis weights on (a, b, c, d), shared by forward and
/// adjoint paths. Order: ll, lh, hl, hh.
const BANDS: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5, 0.5],
];

fn analyze_band<T: Scalar>(x: &[T], s: Shape, band: usize) -> Vec<T> {
    let (h2, w2) = (s.h / 2, s.w / 2);
    let wgt: Vec<T> = BANDS[band].iter().map(|&v| T::from_f64(v)).collect();
    let mut out = vec![T::zero(); s.n * s.c * h2 * w2];
    let mut oi = 0;
    for p in 0..s.n * s.c {
        let plane = p * s.h * s.w;
        for i in 0..h2 {
            let r0 = plane + 2 * i * s.w;
            let r1 = r0 + s.w;
            for j in 0..w2 {
                let (a, b, c, d) = (x[r0 + 2 * j], x[r0 + 2 * j + 1], x[r1 + 2 * j], x[r1 + 2 * j + 1]);
                out[oi] = wgt[0] * a + wgt[1] * b + wgt[2] * c + wgt[3] * d;
                oi += 1;
            }
        }
    }
    out
}

fn scatter_band<T: Scalar>(g: &[T], full: Shape, band: usize) -> Vec<T> {
    let (h2, w2) = (full.h / 2, full.w / 2);
    let wgt: Vec<T> = BANDS[band].iter().map(|&v| T::from_f64(v)).collect();
    let mut out = vec![T::zero(); full.numel()];
    let mut gi = 0;
    for p in 0..full.n * full.c {
        let plane = p * full.h * full.w;
        for i in 0..h2 {
            let r0 = plane + 2 * i * full.w;
            let r1 = r0 + full.w;
            for j in 0..w2 {
                let gv = g[gi];
                gi += 1;
                out[r0 + 2 * j] += wgt[0] * gv;
                out[r0 + 2 * j + 1] += wgt[1] * gv;
                out[r1 + 2 * j] += wgt[2] * gv;
                out[r1 + 2 * j + 1] += wgt[3] * gv;
            }
        }
    }
    out
}

/// Single-level 2-D Haar decomposition. Spatial dims must be even.
pub fn dwt2<T: Scalar>(x: &Tensor<T>) -> Result<WaveletCoeffs<T>> {
    let s = x.shape();
    require_even("dwt2", s)?;
    let half = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut bands = Vec::with_capacity(4);
    for band in 0..4 {
        let data = analyze_band(x.values(), s, band);
        let t = record_unary_op(
            "dwt2",
            Tensor::from_vec(half, data)?,
            x,
            move |g| scatter_band(g, s, band),
        )?;
        bands.push(t);
    }
    let hh = bands.pop().expect("band");
    let hl = bands.pop().expect("band");
    let lh = bands.pop().expect("band");
    let ll = bands.pop().expect("band");
    Ok(WaveletCoeffs { ll, lh, hl, hh })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2<T: Scalar>(c: &WaveletCoeffs<T>) -> Result<Tensor<T>> {
    c.check()?;
    let half = c.ll.shape();
    let full = Shape::new(half.n, half.c, half.h * 2, half.w * 2);
    let mut out = vec![T::zero(); full.numel()];
    for (band, t) in [&c.ll, &c.lh, &c.hl, &c.hh].iter().enumerate() {
        let scattered = scatter_band(t.values(), full, band);
        for (o, v) in out.iter_mut().zip(scattered) {
            *o += v;
        }
    }
    record_multi_op(
        "idwt2",
        Tensor::from_vec(full, out)?,
        &[&c.ll, &c.lh, &c.hl, &c.hh],
        move |g| (0..4).map(|band| analyze_band(g, full, band)).collect(),
    )
}

/// Replicate the last row/column so both spatial dims are even.
fn pad_replicate_even<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let (ph, pw) = (s.h % 2, s.w % 2);
    if ph == 0 && pw == 0 {
        return Ok(x.clone());
    }
    let out_shape = Shape::new(s.n, s.c, s.h + ph, s.w + pw);
    let xv = x.values();
    let mut out = vec![T::zero(); out_shape.numel()];
    for p in 0..s.n * s.c {
        for i in 0..out_shape.h {
            let si = i.min(s.h - 1);
            for j in 0..out_shape.w {
                let sj = j.min(s.w - 1);
                out[(p * out_shape.h + i) * out_shape.w + j] = xv[(p * s.h + si) * s.w + sj];
            }
        }
    }
    record_unary_op(
        "pad_replicate_even",
        Tensor::from_vec(out_shape, out)?,
        x,
        move |g| {
            let mut gx = vec![T::zero(); s.numel()];
            for p in 0..s.n * s.c {
                for i in 0..out_shape.h {
                    let si = i.min(s.h - 1);
                    for j in 0..out_shape.w {
                        let sj = j.min(s.w - 1);
                        gx[(p * s.h + si) * s.w + sj] += g[(p * out_shape.h + i) * out_shape.w + j];
                    }
                }
            }
            gx
        },
    )
}

/// Top-left crop back to `target` spatial dims (adjoint zero-pads).
fn crop_to<T: Scalar>(x: &Tensor<T>, target: Shape) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h == target.h && s.w == target.w {
        return Ok(x.clone());
    }
    let xv = x.values();
    let mut out = vec![T::zero(); target.numel()];
    for p in 0..s.n * s.c {
        for i in 0..target.h {
            let src = (p * s.h + i) * s.w;
            let dst = (p * target.h + i) * target.w;
            out[dst..dst + target.w].copy_from_slice(&xv[src..src + target.w]);
        }
    }
    record_unary_op(
        "crop",
        Tensor::from_vec(target, out)?,
        x,
        move |g| {
            let mut gx = vec![T::zero(); s.numel()];
            for p in 0..s.n * s.c {
                for i in 0..target.h {
                    let dst = (p * s.h + i) * s.w;
                    let src = (p * target.h + i) * target.w;
                    gx[dst..dst + target.w].copy_from_slice(&g[src..src + target.w]);
                }
            }
            gx
        },
    )
}

fn recon_with<T: Scalar>(x: &Tensor<T>, keep_approx: bool) -> Result<Tensor<T>> {
    let orig = x.shape();
    let padded = pad_replicate_even(x)?;
    let c = dwt2(&padded)?;
    let zero = Tensor::zeros(c.ll.shape());
    let masked = if keep_approx {
        WaveletCoeffs {
            ll: c.ll,
            lh: zero.clone(),
            hl: zero.clone(),
            hh: zero,
        }
    } else {
        WaveletCoeffs {
            ll: zero,
            lh: c.lh,
            hl: c.hl,
            hh: c.hh,
        }
    };
    crop_to(&idwt2(&masked)?, orig)
}

/// Reconstruction from the approximate (LL) subband only; odd inputs are
/// edge-replicated to even and cropped back.
pub fn approx_recon<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    recon_with(x, true)
}

/// Reconstruction from the three detail subbands only (LH, HL, HH fused by
/// a single inverse transform).
pub fn detail_recon<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    recon_with(x, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn constant_block_concentrates_in_ll() {
        let x = Tensor::<f64>::ones(Shape::new(1, 1, 2, 2));
        let c = dwt2(&x).unwrap();
        assert_eq!(c.ll.item(), 2.0);
        assert_eq!(c.lh.item(), 0.0);
        assert_eq!(c.hl.item(), 0.0);
        assert_eq!(c.hh.item(), 0.0);
    }

    #[test]
    fn corner_impulse_spreads_evenly() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let c = dwt2(&x).unwrap();
        for band in [&c.ll, &c.lh, &c.hl, &c.hh] {
            assert_eq!(band.item(), 0.5);
        }
    }

    #[test]
    fn detail_band_orientation() {
        // vertical edge (varies along width) excites lh
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let c = dwt2(&x).unwrap();
        assert_eq!(c.lh.item(), 2.0);
        assert_eq!(c.hl.item(), 0.0);
        // horizontal edge (varies along height) excites hl
        let y = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let c = dwt2(&y).unwrap();
        assert_eq!(c.lh.item(), 0.0);
        assert_eq!(c.hl.item(), 2.0);
    }

    #[test]
    fn odd_dims_are_rejected() {
        let x = Tensor::<f64>::ones(Shape::new(1, 1, 3, 4));
        assert!(dwt2(&x).is_err());
    }

    #[test]
    fn perfect_reconstruction() {
        let x = random(Shape::new(2, 3, 8, 8), 1);
        let y = idwt2(&dwt2(&x).unwrap()).unwrap();
        for (a, b) in y.values().iter().zip(x.values().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_coefficients_give_zero_image() {
        let zero = Tensor::<f64>::zeros(Shape::new(1, 2, 3, 3));
        let c = WaveletCoeffs {
            ll: zero.clone(),
            lh: zero.clone(),
            hl: zero.clone(),
            hh: zero,
        };
        let y = idwt2(&c).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_is_conserved() {
        let x = random(Shape::new(1, 2, 16, 16), 2);
        let c = dwt2(&x).unwrap();
        let ex: f64 = x.values().iter().map(|v| v * v).sum();
        assert!((c.energy() - ex).abs() < 1e-9, "{} vs {}", c.energy(), ex);
    }

    #[test]
    fn constant_image_survives_approx_and_dies_in_detail() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 6, 6), 0.7);
        let a = approx_recon(&x).unwrap();
        for (av, xv) in a.values().iter().zip(x.values().iter()) {
            assert!((av - xv).abs() < 1e-12);
        }
        let d = detail_recon(&x).unwrap();
        for v in d.values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn period_one_checkerboard_has_no_approx_part() {
        let mut v = vec![0.0f64; 64];
        for i in 0..8 {
            for j in 0..8 {
                v[i * 8 + j] = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        let x = Tensor::from_vec(Shape::new(1, 1, 8, 8), v).unwrap();
        let a = approx_recon(&x).unwrap();
        for v in a.values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn approx_recon_is_idempotent() {
        let x = random(Shape::new(1, 2, 8, 8), 3);
        let a1 = approx_recon(&x).unwrap();
        let a2 = approx_recon(&a1).unwrap();
        for (p, q) in a1.values().iter().zip(a2.values().iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_split_and_orthogonality() {
        let x = random(Shape::new(2, 2, 10, 10), 4);
        let a = approx_recon(&x).unwrap();
        let d = detail_recon(&x).unwrap();
        let sum = a.add(&d).unwrap();
        for (s, v) in sum.values().iter().zip(x.values().iter()) {
            assert!((s - v).abs() < 1e-10);
        }
        assert!(a.dot(&d).abs() < 1e-8);
    }

    #[test]
    fn odd_input_splits_through_padding() {
        let x = random(Shape::new(1, 1, 7, 5), 5);
        let a = approx_recon(&x).unwrap();
        let d = detail_recon(&x).unwrap();
        assert_eq!(a.shape(), x.shape());
        let sum = a.add(&d).unwrap();
        for (s, v) in sum.values().iter().zip(x.values().iter()) {
            assert!((s - v).abs() < 1e-10);
        }
    }
}
