//! 2-D convolution (cross-correlation) and its transpose, lowered to GEMM
//! through im2col/col2im.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::record_op;
use super::{Shape, Tensor};

/// Unfold one image (c×h×w) into a (c·kh·kw) × (oh·ow) patch matrix.
/// Out-of-bounds reads under zero padding contribute zeros.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); c * kh * kw * oh * ow];
    let plane = h * w;
    let ncols = oh * ow;
    for ch in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let row = ((ch * kh + u) * kw + v) * ncols;
                for i in 0..oh {
                    let sy = (i * stride + u) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = ch * plane + sy as usize * w;
                    let dst_row = row + i * ow;
                    for j in 0..ow {
                        let sx = (j * stride + v) as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            cols[dst_row + j] = x[src_row + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into a c×h×w image.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut img = vec![T::zero(); c * h * w];
    let plane = h * w;
    let ncols = oh * ow;
    for ch in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let row = ((ch * kh + u) * kw + v) * ncols;
                for i in 0..oh {
                    let sy = (i * stride + u) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = ch * plane + sy as usize * w;
                    let src_row = row + i * ow;
                    for j in 0..ow {
                        let sx = (j * stride + v) as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            img[dst_row + sx as usize] += cols[src_row + j];
                        }
                    }
                }
            }
        }
    }
    img
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = b.shape();
        if s != Shape::new(1, cout, 1, 1) {
            return Err(Error::ShapeMismatch {
                op,
                axis: "channel",
                detail: format!("bias must be (1,{cout},1,1), got {s}"),
            });
        }
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation with a `(Cout, Cin/groups, kH, kW)` kernel.
    /// Output shape `(N, Cout, (H+2p−kH)/s+1, (W+2p−kW)/s+1)`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let (cout, cin_g, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
        if stride == 0 || groups == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                detail: "stride and groups must be positive".into(),
            });
        }
        if xs.c != cin_g * groups {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: "channel",
                detail: format!(
                    "input has {} channels, weight expects {}·{} (per-group×groups)",
                    xs.c, cin_g, groups
                ),
            });
        }
        if cout % groups != 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: "channel",
                detail: format!("output channels {cout} not divisible by groups {groups}"),
            });
        }
        if kh > xs.h + 2 * padding || kw > xs.w + 2 * padding {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                detail: format!(
                    "kernel {kh}x{kw} exceeds padded input {}x{}",
                    xs.h + 2 * padding,
                    xs.w + 2 * padding
                ),
            });
        }
        check_bias("conv2d", bias, cout)?;

        let oh = (xs.h + 2 * padding - kh) / stride + 1;
        let ow = (xs.w + 2 * padding - kw) / stride + 1;
        let out_shape = Shape::new(xs.n, cout, oh, ow);
        let cout_g = cout / groups;
        let kg = cin_g * kh * kw;
        let ncols = oh * ow;

        let xv = self.values();
        let wv = weight.values();
        let mut out = vec![T::zero(); out_shape.numel()];
        for n in 0..xs.n {
            let cols = im2col(
                &xv[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w],
                xs.c,
                xs.h,
                xs.w,
                kh,
                kw,
                stride,
                padding,
                oh,
                ow,
            );
            for g in 0..groups {
                let a = &wv[g * cout_g * kg..(g + 1) * cout_g * kg];
                let b = &cols[g * kg * ncols..(g + 1) * kg * ncols];
                let c0 = (n * cout + g * cout_g) * ncols;
                T::gemm(cout_g, kg, ncols, a, false, b, false, T::zero(), &mut out[c0..c0 + cout_g * ncols]);
            }
        }
        if let Some(b) = bias {
            let bv = b.values();
            for n in 0..xs.n {
                for ch in 0..cout {
                    let base = (n * cout + ch) * ncols;
                    for k in 0..ncols {
                        out[base + k] += bv[ch];
                    }
                }
            }
        }

        let xv = self.values_arc();
        let wv = weight.values_arc();
        let inputs: Vec<&Tensor<T>> = match bias {
            Some(b) => vec![self, weight, b],
            None => vec![self, weight],
        };
        record_op(
            "conv2d",
            Tensor::from_vec(out_shape, out)?,
            &inputs,
            |ids| {
                let ix = ids[0];
                let iw = ids[1];
                let ib = ids.get(2).copied().flatten();
                Box::new(move |g| {
                    conv2d_backward(
                        g, &xv, &wv, xs, cout, cin_g, kh, kw, stride, padding, groups, oh, ow, ix,
                        iw, ib,
                    )
                })
            },
        )
    }

    /// Transposed convolution (the adjoint of `conv2d` with zero padding).
    /// Weight layout `(Cin, Cout, kH, kW)`; output spatial size `(H−1)·s+kH`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let (cin, cout, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
        if stride == 0 {
            return Err(Error::InvalidArgument {
                op: "conv_transpose2d",
                detail: "stride must be positive".into(),
            });
        }
        if xs.c != cin {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                axis: "channel",
                detail: format!("input has {} channels, weight expects {}", xs.c, cin),
            });
        }
        check_bias("conv_transpose2d", bias, cout)?;

        let oh = (xs.h - 1) * stride + kh;
        let ow = (xs.w - 1) * stride + kw;
        let out_shape = Shape::new(xs.n, cout, oh, ow);
        let kg = cout * kh * kw;
        let hw_in = xs.h * xs.w;

        let xv = self.values();
        let wv = weight.values();
        let mut out = vec![T::zero(); out_shape.numel()];
        let mut cols = vec![T::zero(); kg * hw_in];
        for n in 0..xs.n {
            let xn = &xv[n * cin * hw_in..(n + 1) * cin * hw_in];
            // cols = Wᵀ · xₙ, then scattered onto the upsampled grid
            T::gemm(kg, cin, hw_in, wv, true, xn, false, T::zero(), &mut cols);
            let img = col2im(&cols, cout, oh, ow, kh, kw, stride, 0, xs.h, xs.w);
            out[n * cout * oh * ow..(n + 1) * cout * oh * ow].copy_from_slice(&img);
        }
        if let Some(b) = bias {
            let bv = b.values();
            for n in 0..xs.n {
                for ch in 0..cout {
                    let base = (n * cout + ch) * oh * ow;
                    for k in 0..oh * ow {
                        out[base + k] += bv[ch];
                    }
                }
            }
        }

        let xv = self.values_arc();
        let wv = weight.values_arc();
        let inputs: Vec<&Tensor<T>> = match bias {
            Some(b) => vec![self, weight, b],
            None => vec![self, weight],
        };
        record_op(
            "conv_transpose2d",
            Tensor::from_vec(out_shape, out)?,
            &inputs,
            |ids| {
                let ix = ids[0];
                let iw = ids[1];
                let ib = ids.get(2).copied().flatten();
                Box::new(move |g| {
                    conv_transpose2d_backward(
                        g, &xv, &wv, xs, cin, cout, kh, kw, stride, oh, ow, ix, iw, ib,
                    )
                })
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    g: &[T],
    xv: &Arc<Vec<T>>,
    wv: &Arc<Vec<T>>,
    xs: Shape,
    cout: usize,
    cin_g: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    oh: usize,
    ow: usize,
    ix: Option<usize>,
    iw: Option<usize>,
    ib: Option<usize>,
) -> Vec<(usize, Vec<T>)> {
    let mut grads = Vec::new();
    let cout_g = cout / groups;
    let kg = cin_g * kh * kw;
    let ncols = oh * ow;
    let plane = xs.h * xs.w;

    if let Some(i) = ix {
        let mut gx = vec![T::zero(); xs.numel()];
        let mut gcols = vec![T::zero(); groups * kg * ncols];
        for n in 0..xs.n {
            for grp in 0..groups {
                let a = &wv[grp * cout_g * kg..(grp + 1) * cout_g * kg];
                let gn = &g[(n * cout + grp * cout_g) * ncols..(n * cout + (grp + 1) * cout_g) * ncols];
                T::gemm(
                    kg,
                    cout_g,
                    ncols,
                    a,
                    true,
                    gn,
                    false,
                    T::zero(),
                    &mut gcols[grp * kg * ncols..(grp + 1) * kg * ncols],
                );
            }
            let img = col2im(&gcols, xs.c, xs.h, xs.w, kh, kw, stride, padding, oh, ow);
            gx[n * xs.c * plane..(n + 1) * xs.c * plane].copy_from_slice(&img);
        }
        grads.push((i, gx));
    }

    if let Some(i) = iw {
        let mut gw = vec![T::zero(); cout * kg];
        for n in 0..xs.n {
            let cols = im2col(
                &xv[n * xs.c * plane..(n + 1) * xs.c * plane],
                xs.c,
                xs.h,
                xs.w,
                kh,
                kw,
                stride,
                padding,
                oh,
                ow,
            );
            for grp in 0..groups {
                let gn = &g[(n * cout + grp * cout_g) * ncols..(n * cout + (grp + 1) * cout_g) * ncols];
                let b = &cols[grp * kg * ncols..(grp + 1) * kg * ncols];
                T::gemm(
                    cout_g,
                    ncols,
                    kg,
                    gn,
                    false,
                    b,
                    true,
                    T::one(),
                    &mut gw[grp * cout_g * kg..(grp + 1) * cout_g * kg],
                );
            }
        }
        grads.push((i, gw));
    }

    if let Some(i) = ib {
        let mut gb = vec![T::zero(); cout];
        for n in 0..xs.n {
            for ch in 0..cout {
                let base = (n * cout + ch) * ncols;
                for k in 0..ncols {
                    gb[ch] += g[base + k];
                }
            }
        }
        grads.push((i, gb));
    }
    grads
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_backward<T: Scalar>(
    g: &[T],
    xv: &Arc<Vec<T>>,
    wv: &Arc<Vec<T>>,
    xs: Shape,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    ix: Option<usize>,
    iw: Option<usize>,
    ib: Option<usize>,
) -> Vec<(usize, Vec<T>)> {
    let mut grads = Vec::new();
    let kg = cout * kh * kw;
    let hw_in = xs.h * xs.w;

    let need_cols = ix.is_some() || iw.is_some();
    let mut gx = if ix.is_some() { vec![T::zero(); xs.numel()] } else { Vec::new() };
    let mut gw = if iw.is_some() { vec![T::zero(); cin * kg] } else { Vec::new() };
    if need_cols {
        for n in 0..xs.n {
            let gcols = im2col(
                &g[n * cout * oh * ow..(n + 1) * cout * oh * ow],
                cout,
                oh,
                ow,
                kh,
                kw,
                stride,
                0,
                xs.h,
                xs.w,
            );
            if ix.is_some() {
                T::gemm(
                    cin,
                    kg,
                    hw_in,
                    wv,
                    false,
                    &gcols,
                    false,
                    T::zero(),
                    &mut gx[n * cin * hw_in..(n + 1) * cin * hw_in],
                );
            }
            if iw.is_some() {
                let xn = &xv[n * cin * hw_in..(n + 1) * cin * hw_in];
                T::gemm(cin, hw_in, kg, xn, false, &gcols, true, T::one(), &mut gw);
            }
        }
    }
    if let Some(i) = ix {
        grads.push((i, gx));
    }
    if let Some(i) = iw {
        grads.push((i, gw));
    }
    if let Some(i) = ib {
        let mut gb = vec![T::zero(); cout];
        for n in 0..xs.n {
            for ch in 0..cout {
                let base = (n * cout + ch) * oh * ow;
                for k in 0..oh * ow {
                    gb[ch] += g[base + k];
                }
            }
        }
        grads.push((i, gb));
    }
    grads
}
