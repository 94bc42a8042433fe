//! Elementwise and channel-structured primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::record_op;
use super::{check_same_shape, Shape, Tensor};

impl<T: Scalar> Tensor<T> {
    pub fn relu(&self) -> Tensor<T> {
        let out: Vec<T> = self
            .values()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let xv = self.values_arc();
        record_op(
            "relu",
            Tensor::from_vec(self.shape(), out).expect("relu shape"),
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let gx = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    vec![(ix, gx)]
                })
            },
        )
        .expect("relu is single-input")
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let half = T::from_f64(0.5);
        // tanh-based form is stable for large |x| in both directions
        let out: Vec<T> = self
            .values()
            .iter()
            .map(|&v| half * ((half * v).tanh() + T::one()))
            .collect();
        let yv: std::sync::Arc<Vec<T>> = std::sync::Arc::new(out.clone());
        record_op(
            "sigmoid",
            Tensor::from_vec(self.shape(), out).expect("sigmoid shape"),
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let gx = g
                        .iter()
                        .zip(yv.iter())
                        .map(|(&gv, &y)| gv * y * (T::one() - y))
                        .collect();
                    vec![(ix, gx)]
                })
            },
        )
        .expect("sigmoid is single-input")
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_same_shape("add", self, other)?;
        let out: Vec<T> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        record_op(
            "add",
            Tensor::from_vec(self.shape(), out)?,
            &[self, other],
            |ids| {
                let (ia, ib) = (ids[0], ids[1]);
                Box::new(move |g| {
                    let mut v = Vec::new();
                    if let Some(i) = ia {
                        v.push((i, g.to_vec()));
                    }
                    if let Some(i) = ib {
                        v.push((i, g.to_vec()));
                    }
                    v
                })
            },
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_same_shape("sub", self, other)?;
        let out: Vec<T> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        record_op(
            "sub",
            Tensor::from_vec(self.shape(), out)?,
            &[self, other],
            |ids| {
                let (ia, ib) = (ids[0], ids[1]);
                Box::new(move |g| {
                    let mut v = Vec::new();
                    if let Some(i) = ia {
                        v.push((i, g.to_vec()));
                    }
                    if let Some(i) = ib {
                        v.push((i, g.iter().map(|&x| -x).collect()));
                    }
                    v
                })
            },
        )
    }

    /// Elementwise product (same shapes).
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_same_shape("mul", self, other)?;
        let out: Vec<T> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let (av, bv) = (self.values_arc(), other.values_arc());
        record_op(
            "mul",
            Tensor::from_vec(self.shape(), out)?,
            &[self, other],
            |ids| {
                let (ia, ib) = (ids[0], ids[1]);
                Box::new(move |g| {
                    let mut v = Vec::new();
                    if let Some(i) = ia {
                        v.push((i, g.iter().zip(bv.iter()).map(|(&gv, &b)| gv * b).collect()));
                    }
                    if let Some(i) = ib {
                        v.push((i, g.iter().zip(av.iter()).map(|(&gv, &a)| gv * a).collect()));
                    }
                    v
                })
            },
        )
    }

    /// Multiply by a constant (not differentiated w.r.t. the constant).
    pub fn scale(&self, s: T) -> Tensor<T> {
        let out: Vec<T> = self.values().iter().map(|&v| v * s).collect();
        record_op(
            "scale",
            Tensor::from_vec(self.shape(), out).expect("scale shape"),
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    vec![(ix, g.iter().map(|&gv| gv * s).collect())]
                })
            },
        )
        .expect("scale is single-input")
    }

    /// Scale every (H×W) plane of channel `c` by `w[n, c]`. The weight
    /// tensor has shape `(N, C, 1, 1)` or `(1, C, 1, 1)` (broadcast over
    /// the batch).
    pub fn mul_channelwise(&self, weights: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.shape();
        let ws = weights.shape();
        if ws.c != s.c {
            return Err(Error::ShapeMismatch {
                op: "mul_channelwise",
                axis: "channel",
                detail: format!("input {} vs weights {}", s, ws),
            });
        }
        if ws.h != 1 || ws.w != 1 || (ws.n != s.n && ws.n != 1) {
            return Err(Error::ShapeMismatch {
                op: "mul_channelwise",
                axis: "batch",
                detail: format!("weights must be (N,C,1,1) or (1,C,1,1), got {}", ws),
            });
        }

        let hw = s.h * s.w;
        let xv = self.values();
        let wv = weights.values();
        let mut out = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            let wn = if ws.n == 1 { 0 } else { n };
            for c in 0..s.c {
                let wval = wv[wn * s.c + c];
                let base = (n * s.c + c) * hw;
                for k in 0..hw {
                    out[base + k] = xv[base + k] * wval;
                }
            }
        }

        let xv = self.values_arc();
        let wv = weights.values_arc();
        record_op(
            "mul_channelwise",
            Tensor::from_vec(s, out)?,
            &[self, weights],
            |ids| {
                let (ix, iw) = (ids[0], ids[1]);
                Box::new(move |g| {
                    let mut v = Vec::new();
                    if let Some(i) = ix {
                        let mut gx = vec![T::zero(); s.numel()];
                        for n in 0..s.n {
                            let wn = if ws.n == 1 { 0 } else { n };
                            for c in 0..s.c {
                                let wval = wv[wn * s.c + c];
                                let base = (n * s.c + c) * hw;
                                for k in 0..hw {
                                    gx[base + k] = g[base + k] * wval;
                                }
                            }
                        }
                        v.push((i, gx));
                    }
                    if let Some(i) = iw {
                        let mut gw = vec![T::zero(); ws.numel()];
                        for n in 0..s.n {
                            let wn = if ws.n == 1 { 0 } else { n };
                            for c in 0..s.c {
                                let base = (n * s.c + c) * hw;
                                let mut acc = T::zero();
                                for k in 0..hw {
                                    acc += g[base + k] * xv[base + k];
                                }
                                gw[wn * s.c + c] += acc;
                            }
                        }
                        v.push((i, gw));
                    }
                    v
                })
            },
        )
    }

    /// Stack `self` and `other` along the channel axis (`self` first).
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        for (axis, ok) in [
            ("batch", sa.n == sb.n),
            ("height", sa.h == sb.h),
            ("width", sa.w == sb.w),
        ] {
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    axis,
                    detail: format!("{sa} vs {sb}"),
                });
            }
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let hw = sa.h * sa.w;
        let (ca, cb) = (sa.c, sb.c);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            out.extend_from_slice(&self.values()[n * ca * hw..(n + 1) * ca * hw]);
            out.extend_from_slice(&other.values()[n * cb * hw..(n + 1) * cb * hw]);
        }
        record_op(
            "concat_channels",
            Tensor::from_vec(out_shape, out)?,
            &[self, other],
            |ids| {
                let (ia, ib) = (ids[0], ids[1]);
                let batch = sa.n;
                Box::new(move |g| {
                    let stride = (ca + cb) * hw;
                    let mut v = Vec::new();
                    if let Some(i) = ia {
                        let mut ga = Vec::with_capacity(batch * ca * hw);
                        for n in 0..batch {
                            ga.extend_from_slice(&g[n * stride..n * stride + ca * hw]);
                        }
                        v.push((i, ga));
                    }
                    if let Some(i) = ib {
                        let mut gb = Vec::with_capacity(batch * cb * hw);
                        for n in 0..batch {
                            gb.extend_from_slice(&g[n * stride + ca * hw..(n + 1) * stride]);
                        }
                        v.push((i, gb));
                    }
                    v
                })
            },
        )
    }

    /// Channels `[start, start+len)` of `self`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if start + len > s.c || len == 0 {
            return Err(Error::InvalidArgument {
                op: "slice_channels",
                detail: format!("range {}..{} out of {} channels", start, start + len, s.c),
            });
        }
        let hw = s.h * s.w;
        let out_shape = Shape::new(s.n, len, s.h, s.w);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            let base = (n * s.c + start) * hw;
            out.extend_from_slice(&self.values()[base..base + len * hw]);
        }
        record_op(
            "slice_channels",
            Tensor::from_vec(out_shape, out)?,
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let mut gx = vec![T::zero(); s.numel()];
                    for n in 0..s.n {
                        let src = n * len * hw;
                        let dst = (n * s.c + start) * hw;
                        gx[dst..dst + len * hw].copy_from_slice(&g[src..src + len * hw]);
                    }
                    vec![(ix, gx)]
                })
            },
        )
    }

    /// Sum of all elements as a scalar tensor (differentiable); the usual
    /// way to reduce a tensor output to a checkable scalar.
    pub fn sum_all(&self) -> Tensor<T> {
        let total = self.values().iter().fold(T::zero(), |a, &b| a + b);
        let shape = self.shape();
        record_op(
            "sum_all",
            Tensor::scalar(total),
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    vec![(ix, vec![g[0]; shape.numel()])]
                })
            },
        )
        .expect("sum_all is single-input")
    }
}
