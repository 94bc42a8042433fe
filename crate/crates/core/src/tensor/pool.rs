//! Spatial pooling primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::record_op;
use super::{Shape, Tensor};

fn check_window<T: Scalar>(op: &'static str, x: &Tensor<T>, k: usize, stride: usize) -> Result<()> {
    let s = x.shape();
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument {
            op,
            detail: "window and stride must be positive".into(),
        });
    }
    if k > s.h || k > s.w {
        return Err(Error::InvalidArgument {
            op,
            detail: format!("window {k}x{k} larger than input {}x{}", s.h, s.w),
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Max over k×k windows at the given stride, no padding. Gradient flows
    /// to the first maximal element of each window in row-major order.
    pub fn maxpool2d(&self, k: usize, stride: usize) -> Result<Tensor<T>> {
        check_window("maxpool2d", self, k, stride)?;
        let s = self.shape();
        let oh = (s.h - k) / stride + 1;
        let ow = (s.w - k) / stride + 1;
        let out_shape = Shape::new(s.n, s.c, oh, ow);

        let xv = self.values();
        let mut out = vec![T::zero(); out_shape.numel()];
        let mut argmax = vec![0usize; out_shape.numel()];
        let mut oi = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = (n * s.c + c) * s.h * s.w;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_at = 0usize;
                        for u in 0..k {
                            let row = plane + (i * stride + u) * s.w + j * stride;
                            for v in 0..k {
                                let val = xv[row + v];
                                if val > best {
                                    best = val;
                                    best_at = row + v;
                                }
                            }
                        }
                        out[oi] = best;
                        argmax[oi] = best_at;
                        oi += 1;
                    }
                }
            }
        }

        let numel = s.numel();
        record_op(
            "maxpool2d",
            Tensor::from_vec(out_shape, out)?,
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let mut gx = vec![T::zero(); numel];
                    for (gi, &src) in g.iter().zip(argmax.iter()) {
                        gx[src] += *gi;
                    }
                    vec![(ix, gx)]
                })
            },
        )
    }

    /// Mean over k×k windows at the given stride, no padding.
    pub fn avgpool2d(&self, k: usize, stride: usize) -> Result<Tensor<T>> {
        check_window("avgpool2d", self, k, stride)?;
        let s = self.shape();
        let oh = (s.h - k) / stride + 1;
        let ow = (s.w - k) / stride + 1;
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let inv = T::one() / T::from_f64((k * k) as f64);

        let xv = self.values();
        let mut out = vec![T::zero(); out_shape.numel()];
        let mut oi = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = (n * s.c + c) * s.h * s.w;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = T::zero();
                        for u in 0..k {
                            let row = plane + (i * stride + u) * s.w + j * stride;
                            for v in 0..k {
                                acc += xv[row + v];
                            }
                        }
                        out[oi] = acc * inv;
                        oi += 1;
                    }
                }
            }
        }

        record_op(
            "avgpool2d",
            Tensor::from_vec(out_shape, out)?,
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let mut gx = vec![T::zero(); s.numel()];
                    let mut gi = 0;
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let plane = (n * s.c + c) * s.h * s.w;
                            for i in 0..oh {
                                for j in 0..ow {
                                    let gv = g[gi] * inv;
                                    gi += 1;
                                    for u in 0..k {
                                        let row = plane + (i * stride + u) * s.w + j * stride;
                                        for v in 0..k {
                                            gx[row + v] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    vec![(ix, gx)]
                })
            },
        )
    }

    /// Spatial mean per channel: `(N, C, H, W) → (N, C, 1, 1)`.
    pub fn global_avg_pool(&self) -> Tensor<T> {
        let s = self.shape();
        let hw = s.h * s.w;
        let inv = T::one() / T::from_f64(hw as f64);
        let xv = self.values();
        let mut out = vec![T::zero(); s.n * s.c];
        for (nc, o) in out.iter_mut().enumerate() {
            let base = nc * hw;
            let mut acc = T::zero();
            for k in 0..hw {
                acc += xv[base + k];
            }
            *o = acc * inv;
        }
        record_op(
            "global_avg_pool",
            Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out).expect("gap shape"),
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let mut gx = vec![T::zero(); s.numel()];
                    for (nc, &gv) in g.iter().enumerate() {
                        let gvs = gv * inv;
                        let base = nc * hw;
                        for k in 0..hw {
                            gx[base + k] = gvs;
                        }
                    }
                    vec![(ix, gx)]
                })
            },
        )
        .expect("gap is single-input")
    }

    /// Dense (stride-1) max over k×k windows, size preserving: windows are
    /// truncated at the bottom/right edges. First stage of max-terminal
    /// blur pooling.
    pub fn maxpool2d_dense(&self, k: usize) -> Result<Tensor<T>> {
        check_window("maxpool2d_dense", self, k, 1)?;
        let s = self.shape();
        let xv = self.values();
        let mut out = vec![T::zero(); s.numel()];
        let mut argmax = vec![0usize; s.numel()];
        let mut oi = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = (n * s.c + c) * s.h * s.w;
                for i in 0..s.h {
                    let uend = k.min(s.h - i);
                    for j in 0..s.w {
                        let vend = k.min(s.w - j);
                        let mut best = T::neg_infinity();
                        let mut best_at = 0usize;
                        for u in 0..uend {
                            let row = plane + (i + u) * s.w + j;
                            for v in 0..vend {
                                let val = xv[row + v];
                                if val > best {
                                    best = val;
                                    best_at = row + v;
                                }
                            }
                        }
                        out[oi] = best;
                        argmax[oi] = best_at;
                        oi += 1;
                    }
                }
            }
        }
        record_op(
            "maxpool2d_dense",
            Tensor::from_vec(s, out)?,
            &[self],
            |ids| {
                let ix = ids[0];
                let numel = s.numel();
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let mut gx = vec![T::zero(); numel];
                    for (gi, &src) in g.iter().zip(argmax.iter()) {
                        gx[src] += *gi;
                    }
                    vec![(ix, gx)]
                })
            },
        )
    }

    /// Pick every `stride`-th pixel starting at (0, 0); output spatial dims
    /// are `⌊H/s⌋ × ⌊W/s⌋` so it composes with the k == s pooling ops.
    pub fn subsample(&self, stride: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if stride == 0 || stride > s.h || stride > s.w {
            return Err(Error::InvalidArgument {
                op: "subsample",
                detail: format!("stride {stride} invalid for input {}x{}", s.h, s.w),
            });
        }
        let oh = s.h / stride;
        let ow = s.w / stride;
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let xv = self.values();
        let mut out = vec![T::zero(); out_shape.numel()];
        let mut oi = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = (n * s.c + c) * s.h * s.w;
                for i in 0..oh {
                    let row = plane + i * stride * s.w;
                    for j in 0..ow {
                        out[oi] = xv[row + j * stride];
                        oi += 1;
                    }
                }
            }
        }
        record_op(
            "subsample",
            Tensor::from_vec(out_shape, out)?,
            &[self],
            |ids| {
                let ix = ids[0];
                Box::new(move |g| {
                    let Some(ix) = ix else { return vec![] };
                    let mut gx = vec![T::zero(); s.numel()];
                    let mut gi = 0;
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let plane = (n * s.c + c) * s.h * s.w;
                            for i in 0..oh {
                                let row = plane + i * stride * s.w;
                                for j in 0..ow {
                                    gx[row + j * stride] = g[gi];
                                    gi += 1;
                                }
                            }
                        }
                    }
                    vec![(ix, gx)]
                })
            },
        )
    }
}
