//! Affine map over flattened features.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::record_op;
use super::{Shape, Tensor};

impl<T: Scalar> Tensor<T> {
    /// `y = x·Wᵀ + b` where `x` is `(N, Din)` (trailing axes flattened),
    /// `W` is `(Dout, Din, 1, 1)` and `b` is `(1, Dout, 1, 1)`.
    /// Output shape `(N, Dout, 1, 1)`.
    pub fn fully_connected(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let din = xs.c * xs.h * xs.w;
        let (dout, wdin) = (ws.n, ws.c * ws.h * ws.w);
        if wdin != din {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                axis: "channel",
                detail: format!("input features {din} vs weight features {wdin}"),
            });
        }
        if let Some(b) = bias {
            if b.shape() != Shape::new(1, dout, 1, 1) {
                return Err(Error::ShapeMismatch {
                    op: "fully_connected",
                    axis: "channel",
                    detail: format!("bias must be (1,{dout},1,1), got {}", b.shape()),
                });
            }
        }

        let n = xs.n;
        let mut out = vec![T::zero(); n * dout];
        // out (n×dout) = x (n×din) · Wᵀ (din×dout)
        T::gemm(n, din, dout, self.values(), false, weight.values(), true, T::zero(), &mut out);
        if let Some(b) = bias {
            let bv = b.values();
            for r in 0..n {
                for c in 0..dout {
                    out[r * dout + c] += bv[c];
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
            "fully_connected",
            Tensor::from_vec(Shape::new(n, dout, 1, 1), out)?,
            &inputs,
            |ids| {
                let ix = ids[0];
                let iw = ids[1];
                let ib = ids.get(2).copied().flatten();
                Box::new(move |g| {
                    let mut grads = Vec::new();
                    if let Some(i) = ix {
                        // gx (n×din) = g (n×dout) · W (dout×din)
                        let mut gx = vec![T::zero(); n * din];
                        T::gemm(n, dout, din, g, false, &wv, false, T::zero(), &mut gx);
                        grads.push((i, gx));
                    }
                    if let Some(i) = iw {
                        // gw (dout×din) = gᵀ (dout×n) · x (n×din)
                        let mut gw = vec![T::zero(); dout * din];
                        T::gemm(dout, n, din, g, true, &xv, false, T::zero(), &mut gw);
                        grads.push((i, gw));
                    }
                    if let Some(i) = ib {
                        let mut gb = vec![T::zero(); dout];
                        for r in 0..n {
                            for c in 0..dout {
                                gb[c] += g[r * dout + c];
                            }
                        }
                        grads.push((i, gb));
                    }
                    grads
                })
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let x = Tensor::<f64>::from_vec(Shape::new(2, 3, 1, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let w = Tensor::from_vec(
            Shape::new(3, 3, 1, 1),
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        let y = x.fully_connected(&w, Some(&b)).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn zero_weight_broadcasts_bias() {
        let x = Tensor::<f64>::ones(Shape::new(2, 4, 1, 1));
        let w = Tensor::zeros(Shape::new(3, 4, 1, 1));
        let b = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![7.0, 8.0, 9.0]).unwrap();
        let y = x.fully_connected(&w, Some(&b)).unwrap();
        assert_eq!(y.values(), &[7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn rejects_feature_mismatch() {
        let x = Tensor::<f64>::ones(Shape::new(1, 4, 1, 1));
        let w = Tensor::ones(Shape::new(2, 3, 1, 1));
        assert!(x.fully_connected(&w, None).is_err());
    }
}
