//! Squeeze-and-excitation channel attention: global average pool to a
//! per-channel embedding, a two-layer bottleneck MLP, sigmoid weights,
//! then per-channel rescaling of the input.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Shape, Tape, Tensor};

/// Attention weights from explicit weight tensors; `(N, C, 1, 1)` in (0,1).
///
/// `w1` is `(B, C, 1, 1)`, `b1` `(1, B, 1, 1)`, `w2` `(C, B, 1, 1)`,
/// `b2` `(1, C, 1, 1)` with `B` the bottleneck width.
pub fn se_attention_weights<T: Scalar>(
    x: &Tensor<T>,
    w1: &Tensor<T>,
    b1: &Tensor<T>,
    w2: &Tensor<T>,
    b2: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = x.shape().c;
    if w1.shape().c != c || w2.shape().n != c {
        return Err(Error::ShapeMismatch {
            op: "se_attention",
            axis: "channel",
            detail: format!(
                "input has {} channels; w1 is {}, w2 is {}",
                c,
                w1.shape(),
                w2.shape()
            ),
        });
    }
    let squeezed = x.global_avg_pool();
    let hidden = squeezed.fully_connected(w1, Some(b1))?.relu();
    Ok(hidden.fully_connected(w2, Some(b2))?.sigmoid())
}

/// Apply SE attention: `x` rescaled per channel by its attention weights.
pub fn se_attend<T: Scalar>(
    x: &Tensor<T>,
    w1: &Tensor<T>,
    b1: &Tensor<T>,
    w2: &Tensor<T>,
    b2: &Tensor<T>,
) -> Result<Tensor<T>> {
    let weights = se_attention_weights(x, w1, b1, w2, b2)?;
    x.mul_channelwise(&weights)
}

/// Learnable state of one SE block.
pub struct SeParams<T: Scalar> {
    channels: usize,
    bottleneck: usize,
    w1: Arc<Parameter<T>>,
    b1: Arc<Parameter<T>>,
    w2: Arc<Parameter<T>>,
    b2: Arc<Parameter<T>>,
}

impl<T: Scalar> SeParams<T> {
    /// Fresh block over `channels` with reduction ratio `reduction`;
    /// bottleneck width is clamped to at least 1. Weights are uniform
    /// ±1/√fan_in, biases zero, giving near-0.5 initial attention weights.
    pub fn init<R: Rng>(
        prefix: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::InvalidArgument {
                op: "SeParams::init",
                detail: "channels and reduction must be positive".into(),
            });
        }
        let bottleneck = (channels / reduction).max(1);
        let bound1 = 1.0 / (channels as f64).sqrt();
        let bound2 = 1.0 / (bottleneck as f64).sqrt();
        Ok(SeParams {
            channels,
            bottleneck,
            w1: Parameter::new(
                format!("{prefix}.se.w1"),
                Tensor::uniform(Shape::new(bottleneck, channels, 1, 1), bound1, rng),
            ),
            b1: Parameter::new(
                format!("{prefix}.se.b1"),
                Tensor::zeros(Shape::new(1, bottleneck, 1, 1)),
            ),
            w2: Parameter::new(
                format!("{prefix}.se.w2"),
                Tensor::uniform(Shape::new(channels, bottleneck, 1, 1), bound2, rng),
            ),
            b2: Parameter::new(
                format!("{prefix}.se.b2"),
                Tensor::zeros(Shape::new(1, channels, 1, 1)),
            ),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bottleneck(&self) -> usize {
        self.bottleneck
    }

    pub fn parameters(&self) -> Vec<Arc<Parameter<T>>> {
        vec![
            Arc::clone(&self.w1),
            Arc::clone(&self.b1),
            Arc::clone(&self.w2),
            Arc::clone(&self.b2),
        ]
    }

    fn tensors(&self, tape: Option<&Tape<T>>) -> [Tensor<T>; 4] {
        match tape {
            Some(t) => [
                t.watch_param(&self.w1),
                t.watch_param(&self.b1),
                t.watch_param(&self.w2),
                t.watch_param(&self.b2),
            ],
            None => [
                self.w1.value(),
                self.b1.value(),
                self.w2.value(),
                self.b2.value(),
            ],
        }
    }

    /// Attention weights for `x` under the current parameters.
    pub fn weights(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let [w1, b1, w2, b2] = self.tensors(tape);
        se_attention_weights(x, &w1, &b1, &w2, &b2)
    }

    /// Attention-weighted `x`.
    pub fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let [w1, b1, w2, b2] = self.tensors(tape);
        se_attend(x, &w1, &b1, &w2, &b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(channels: usize, reduction: usize, seed: u64) -> SeParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SeParams::init("t", channels, reduction, &mut rng).unwrap()
    }

    #[test]
    fn bottleneck_is_clamped_to_one() {
        let p = params(4, 16, 0);
        assert_eq!(p.bottleneck(), 1);
        let p = params(32, 16, 0);
        assert_eq!(p.bottleneck(), 2);
    }

    #[test]
    fn zero_excitation_weights_halve_the_input() {
        // zero w2/b2 force sigmoid(0) = 0.5 exactly
        let p = params(3, 1, 1);
        p.w2.set_value(&Tensor::zeros(p.w2.shape())).unwrap();
        p.b2.set_value(&Tensor::zeros(p.b2.shape())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        let y = p.forward(&x, None).unwrap();
        for (yi, xi) in y.values().iter().zip(x.values().iter()) {
            assert_eq!(*yi, xi * 0.5);
        }
    }

    #[test]
    fn weights_lie_strictly_inside_unit_interval() {
        let p = params(8, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::uniform(Shape::new(2, 8, 4, 4), 2.0, &mut rng);
        let w = p.weights(&x, None).unwrap();
        assert_eq!(w.shape(), Shape::new(2, 8, 1, 1));
        for v in w.values() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn forward_equals_channelwise_scaling_bitwise() {
        let p = params(6, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::uniform(Shape::new(1, 6, 3, 3), 1.0, &mut rng);
        let w = p.weights(&x, None).unwrap();
        let y = p.forward(&x, None).unwrap();
        let z = x.mul_channelwise(&w).unwrap();
        assert_eq!(y.values(), z.values());
    }

    #[test]
    fn identical_planes_with_symmetric_weights_get_equal_attention() {
        // both channels see the same plane and the same excitation weights
        let p = params(2, 1, 7);
        let bn = p.bottleneck();
        p.w1.set_value(&Tensor::full(Shape::new(bn, 2, 1, 1), 0.3)).unwrap();
        p.w2.set_value(&Tensor::full(Shape::new(2, bn, 1, 1), 0.2)).unwrap();
        let plane: Vec<f64> = (0..9).map(|i| f64::from(i) * 0.1).collect();
        let mut v = plane.clone();
        v.extend_from_slice(&plane);
        let x = Tensor::from_vec(Shape::new(1, 2, 3, 3), v).unwrap();
        let w = p.weights(&x, None).unwrap();
        assert_eq!(w.values()[0], w.values()[1]);
    }

    #[test]
    fn weights_are_invariant_to_spatial_permutation() {
        let p = params(3, 1, 8);
        let v: Vec<f64> = (0..27).map(|i| f64::from(i) * 0.07 - 0.9).collect();
        let x = Tensor::from_vec(Shape::new(1, 3, 3, 3), v.clone()).unwrap();
        // reverse every channel plane: same multiset of values
        let mut vp = v;
        for c in 0..3 {
            vp[c * 9..(c + 1) * 9].reverse();
        }
        let xp = Tensor::from_vec(Shape::new(1, 3, 3, 3), vp).unwrap();
        let w = p.weights(&x, None).unwrap();
        let wp = p.weights(&xp, None).unwrap();
        assert_eq!(w.values(), wp.values());
    }

    #[test]
    fn hand_computed_two_channel_case() {
        // r = 1 so the bottleneck is the channel count; set explicit weights
        // and check against a direct evaluation with plain arithmetic.
        let p = params(2, 1, 9);
        p.w1.set_value(
            &Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![0.5, -0.25, 0.1, 0.3]).unwrap(),
        )
        .unwrap();
        p.b1.set_value(&Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.05, -0.02]).unwrap())
            .unwrap();
        p.w2.set_value(
            &Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![0.7, -0.6, 0.2, 0.9]).unwrap(),
        )
        .unwrap();
        p.b2.set_value(&Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.01, -0.03]).unwrap())
            .unwrap();

        // channel means: 1.5 and -0.5
        let x = Tensor::from_vec(
            Shape::new(1, 2, 1, 2),
            vec![1.0, 2.0, -1.0, 0.0],
        )
        .unwrap();

        let (m0, m1) = (1.5, -0.5);
        let h0 = (0.5 * m0 - 0.25 * m1 + 0.05_f64).max(0.0);
        let h1 = (0.1 * m0 + 0.3 * m1 - 0.02_f64).max(0.0);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let e0 = sig(0.7 * h0 - 0.6 * h1 + 0.01);
        let e1 = sig(0.2 * h0 + 0.9 * h1 - 0.03);

        let w = p.weights(&x, None).unwrap();
        assert!((w.values()[0] - e0).abs() < 1e-12);
        assert!((w.values()[1] - e1).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = params(4, 2, 10);
        let x = Tensor::<f64>::ones(Shape::new(1, 3, 2, 2));
        assert!(p.forward(&x, None).is_err());
    }
}
