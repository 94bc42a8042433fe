//! The four interchangeable pooling variants.
//!
//! All variants map `(N, C, H, W) → (N, C, H/s, W/s)`, so models can swap
//! them by configuration:
//!
//! * `Normal` — plain max/avg pooling with window == stride.
//! * `Blur` — anti-aliased pooling: (dense max →) Gaussian smoothing →
//!   subsample.
//! * `Lgca` — Gaussian and Laplacian branches concatenated, SE channel
//!   attention, 1×1 conv + ReLU back to C channels, terminal pooling.
//! * `Wadca` — same pipeline with Haar approximate-only / detail-only
//!   reconstructions as the two branches.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::SeParams;
use crate::error::{Error, Result};
use crate::filters::{blur_residual_pair, gaussian_blur, GaussianKernel, PadMode};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Shape, Tape, Tensor};
use crate::wavelet::{approx_recon, detail_recon};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Normal,
    Blur,
    Lgca,
    Wadca,
}

impl PoolKind {
    pub fn needs_params(self) -> bool {
        matches!(self, PoolKind::Lgca | PoolKind::Wadca)
    }

    pub fn all() -> [PoolKind; 4] {
        [PoolKind::Normal, PoolKind::Blur, PoolKind::Lgca, PoolKind::Wadca]
    }

    pub fn label(self) -> &'static str {
        match self {
            PoolKind::Normal => "normal",
            PoolKind::Blur => "blur",
            PoolKind::Lgca => "lgca",
            PoolKind::Wadca => "wadca",
        }
    }
}

/// Pooling applied after the (optional) branch/attention pipeline.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Max,
    Avg,
}

/// Full configuration of one pooling layer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PoolConfig {
    pub kind: PoolKind,
    pub terminal: Terminal,
    pub stride: usize,
    /// Gaussian kernel size for Blur/LGCA branches (2, 3 or 5).
    pub gaussian_size: usize,
    /// SE reduction ratio over the concatenated 2C channels.
    pub se_reduction: usize,
    /// Use random init for the channel-reduction conv instead of the
    /// branch-averaging selection init.
    pub random_reduce_init: bool,
}

impl PoolConfig {
    pub fn new(kind: PoolKind) -> Self {
        PoolConfig {
            kind,
            terminal: Terminal::Max,
            stride: 2,
            gaussian_size: 5,
            se_reduction: 16,
            random_reduce_init: false,
        }
    }

    pub fn with_terminal(mut self, t: Terminal) -> Self {
        self.terminal = t;
        self
    }

    pub fn with_gaussian_size(mut self, s: usize) -> Self {
        self.gaussian_size = s;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument {
                op: "PoolConfig",
                detail: "stride must be positive".into(),
            });
        }
        GaussianKernel::new(self.gaussian_size).map(|_| ())
    }
}

fn terminal_pool<T: Scalar>(x: &Tensor<T>, terminal: Terminal, stride: usize) -> Result<Tensor<T>> {
    match terminal {
        Terminal::Max => x.maxpool2d(stride, stride),
        Terminal::Avg => x.avgpool2d(stride, stride),
    }
}

/// Plain pooling baseline: window == stride.
pub fn normal_pool<T: Scalar>(x: &Tensor<T>, terminal: Terminal, stride: usize) -> Result<Tensor<T>> {
    terminal_pool(x, terminal, stride)
}

/// Anti-aliased pooling. Max terminal: dense max, smooth, subsample;
/// avg terminal: smooth, subsample.
pub fn blur_pool<T: Scalar>(
    x: &Tensor<T>,
    terminal: Terminal,
    stride: usize,
    gaussian_size: usize,
) -> Result<Tensor<T>> {
    let kernel = GaussianKernel::new(gaussian_size)?;
    let smoothed = match terminal {
        Terminal::Max => gaussian_blur(&x.maxpool2d_dense(stride)?, &kernel, PadMode::Reflect)?,
        Terminal::Avg => gaussian_blur(x, &kernel, PadMode::Reflect)?,
    };
    smoothed.subsample(stride)
}

/// Learnable state of one LGCA/WADCA layer over `C` input channels:
/// SE attention across the 2C concatenated branch channels plus a 1×1
/// channel-reduction convolution back to C.
pub struct PoolParams<T: Scalar> {
    channels: usize,
    se: SeParams<T>,
    reduce_w: Arc<Parameter<T>>,
    reduce_b: Arc<Parameter<T>>,
}

impl<T: Scalar> PoolParams<T> {
    pub fn init<R: Rng>(
        prefix: &str,
        channels: usize,
        cfg: &PoolConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::InvalidArgument {
                op: "PoolParams::init",
                detail: "channels must be positive".into(),
            });
        }
        let se = SeParams::init(prefix, 2 * channels, cfg.se_reduction, rng)?;
        let wshape = Shape::new(channels, 2 * channels, 1, 1);
        let reduce_w = if cfg.random_reduce_init {
            Tensor::uniform(wshape, 1.0 / ((2 * channels) as f64).sqrt(), rng)
        } else {
            // selection init: each output channel averages its own low and
            // high branch channel, so the layer starts out reconstructing
            // ≈ x/2 and training perturbs from there
            let mut v = vec![T::zero(); wshape.numel()];
            let half = T::from_f64(0.5);
            for c in 0..channels {
                v[c * 2 * channels + c] = half;
                v[c * 2 * channels + c + channels] = half;
            }
            Tensor::from_vec(wshape, v)?
        };
        Ok(PoolParams {
            channels,
            se,
            reduce_w: Parameter::new(format!("{prefix}.reduce.w"), reduce_w),
            reduce_b: Parameter::new(
                format!("{prefix}.reduce.b"),
                Tensor::zeros(Shape::new(1, channels, 1, 1)),
            ),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn se(&self) -> &SeParams<T> {
        &self.se
    }

    pub fn reduce_weight(&self) -> &Arc<Parameter<T>> {
        &self.reduce_w
    }

    pub fn reduce_bias(&self) -> &Arc<Parameter<T>> {
        &self.reduce_b
    }

    pub fn parameters(&self) -> Vec<Arc<Parameter<T>>> {
        let mut p = self.se.parameters();
        p.push(Arc::clone(&self.reduce_w));
        p.push(Arc::clone(&self.reduce_b));
        p
    }
}

/// Gaussian + Laplacian branches of LGCA, concatenated to 2C channels
/// (low frequencies first). The branches sum back to `x`.
pub fn lgca_branches<T: Scalar>(x: &Tensor<T>, gaussian_size: usize) -> Result<Tensor<T>> {
    let kernel = GaussianKernel::new(gaussian_size)?;
    let (low, high) = blur_residual_pair(x, &kernel, PadMode::Reflect)?;
    low.concat_channels(&high)
}

/// Approximate + detail reconstruction branches of WADCA, concatenated to
/// 2C channels (approximate first). The branches sum back to `x`.
pub fn wadca_branches<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let low = approx_recon(x)?;
    let high = detail_recon(x)?;
    low.concat_channels(&high)
}

/// Shared tail of LGCA/WADCA: attention over the concatenated branches,
/// 1×1 reduction + ReLU back to C channels, terminal pooling.
pub fn attention_reduce<T: Scalar>(
    branches: &Tensor<T>,
    se_w1: &Tensor<T>,
    se_b1: &Tensor<T>,
    se_w2: &Tensor<T>,
    se_b2: &Tensor<T>,
    reduce_w: &Tensor<T>,
    reduce_b: &Tensor<T>,
    terminal: Terminal,
    stride: usize,
) -> Result<Tensor<T>> {
    let attended = crate::attention::se_attend(branches, se_w1, se_b1, se_w2, se_b2)?;
    let reduced = attended.conv2d(reduce_w, Some(reduce_b), 1, 0, 1)?.relu();
    terminal_pool(&reduced, terminal, stride)
}

fn branch_pipeline<T: Scalar>(
    x: &Tensor<T>,
    branches: Tensor<T>,
    params: &PoolParams<T>,
    cfg: &PoolConfig,
    tape: Option<&Tape<T>>,
) -> Result<Tensor<T>> {
    if x.shape().c != params.channels {
        return Err(Error::ShapeMismatch {
            op: "pooling-layer",
            axis: "channel",
            detail: format!(
                "input has {} channels but layer was built for {}",
                x.shape().c,
                params.channels
            ),
        });
    }
    let se = params.se.parameters();
    let [w1, b1, w2, b2] = match tape {
        Some(t) => [
            t.watch_param(&se[0]),
            t.watch_param(&se[1]),
            t.watch_param(&se[2]),
            t.watch_param(&se[3]),
        ],
        None => [se[0].value(), se[1].value(), se[2].value(), se[3].value()],
    };
    let (rw, rb) = match tape {
        Some(t) => (t.watch_param(&params.reduce_w), t.watch_param(&params.reduce_b)),
        None => (params.reduce_w.value(), params.reduce_b.value()),
    };
    attention_reduce(&branches, &w1, &b1, &w2, &b2, &rw, &rb, cfg.terminal, cfg.stride)
}

/// LGCA pooling: Gaussian/Laplacian branch split, attention, reduction,
/// terminal pooling.
pub fn lgca_pool<T: Scalar>(
    x: &Tensor<T>,
    params: &PoolParams<T>,
    cfg: &PoolConfig,
    tape: Option<&Tape<T>>,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let branches = lgca_branches(x, cfg.gaussian_size)?;
    branch_pipeline(x, branches, params, cfg, tape)
}

/// WADCA pooling: Haar approximate/detail reconstruction branches,
/// attention, reduction, terminal pooling.
pub fn wadca_pool<T: Scalar>(
    x: &Tensor<T>,
    params: &PoolParams<T>,
    cfg: &PoolConfig,
    tape: Option<&Tape<T>>,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let branches = wadca_branches(x)?;
    branch_pipeline(x, branches, params, cfg, tape)
}

/// Route to the variant selected by `cfg`. Params must be present exactly
/// when the variant is learnable.
pub fn pool_dispatch<T: Scalar>(
    x: &Tensor<T>,
    cfg: &PoolConfig,
    params: Option<&PoolParams<T>>,
    tape: Option<&Tape<T>>,
) -> Result<Tensor<T>> {
    match (cfg.kind, params) {
        (PoolKind::Normal, None) => normal_pool(x, cfg.terminal, cfg.stride),
        (PoolKind::Blur, None) => blur_pool(x, cfg.terminal, cfg.stride, cfg.gaussian_size),
        (PoolKind::Lgca, Some(p)) => lgca_pool(x, p, cfg, tape),
        (PoolKind::Wadca, Some(p)) => wadca_pool(x, p, cfg, tape),
        (kind, Some(_)) => Err(Error::InvalidArgument {
            op: "pool_dispatch",
            detail: format!("{} pooling takes no parameters", kind.label()),
        }),
        (kind, None) => Err(Error::InvalidArgument {
            op: "pool_dispatch",
            detail: format!("{} pooling requires layer parameters", kind.label()),
        }),
    }
}

/// One pooling layer as used inside a model: configuration plus the
/// learnable state when the variant has any.
pub struct PoolLayer<T: Scalar> {
    cfg: PoolConfig,
    params: Option<PoolParams<T>>,
}

impl<T: Scalar> PoolLayer<T> {
    pub fn new<R: Rng>(prefix: &str, channels: usize, cfg: PoolConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let params = if cfg.kind.needs_params() {
            Some(PoolParams::init(prefix, channels, &cfg, rng)?)
        } else {
            None
        };
        Ok(PoolLayer { cfg, params })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.cfg
    }

    pub fn params(&self) -> Option<&PoolParams<T>> {
        self.params.as_ref()
    }

    pub fn parameters(&self) -> Vec<Arc<Parameter<T>>> {
        self.params.as_ref().map(|p| p.parameters()).unwrap_or_default()
    }

    pub fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        pool_dispatch(x, &self.cfg, self.params.as_ref(), tape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape, 1.0, &mut rng)
    }

    #[test]
    fn all_variants_share_the_output_shape_contract() {
        let x = random(Shape::new(1, 4, 8, 8), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in PoolKind::all() {
            let cfg = PoolConfig::new(kind);
            let layer = PoolLayer::new("t", 4, cfg, &mut rng).unwrap();
            let y = layer.forward(&x, None).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 4, 4, 4), "{}", kind.label());
        }
    }

    #[test]
    fn normal_pool_is_exactly_maxpool() {
        let x = random(Shape::new(2, 3, 6, 6), 3);
        let a = normal_pool(&x, Terminal::Max, 2).unwrap();
        let b = x.maxpool2d(2, 2).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn dispatch_equals_direct_call() {
        let x = random(Shape::new(1, 2, 8, 8), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = PoolConfig::new(PoolKind::Lgca);
        let params = PoolParams::init("t", 2, &cfg, &mut rng).unwrap();
        let a = pool_dispatch(&x, &cfg, Some(&params), None).unwrap();
        let b = lgca_pool(&x, &params, &cfg, None).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn dispatch_rejects_missing_or_extra_params() {
        let x = random(Shape::new(1, 2, 4, 4), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lgca = PoolConfig::new(PoolKind::Lgca);
        assert!(pool_dispatch::<f64>(&x, &lgca, None, None).is_err());
        let params = PoolParams::init("t", 2, &lgca, &mut rng).unwrap();
        let normal = PoolConfig::new(PoolKind::Normal);
        assert!(pool_dispatch(&x, &normal, Some(&params), None).is_err());
    }

    #[test]
    fn blur_pool_keeps_constant_images_constant_under_avg_terminal() {
        let x = Tensor::<f64>::full(Shape::new(1, 2, 8, 8), 0.42);
        let y = blur_pool(&x, Terminal::Avg, 2, 5).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 4));
        for v in y.values() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn lgca_branches_sum_bit_exactly_before_attention() {
        // dyadic-grid data, the resolution real 8-bit images arrive at
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..2 * 3 * 64)
            .map(|_| f64::from(rng.gen_range(0u16..=255)) / 256.0)
            .collect();
        let x = Tensor::from_vec(Shape::new(2, 3, 8, 8), v).unwrap();
        let kernel = GaussianKernel::new(5).unwrap();
        let (low, high) = blur_residual_pair(&x, &kernel, PadMode::Reflect).unwrap();
        let sum = low.add(&high).unwrap();
        assert_eq!(sum.values(), x.values());
    }

    #[test]
    fn wadca_branches_sum_to_input() {
        let x = random(Shape::new(2, 3, 8, 8), 9);
        let a = approx_recon(&x).unwrap();
        let d = detail_recon(&x).unwrap();
        let sum = a.add(&d).unwrap();
        for (s, v) in sum.values().iter().zip(x.values().iter()) {
            assert!((s - v).abs() < 1e-10);
        }
    }

    #[test]
    fn constructed_selection_reproduces_blur_pooling() {
        // SE pushed to ≈1 via +20 bias, reduction picks the Gaussian half:
        // the layer collapses to "blur then average pool", which equals
        // blur pooling with the next binomial size under an avg terminal.
        let channels = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = PoolConfig::new(PoolKind::Lgca)
            .with_terminal(Terminal::Avg)
            .with_gaussian_size(2);
        let params = PoolParams::init("t", channels, &cfg, &mut rng).unwrap();

        let se = params.se().parameters();
        se[2].set_value(&Tensor::zeros(se[2].shape())).unwrap(); // w2 = 0
        se[3].set_value(&Tensor::full(se[3].shape(), 20.0)).unwrap(); // b2 = +20
        let mut w = vec![0.0; channels * 2 * channels];
        for c in 0..channels {
            w[c * 2 * channels + c] = 1.0; // unit weight on the Gaussian half
        }
        params
            .reduce_w
            .set_value(&Tensor::from_vec(Shape::new(channels, 2 * channels, 1, 1), w).unwrap())
            .unwrap();

        // non-negative input so the ReLU after reduction is transparent
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..channels * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = Tensor::from_vec(Shape::new(1, channels, 8, 8), v).unwrap();

        let layer_out = lgca_pool(&x, &params, &cfg, None).unwrap();
        let blur_out = blur_pool(&x, Terminal::Avg, 2, 3).unwrap();
        for (a, b) in layer_out.values().iter().zip(blur_out.values().iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }


    #[test]
    fn channel_mismatch_is_rejected_with_stage_name() {
        let x = random(Shape::new(1, 3, 8, 8), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = PoolConfig::new(PoolKind::Wadca);
        let params = PoolParams::init("t", 4, &cfg, &mut rng).unwrap();
        match wadca_pool(&x, &params, &cfg, None) {
            Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "pooling-layer"),
            other => panic!("expected stage-named mismatch, got {other:?}"),
        }
    }

    #[test]
    fn impulse_shift_distance_is_smaller_under_blur_pooling_on_crossing_pairs() {
        // shifting an impulse across a pooling-cell boundary flips max
        // pooling's output; blur pooling changes smoothly
        let shape = Shape::new(1, 1, 8, 8);
        let impulse = |i: usize, j: usize| {
            let mut v = vec![0.0f64; 64];
            v[i * 8 + j] = 1.0;
            Tensor::from_vec(shape, v).unwrap()
        };
        let l2 = |a: &Tensor<f64>, b: &Tensor<f64>| {
            a.values()
                .iter()
                .zip(b.values().iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        for i in 1..7 {
            for j in (1..6).step_by(2) {
                // j odd: (i,j) and (i,j+1) land in different 2x2 cells
                let (a, b) = (impulse(i, j), impulse(i, j + 1));
                let db = l2(
                    &blur_pool(&a, Terminal::Max, 2, 5).unwrap(),
                    &blur_pool(&b, Terminal::Max, 2, 5).unwrap(),
                );
                let dm = l2(
                    &a.maxpool2d(2, 2).unwrap(),
                    &b.maxpool2d(2, 2).unwrap(),
                );
                assert!(db <= dm, "impulse at ({i},{j}): blur {db} vs max {dm}");
            }
        }
    }
}
