//! Finite-difference verification of every differentiable operator.
//!
//! Each check builds a scalar function of a flat probe vector two ways:
//! through the tape (analytic gradients) and through central differences
//! on the plain forward pass (the independent oracle). The reported error
//! is `max_i |a_i − n_i|` normalized by the largest gradient magnitude, so
//! dead coordinates (ReLU off, non-argmax) don't inflate the score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::se_attend;
use crate::error::Result;
use crate::pooling::{attention_reduce, blur_pool, lgca_branches, normal_pool, wadca_branches, PoolKind, Terminal};
use crate::tensor::{mse_loss, softmax_cross_entropy, Shape, Tape, Tensor};
use crate::wavelet::{approx_recon, detail_recon, dwt2, idwt2, WaveletCoeffs};

/// Central-difference step used by every check.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the normalized max error.
pub const TOLERANCE: f64 = 1e-4;

/// Which registered checks to run.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scope {
    /// Tensor-level primitives.
    Ops,
    /// Composed blocks: SE attention and the four pooling layers.
    Layers,
    All,
}

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Central finite differences of a scalar function at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Compare tape gradients against the numeric oracle for a tensor-valued
/// function of several inputs. The output is reduced to a scalar by a
/// fixed random projection so every output coordinate is exercised.
pub fn check_function(
    name: &str,
    shapes: &[Shape],
    seed: u64,
    forward: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<f64> = Vec::new();
    let mut offsets = vec![0usize];
    for s in shapes {
        for _ in 0..s.numel() {
            // keep probes away from ReLU kinks and pooling ties
            let mut v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() < 0.05 {
                v += if v >= 0.0 { 0.07 } else { -0.07 };
            }
            flat.push(v);
        }
        offsets.push(flat.len());
    }

    let build = |flat: &[f64]| -> Vec<Tensor<f64>> {
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Tensor::from_vec(*s, flat[offsets[i]..offsets[i + 1]].to_vec())
                    .expect("probe shape")
            })
            .collect()
    };

    // fixed projection direction, independent of the probe values
    let out_probe = forward(&build(&flat)).expect("forward failed during gradcheck setup");
    let direction: Vec<f64> = (0..out_probe.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let project = Tensor::from_vec(out_probe.shape(), direction).expect("projection shape");

    // analytic gradients
    let tape = Tape::new();
    let tracked: Vec<Tensor<f64>> = build(&flat).iter().map(|t| tape.watch(t)).collect();
    let out = forward(&tracked).expect("forward failed under tape");
    let loss = out.mul(&project).expect("projection").sum_all();
    tape.backward(&loss).expect("backward failed");
    let mut analytic = Vec::with_capacity(flat.len());
    for t in &tracked {
        match tape.grad(t) {
            Some(g) => analytic.extend_from_slice(g.values()),
            None => analytic.extend(std::iter::repeat(0.0).take(t.numel())),
        }
    }

    // numeric oracle
    let numeric = numeric_gradient(
        |probe| {
            let out = forward(&build(probe)).expect("forward failed during probing");
            out.dot(&project)
        },
        &flat,
        STEP,
    );

    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    let max_rel_err = analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale;

    CheckOutcome {
        name: name.to_string(),
        max_rel_err,
        passed: max_rel_err < TOLERANCE,
    }
}

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

fn op_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut push = |o: CheckOutcome| out.push(o);

    // conv2d: plain, strided+padded, grouped
    for (i, (xs, ws, stride, pad, groups)) in [
        (sh(2, 3, 5, 5), sh(4, 3, 3, 3), 1, 0, 1),
        (sh(1, 4, 6, 6), sh(6, 2, 3, 3), 2, 1, 2),
        (sh(2, 2, 4, 4), sh(3, 2, 1, 1), 1, 0, 1),
    ]
    .into_iter()
    .enumerate()
    {
        push(check_function(
            &format!("conv2d[{xs} * {ws} s{stride} p{pad} g{groups}]"),
            &[xs, ws, sh(1, ws.n, 1, 1)],
            seed + i as u64,
            move |t| t[0].conv2d(&t[1], Some(&t[2]), stride, pad, groups),
        ));
    }

    // conv_transpose2d
    for (i, (xs, ws, stride)) in [
        (sh(2, 3, 4, 4), sh(3, 2, 2, 2), 2),
        (sh(1, 2, 3, 3), sh(2, 3, 3, 3), 1),
        (sh(2, 4, 3, 3), sh(4, 2, 2, 2), 3),
    ]
    .into_iter()
    .enumerate()
    {
        push(check_function(
            &format!("conv_transpose2d[{xs} * {ws} s{stride}]"),
            &[xs, ws, sh(1, ws.c, 1, 1)],
            seed + 10 + i as u64,
            move |t| t[0].conv_transpose2d(&t[1], Some(&t[2]), stride),
        ));
    }

    for (i, s) in [sh(2, 3, 4, 4), sh(1, 1, 3, 7), sh(3, 2, 2, 2)].into_iter().enumerate() {
        push(check_function(&format!("relu[{s}]"), &[s], seed + 20 + i as u64, |t| {
            Ok(t[0].relu())
        }));
        push(check_function(&format!("sigmoid[{s}]"), &[s], seed + 23 + i as u64, |t| {
            Ok(t[0].sigmoid())
        }));
        push(check_function(&format!("add[{s}]"), &[s, s], seed + 26 + i as u64, |t| {
            t[0].add(&t[1])
        }));
        push(check_function(&format!("sub[{s}]"), &[s, s], seed + 29 + i as u64, |t| {
            t[0].sub(&t[1])
        }));
        push(check_function(&format!("mul[{s}]"), &[s, s], seed + 32 + i as u64, |t| {
            t[0].mul(&t[1])
        }));
        push(check_function(
            &format!("global_avg_pool[{s}]"),
            &[s],
            seed + 35 + i as u64,
            |t| Ok(t[0].global_avg_pool()),
        ));
    }

    for (i, (xs, wn)) in [
        (sh(2, 3, 4, 4), 2),
        (sh(1, 4, 3, 3), 1),
        (sh(3, 2, 2, 5), 3),
    ]
    .into_iter()
    .enumerate()
    {
        push(check_function(
            &format!("mul_channelwise[{xs}]"),
            &[xs, sh(wn, xs.c, 1, 1)],
            seed + 38 + i as u64,
            |t| t[0].mul_channelwise(&t[1]),
        ));
    }

    for (i, (a, b)) in [
        (sh(2, 2, 3, 3), sh(2, 3, 3, 3)),
        (sh(1, 1, 4, 2), sh(1, 1, 4, 2)),
        (sh(2, 4, 2, 2), sh(2, 1, 2, 2)),
    ]
    .into_iter()
    .enumerate()
    {
        push(check_function(
            &format!("concat_channels[{a}+{b}]"),
            &[a, b],
            seed + 41 + i as u64,
            |t| t[0].concat_channels(&t[1]),
        ));
    }
    push(check_function(
        "slice_channels[2,5,3,3 -> 1..4]",
        &[sh(2, 5, 3, 3)],
        seed + 44,
        |t| t[0].slice_channels(1, 3),
    ));

    for (i, (s, k, stride)) in [
        (sh(2, 2, 6, 6), 2, 2),
        (sh(1, 3, 5, 5), 3, 2),
        (sh(1, 1, 4, 4), 2, 1),
    ]
    .into_iter()
    .enumerate()
    {
        push(check_function(
            &format!("maxpool2d[{s} k{k} s{stride}]"),
            &[s],
            seed + 45 + i as u64,
            move |t| t[0].maxpool2d(k, stride),
        ));
        push(check_function(
            &format!("avgpool2d[{s} k{k} s{stride}]"),
            &[s],
            seed + 48 + i as u64,
            move |t| t[0].avgpool2d(k, stride),
        ));
    }
    push(check_function("maxpool2d_dense[1,2,5,5 k2]", &[sh(1, 2, 5, 5)], seed + 51, |t| {
        t[0].maxpool2d_dense(2)
    }));
    push(check_function("subsample[2,2,6,6 s2]", &[sh(2, 2, 6, 6)], seed + 52, |t| {
        t[0].subsample(2)
    }));

    for (i, (n, din, dout)) in [(3, 5, 4), (1, 2, 6), (4, 3, 2)].into_iter().enumerate() {
        push(check_function(
            &format!("fully_connected[{n}x{din}->{dout}]"),
            &[sh(n, din, 1, 1), sh(dout, din, 1, 1), sh(1, dout, 1, 1)],
            seed + 53 + i as u64,
            |t| t[0].fully_connected(&t[1], Some(&t[2])),
        ));
    }

    for (i, (n, k)) in [(4, 3), (2, 5), (3, 2)].into_iter().enumerate() {
        let labels: Vec<usize> = (0..n).map(|r| r % k).collect();
        push(check_function(
            &format!("softmax_cross_entropy[{n}x{k}]"),
            &[sh(n, k, 1, 1)],
            seed + 56 + i as u64,
            move |t| softmax_cross_entropy(&t[0], &labels),
        ));
    }

    for (i, s) in [sh(2, 3, 4, 4), sh(1, 1, 2, 6), sh(3, 2, 2, 2)].into_iter().enumerate() {
        push(check_function(&format!("mse_loss[{s}]"), &[s, s], seed + 59 + i as u64, |t| {
            mse_loss(&t[0], &t[1])
        }));
    }

    for (i, (s, size)) in [
        (sh(1, 2, 6, 6), 5),
        (sh(2, 1, 5, 5), 3),
        (sh(1, 3, 4, 4), 2),
    ]
    .into_iter()
    .enumerate()
    {
        push(check_function(
            &format!("gaussian_blur[{s} k{size}]"),
            &[s],
            seed + 62 + i as u64,
            move |t| {
                let kernel = crate::filters::GaussianKernel::new(size)?;
                crate::filters::gaussian_blur(&t[0], &kernel, crate::filters::PadMode::Reflect)
            },
        ));
        push(check_function(
            &format!("laplacian[{s} k{size}]"),
            &[s],
            seed + 65 + i as u64,
            move |t| {
                let kernel = crate::filters::GaussianKernel::new(size)?;
                crate::filters::laplacian(&t[0], &kernel, crate::filters::PadMode::Reflect)
            },
        ));
    }

    for (i, s) in [sh(1, 2, 4, 4), sh(2, 1, 6, 6), sh(1, 3, 2, 2)].into_iter().enumerate() {
        push(check_function(&format!("dwt2[{s}]"), &[s], seed + 68 + i as u64, |t| {
            let c = dwt2(&t[0])?;
            c.ll.concat_channels(&c.lh)?
                .concat_channels(&c.hl)?
                .concat_channels(&c.hh)
        }));
        let half = sh(s.n, s.c, s.h / 2, s.w / 2);
        push(check_function(
            &format!("idwt2[{half}]"),
            &[half, half, half, half],
            seed + 71 + i as u64,
            |t| {
                idwt2(&WaveletCoeffs {
                    ll: t[0].clone(),
                    lh: t[1].clone(),
                    hl: t[2].clone(),
                    hh: t[3].clone(),
                })
            },
        ));
    }

    for (i, s) in [sh(1, 2, 4, 4), sh(2, 1, 6, 6), sh(1, 1, 7, 5)].into_iter().enumerate() {
        push(check_function(
            &format!("approx_recon[{s}]"),
            &[s],
            seed + 74 + i as u64,
            |t| approx_recon(&t[0]),
        ));
        push(check_function(
            &format!("detail_recon[{s}]"),
            &[s],
            seed + 77 + i as u64,
            |t| detail_recon(&t[0]),
        ));
    }

    out
}

fn pool_param_shapes(channels: usize, reduction: usize) -> Vec<Shape> {
    let c2 = 2 * channels;
    let bottleneck = (c2 / reduction).max(1);
    vec![
        sh(bottleneck, c2, 1, 1),  // se.w1
        sh(1, bottleneck, 1, 1),   // se.b1
        sh(c2, bottleneck, 1, 1),  // se.w2
        sh(1, c2, 1, 1),           // se.b2
        sh(channels, c2, 1, 1),    // reduce.w
        sh(1, channels, 1, 1),     // reduce.b
    ]
}

fn layer_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    for (i, (xs, reduction)) in [
        (sh(2, 4, 4, 4), 16),
        (sh(1, 3, 5, 5), 2),
        (sh(1, 6, 3, 3), 4),
    ]
    .into_iter()
    .enumerate()
    {
        let c = xs.c;
        let bottleneck = (c / reduction).max(1);
        let shapes = vec![
            xs,
            sh(bottleneck, c, 1, 1),
            sh(1, bottleneck, 1, 1),
            sh(c, bottleneck, 1, 1),
            sh(1, c, 1, 1),
        ];
        out.push(check_function(
            &format!("se_block[{xs} r{reduction}]"),
            &shapes,
            seed + 100 + i as u64,
            |t| se_attend(&t[0], &t[1], &t[2], &t[3], &t[4]),
        ));
    }

    for (i, (xs, terminal, gauss)) in [
        (sh(2, 4, 8, 8), Terminal::Max, 5),
        (sh(1, 2, 6, 6), Terminal::Avg, 3),
        (sh(1, 3, 4, 4), Terminal::Max, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let channels = xs.c;
        let reduction = 16;
        let mut shapes = vec![xs];
        shapes.extend(pool_param_shapes(channels, reduction));

        for kind in [PoolKind::Lgca, PoolKind::Wadca] {
            out.push(check_function(
                &format!("{}_pool[{xs} {:?} g{gauss}]", kind.label(), terminal),
                &shapes,
                seed + 110 + i as u64,
                move |t| {
                    // full layer: branch split, SE attention over every
                    // learnable tensor, 1x1 reduction, terminal pooling
                    let branches = match kind {
                        PoolKind::Lgca => lgca_branches(&t[0], gauss)?,
                        _ => wadca_branches(&t[0])?,
                    };
                    attention_reduce(
                        &branches, &t[1], &t[2], &t[3], &t[4], &t[5], &t[6], terminal, 2,
                    )
                },
            ));
        }

        out.push(check_function(
            &format!("blur_pool[{xs} {:?} g{gauss}]", terminal),
            &[xs],
            seed + 120 + i as u64,
            move |t| blur_pool(&t[0], terminal, 2, gauss),
        ));
        out.push(check_function(
            &format!("normal_pool[{xs} {:?}]", terminal),
            &[xs],
            seed + 123 + i as u64,
            move |t| normal_pool(&t[0], terminal, 2),
        ));
    }

    out
}

/// Run the registered checks for `scope`; deterministic for a fixed seed.
pub fn run_checks(scope: Scope, seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    if scope != Scope::Layers {
        out.extend(op_checks(seed));
    }
    if scope != Scope::Ops {
        out.extend(layer_checks(seed));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 7.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn injected_sign_error_is_caught() {
        // a "derivative" with the wrong sign must fail the check loudly
        let outcome = check_function(
            "broken_scale",
            &[Shape::new(1, 1, 2, 2)],
            7,
            |t| {
                crate::tensor::record_unary_op(
                    "broken_scale",
                    Tensor::from_vec(t[0].shape(), t[0].values().iter().map(|v| v * 2.0).collect())?,
                    &t[0],
                    |g| g.iter().map(|v| -2.0 * v).collect(),
                )
            },
        );
        assert!(!outcome.passed, "sign error slipped through: {outcome:?}");
        assert!(outcome.max_rel_err > 0.5);
    }

    #[test]
    fn full_op_suite_passes() {
        for outcome in run_checks(Scope::Ops, 17) {
            assert!(
                outcome.passed,
                "{} exceeded tolerance: {:.3e}",
                outcome.name, outcome.max_rel_err
            );
        }
    }

    #[test]
    fn full_layer_suite_passes() {
        for outcome in run_checks(Scope::Layers, 23) {
            assert!(
                outcome.passed,
                "{} exceeded tolerance: {:.3e}",
                outcome.name, outcome.max_rel_err
            );
        }
    }
}
