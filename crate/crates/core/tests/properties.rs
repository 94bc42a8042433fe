//! Property tests over the decomposition and reconstruction identities.

use edgepool::filters::{blur_residual_pair, GaussianKernel, PadMode};
use edgepool::pooling::{pool_dispatch, PoolConfig, PoolKind, PoolParams};
use edgepool::tensor::{Shape, Tensor};
use edgepool::wavelet::{approx_recon, detail_recon, dwt2, idwt2};
use proptest::prelude::*;

fn tensor_strategy(
    max_c: usize,
    dims: impl Strategy<Value = (usize, usize)> + Clone,
) -> impl Strategy<Value = Tensor<f64>> {
    (1usize..=2, 1usize..=max_c, dims).prop_flat_map(|(n, c, (h, w))| {
        let len = n * c * h * w;
        proptest::collection::vec(-1.0f64..1.0, len)
            .prop_map(move |v| Tensor::from_vec(Shape::new(n, c, h, w), v).unwrap())
    })
}

fn even_dims() -> impl Strategy<Value = (usize, usize)> + Clone {
    (1usize..=8, 1usize..=8).prop_map(|(h, w)| (2 * h, 2 * w))
}

fn dyadic_tensor(
    dims: impl Strategy<Value = (usize, usize)> + Clone,
) -> impl Strategy<Value = Tensor<f64>> {
    (1usize..=2, 1usize..=3, dims).prop_flat_map(|(n, c, (h, w))| {
        let len = n * c * h * w;
        proptest::collection::vec(0u16..=255, len).prop_map(move |v| {
            let values = v.into_iter().map(|q| f64::from(q) / 256.0).collect();
            Tensor::from_vec(Shape::new(n, c, h, w), values).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haar_roundtrip_is_the_identity(x in tensor_strategy(3, even_dims())) {
        let back = idwt2(&dwt2(&x).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(x.values().iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn haar_split_is_additive_and_orthogonal(x in tensor_strategy(3, even_dims())) {
        let a = approx_recon(&x).unwrap();
        let d = detail_recon(&x).unwrap();
        let sum = a.add(&d).unwrap();
        for (s, v) in sum.values().iter().zip(x.values().iter()) {
            prop_assert!((s - v).abs() < 1e-10);
        }
        let scale = x.values().iter().map(|v| v * v).sum::<f64>().max(1.0);
        prop_assert!(a.dot(&d).abs() / scale < 1e-8);
    }

    #[test]
    fn haar_conserves_energy(x in tensor_strategy(3, even_dims())) {
        let c = dwt2(&x).unwrap();
        let ex: f64 = x.values().iter().map(|v| v * v).sum();
        prop_assert!((c.energy() - ex).abs() < 1e-9 * ex.max(1.0));
    }

    #[test]
    fn blur_and_residual_recover_dyadic_inputs_bitwise(
        x in dyadic_tensor((5usize..=9, 5usize..=9)),
        size in prop::sample::select(vec![2usize, 3, 5]),
    ) {
        let k = GaussianKernel::new(size).unwrap();
        let (g, l) = blur_residual_pair(&x, &k, PadMode::Reflect).unwrap();
        let sum = g.add(&l).unwrap();
        prop_assert_eq!(sum.values(), x.values());
    }

    #[test]
    fn concat_then_slice_recovers_both_operands(
        a in tensor_strategy(4, (2usize..=5, 2usize..=5)),
        extra_c in 1usize..=4,
    ) {
        let s = a.shape();
        let b = Tensor::full(Shape::new(s.n, extra_c, s.h, s.w), 0.25);
        let c = a.concat_channels(&b).unwrap();
        let first = c.slice_channels(0, s.c).unwrap();
        let second = c.slice_channels(s.c, extra_c).unwrap();
        prop_assert_eq!(first.values(), a.values());
        prop_assert_eq!(second.values(), b.values());
    }

    #[test]
    fn depthwise_pointwise_ones_conv_is_identity(x in tensor_strategy(4, (2usize..=6, 2usize..=6))) {
        let c = x.shape().c;
        let w = Tensor::ones(Shape::new(c, 1, 1, 1));
        let y = x.conv2d(&w, None, 1, 0, c).unwrap();
        prop_assert_eq!(y.values(), x.values());
    }

    #[test]
    fn all_pool_variants_share_the_shape_contract(
        x in tensor_strategy(3, even_dims().prop_filter("blur needs 5px", |(h, w)| *h >= 6 && *w >= 6)),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = x.shape();
        for kind in PoolKind::all() {
            let cfg = PoolConfig::new(kind);
            let params = if kind.needs_params() {
                Some(PoolParams::init("p", s.c, &cfg, &mut rng).unwrap())
            } else {
                None
            };
            let y = pool_dispatch(&x, &cfg, params.as_ref(), None).unwrap();
            prop_assert_eq!(y.shape(), Shape::new(s.n, s.c, s.h / 2, s.w / 2));
        }
    }
}
