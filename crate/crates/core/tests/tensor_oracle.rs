mod common;

use ascnn::tensor::*;
use ascnn::Exec;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn conv_matches_naive_in_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in CONV_MODES {
        for _ in 0..20 {
            let e = conv_oracle_case(&mut rng, mode);
            assert!(e < 1e-5, "{mode:?}: {e}");
        }
    }
}

#[test]
fn conv_on_canonical_layer_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&mut rng, 16, 21, 25);
    let k = random_kernels(&mut rng, ConvMode::Standard, 16, 16);
    let fast = conv2d(&x, &k).unwrap();
    let slow = conv_naive_ks(&to_map(&x), &k);
    assert!(rel_err(&f64s(&fast.data), &flatten(&slow), 1e-12) < 1e-5);
}

#[test]
fn maxpool_and_upsample_match_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let x = random_tensor(&mut rng, 3, 6, 10);
        let (p, _) = maxpool2x2(&x).unwrap();
        assert_eq!(f64s(&p.data), flatten(&maxpool_naive(&to_map(&x))));
        let u = upsample_bilinear_x2(&x);
        assert!(
            rel_err(
                &f64s(&u.data),
                &flatten(&upsample_naive(&to_map(&x))),
                1e-12
            ) < 1e-6
        );
    }
}

#[test]
fn norms_match_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let xs: Vec<TensorCHW> = (0..3).map(|_| random_tensor(&mut rng, 4, 5, 7)).collect();
    let mut st = NormState::new(NormKind::Instance, 4);
    st.gamma = vec![0.5, 1.0, 1.5, 2.0];
    st.beta = vec![-0.2, 0.0, 0.2, 0.4];
    let (y, _) = instance_norm(&xs[0], &st).unwrap();
    let want = instance_norm_naive(
        &to_map(&xs[0]),
        &f64s(&st.gamma),
        &f64s(&st.beta),
        st.epsilon as f64,
    );
    assert!(rel_err(&f64s(&y.data), &flatten(&want), 1e-12) < 1e-5);

    let mut bn = NormState::new(NormKind::Batch, 4);
    bn.gamma = st.gamma.clone();
    bn.beta = st.beta.clone();
    let (ys, _) = batch_norm_train(&xs, &mut bn, Exec::Sequential).unwrap();
    let maps: Vec<Map> = xs.iter().map(to_map).collect();
    let want = batch_norm_naive(&maps, &f64s(&bn.gamma), &f64s(&bn.beta), bn.epsilon as f64);
    for (y, w) in ys.iter().zip(&want) {
        assert!(rel_err(&f64s(&y.data), &flatten(w), 1e-12) < 1e-5);
    }
}

#[test]
fn batch_norm_is_exec_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let xs: Vec<TensorCHW> = (0..5).map(|_| random_tensor(&mut rng, 3, 9, 9)).collect();
    let mut a = NormState::new(NormKind::Batch, 3);
    let mut b = a.clone();
    let (ya, _) = batch_norm_train(&xs, &mut a, Exec::Sequential).unwrap();
    let (yb, _) = batch_norm_train(&xs, &mut b, Exec::Parallel).unwrap();
    assert_eq!(ya, yb);
    assert_eq!(a, b);
}

#[test]
fn cross_entropy_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let logits = TensorCHW::from_fn(4, 6, 6, |_, _, _| {
        rand::Rng::random_range(&mut rng, -5.0f32..5.0)
    });
    let labels: Vec<u8> = (0..36).map(|i| (i % 4) as u8).collect();
    let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
    assert!((loss - cross_entropy_naive(&to_map(&logits), &labels)).abs() < 1e-6);
}

fn tensor_strategy() -> impl Strategy<Value = TensorCHW> {
    (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(prop_oneof![Just(0.0f32), -1e3f32..1e3f32], c * h * w)
            .prop_map(move |v| TensorCHW::new(c, h, w, v).unwrap())
    })
}

proptest! {
    #[test]
    fn full_relu_reconstructs_and_is_disjoint(x in tensor_strategy()) {
        let (p, n) = full_relu(&x);
        for i in 0..x.data.len() {
            prop_assert_eq!(p.data[i] - n.data[i], x.data[i]);
            prop_assert_eq!(p.data[i] * n.data[i], 0.0);
            prop_assert!(p.data[i] >= 0.0 && n.data[i] >= 0.0);
        }
    }

    #[test]
    fn flips_are_involutions(x in tensor_strategy()) {
        prop_assert_eq!(x.flip_vertical().flip_vertical(), x.clone());
        prop_assert_eq!(x.flip_horizontal().flip_horizontal(), x);
    }

    #[test]
    fn upsample_backward_is_adjoint(x in tensor_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_tensor(&mut rng, x.channels, 2 * x.height, 2 * x.width);
        let lhs: f64 = upsample_bilinear_x2(&x).data.iter().zip(&g.data).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rhs: f64 = x.data.iter().zip(&upsample_bilinear_x2_backward(&g).data).map(|(a, b)| *a as f64 * *b as f64).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-4 * (1.0 + lhs.abs()));
    }
}
