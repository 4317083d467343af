//! Central finite-difference checks: each analytic backward pass against the
//! numerical derivative of the matching f64 oracle. Every check returns the
//! relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.

use ascnn::network::{NetworkSpec, NetworkState};
use ascnn::tensor::*;
use ascnn::train::{loss_and_gradients, Sample};
use ascnn::Exec;
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-8;

pub const OPS: [&str; 8] = [
    "conv",
    "maxpool",
    "upsample",
    "relu",
    "full_relu",
    "instance_norm",
    "batch_norm",
    "softmax_cross_entropy",
];

pub fn check_op(op: &str, rng: &mut impl Rng) -> f64 {
    match op {
        "conv" => conv(rng),
        "maxpool" => maxpool(rng),
        "upsample" => upsample(rng),
        "relu" => relu(rng),
        "full_relu" => full_relu(rng),
        "instance_norm" => instance_norm(rng),
        "batch_norm" => batch_norm(rng),
        "softmax_cross_entropy" => cross_entropy(rng),
        other => panic!("unknown op {other}"),
    }
}

fn upstream(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(-1.0f32..1.0) as f64)
        .collect()
}

fn as_tensor(v: &[f64], c: usize, h: usize, w: usize) -> TensorCHW {
    TensorCHW::new(c, h, w, f32s(v)).unwrap()
}

pub fn conv(rng: &mut impl Rng) -> f64 {
    let mode =
        [ConvMode::Standard, ConvMode::Depthwise, ConvMode::Pointwise][rng.random_range(0..3)];
    let cin = rng.random_range(1..=3);
    let cout = match mode {
        ConvMode::Depthwise => cin * rng.random_range(1..=2),
        _ => rng.random_range(1..=3),
    };
    let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
    let x = random_tensor(rng, cin, h, w);
    let k = random_kernels(rng, mode, cin, cout);
    let r = upstream(rng, cout * h * w);
    let (gi, gk) = conv2d_backward(&x, &k, &as_tensor(&r, cout, h, w), true).unwrap();
    let mut analytic = f64s(&gi.unwrap().data);
    analytic.extend(f64s(&gk.weights));
    analytic.extend(f64s(&gk.biases));

    let (nx, nw) = (x.data.len(), k.weights.len());
    let mut params = f64s(&x.data);
    params.extend(f64s(&k.weights));
    params.extend(f64s(&k.biases));
    let numeric = numeric_grad(&params, STEP, |p| {
        let xm = reshape(&p[..nx], cin, h, w);
        dot(
            &conv_naive(&xm, mode, cin, cout, &p[nx..nx + nw], &p[nx + nw..]),
            &r,
        )
    });
    rel_err(&analytic, &numeric, FLOOR)
}

/// Distinct values at least 0.01 apart so no window has a near tie.
fn distinct_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> TensorCHW {
    let mut v: Vec<f32> = (0..c * h * w).map(|i| i as f32 * 0.01 - 0.5).collect();
    v.shuffle(rng);
    TensorCHW::new(c, h, w, v).unwrap()
}

pub fn maxpool(rng: &mut impl Rng) -> f64 {
    let (c, h, w) = (
        rng.random_range(1..=3),
        2 * rng.random_range(1..=3),
        2 * rng.random_range(1..=3),
    );
    let x = distinct_tensor(rng, c, h, w);
    let r = upstream(rng, c * h * w / 4);
    let (_, idx) = maxpool2x2(&x).unwrap();
    let analytic = f64s(&maxpool2x2_backward(&as_tensor(&r, c, h / 2, w / 2), &idx).data);
    let numeric = numeric_grad(&f64s(&x.data), STEP, |p| {
        dot(&maxpool_naive(&reshape(p, c, h, w)), &r)
    });
    rel_err(&analytic, &numeric, FLOOR)
}

pub fn upsample(rng: &mut impl Rng) -> f64 {
    let (c, h, w) = (
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    );
    let x = random_tensor(rng, c, h, w);
    let r = upstream(rng, c * 4 * h * w);
    let analytic = f64s(&upsample_bilinear_x2_backward(&as_tensor(&r, c, 2 * h, 2 * w)).data);
    let numeric = numeric_grad(&f64s(&x.data), STEP, |p| {
        dot(&upsample_naive(&reshape(p, c, h, w)), &r)
    });
    rel_err(&analytic, &numeric, FLOOR)
}

pub fn relu(rng: &mut impl Rng) -> f64 {
    let (c, h, w) = (
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    );
    let x = random_tensor_off_zero(rng, c, h, w, 0.01);
    let r = upstream(rng, c * h * w);
    let analytic = f64s(&relu_backward(&x, &as_tensor(&r, c, h, w)).data);
    let numeric = numeric_grad(&f64s(&x.data), STEP, |p| {
        dot(&relu_naive(&reshape(p, c, h, w)), &r)
    });
    rel_err(&analytic, &numeric, FLOOR)
}

pub fn full_relu(rng: &mut impl Rng) -> f64 {
    let (c, h, w) = (
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    );
    let x = random_tensor_off_zero(rng, c, h, w, 0.01);
    let r = upstream(rng, 2 * c * h * w);
    let stacked = full_relu_stacked(&x);
    let analytic = f64s(&full_relu_backward_stacked(&stacked, &as_tensor(&r, 2 * c, h, w)).data);
    let numeric = numeric_grad(&f64s(&x.data), STEP, |p| {
        dot(&full_relu_naive(&reshape(p, c, h, w)), &r)
    });
    rel_err(&analytic, &numeric, FLOOR)
}

fn random_norm(rng: &mut impl Rng, kind: NormKind, c: usize) -> NormState {
    let mut s = NormState::new(kind, c);
    s.gamma
        .iter_mut()
        .for_each(|g| *g = rng.random_range(0.5f32..1.5));
    s.beta
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5f32..0.5));
    s
}

pub fn instance_norm(rng: &mut impl Rng) -> f64 {
    let (c, h, w) = (
        rng.random_range(1..=3),
        rng.random_range(2..=4),
        rng.random_range(2..=4),
    );
    let x = random_tensor(rng, c, h, w);
    let state = random_norm(rng, NormKind::Instance, c);
    let r = upstream(rng, c * h * w);
    let (_, cache) = ascnn::tensor::instance_norm(&x, &state).unwrap();
    let (gi, ng) = instance_norm_backward(&as_tensor(&r, c, h, w), &cache, &state);
    let mut analytic = f64s(&gi.data);
    analytic.extend(f64s(&ng.gamma));
    analytic.extend(f64s(&ng.beta));

    let n = x.data.len();
    let eps = state.epsilon as f64;
    let mut params = f64s(&x.data);
    params.extend(f64s(&state.gamma));
    params.extend(f64s(&state.beta));
    let numeric = numeric_grad(&params, STEP, |p| {
        dot(
            &instance_norm_naive(&reshape(&p[..n], c, h, w), &p[n..n + c], &p[n + c..], eps),
            &r,
        )
    });
    rel_err(&analytic, &numeric, FLOOR)
}

pub fn batch_norm(rng: &mut impl Rng) -> f64 {
    let (b, c, h, w) = (
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(2..=3),
    );
    let xs: Vec<TensorCHW> = (0..b).map(|_| random_tensor(rng, c, h, w)).collect();
    let mut state = random_norm(rng, NormKind::Batch, c);
    let r = upstream(rng, b * c * h * w);
    let per = c * h * w;
    let grads: Vec<TensorCHW> = (0..b)
        .map(|i| as_tensor(&r[i * per..(i + 1) * per], c, h, w))
        .collect();
    let (_, cache) = batch_norm_train(&xs, &mut state, Exec::Sequential).unwrap();
    let (gis, ng) = batch_norm_backward(&grads, &cache, &state, Exec::Sequential);
    let mut analytic: Vec<f64> = gis.iter().flat_map(|g| f64s(&g.data)).collect();
    analytic.extend(f64s(&ng.gamma));
    analytic.extend(f64s(&ng.beta));

    let n = b * per;
    let eps = state.epsilon as f64;
    let mut params: Vec<f64> = xs.iter().flat_map(|x| f64s(&x.data)).collect();
    params.extend(f64s(&state.gamma));
    params.extend(f64s(&state.beta));
    let numeric = numeric_grad(&params, STEP, |p| {
        let maps: Vec<Map> = (0..b)
            .map(|i| reshape(&p[i * per..(i + 1) * per], c, h, w))
            .collect();
        let out = batch_norm_naive(&maps, &p[n..n + c], &p[n + c..], eps);
        out.iter()
            .enumerate()
            .map(|(i, m)| dot(m, &r[i * per..(i + 1) * per]))
            .sum()
    });
    rel_err(&analytic, &numeric, FLOOR)
}

pub fn cross_entropy(rng: &mut impl Rng) -> f64 {
    let (k, h, w) = (
        rng.random_range(2..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    );
    let logits = TensorCHW::from_fn(k, h, w, |_, _, _| rng.random_range(-3.0f32..3.0));
    let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..k as u8)).collect();
    let (_, prob) = softmax_cross_entropy(&logits, &labels).unwrap();
    let analytic = f64s(&softmax_cross_entropy_backward(&prob, &labels, 1.0 / (h * w) as f32).data);
    let numeric = numeric_grad(&f64s(&logits.data), STEP, |p| {
        cross_entropy_naive(&reshape(p, k, h, w), &labels)
    });
    rel_err(&analytic, &numeric, FLOOR)
}

/// Half-width of the weight interval used by [`network`].
pub const NETWORK_STEP: f32 = 5e-4;
/// Trapezoid panels over that interval.
pub const NETWORK_PANELS: usize = 32;

/// End-to-end check of the whole network on a small input, perturbing
/// `count` randomly chosen convolution weights in f32.
///
/// ReLU and max-pool make the loss piecewise smooth, with kinks a few 1e-4
/// apart in weight space, and f32 round-off swamps steps much below 1e-4, so
/// a pointwise derivative cannot be resolved. Instead the central difference
/// `(L(w + h) − L(w − h)) / 2h` is compared with the analytic gradient
/// averaged over `[w − h, w + h]` (composite trapezoid). The two agree for
/// any piecewise-smooth loss, kinks included, and a wrong backward pass
/// breaks the agreement.
pub fn network(seed: u64, count: usize, h: usize, w: usize) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec {
        input_height: h,
        input_width: w,
        ..NetworkSpec::canonical()
    };
    let mut state = NetworkState::build(&spec, seed).unwrap();
    let batch: Vec<Sample> = (0..2)
        .map(|_| Sample {
            input: random_tensor(&mut rng, 4, h, w),
            labels: (0..h * w).map(|_| rng.random_range(0..4u8)).collect(),
        })
        .collect();
    let (_, grads) = loss_and_gradients(&mut state, &batch, Exec::Sequential).unwrap();
    let picks: Vec<(usize, usize)> = (0..count)
        .map(|_| {
            let blk = 2 * rng.random_range(0..state.convs.len());
            (blk, rng.random_range(0..grads.blocks()[blk].len()))
        })
        .collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (blk, i) in picks {
        let orig = state.trainable_blocks()[blk][i];
        let points: Vec<f32> = (0..=NETWORK_PANELS)
            .map(|k| orig - NETWORK_STEP + (2.0 * NETWORK_STEP) * k as f32 / NETWORK_PANELS as f32)
            .collect();
        let evals: Vec<(f64, f64)> = points
            .iter()
            .map(|&v| {
                state.trainable_blocks_mut()[blk][i] = v;
                let (loss, g) = loss_and_gradients(&mut state, &batch, Exec::Sequential).unwrap();
                (loss, g.blocks()[blk][i] as f64)
            })
            .collect();
        state.trainable_blocks_mut()[blk][i] = orig;
        let mut area = 0.0;
        for k in 0..NETWORK_PANELS {
            area += 0.5 * (evals[k].1 + evals[k + 1].1) * (points[k + 1] as f64 - points[k] as f64);
        }
        let span = points[NETWORK_PANELS] as f64 - points[0] as f64;
        analytic.push(area / span);
        numeric.push((evals[NETWORK_PANELS].0 - evals[0].0) / span);
    }
    rel_err(&analytic, &numeric, FLOOR)
}
