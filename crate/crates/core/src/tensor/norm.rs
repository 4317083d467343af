use serde::{Deserialize, Serialize};

use super::TensorCHW;
use crate::error::{Error, Result};
use crate::par::Exec;

pub const NORM_EPSILON: f32 = 1e-5;
pub const NORM_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Each map standardized by its own statistics.
    Instance,
    /// Each channel standardized by statistics over the whole batch.
    Batch,
}

/// Trainable scale/shift plus, for batch normalization, running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub kind: NormKind,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
    /// Number of training-phase updates folded into the running statistics.
    pub updates: u64,
}

impl NormState {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        let running = match kind {
            NormKind::Instance => 0,
            NormKind::Batch => channels,
        };
        Self {
            kind,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; running],
            running_var: vec![1.0; running],
            momentum: NORM_MOMENTUM,
            epsilon: NORM_EPSILON,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn trainable_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl NormGrad {
    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: vec![0.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn accumulate(&mut self, other: &NormGrad) {
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += *b;
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += *b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    pub xhat: TensorCHW,
    pub inv_std: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhats: Vec<TensorCHW>,
    pub inv_std: Vec<f32>,
}

fn check_channels(x: &TensorCHW, state: &NormState) -> Result<()> {
    if x.channels != state.channels() {
        return Err(Error::ChannelMismatch {
            expected: state.channels(),
            actual: x.channels,
        });
    }
    Ok(())
}

fn mean_f64(v: &[f32]) -> f64 {
    v.iter().map(|&a| a as f64).sum::<f64>() / v.len() as f64
}

fn sq_dev_f64(v: &[f32], mean: f64) -> f64 {
    v.iter().map(|&a| (a as f64 - mean).powi(2)).sum()
}

/// Per-map standardization `(x - μ_c) / √(σ_c² + ε)` followed by `γ_c·(·) + β_c`.
pub fn instance_norm(x: &TensorCHW, state: &NormState) -> Result<(TensorCHW, InstanceNormCache)> {
    check_channels(x, state)?;
    let n = x.plane();
    let mut xhat = x.clone();
    let mut y = x.clone();
    let mut inv_std = vec![0.0f32; x.channels];
    for c in 0..x.channels {
        let src = x.channel(c);
        let mean = mean_f64(src);
        let var = sq_dev_f64(src, mean) / n as f64;
        let is = 1.0 / (var + state.epsilon as f64).sqrt();
        inv_std[c] = is as f32;
        let (g, b) = (state.gamma[c], state.beta[c]);
        let xh = xhat.channel_mut(c);
        for (h, &v) in xh.iter_mut().zip(src) {
            *h = ((v as f64 - mean) * is) as f32;
        }
        for (o, &h) in y.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
            *o = g * h + b;
        }
    }
    Ok((y, InstanceNormCache { xhat, inv_std }))
}

/// `dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))` with `dx̂ = γ·dy`, per channel.
fn norm_input_grad(
    dy: &[f32],
    xhat: &[f32],
    gamma: f32,
    inv_std: f32,
    sum_dxhat: f64,
    sum_dxhat_xhat: f64,
    count: f64,
    out: &mut [f32],
) {
    let scale = inv_std as f64 / count;
    for i in 0..dy.len() {
        let dxh = (gamma * dy[i]) as f64;
        out[i] = (scale * (count * dxh - sum_dxhat - xhat[i] as f64 * sum_dxhat_xhat)) as f32;
    }
}

pub fn instance_norm_backward(
    grad: &TensorCHW,
    cache: &InstanceNormCache,
    state: &NormState,
) -> (TensorCHW, NormGrad) {
    assert_eq!(grad.shape(), cache.xhat.shape());
    let mut gi = TensorCHW::zeros(grad.channels, grad.height, grad.width);
    let mut ng = NormGrad::zeros(grad.channels);
    let n = grad.plane() as f64;
    for c in 0..grad.channels {
        let dy = grad.channel(c);
        let xh = cache.xhat.channel(c);
        let sum_dy: f64 = dy.iter().map(|&v| v as f64).sum();
        let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum();
        ng.beta[c] = sum_dy as f32;
        ng.gamma[c] = sum_dy_xh as f32;
        let g = state.gamma[c] as f64;
        norm_input_grad(
            dy,
            xh,
            state.gamma[c],
            cache.inv_std[c],
            g * sum_dy,
            g * sum_dy_xh,
            n,
            gi.channel_mut(c),
        );
    }
    (gi, ng)
}

/// Training-phase batch normalization: normalizes by the statistics of the
/// whole batch and folds them into the running statistics.
///
/// Per-item partial sums are reduced in item order, so the result does not
/// depend on `exec`.
pub fn batch_norm_train(
    xs: &[TensorCHW],
    state: &mut NormState,
    exec: Exec,
) -> Result<(Vec<TensorCHW>, BatchNormCache)> {
    if state.kind != NormKind::Batch {
        return Err(Error::InvalidConfig(
            "batch_norm_train on a non-batch norm state".into(),
        ));
    }
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidShape("empty batch".into()))?;
    for x in xs {
        check_channels(x, state)?;
        if x.shape() != first.shape() {
            return Err(Error::InvalidShape("batch items differ in shape".into()));
        }
    }
    let channels = first.channels;
    let count = (xs.len() * first.plane()) as f64;

    let sums = exec.map(xs, |x| {
        (0..channels)
            .map(|c| x.channel(c).iter().map(|&v| v as f64).sum::<f64>())
            .collect::<Vec<_>>()
    });
    let mut mean = vec![0.0f64; channels];
    for s in &sums {
        for c in 0..channels {
            mean[c] += s[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let sq = exec.map(xs, |x| {
        (0..channels)
            .map(|c| sq_dev_f64(x.channel(c), mean[c]))
            .collect::<Vec<_>>()
    });
    let mut var = vec![0.0f64; channels];
    for s in &sq {
        for c in 0..channels {
            var[c] += s[c];
        }
    }
    var.iter_mut().for_each(|v| *v /= count);

    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v + state.epsilon as f64).sqrt()) as f32)
        .collect();
    let inv64: Vec<f64> = var
        .iter()
        .map(|&v| 1.0 / (v + state.epsilon as f64).sqrt())
        .collect();
    let (gamma, beta) = (&state.gamma, &state.beta);
    let pairs = exec.map(xs, |x| {
        let mut xhat = x.clone();
        let mut y = x.clone();
        for c in 0..channels {
            for (h, &v) in xhat.channel_mut(c).iter_mut().zip(x.channel(c)) {
                *h = ((v as f64 - mean[c]) * inv64[c]) as f32;
            }
            let (g, b) = (gamma[c], beta[c]);
            for (o, &h) in y.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
                *o = g * h + b;
            }
        }
        (y, xhat)
    });
    let m = state.momentum;
    for c in 0..channels {
        state.running_mean[c] = m * state.running_mean[c] + (1.0 - m) * mean[c] as f32;
        state.running_var[c] = m * state.running_var[c] + (1.0 - m) * var[c] as f32;
    }
    state.updates += 1;
    let (ys, xhats) = pairs.into_iter().unzip();
    Ok((ys, BatchNormCache { xhats, inv_std }))
}

/// Inference-phase batch normalization with the running statistics.
pub fn batch_norm_infer(x: &TensorCHW, state: &NormState) -> Result<TensorCHW> {
    if state.kind != NormKind::Batch {
        return Err(Error::InvalidConfig(
            "batch_norm_infer on a non-batch norm state".into(),
        ));
    }
    check_channels(x, state)?;
    if state.updates == 0 {
        return Err(Error::UninitializedStats);
    }
    let mut y = x.clone();
    for c in 0..x.channels {
        let is = 1.0 / (state.running_var[c] + state.epsilon).sqrt();
        let (g, b, m) = (state.gamma[c], state.beta[c], state.running_mean[c]);
        y.channel_mut(c)
            .iter_mut()
            .for_each(|v| *v = g * (*v - m) * is + b);
    }
    Ok(y)
}

pub fn batch_norm_backward(
    grads: &[TensorCHW],
    cache: &BatchNormCache,
    state: &NormState,
    exec: Exec,
) -> (Vec<TensorCHW>, NormGrad) {
    assert_eq!(grads.len(), cache.xhats.len());
    let channels = state.channels();
    let count = grads.iter().map(|g| g.plane()).sum::<usize>() as f64;
    let partial = exec.map_range(grads.len(), |i| {
        let (g, xh) = (&grads[i], &cache.xhats[i]);
        (0..channels)
            .map(|c| {
                let dy = g.channel(c);
                let sum_dy: f64 = dy.iter().map(|&v| v as f64).sum();
                let sum_dy_xh: f64 = dy
                    .iter()
                    .zip(xh.channel(c))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                (sum_dy, sum_dy_xh)
            })
            .collect::<Vec<_>>()
    });
    let mut sum_dy = vec![0.0f64; channels];
    let mut sum_dy_xh = vec![0.0f64; channels];
    for p in &partial {
        for c in 0..channels {
            sum_dy[c] += p[c].0;
            sum_dy_xh[c] += p[c].1;
        }
    }
    let ng = NormGrad {
        gamma: sum_dy_xh.iter().map(|&v| v as f32).collect(),
        beta: sum_dy.iter().map(|&v| v as f32).collect(),
    };
    let gi = exec.map_range(grads.len(), |i| {
        let (g, xh) = (&grads[i], &cache.xhats[i]);
        let mut out = TensorCHW::zeros(g.channels, g.height, g.width);
        for c in 0..channels {
            let gm = state.gamma[c] as f64;
            norm_input_grad(
                g.channel(c),
                xh.channel(c),
                state.gamma[c],
                cache.inv_std[c],
                gm * sum_dy[c],
                gm * sum_dy_xh[c],
                count,
                out.channel_mut(c),
            );
        }
        out
    });
    (gi, ng)
}
