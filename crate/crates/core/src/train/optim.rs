use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`, one sweep, no restarts.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter, block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: AdamParams,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: AdamParams, block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = block_sizes.into_iter().collect();
        Self {
            params,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every block.
pub fn adam_step(
    params: &mut [&mut [f32]],
    grads: &[&[f32]],
    state: &mut AdamState,
    rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter blocks, {} gradient blocks, {} moment blocks",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::DimensionMismatch(
                "parameter and gradient block sizes differ".into(),
            ));
        }
    }
    state.step += 1;
    let AdamParams {
        beta1,
        beta2,
        epsilon,
    } = state.params;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g[i] as f64;
            let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
            let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = rate * (mi / c1) / ((vi / c2).sqrt() + epsilon);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}
