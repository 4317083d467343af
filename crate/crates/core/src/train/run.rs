use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{collect_samples, Flip, Sample};
use super::init::{INIT_BIAS, INIT_STD};
use super::optim::{adam_step, cosine_lr, AdamParams, AdamState};
use crate::error::{Error, Result};
use crate::gate::{GateThresholds, SSIMParams};
use crate::network::{Gradients, NetworkSpec, NetworkState, OptimizerMeta, Phase};
use crate::par::Exec;
use crate::tensor::{softmax_cross_entropy, softmax_cross_entropy_backward, TensorCHW};
use crate::volume::{CropWindow, PatientCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamParams,
    pub init_std: f32,
    pub init_bias: f32,
    pub seed: u64,
    pub augmentation: bool,
    pub network: NetworkSpec,
    pub window: CropWindow,
    pub gate: GateThresholds,
    pub ssim: SSIMParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 50,
            lr_max: 0.01,
            lr_min: 1e-6,
            adam: AdamParams::default(),
            init_std: INIT_STD,
            init_bias: INIT_BIAS,
            seed: 0,
            augmentation: true,
            network: NetworkSpec::canonical(),
            window: CropWindow::default(),
            gate: GateThresholds::default(),
            ssim: SSIMParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return bad("learning rates must satisfy 0 < lr_min < lr_max");
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad("adam betas must be in [0, 1) and epsilon positive");
        }
        if (self.window.out_h, self.window.out_w)
            != (self.network.input_height, self.network.input_width)
        {
            return bad("crop window size must equal the network input size");
        }
        self.network.validate()?;
        self.gate.validate()?;
        self.ssim.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub last_rate: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub optimizer: OptimizerMeta,
    pub loss_curve: Vec<EpochLoss>,
    /// Slices retained by the gate, before augmentation.
    pub base_samples: usize,
}

impl TrainOutcome {
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,last_rate,steps\n");
        for e in &self.loss_curve {
            out.push_str(&format!(
                "{},{:.8},{:.8e},{}\n",
                e.epoch, e.mean_loss, e.last_rate, e.steps
            ));
        }
        out
    }
}

/// Training-phase forward and backward on one batch: mean pixel
/// cross-entropy over the batch and its parameter gradients. Updates the
/// batch-normalization running statistics.
pub fn loss_and_gradients(
    state: &mut NetworkState,
    batch: &[Sample],
    exec: Exec,
) -> Result<(f64, Gradients)> {
    let inputs: Vec<TensorCHW> = batch.iter().map(|s| s.input.clone()).collect();
    let (logits, trace) = state.forward_batch(&inputs, Phase::Train, exec)?;
    let pixels = logits[0].plane();
    let scale = 1.0 / (batch.len() * pixels) as f32;
    let per_item = exec.map_range(batch.len(), |i| -> Result<(f64, TensorCHW)> {
        let (loss, prob) = softmax_cross_entropy(&logits[i], &batch[i].labels)?;
        Ok((
            loss,
            softmax_cross_entropy_backward(&prob, &batch[i].labels, scale),
        ))
    });
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for item in per_item {
        let (l, g) = item?;
        loss += l;
        grads.push(g);
    }
    let g = state.backward(&trace, &grads, exec)?;
    Ok((loss / batch.len() as f64, g))
}

/// One Adam update from precomputed gradients.
pub fn apply_gradients(
    state: &mut NetworkState,
    grads: &Gradients,
    adam: &mut AdamState,
    rate: f64,
) -> Result<()> {
    let g = grads.blocks();
    let mut p = state.trainable_blocks_mut();
    adam_step(&mut p, &g, adam, rate)
}

pub fn train(cases: &[PatientCase], config: &TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    train_with(cases, config, exec, &mut |_| {})
}

/// Gate → crop → normalize → augment → per-epoch seeded shuffle → Adam on
/// cosine-decayed rates. `on_epoch` sees each epoch's loss as it finishes.
pub fn train_with(
    cases: &[PatientCase],
    config: &TrainConfig,
    exec: Exec,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = collect_samples(cases, &config.window, &config.gate, &config.ssim, exec)?;
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let flips: &[Flip] = if config.augmentation {
        &Flip::AUGMENTED
    } else {
        &[Flip::None]
    };
    let mut order: Vec<(usize, Flip)> = (0..samples.len())
        .flat_map(|i| flips.iter().map(move |&f| (i, f)))
        .collect();

    let mut state = NetworkState::build_with_init(
        &config.network,
        config.seed,
        config.init_std,
        config.init_bias,
    )?;
    let mut adam = AdamState::new(
        config.adam,
        state.trainable_blocks().iter().map(|b| b.len()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let steps_per_epoch = order.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut rate = config.lr_max;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = exec.map(chunk, |&(i, f)| samples[i].flipped(f));
            let (loss, grads) = loss_and_gradients(&mut state, &batch, exec)?;
            if !loss.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "loss diverged at step {step}"
                )));
            }
            weighted += loss * batch.len() as f64;
            rate = cosine_lr(step, total_steps, config.lr_max, config.lr_min);
            apply_gradients(&mut state, &grads, &mut adam, rate)?;
            step += 1;
        }
        let e = EpochLoss {
            epoch: epoch + 1,
            mean_loss: weighted / order.len() as f64,
            last_rate: rate,
            steps: step,
        };
        on_epoch(&e);
        curve.push(e);
    }
    let optimizer = OptimizerMeta {
        beta1: config.adam.beta1,
        beta2: config.adam.beta2,
        epsilon: config.adam.epsilon,
        steps: adam.step,
    };
    Ok(TrainOutcome {
        state,
        optimizer,
        loss_curve: curve,
        base_samples: samples.len(),
    })
}
