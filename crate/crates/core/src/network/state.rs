use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::spec::{count_params, NetworkSpec};
use crate::error::Result;
use crate::tensor::{ConvGrad, ConvKernelSet, ConvMode, NormGrad, NormKind, NormState};
use crate::train::init::{TruncatedNormal, INIT_BIAS, INIT_STD};

/// Convolutions in declaration (checkpoint) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvId {
    L1Depthwise,
    L1Standard,
    L2Depthwise,
    L2Standard,
    L3,
    L4,
    L5,
    L6,
    L7,
    /// Layer-3 features into layer 4.
    Mix3,
    /// Layer-2 features into layer 5.
    Mix2,
    /// Layer-1 features into layer 6.
    Mix1,
}

impl ConvId {
    pub const ALL: [ConvId; 12] = [
        ConvId::L1Depthwise,
        ConvId::L1Standard,
        ConvId::L2Depthwise,
        ConvId::L2Standard,
        ConvId::L3,
        ConvId::L4,
        ConvId::L5,
        ConvId::L6,
        ConvId::L7,
        ConvId::Mix3,
        ConvId::Mix2,
        ConvId::Mix1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConvId::L1Depthwise => "l1_depthwise",
            ConvId::L1Standard => "l1_standard",
            ConvId::L2Depthwise => "l2_depthwise",
            ConvId::L2Standard => "l2_standard",
            ConvId::L3 => "l3",
            ConvId::L4 => "l4",
            ConvId::L5 => "l5",
            ConvId::L6 => "l6",
            ConvId::L7 => "l7",
            ConvId::Mix3 => "mix_l3_to_l4",
            ConvId::Mix2 => "mix_l2_to_l5",
            ConvId::Mix1 => "mix_l1_to_l6",
        }
    }
}

/// Normalizations in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormId {
    L1Depthwise,
    L1Standard,
    L2Depthwise,
    L2Standard,
    L3,
    L4,
}

impl NormId {
    pub const ALL: [NormId; 6] = [
        NormId::L1Depthwise,
        NormId::L1Standard,
        NormId::L2Depthwise,
        NormId::L2Standard,
        NormId::L3,
        NormId::L4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormId::L1Depthwise => "l1_depthwise",
            NormId::L1Standard => "l1_standard",
            NormId::L2Depthwise => "l2_depthwise",
            NormId::L2Standard => "l2_standard",
            NormId::L3 => "l3",
            NormId::L4 => "l4",
        }
    }

    pub fn kind(self) -> NormKind {
        match self {
            NormId::L1Depthwise | NormId::L2Depthwise => NormKind::Instance,
            _ => NormKind::Batch,
        }
    }
}

/// Every trainable parameter and normalization statistic of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub convs: Vec<ConvKernelSet>,
    pub norms: Vec<NormState>,
}

/// `(mode, in, out)` for every convolution, in [`ConvId::ALL`] order.
pub(crate) fn conv_shapes(spec: &NetworkSpec) -> Vec<(ConvMode, usize, usize)> {
    let d1 = spec.l1_depthwise_kernels();
    vec![
        (ConvMode::Depthwise, spec.input_channels, d1),
        (ConvMode::Standard, spec.input_channels, spec.l1_standard),
        (ConvMode::Depthwise, 2 * d1, spec.l2_depthwise_kernels()),
        (ConvMode::Standard, 2 * spec.l1_standard, spec.l2_standard),
        (ConvMode::Standard, spec.skip2_channels(), spec.l3_kernels),
        (ConvMode::Standard, spec.skip3_channels(), spec.l4_kernels),
        (ConvMode::Standard, spec.l4_kernels, spec.l5_kernels),
        (ConvMode::Standard, spec.l5_kernels, spec.l6_kernels),
        (ConvMode::Standard, spec.l6_kernels, spec.classes),
        (ConvMode::Pointwise, spec.skip3_channels(), spec.l4_kernels),
        (ConvMode::Pointwise, spec.skip2_channels(), spec.l5_kernels),
        (ConvMode::Pointwise, spec.skip1_channels(), spec.l6_kernels),
    ]
}

pub(crate) fn norm_channels(spec: &NetworkSpec) -> Vec<usize> {
    vec![
        spec.l1_depthwise_kernels(),
        spec.l1_standard,
        spec.l2_depthwise_kernels(),
        spec.l2_standard,
        spec.l3_kernels,
        spec.l4_kernels,
    ]
}

impl NetworkState {
    /// Fresh network: truncated-normal weights (σ = 0.1, ±2σ), biases 0.1,
    /// unit normalization scale and zero shift. Deterministic in `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Self::build_with_init(spec, seed, INIT_STD, INIT_BIAS)
    }

    pub fn build_with_init(spec: &NetworkSpec, seed: u64, std: f32, bias: f32) -> Result<Self> {
        let mut state = Self::zeros(spec)?;
        state.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = TruncatedNormal::new(std);
        for conv in &mut state.convs {
            conv.weights
                .iter_mut()
                .for_each(|w| *w = dist.sample(&mut rng));
            conv.biases.iter_mut().for_each(|b| *b = bias);
        }
        Ok(state)
    }

    /// Network with every weight and bias zero.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let convs = conv_shapes(spec)
            .into_iter()
            .map(|(mode, cin, cout)| ConvKernelSet::zeros(mode, cin, cout))
            .collect::<Result<Vec<_>>>()?;
        let norms = NormId::ALL
            .iter()
            .zip(norm_channels(spec))
            .map(|(id, c)| NormState::new(id.kind(), c))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            seed: 0,
            convs,
            norms,
        })
    }

    #[inline]
    pub fn conv(&self, id: ConvId) -> &ConvKernelSet {
        &self.convs[id as usize]
    }

    #[inline]
    pub fn norm(&self, id: NormId) -> &NormState {
        &self.norms[id as usize]
    }

    /// Convolution weights and biases; equals [`count_params`]`.total`.
    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvKernelSet::param_count).sum()
    }

    pub fn auxiliary_param_count(&self) -> usize {
        self.norms.iter().map(NormState::trainable_count).sum()
    }

    pub fn audit_matches_spec(&self) -> bool {
        self.param_count() == count_params(&self.spec).total
    }

    /// True once every batch normalization has seen a training update.
    pub fn norms_initialized(&self) -> bool {
        self.norms
            .iter()
            .all(|n| n.kind == NormKind::Instance || n.updates > 0)
    }

    /// Trainable blocks in declaration order: each convolution's weights and
    /// biases, then each normalization's scale and shift.
    pub fn trainable_blocks_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weights);
            out.push(&mut c.biases);
        }
        for n in &mut self.norms {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        out
    }

    pub fn trainable_blocks(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weights);
            out.push(&c.biases);
        }
        for n in &self.norms {
            out.push(&n.gamma);
            out.push(&n.beta);
        }
        out
    }
}

/// Gradients laid out like [`NetworkState`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub convs: Vec<ConvGrad>,
    pub norms: Vec<NormGrad>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            convs: state.convs.iter().map(ConvGrad::zeros_like).collect(),
            norms: state
                .norms
                .iter()
                .map(|n| NormGrad::zeros(n.channels()))
                .collect(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weights);
            out.push(&c.biases);
        }
        for n in &self.norms {
            out.push(&n.gamma);
            out.push(&n.beta);
        }
        out
    }
}
