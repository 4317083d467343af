//! ASCK v1: JSON header line, then little-endian f32 blocks in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::NetworkSpec;
use super::state::{conv_shapes, norm_channels, ConvId, NetworkState, NormId};
use crate::error::{Error, Result};
use crate::tensor::{ConvKernelSet, ConvMode, NormKind, NormState};

pub const CHECKPOINT_MAGIC: &str = "ASCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer settings recorded alongside trained weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvEntry {
    name: String,
    mode: ConvMode,
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    weights: usize,
    biases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormEntry {
    name: String,
    kind: NormKind,
    channels: usize,
    momentum: f32,
    epsilon: f32,
    updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    spec_hash: String,
    spec: NetworkSpec,
    seed: u64,
    convs: Vec<ConvEntry>,
    /// Each entry owns gamma, beta, running mean, running variance blocks.
    norms: Vec<NormEntry>,
    optimizer: Option<OptimizerMeta>,
}

fn header_for(state: &NetworkState, optimizer: Option<OptimizerMeta>) -> Header {
    Header {
        magic: CHECKPOINT_MAGIC.into(),
        version: CHECKPOINT_VERSION,
        spec_hash: state.spec.digest(),
        spec: state.spec.clone(),
        seed: state.seed,
        convs: ConvId::ALL
            .iter()
            .zip(&state.convs)
            .map(|(id, c)| ConvEntry {
                name: id.name().into(),
                mode: c.mode,
                kernel: c.k,
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                weights: c.weights.len(),
                biases: c.biases.len(),
            })
            .collect(),
        norms: NormId::ALL
            .iter()
            .zip(&state.norms)
            .map(|(id, n)| NormEntry {
                name: id.name().into(),
                kind: n.kind,
                channels: n.channels(),
                momentum: n.momentum,
                epsilon: n.epsilon,
                updates: n.updates,
            })
            .collect(),
        optimizer,
    }
}

pub fn checkpoint_bytes(state: &NetworkState, optimizer: Option<OptimizerMeta>) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&header_for(state, optimizer))?;
    out.push(b'\n');
    let mut put = |block: &[f32]| {
        block
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()))
    };
    for c in &state.convs {
        put(&c.weights);
        put(&c.biases);
    }
    for n in &state.norms {
        put(&n.gamma);
        put(&n.beta);
        put(&n.running_mean);
        put(&n.running_var);
    }
    Ok(out)
}

struct Blocks<'a> {
    raw: &'a [u8],
}

impl Blocks<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f32>> {
        if self.raw.len() < 4 * n {
            return Err(Error::Checkpoint("parameter data truncated".into()));
        }
        let (head, rest) = self.raw.split_at(4 * n);
        self.raw = rest;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Parses a checkpoint; returns the state and any recorded optimizer settings.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(NetworkState, Option<OptimizerMeta>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", header.magic)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.spec_hash != header.spec.digest() {
        return Err(Error::Checkpoint(
            "spec hash does not match the stored spec".into(),
        ));
    }
    header.spec.validate()?;
    let shapes = conv_shapes(&header.spec);
    let channels = norm_channels(&header.spec);
    if header.convs.len() != shapes.len() || header.norms.len() != channels.len() {
        return Err(Error::Checkpoint(
            "block count does not match the spec".into(),
        ));
    }
    let mut blocks = Blocks {
        raw: &bytes[nl + 1..],
    };
    let mut convs = Vec::with_capacity(shapes.len());
    for (entry, (mode, cin, cout)) in header.convs.iter().zip(shapes) {
        let mut c = ConvKernelSet::zeros(mode, cin, cout)?;
        if (
            entry.mode,
            entry.in_channels,
            entry.out_channels,
            entry.weights,
            entry.biases,
        ) != (mode, cin, cout, c.weights.len(), c.biases.len())
        {
            return Err(Error::Checkpoint(format!(
                "layer {} shape does not match the spec",
                entry.name
            )));
        }
        c.weights = blocks.take(entry.weights)?;
        c.biases = blocks.take(entry.biases)?;
        convs.push(c);
    }
    let mut norms = Vec::with_capacity(channels.len());
    for ((entry, id), ch) in header.norms.iter().zip(NormId::ALL).zip(channels) {
        if entry.kind != id.kind() || entry.channels != ch || !(entry.epsilon > 0.0) {
            return Err(Error::Checkpoint(format!(
                "normalization {} does not match the spec",
                entry.name
            )));
        }
        let mut n = NormState::new(entry.kind, ch);
        let running = n.running_mean.len();
        n.gamma = blocks.take(ch)?;
        n.beta = blocks.take(ch)?;
        n.running_mean = blocks.take(running)?;
        n.running_var = blocks.take(running)?;
        n.momentum = entry.momentum;
        n.epsilon = entry.epsilon;
        n.updates = entry.updates;
        norms.push(n);
    }
    if !blocks.raw.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            blocks.raw.len()
        )));
    }
    Ok((
        NetworkState {
            spec: header.spec,
            seed: header.seed,
            convs,
            norms,
        },
        header.optimizer,
    ))
}

pub fn save_checkpoint(state: &NetworkState, path: &Path) -> Result<()> {
    save_checkpoint_with(state, None, path)
}

pub fn save_checkpoint_with(
    state: &NetworkState,
    optimizer: Option<OptimizerMeta>,
    path: &Path,
) -> Result<()> {
    fs::write(path, checkpoint_bytes(state, optimizer)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkState> {
    Ok(checkpoint_from_bytes(&fs::read(path)?)?.0)
}
