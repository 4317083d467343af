//! Architecture description, parameter audit and FLOP audit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvKernelSet, ConvMode, NormKind};

/// Activation applied to the output of the last convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Raw logits go straight into the softmax head.
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    FullRelu,
    Relu,
    None,
}

/// Kernel counts of the 7-layer network. Everything else (channel counts,
/// map sizes, skip mixers) follows from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Depthwise kernels per input modality in layer 1.
    pub l1_depthwise_multiplier: usize,
    pub l1_standard: usize,
    /// Depthwise kernels per layer-1 depthwise feature map in layer 2.
    pub l2_depthwise_multiplier: usize,
    pub l2_standard: usize,
    pub l3_kernels: usize,
    pub l4_kernels: usize,
    pub l5_kernels: usize,
    pub l6_kernels: usize,
    pub output_activation: OutputActivation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::canonical()
    }
}

/// One convolution path inside a layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSpec {
    pub name: &'static str,
    pub mode: ConvMode,
    pub in_channels: usize,
    pub kernels: usize,
    pub norm: Option<NormKind>,
    pub activation: Activation,
    /// Channels after the activation (Full-ReLU doubles them).
    pub out_channels: usize,
}

/// 1×1 mixer that turns an earlier layer's features into a modulating map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipSpec {
    pub source_layer: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub index: usize,
    /// Channels entering the layer (both paths of layer 1 read the same ones).
    pub in_channels: usize,
    pub paths: Vec<PathSpec>,
    pub in_size: (usize, usize),
    pub out_size: (usize, usize),
    pub pool: bool,
    pub upsample: bool,
    pub skip: Option<SkipSpec>,
}

impl LayerSpec {
    pub fn out_channels(&self) -> usize {
        self.paths.iter().map(|p| p.out_channels).sum()
    }

    pub fn kernels(&self) -> usize {
        self.paths.iter().map(|p| p.kernels).sum()
    }

    /// Weights and biases of this layer's convolutions (skip mixer excluded).
    pub fn conv_params(&self) -> usize {
        self.paths
            .iter()
            .map(|p| path_params(p.mode, p.in_channels, p.kernels))
            .sum()
    }
}

fn path_params(mode: ConvMode, cin: usize, cout: usize) -> usize {
    let k = if mode == ConvMode::Pointwise { 1 } else { 3 };
    ConvKernelSet::weight_count_for(mode, k, cin, cout).unwrap_or(0) + cout
}

impl NetworkSpec {
    pub fn canonical() -> Self {
        Self {
            input_channels: 4,
            classes: 4,
            input_height: 168,
            input_width: 200,
            l1_depthwise_multiplier: 2,
            l1_standard: 8,
            l2_depthwise_multiplier: 1,
            l2_standard: 8,
            l3_kernels: 16,
            l4_kernels: 16,
            l5_kernels: 16,
            l6_kernels: 16,
            output_activation: OutputActivation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_channels", self.input_channels),
            ("classes", self.classes),
            ("l1_depthwise_multiplier", self.l1_depthwise_multiplier),
            ("l1_standard", self.l1_standard),
            ("l2_depthwise_multiplier", self.l2_depthwise_multiplier),
            ("l2_standard", self.l2_standard),
            ("l3_kernels", self.l3_kernels),
            ("l4_kernels", self.l4_kernels),
            ("l5_kernels", self.l5_kernels),
            ("l6_kernels", self.l6_kernels),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % 8 != 0
            || self.input_width % 8 != 0
        {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} must be a positive multiple of 8 in both dims (three 2x2 poolings)",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    pub fn l1_depthwise_kernels(&self) -> usize {
        self.input_channels * self.l1_depthwise_multiplier
    }

    pub fn l2_depthwise_kernels(&self) -> usize {
        2 * self.l1_depthwise_kernels() * self.l2_depthwise_multiplier
    }

    /// Channels cached after layer 1 (the layer-6 skip source).
    pub fn skip1_channels(&self) -> usize {
        2 * (self.l1_depthwise_kernels() + self.l1_standard)
    }

    /// Channels cached after layer 2 (the layer-5 skip source).
    pub fn skip2_channels(&self) -> usize {
        2 * (self.l2_depthwise_kernels() + self.l2_standard)
    }

    /// Channels cached after layer 3 (the layer-4 skip source).
    pub fn skip3_channels(&self) -> usize {
        2 * self.l3_kernels
    }

    /// Per-layer description in the order the data flows.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let (h, w) = (self.input_height, self.input_width);
        let s1 = (h, w);
        let s2 = (h / 2, w / 2);
        let s3 = (h / 4, w / 4);
        let s4 = (h / 8, w / 8);
        let d1 = self.l1_depthwise_kernels();
        let d2 = self.l2_depthwise_kernels();
        let out_act = match self.output_activation {
            OutputActivation::None => Activation::None,
            OutputActivation::Relu => Activation::Relu,
        };
        let path = |name, mode, cin, kernels, norm, activation: Activation| PathSpec {
            name,
            mode,
            in_channels: cin,
            kernels,
            norm,
            activation,
            out_channels: if activation == Activation::FullRelu {
                2 * kernels
            } else {
                kernels
            },
        };
        vec![
            LayerSpec {
                index: 1,
                in_channels: self.input_channels,
                paths: vec![
                    path(
                        "depthwise",
                        ConvMode::Depthwise,
                        self.input_channels,
                        d1,
                        Some(NormKind::Instance),
                        Activation::FullRelu,
                    ),
                    path(
                        "standard",
                        ConvMode::Standard,
                        self.input_channels,
                        self.l1_standard,
                        Some(NormKind::Batch),
                        Activation::FullRelu,
                    ),
                ],
                in_size: s1,
                out_size: s2,
                pool: true,
                upsample: false,
                skip: None,
            },
            LayerSpec {
                index: 2,
                in_channels: self.skip1_channels(),
                paths: vec![
                    path(
                        "depthwise",
                        ConvMode::Depthwise,
                        2 * d1,
                        d2,
                        Some(NormKind::Instance),
                        Activation::FullRelu,
                    ),
                    path(
                        "standard",
                        ConvMode::Standard,
                        2 * self.l1_standard,
                        self.l2_standard,
                        Some(NormKind::Batch),
                        Activation::FullRelu,
                    ),
                ],
                in_size: s2,
                out_size: s3,
                pool: true,
                upsample: false,
                skip: None,
            },
            LayerSpec {
                index: 3,
                in_channels: self.skip2_channels(),
                paths: vec![path(
                    "standard",
                    ConvMode::Standard,
                    self.skip2_channels(),
                    self.l3_kernels,
                    Some(NormKind::Batch),
                    Activation::FullRelu,
                )],
                in_size: s3,
                out_size: s4,
                pool: true,
                upsample: false,
                skip: None,
            },
            LayerSpec {
                index: 4,
                in_channels: self.skip3_channels(),
                paths: vec![path(
                    "standard",
                    ConvMode::Standard,
                    self.skip3_channels(),
                    self.l4_kernels,
                    Some(NormKind::Batch),
                    Activation::Relu,
                )],
                in_size: s4,
                out_size: s3,
                pool: false,
                upsample: true,
                skip: Some(SkipSpec {
                    source_layer: 3,
                    in_channels: self.skip3_channels(),
                    out_channels: self.l4_kernels,
                }),
            },
            LayerSpec {
                index: 5,
                in_channels: self.l4_kernels,
                paths: vec![path(
                    "standard",
                    ConvMode::Standard,
                    self.l4_kernels,
                    self.l5_kernels,
                    None,
                    Activation::Relu,
                )],
                in_size: s3,
                out_size: s2,
                pool: false,
                upsample: true,
                skip: Some(SkipSpec {
                    source_layer: 2,
                    in_channels: self.skip2_channels(),
                    out_channels: self.l5_kernels,
                }),
            },
            LayerSpec {
                index: 6,
                in_channels: self.l5_kernels,
                paths: vec![path(
                    "standard",
                    ConvMode::Standard,
                    self.l5_kernels,
                    self.l6_kernels,
                    None,
                    Activation::Relu,
                )],
                in_size: s2,
                out_size: s1,
                pool: false,
                upsample: true,
                skip: Some(SkipSpec {
                    source_layer: 1,
                    in_channels: self.skip1_channels(),
                    out_channels: self.l6_kernels,
                }),
            },
            LayerSpec {
                index: 7,
                in_channels: self.l6_kernels,
                paths: vec![path(
                    "standard",
                    ConvMode::Standard,
                    self.l6_kernels,
                    self.classes,
                    None,
                    out_act,
                )],
                in_size: s1,
                out_size: s1,
                pool: false,
                upsample: false,
                skip: None,
            },
        ]
    }

    /// Short stable digest of the architecture, stored in checkpoints.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("spec serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Trainable parameter counts, laid out like the configuration table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    /// Convolution weights + biases of layers 1..=7.
    pub per_layer: Vec<usize>,
    /// Skip mixers feeding layers 4, 5 and 6, in that order.
    pub pointwise: Vec<usize>,
    pub pointwise_total: usize,
    pub per_layer_kernels: Vec<usize>,
    pub total: usize,
    /// Normalization scale/shift, trained but outside `total`.
    pub auxiliary: usize,
    pub kernels: usize,
}

pub fn count_params(spec: &NetworkSpec) -> ParamReport {
    let layers = spec.layers();
    let per_layer: Vec<usize> = layers.iter().map(LayerSpec::conv_params).collect();
    let pointwise: Vec<usize> = layers
        .iter()
        .filter_map(|l| l.skip.as_ref())
        .map(|s| path_params(ConvMode::Pointwise, s.in_channels, s.out_channels))
        .collect();
    let auxiliary = layers
        .iter()
        .flat_map(|l| &l.paths)
        .filter(|p| p.norm.is_some())
        .map(|p| 2 * p.kernels)
        .sum();
    let per_layer_kernels: Vec<usize> = layers.iter().map(LayerSpec::kernels).collect();
    let pointwise_total = pointwise.iter().sum::<usize>();
    ParamReport {
        total: per_layer.iter().sum::<usize>() + pointwise_total,
        per_layer,
        pointwise,
        pointwise_total,
        kernels: per_layer_kernels.iter().sum(),
        per_layer_kernels,
        auxiliary,
    }
}

/// Per-element FLOP costs of the non-convolution operations.
pub mod flop_costs {
    pub const MAC: u64 = 2;
    pub const BIAS: u64 = 1;
    /// Statistics (3) plus normalize-and-affine (4).
    pub const INSTANCE_NORM: u64 = 7;
    /// Running statistics folded: normalize-and-affine only.
    pub const BATCH_NORM: u64 = 4;
    pub const RELU: u64 = 1;
    /// Two comparisons per input element.
    pub const FULL_RELU: u64 = 2;
    /// Three comparisons per pooled output.
    pub const MAX_POOL: u64 = 3;
    /// Two separable passes of two multiplies and one add.
    pub const BILINEAR_PASS: u64 = 3;
    pub const SKIP_ADD: u64 = 1;
    /// Max, subtract, exp, sum and divide per logit.
    pub const SOFTMAX: u64 = 5;
}

pub const FLOP_CONVENTION: &str = "2 FLOPs per multiply-accumulate in every convolution and \
1x1 mixer; 1 per bias add; instance norm 7, batch norm 4, ReLU 1, Full-ReLU 2 per element; \
max pool 3 per output; bilinear x2 3 per sample per separable pass; skip add 1; softmax 5 per logit";

pub const CONV_ONLY_CONVENTION: &str =
    "2 FLOPs per multiply-accumulate in every convolution and 1x1 mixer; nothing else counted";

/// Which operations the FLOP audit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    /// Convolutions at 2 per MAC plus the documented elementwise costs.
    #[default]
    Full,
    /// Convolutions and mixers only, 2 per MAC.
    ConvOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerFlops {
    pub layer: usize,
    pub macs: u64,
    pub conv_flops: u64,
    pub other_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub convention: &'static str,
    pub slices: usize,
    pub slice_height: usize,
    pub slice_width: usize,
    pub per_layer: Vec<LayerFlops>,
    /// Skip mixers feeding layers 4, 5 and 6.
    pub pointwise: Vec<LayerFlops>,
    pub softmax_flops: u64,
    pub per_slice: u64,
    pub total: u64,
}

fn path_macs(p: &PathSpec, pixels: u64) -> u64 {
    let (cin, k) = (p.in_channels as u64, p.kernels as u64);
    pixels
        * match p.mode {
            ConvMode::Standard => k * cin * 9,
            ConvMode::Depthwise => k * 9,
            ConvMode::Pointwise => k * cin,
            ConvMode::Group { groups } => k * (cin / groups as u64) * 9,
        }
}

/// Analytic FLOPs for `slices` slices of `slice_height × slice_width`
/// (each layer at its own map size), full convention.
pub fn count_flops(
    spec: &NetworkSpec,
    slices: usize,
    slice_height: usize,
    slice_width: usize,
) -> Result<FlopReport> {
    count_flops_with(
        spec,
        slices,
        slice_height,
        slice_width,
        FlopConvention::Full,
    )
}

pub fn count_flops_with(
    spec: &NetworkSpec,
    slices: usize,
    slice_height: usize,
    slice_width: usize,
    convention: FlopConvention,
) -> Result<FlopReport> {
    use flop_costs::*;
    let scaled = NetworkSpec {
        input_height: slice_height,
        input_width: slice_width,
        ..spec.clone()
    };
    scaled.validate()?;
    let mut per_layer = Vec::new();
    let mut pointwise = Vec::new();
    for layer in scaled.layers() {
        let px = (layer.in_size.0 * layer.in_size.1) as u64;
        let mut macs = 0;
        let mut other = 0;
        for p in &layer.paths {
            let outputs = px * p.kernels as u64;
            macs += path_macs(p, px);
            other += BIAS * outputs;
            other += match p.norm {
                Some(NormKind::Instance) => INSTANCE_NORM * outputs,
                Some(NormKind::Batch) => BATCH_NORM * outputs,
                None => 0,
            };
            other += match p.activation {
                Activation::FullRelu => FULL_RELU * outputs,
                Activation::Relu => RELU * outputs,
                Activation::None => 0,
            };
        }
        let channels = layer.out_channels() as u64;
        if layer.pool {
            other += MAX_POOL * channels * px / 4;
        }
        if layer.upsample {
            // horizontal pass on h×2w, vertical pass on 2h×2w, then the skip add
            other += BILINEAR_PASS * channels * (2 * px + 4 * px) + SKIP_ADD * channels * 4 * px;
        }
        per_layer.push(LayerFlops {
            layer: layer.index,
            macs,
            conv_flops: MAC * macs,
            other_flops: other,
        });
        if let Some(skip) = &layer.skip {
            let out_px = (layer.out_size.0 * layer.out_size.1) as u64;
            let m = out_px * skip.in_channels as u64 * skip.out_channels as u64;
            pointwise.push(LayerFlops {
                layer: layer.index,
                macs: m,
                conv_flops: MAC * m,
                other_flops: BIAS * out_px * skip.out_channels as u64,
            });
        }
    }
    let mut softmax_flops = SOFTMAX * (slice_height * slice_width * spec.classes) as u64;
    if convention == FlopConvention::ConvOnly {
        per_layer
            .iter_mut()
            .chain(pointwise.iter_mut())
            .for_each(|l| l.other_flops = 0);
        softmax_flops = 0;
    }
    let per_slice = per_layer
        .iter()
        .chain(&pointwise)
        .map(|l| l.conv_flops + l.other_flops)
        .sum::<u64>()
        + softmax_flops;
    Ok(FlopReport {
        convention: match convention {
            FlopConvention::Full => FLOP_CONVENTION,
            FlopConvention::ConvOnly => CONV_ONLY_CONVENTION,
        },
        slices,
        slice_height,
        slice_width,
        per_layer,
        pointwise,
        softmax_flops,
        per_slice,
        total: per_slice * slices as u64,
    })
}
