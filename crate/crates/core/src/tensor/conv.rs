use serde::{Deserialize, Serialize};

use super::TensorCHW;
use crate::error::{Error, Result};

/// How each kernel of a convolution is applied to the input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// Every kernel spans all input channels (3×3, zero "same" padding).
    Standard,
    /// Every kernel reads exactly one input channel (3×3, zero "same" padding).
    Depthwise,
    /// 1×1 channel mixing.
    Pointwise,
    /// Kernels span `in / groups` channels. Accepted for parameter counting only.
    Group { groups: usize },
}

/// Weights and biases of one convolution.
///
/// Weight layout: `Standard` and `Group` are `[out][in_per_kernel][k][k]`,
/// `Depthwise` is `[out][k][k]` where output `o` reads input `o / multiplier`,
/// and `Pointwise` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernelSet {
    pub mode: ConvMode,
    pub k: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvKernelSet {
    pub fn zeros(mode: ConvMode, in_channels: usize, out_channels: usize) -> Result<Self> {
        let k = match mode {
            ConvMode::Pointwise => 1,
            _ => 3,
        };
        let n = Self::weight_count_for(mode, k, in_channels, out_channels)?;
        Ok(Self {
            mode,
            k,
            in_channels,
            out_channels,
            weights: vec![0.0; n],
            biases: vec![0.0; out_channels],
        })
    }

    pub fn weight_count_for(
        mode: ConvMode,
        k: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<usize> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidConfig(
                "convolution with zero channels".into(),
            ));
        }
        match mode {
            ConvMode::Standard => Ok(out_channels * in_channels * k * k),
            ConvMode::Pointwise => Ok(out_channels * in_channels),
            ConvMode::Depthwise => {
                if out_channels % in_channels != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "depthwise output {out_channels} is not a multiple of input {in_channels}"
                    )));
                }
                Ok(out_channels * k * k)
            }
            ConvMode::Group { groups } => {
                if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{groups} groups do not divide {in_channels} -> {out_channels}"
                    )));
                }
                Ok(out_channels * (in_channels / groups) * k * k)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected_k = if self.mode == ConvMode::Pointwise {
            1
        } else {
            3
        };
        if self.k != expected_k {
            return Err(Error::InvalidConfig(format!(
                "{:?} convolution needs k={expected_k}, got {}",
                self.mode, self.k
            )));
        }
        let n = Self::weight_count_for(self.mode, self.k, self.in_channels, self.out_channels)?;
        if self.weights.len() != n || self.biases.len() != self.out_channels {
            return Err(Error::InvalidConfig(format!(
                "{:?} {}->{}: {} weights / {} biases, expected {n} / {}",
                self.mode,
                self.in_channels,
                self.out_channels,
                self.weights.len(),
                self.biases.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn multiplier(&self) -> usize {
        self.out_channels / self.in_channels
    }
}

/// Gradients of one convolution's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros_like(kernels: &ConvKernelSet) -> Self {
        Self {
            weights: vec![0.0; kernels.weights.len()],
            biases: vec![0.0; kernels.biases.len()],
        }
    }

    pub fn accumulate(&mut self, other: &ConvGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += *b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += *b;
        }
    }
}

/// `c[m×n] (+)= op(a)[m×k] · op(b)[k×n]` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are checked in debug builds and
    // guaranteed by every caller in this module.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds 3×3 zero-padded neighbourhoods into a `(C·9) × (H·W)` matrix.
fn im2col3(input: &TensorCHW) -> Vec<f32> {
    let (c, h, w) = input.shape();
    let n = h * w;
    let mut col = vec![0.0f32; c * 9 * n];
    for ch in 0..c {
        let src = input.channel(ch);
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let dst = &mut col[(ch * 9 + tap) * n..(ch * 9 + tap + 1) * n];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let (x0, x1) = valid_cols(w, dx);
                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                let drow = &mut dst[y * w..(y + 1) * w];
                for x in x0..x1 {
                    drow[x] = srow[(x as isize + dx) as usize];
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3`]: folds column gradients back onto the input grid.
fn col2im3(col: &[f32], c: usize, h: usize, w: usize) -> TensorCHW {
    let n = h * w;
    let mut out = TensorCHW::zeros(c, h, w);
    for ch in 0..c {
        let dst = out.channel_mut(ch);
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let src = &col[(ch * 9 + tap) * n..(ch * 9 + tap + 1) * n];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let (x0, x1) = valid_cols(w, dx);
                let srow = &src[y * w..(y + 1) * w];
                let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                for x in x0..x1 {
                    drow[(x as isize + dx) as usize] += srow[x];
                }
            }
        }
    }
    out
}

/// Output columns `x` for which `x + dx` stays inside `0..w`.
#[inline]
fn valid_cols(w: usize, dx: isize) -> (usize, usize) {
    match dx {
        -1 => (1, w),
        1 => (0, w.saturating_sub(1)),
        _ => (0, w),
    }
}

fn check_input(input: &TensorCHW, kernels: &ConvKernelSet) -> Result<()> {
    if input.channels != kernels.in_channels {
        return Err(Error::ChannelMismatch {
            expected: kernels.in_channels,
            actual: input.channels,
        });
    }
    Ok(())
}

pub fn conv2d(input: &TensorCHW, kernels: &ConvKernelSet) -> Result<TensorCHW> {
    check_input(input, kernels)?;
    let (_, h, w) = input.shape();
    let n = h * w;
    let mut out = TensorCHW::zeros(kernels.out_channels, h, w);
    match kernels.mode {
        ConvMode::Standard => {
            let col = im2col3(input);
            let k = input.channels * 9;
            gemm(
                kernels.out_channels,
                k,
                n,
                &kernels.weights,
                false,
                &col,
                false,
                &mut out.data,
                false,
            );
        }
        ConvMode::Pointwise => {
            gemm(
                kernels.out_channels,
                input.channels,
                n,
                &kernels.weights,
                false,
                &input.data,
                false,
                &mut out.data,
                false,
            );
        }
        ConvMode::Depthwise => {
            let mult = kernels.multiplier();
            for o in 0..kernels.out_channels {
                let wk = &kernels.weights[o * 9..(o + 1) * 9];
                depthwise_forward(input.channel(o / mult), wk, out.channel_mut(o), h, w);
            }
        }
        ConvMode::Group { .. } => {
            return Err(Error::InvalidConfig(
                "group convolution is supported for parameter counting only".into(),
            ))
        }
    }
    for o in 0..kernels.out_channels {
        let b = kernels.biases[o];
        out.channel_mut(o).iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

fn depthwise_forward(src: &[f32], wk: &[f32], dst: &mut [f32], h: usize, w: usize) {
    for tap in 0..9 {
        let wt = wk[tap];
        let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
        let (x0, x1) = valid_cols(w, dx);
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let srow = &src[sy as usize * w..(sy as usize + 1) * w];
            let drow = &mut dst[y * w..(y + 1) * w];
            for x in x0..x1 {
                drow[x] += wt * srow[(x as isize + dx) as usize];
            }
        }
    }
}

/// Gradients of a convolution given the forward input and the upstream gradient.
///
/// Returns the input gradient (skipped when `need_input_grad` is false) and
/// the parameter gradients.
pub fn conv2d_backward(
    input: &TensorCHW,
    kernels: &ConvKernelSet,
    grad_out: &TensorCHW,
    need_input_grad: bool,
) -> Result<(Option<TensorCHW>, ConvGrad)> {
    check_input(input, kernels)?;
    if grad_out.shape() != (kernels.out_channels, input.height, input.width) {
        return Err(Error::InvalidShape(format!(
            "upstream gradient {:?} for conv output {}x{}x{}",
            grad_out.shape(),
            kernels.out_channels,
            input.height,
            input.width
        )));
    }
    let (c, h, w) = input.shape();
    let n = h * w;
    let mut grad = ConvGrad::zeros_like(kernels);
    for o in 0..kernels.out_channels {
        grad.biases[o] = grad_out.channel(o).iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
    let grad_in = match kernels.mode {
        ConvMode::Standard => {
            let col = im2col3(input);
            let k = c * 9;
            gemm(
                kernels.out_channels,
                n,
                k,
                &grad_out.data,
                false,
                &col,
                true,
                &mut grad.weights,
                false,
            );
            if need_input_grad {
                let mut gcol = vec![0.0f32; k * n];
                gemm(
                    k,
                    kernels.out_channels,
                    n,
                    &kernels.weights,
                    true,
                    &grad_out.data,
                    false,
                    &mut gcol,
                    false,
                );
                Some(col2im3(&gcol, c, h, w))
            } else {
                None
            }
        }
        ConvMode::Pointwise => {
            gemm(
                kernels.out_channels,
                n,
                c,
                &grad_out.data,
                false,
                &input.data,
                true,
                &mut grad.weights,
                false,
            );
            if need_input_grad {
                let mut gi = TensorCHW::zeros(c, h, w);
                gemm(
                    c,
                    kernels.out_channels,
                    n,
                    &kernels.weights,
                    true,
                    &grad_out.data,
                    false,
                    &mut gi.data,
                    false,
                );
                Some(gi)
            } else {
                None
            }
        }
        ConvMode::Depthwise => {
            let mult = kernels.multiplier();
            let mut gi = need_input_grad.then(|| TensorCHW::zeros(c, h, w));
            for o in 0..kernels.out_channels {
                let src = input.channel(o / mult);
                let g = grad_out.channel(o);
                let wk = &kernels.weights[o * 9..(o + 1) * 9];
                let gw = &mut grad.weights[o * 9..(o + 1) * 9];
                for tap in 0..9 {
                    let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                    let (x0, x1) = valid_cols(w, dx);
                    let mut acc = 0.0f64;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        let grow = &g[y * w..(y + 1) * w];
                        let mut row_acc = 0.0f32;
                        for x in x0..x1 {
                            row_acc += grow[x] * srow[(x as isize + dx) as usize];
                        }
                        acc += row_acc as f64;
                    }
                    gw[tap] = acc as f32;
                    if let Some(gi) = gi.as_mut() {
                        let wt = wk[tap];
                        let dst = gi.channel_mut(o / mult);
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let grow = &g[y * w..(y + 1) * w];
                            let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                            for x in x0..x1 {
                                drow[(x as isize + dx) as usize] += wt * grow[x];
                            }
                        }
                    }
                }
            }
            gi
        }
        ConvMode::Group { .. } => {
            return Err(Error::InvalidConfig(
                "group convolution is supported for parameter counting only".into(),
            ))
        }
    };
    Ok((grad_in, grad))
}
