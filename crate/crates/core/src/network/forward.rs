//! Batch forward and backward passes through the 7-layer network.
//!
//! Data flow per slice (canonical sizes):
//!
//! ```text
//! L1  4@168x200 -> depthwise(8) -> instance norm -> Full-ReLU -> 16 ┐
//!               -> standard(8)  -> batch norm    -> Full-ReLU -> 16 ┴ skip1 (32) -> pool
//! L2  16 -> depthwise(16) -> instance norm -> Full-ReLU -> 32 ┐
//!     16 -> standard(8)   -> batch norm    -> Full-ReLU -> 16 ┴ skip2 (48) -> pool
//! L3  48 -> standard(16) -> batch norm -> Full-ReLU -> skip3 (32) -> pool -> 21x25
//! L4  32 -> standard(16) -> batch norm -> ReLU -> up x2 + mix(skip3)
//! L5  16 -> standard(16) -> ReLU -> up x2 + mix(skip2)
//! L6  16 -> standard(16) -> ReLU -> up x2 + mix(skip1)
//! L7  16 -> standard(4) -> logits
//! ```
//!
//! Batch normalization couples the items of a batch, so every stage runs
//! over the whole batch before the next one starts. Within a stage the
//! items are independent and run through [`Exec`].

use super::spec::OutputActivation;
use super::state::{ConvId, Gradients, NetworkState, NormId};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::tensor::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, conv2d, conv2d_backward,
    full_relu_backward_stacked, full_relu_stacked, instance_norm, instance_norm_backward,
    maxpool2x2, maxpool2x2_backward, relu, relu_backward, upsample_bilinear_x2,
    upsample_bilinear_x2_backward, BatchNormCache, ConvGrad, InstanceNormCache, NormGrad,
    NormState, PoolIndices, TensorCHW,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; the state is not modified.
    Infer,
}

/// Activations cached by [`NetworkState::forward_batch`] for the backward pass.
#[derive(Debug)]
pub struct ForwardTrace {
    pub phase: Phase,
    pub inputs: Vec<TensorCHW>,
    in1: Vec<InstanceNormCache>,
    /// Layer-1 Full-ReLU output before pooling (skip source of layer 6).
    pub skip1: Vec<TensorCHW>,
    idx1: Vec<PoolIndices>,
    p1: Vec<TensorCHW>,
    in2: Vec<InstanceNormCache>,
    /// Layer-2 Full-ReLU output before pooling (skip source of layer 5).
    pub skip2: Vec<TensorCHW>,
    idx2: Vec<PoolIndices>,
    p2: Vec<TensorCHW>,
    /// Layer-3 Full-ReLU output before pooling (skip source of layer 4).
    pub skip3: Vec<TensorCHW>,
    idx3: Vec<PoolIndices>,
    p3: Vec<TensorCHW>,
    r4: Vec<TensorCHW>,
    s4: Vec<TensorCHW>,
    r5: Vec<TensorCHW>,
    s5: Vec<TensorCHW>,
    r6: Vec<TensorCHW>,
    s6: Vec<TensorCHW>,
    logits: Vec<TensorCHW>,
    bn: [Option<BatchNormCache>; 4],
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    /// Map size entering layer 1 followed by the output map size of layers 1..=7.
    pub fn map_sizes(&self) -> Vec<(usize, usize)> {
        let hw = |t: &TensorCHW| (t.height, t.width);
        vec![
            hw(&self.inputs[0]),
            hw(&self.p1[0]),
            hw(&self.p2[0]),
            hw(&self.p3[0]),
            hw(&self.s4[0]),
            hw(&self.s5[0]),
            hw(&self.s6[0]),
            hw(&self.logits[0]),
        ]
    }
}

/// Position of each batch norm inside [`ForwardTrace::bn`].
fn bn_slot(id: NormId) -> usize {
    match id {
        NormId::L1Standard => 0,
        NormId::L2Standard => 1,
        NormId::L3 => 2,
        NormId::L4 => 3,
        _ => unreachable!("instance norms are cached per item"),
    }
}

fn batch_norm(
    norms: &mut [NormState],
    id: NormId,
    xs: &[TensorCHW],
    phase: Phase,
    exec: Exec,
) -> Result<(Vec<TensorCHW>, Option<BatchNormCache>)> {
    let state = &mut norms[id as usize];
    match phase {
        Phase::Train => {
            let (ys, cache) = batch_norm_train(xs, state, exec)?;
            Ok((ys, Some(cache)))
        }
        Phase::Infer => {
            let state = &*state;
            let ys = exec
                .map(xs, |x| batch_norm_infer(x, state))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok((ys, None))
        }
    }
}

fn sum_conv_grads(parts: impl Iterator<Item = ConvGrad>, into: &mut ConvGrad) {
    for g in parts {
        into.accumulate(&g);
    }
}

fn unzip3<A, B, C>(v: Vec<(A, B, C)>) -> (Vec<A>, Vec<B>, Vec<C>) {
    let mut a = Vec::with_capacity(v.len());
    let mut b = Vec::with_capacity(v.len());
    let mut c = Vec::with_capacity(v.len());
    for (x, y, z) in v {
        a.push(x);
        b.push(y);
        c.push(z);
    }
    (a, b, c)
}

fn add(mut a: TensorCHW, b: &TensorCHW) -> TensorCHW {
    a.add_assign(b);
    a
}

impl NetworkState {
    fn check_input(&self, x: &TensorCHW) -> Result<()> {
        let s = &self.spec;
        let want = (s.input_channels, s.input_height, s.input_width);
        if x.shape() != want {
            return Err(Error::InvalidShape(format!(
                "network input {:?}, expected {want:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass over a batch of normalized, cropped slices, caching
    /// everything the backward pass needs.
    pub fn forward_batch(
        &mut self,
        inputs: &[TensorCHW],
        phase: Phase,
        exec: Exec,
    ) -> Result<(Vec<TensorCHW>, ForwardTrace)> {
        if inputs.is_empty() {
            return Err(Error::InvalidShape("empty batch".into()));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        if phase == Phase::Infer && !self.norms_initialized() {
            return Err(Error::UninitializedStats);
        }
        let n = inputs.len();
        let d1 = self.spec.l1_depthwise_kernels();
        let relu_out = self.spec.output_activation == OutputActivation::Relu;
        let convs = &self.convs;
        let norms = &mut self.norms;
        let cv = |id: ConvId| &convs[id as usize];

        // L1
        let stage = {
            let nr: &[NormState] = norms;
            exec.map(inputs, |x| -> Result<_> {
                let a = conv2d(x, cv(ConvId::L1Depthwise))?;
                let (y, cache) = instance_norm(&a, &nr[NormId::L1Depthwise as usize])?;
                Ok((
                    full_relu_stacked(&y),
                    cache,
                    conv2d(x, cv(ConvId::L1Standard))?,
                ))
            })
        };
        let (fr1_dw, in1, a1_std) = unzip3(stage.into_iter().collect::<Result<Vec<_>>>()?);
        let (y1_std, bn1) = batch_norm(norms, NormId::L1Standard, &a1_std, phase, exec)?;
        drop(a1_std);

        // L2
        let stage = {
            let nr: &[NormState] = norms;
            exec.map_range(n, |i| -> Result<_> {
                let skip1 = TensorCHW::concat(&[&fr1_dw[i], &full_relu_stacked(&y1_std[i])])?;
                let (p1, idx1) = maxpool2x2(&skip1)?;
                let (in_dw, in_std) = p1.split_channels(2 * d1);
                let b = conv2d(&in_dw, cv(ConvId::L2Depthwise))?;
                let (y, cache) = instance_norm(&b, &nr[NormId::L2Depthwise as usize])?;
                let b_std = conv2d(&in_std, cv(ConvId::L2Standard))?;
                Ok(((skip1, idx1, p1), (full_relu_stacked(&y), cache, b_std)))
            })
        };
        let (l1_parts, l2_parts): (Vec<_>, Vec<_>) = stage
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        drop((fr1_dw, y1_std));
        let (skip1, idx1, p1) = unzip3(l1_parts);
        let (fr2_dw, in2, b2_std) = unzip3(l2_parts);
        let (y2_std, bn2) = batch_norm(norms, NormId::L2Standard, &b2_std, phase, exec)?;
        drop(b2_std);

        // L3
        let stage = exec.map_range(n, |i| -> Result<_> {
            let skip2 = TensorCHW::concat(&[&fr2_dw[i], &full_relu_stacked(&y2_std[i])])?;
            let (p2, idx2) = maxpool2x2(&skip2)?;
            let c = conv2d(&p2, cv(ConvId::L3))?;
            Ok(((skip2, idx2, p2), c))
        });
        let (l2_out, c3): (Vec<_>, Vec<_>) = stage
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        drop((fr2_dw, y2_std));
        let (skip2, idx2, p2) = unzip3(l2_out);
        let (y3, bn3) = batch_norm(norms, NormId::L3, &c3, phase, exec)?;
        drop(c3);

        // L4 convolution
        let stage = exec.map(&y3, |y| -> Result<_> {
            let skip3 = full_relu_stacked(y);
            let (p3, idx3) = maxpool2x2(&skip3)?;
            let d = conv2d(&p3, cv(ConvId::L4))?;
            Ok(((skip3, idx3, p3), d))
        });
        let (l3_out, d4): (Vec<_>, Vec<_>) = stage
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        drop(y3);
        let (skip3, idx3, p3) = unzip3(l3_out);
        let (y4, bn4) = batch_norm(norms, NormId::L4, &d4, phase, exec)?;
        drop(d4);

        // L4 expansion through L7
        let stage = exec.map_range(n, |i| -> Result<_> {
            let r4 = relu(&y4[i]);
            let s4 = add(
                upsample_bilinear_x2(&r4),
                &conv2d(&skip3[i], cv(ConvId::Mix3))?,
            );
            let r5 = relu(&conv2d(&s4, cv(ConvId::L5))?);
            let s5 = add(
                upsample_bilinear_x2(&r5),
                &conv2d(&skip2[i], cv(ConvId::Mix2))?,
            );
            let r6 = relu(&conv2d(&s5, cv(ConvId::L6))?);
            let s6 = add(
                upsample_bilinear_x2(&r6),
                &conv2d(&skip1[i], cv(ConvId::Mix1))?,
            );
            let mut logits = conv2d(&s6, cv(ConvId::L7))?;
            if relu_out {
                logits = relu(&logits);
            }
            Ok([r4, s4, r5, s5, r6, s6, logits])
        });
        let mut cols: [Vec<TensorCHW>; 7] = Default::default();
        for row in stage {
            for (col, t) in cols.iter_mut().zip(row?) {
                col.push(t);
            }
        }
        let [r4, s4, r5, s5, r6, s6, logits] = cols;

        let trace = ForwardTrace {
            phase,
            inputs: inputs.to_vec(),
            in1,
            skip1,
            idx1,
            p1,
            in2,
            skip2,
            idx2,
            p2,
            skip3,
            idx3,
            p3,
            r4,
            s4,
            r5,
            s5,
            r6,
            s6,
            logits: logits.clone(),
            bn: [bn1, bn2, bn3, bn4],
        };
        Ok((logits, trace))
    }

    /// Parameter gradients for upstream gradients on the logits of a
    /// training-phase trace. Per-item contributions are summed in item order.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_logits: &[TensorCHW],
        exec: Exec,
    ) -> Result<Gradients> {
        if trace.phase != Phase::Train {
            return Err(Error::InvalidConfig(
                "backward needs a training-phase trace".into(),
            ));
        }
        let n = trace.batch_size();
        if grad_logits.len() != n {
            return Err(Error::InvalidShape(format!(
                "{} logit gradients for a batch of {n}",
                grad_logits.len()
            )));
        }
        let d1 = self.spec.l1_depthwise_kernels();
        let d2 = self.spec.l2_depthwise_kernels();
        let relu_out = self.spec.output_activation == OutputActivation::Relu;
        let cv = |id: ConvId| self.conv(id);
        let bn_cache = |id: NormId| {
            trace.bn[bn_slot(id)]
                .as_ref()
                .expect("training trace caches batch norms")
        };
        let mut grads = Gradients::zeros_like(self);

        // L7 back to the layer-4 batch norm
        let stage = exec.map_range(n, |i| -> Result<_> {
            let t = trace;
            let mut g = grad_logits[i].clone();
            if relu_out {
                g = relu_backward(&t.logits[i], &g);
            }
            let (g_s6, gw7) = conv2d_backward(&t.s6[i], cv(ConvId::L7), &g, true)?;
            let g_s6 = g_s6.expect("input grad requested");
            let (g_skip1, gm1) = conv2d_backward(&t.skip1[i], cv(ConvId::Mix1), &g_s6, true)?;
            let g_f = relu_backward(&t.r6[i], &upsample_bilinear_x2_backward(&g_s6));
            let (g_s5, gw6) = conv2d_backward(&t.s5[i], cv(ConvId::L6), &g_f, true)?;
            let g_s5 = g_s5.expect("input grad requested");
            let (g_skip2, gm2) = conv2d_backward(&t.skip2[i], cv(ConvId::Mix2), &g_s5, true)?;
            let g_e = relu_backward(&t.r5[i], &upsample_bilinear_x2_backward(&g_s5));
            let (g_s4, gw5) = conv2d_backward(&t.s4[i], cv(ConvId::L5), &g_e, true)?;
            let g_s4 = g_s4.expect("input grad requested");
            let (g_skip3, gm3) = conv2d_backward(&t.skip3[i], cv(ConvId::Mix3), &g_s4, true)?;
            let g_y4 = relu_backward(&t.r4[i], &upsample_bilinear_x2_backward(&g_s4));
            Ok((
                g_y4,
                [g_skip1.unwrap(), g_skip2.unwrap(), g_skip3.unwrap()],
                [gw7, gm1, gw6, gm2, gw5, gm3],
            ))
        });
        let mut g_y4 = Vec::with_capacity(n);
        let mut g_mix = Vec::with_capacity(n);
        for item in stage {
            let (gy, gs, gw) = item?;
            g_y4.push(gy);
            g_mix.push(gs);
            for (id, g) in [
                ConvId::L7,
                ConvId::Mix1,
                ConvId::L6,
                ConvId::Mix2,
                ConvId::L5,
                ConvId::Mix3,
            ]
            .into_iter()
            .zip(gw)
            {
                grads.convs[id as usize].accumulate(&g);
            }
        }
        let (g_d4, ng4) =
            batch_norm_backward(&g_y4, bn_cache(NormId::L4), self.norm(NormId::L4), exec);
        drop(g_y4);
        grads.norms[NormId::L4 as usize] = ng4;

        // L4 convolution back to the layer-3 batch norm
        let stage = exec.map_range(n, |i| -> Result<_> {
            let (g_p3, gw4) = conv2d_backward(&trace.p3[i], cv(ConvId::L4), &g_d4[i], true)?;
            let g_skip3 = add(
                maxpool2x2_backward(&g_p3.unwrap(), &trace.idx3[i]),
                &g_mix[i][2],
            );
            Ok((full_relu_backward_stacked(&trace.skip3[i], &g_skip3), gw4))
        });
        let (g_y3, gw4): (Vec<_>, Vec<_>) = stage
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        sum_conv_grads(gw4.into_iter(), &mut grads.convs[ConvId::L4 as usize]);
        let (g_c3, ng3) =
            batch_norm_backward(&g_y3, bn_cache(NormId::L3), self.norm(NormId::L3), exec);
        drop(g_y3);
        grads.norms[NormId::L3 as usize] = ng3;

        // L3 convolution and the layer-2 depthwise path
        let in2_state = self.norm(NormId::L2Depthwise);
        let stage = exec.map_range(n, |i| -> Result<_> {
            let (g_p2, gw3) = conv2d_backward(&trace.p2[i], cv(ConvId::L3), &g_c3[i], true)?;
            let g_skip2 = add(
                maxpool2x2_backward(&g_p2.unwrap(), &trace.idx2[i]),
                &g_mix[i][1],
            );
            let (sk_dw, sk_std) = trace.skip2[i].split_channels(2 * d2);
            let (g_dw, g_std) = g_skip2.split_channels(2 * d2);
            let (g_b_dw, ng) = instance_norm_backward(
                &full_relu_backward_stacked(&sk_dw, &g_dw),
                &trace.in2[i],
                in2_state,
            );
            let (in_dw, _) = trace.p1[i].split_channels(2 * d1);
            let (g_in_dw, gw2dw) = conv2d_backward(&in_dw, cv(ConvId::L2Depthwise), &g_b_dw, true)?;
            Ok((
                full_relu_backward_stacked(&sk_std, &g_std),
                g_in_dw.unwrap(),
                (gw3, gw2dw, ng),
            ))
        });
        let mut g_y2std = Vec::with_capacity(n);
        let mut g_in2dw = Vec::with_capacity(n);
        let mut ng2dw = NormGrad::zeros(in2_state.channels());
        for item in stage {
            let (gy, gi, (gw3, gw2dw, ng)) = item?;
            g_y2std.push(gy);
            g_in2dw.push(gi);
            grads.convs[ConvId::L3 as usize].accumulate(&gw3);
            grads.convs[ConvId::L2Depthwise as usize].accumulate(&gw2dw);
            ng2dw.accumulate(&ng);
        }
        drop(g_c3);
        grads.norms[NormId::L2Depthwise as usize] = ng2dw;
        let (g_b2std, ng2std) = batch_norm_backward(
            &g_y2std,
            bn_cache(NormId::L2Standard),
            self.norm(NormId::L2Standard),
            exec,
        );
        drop(g_y2std);
        grads.norms[NormId::L2Standard as usize] = ng2std;

        // Layer-2 standard path and the layer-1 depthwise path
        let in1_state = self.norm(NormId::L1Depthwise);
        let stage = exec.map_range(n, |i| -> Result<_> {
            let (_, in_std) = trace.p1[i].split_channels(2 * d1);
            let (g_in_std, gw2std) =
                conv2d_backward(&in_std, cv(ConvId::L2Standard), &g_b2std[i], true)?;
            let g_p1 = TensorCHW::concat(&[&g_in2dw[i], &g_in_std.unwrap()])?;
            let g_skip1 = add(maxpool2x2_backward(&g_p1, &trace.idx1[i]), &g_mix[i][0]);
            let (sk_dw, sk_std) = trace.skip1[i].split_channels(2 * d1);
            let (g_dw, g_std) = g_skip1.split_channels(2 * d1);
            let (g_a_dw, ng) = instance_norm_backward(
                &full_relu_backward_stacked(&sk_dw, &g_dw),
                &trace.in1[i],
                in1_state,
            );
            let (_, gw1dw) =
                conv2d_backward(&trace.inputs[i], cv(ConvId::L1Depthwise), &g_a_dw, false)?;
            Ok((
                full_relu_backward_stacked(&sk_std, &g_std),
                (gw2std, gw1dw, ng),
            ))
        });
        let mut g_y1std = Vec::with_capacity(n);
        let mut ng1dw = NormGrad::zeros(in1_state.channels());
        for item in stage {
            let (gy, (gw2std, gw1dw, ng)) = item?;
            g_y1std.push(gy);
            grads.convs[ConvId::L2Standard as usize].accumulate(&gw2std);
            grads.convs[ConvId::L1Depthwise as usize].accumulate(&gw1dw);
            ng1dw.accumulate(&ng);
        }
        grads.norms[NormId::L1Depthwise as usize] = ng1dw;
        let (g_a1std, ng1std) = batch_norm_backward(
            &g_y1std,
            bn_cache(NormId::L1Standard),
            self.norm(NormId::L1Standard),
            exec,
        );
        grads.norms[NormId::L1Standard as usize] = ng1std;

        let stage = exec.map_range(n, |i| {
            conv2d_backward(&trace.inputs[i], cv(ConvId::L1Standard), &g_a1std[i], false)
                .map(|(_, g)| g)
        });
        for g in stage {
            grads.convs[ConvId::L1Standard as usize].accumulate(&g?);
        }
        Ok(grads)
    }

    /// Inference on one slice with running normalization statistics.
    /// Also returns the map size after each layer (input first).
    pub fn infer_with_sizes(&self, x: &TensorCHW) -> Result<(TensorCHW, Vec<(usize, usize)>)> {
        self.check_input(x)?;
        if !self.norms_initialized() {
            return Err(Error::UninitializedStats);
        }
        let d1 = self.spec.l1_depthwise_kernels();
        let cv = |id: ConvId| self.conv(id);
        let nm = |id: NormId| self.norm(id);
        let mut sizes = vec![(x.height, x.width)];

        let (y, _) = instance_norm(
            &conv2d(x, cv(ConvId::L1Depthwise))?,
            nm(NormId::L1Depthwise),
        )?;
        let y_std = batch_norm_infer(&conv2d(x, cv(ConvId::L1Standard))?, nm(NormId::L1Standard))?;
        let skip1 = TensorCHW::concat(&[&full_relu_stacked(&y), &full_relu_stacked(&y_std)])?;
        let (p1, _) = maxpool2x2(&skip1)?;
        sizes.push((p1.height, p1.width));

        let (in_dw, in_std) = p1.split_channels(2 * d1);
        let (y, _) = instance_norm(
            &conv2d(&in_dw, cv(ConvId::L2Depthwise))?,
            nm(NormId::L2Depthwise),
        )?;
        let y_std = batch_norm_infer(
            &conv2d(&in_std, cv(ConvId::L2Standard))?,
            nm(NormId::L2Standard),
        )?;
        let skip2 = TensorCHW::concat(&[&full_relu_stacked(&y), &full_relu_stacked(&y_std)])?;
        let (p2, _) = maxpool2x2(&skip2)?;
        sizes.push((p2.height, p2.width));

        let skip3 = full_relu_stacked(&batch_norm_infer(
            &conv2d(&p2, cv(ConvId::L3))?,
            nm(NormId::L3),
        )?);
        let (p3, _) = maxpool2x2(&skip3)?;
        sizes.push((p3.height, p3.width));

        let r4 = relu(&batch_norm_infer(
            &conv2d(&p3, cv(ConvId::L4))?,
            nm(NormId::L4),
        )?);
        let s4 = add(
            upsample_bilinear_x2(&r4),
            &conv2d(&skip3, cv(ConvId::Mix3))?,
        );
        sizes.push((s4.height, s4.width));
        let r5 = relu(&conv2d(&s4, cv(ConvId::L5))?);
        let s5 = add(
            upsample_bilinear_x2(&r5),
            &conv2d(&skip2, cv(ConvId::Mix2))?,
        );
        sizes.push((s5.height, s5.width));
        let r6 = relu(&conv2d(&s5, cv(ConvId::L6))?);
        let s6 = add(
            upsample_bilinear_x2(&r6),
            &conv2d(&skip1, cv(ConvId::Mix1))?,
        );
        sizes.push((s6.height, s6.width));
        let mut logits = conv2d(&s6, cv(ConvId::L7))?;
        if self.spec.output_activation == OutputActivation::Relu {
            logits = relu(&logits);
        }
        sizes.push((logits.height, logits.width));
        Ok((logits, sizes))
    }

    pub fn infer(&self, x: &TensorCHW) -> Result<TensorCHW> {
        self.infer_with_sizes(x).map(|(l, _)| l)
    }

    /// Inference on independent slices; results in input order.
    pub fn infer_batch(&self, xs: &[TensorCHW], exec: Exec) -> Result<Vec<TensorCHW>> {
        exec.map(xs, |x| self.infer(x)).into_iter().collect()
    }
}
