use super::TensorCHW;
use crate::error::{Error, Result};

/// Position of the maximum inside each 2×2 window (0..4, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub argmax: Vec<u8>,
}

/// Non-overlapping 2×2 max pooling with stride 2. Ties keep the first
/// window position in row-major order.
pub fn maxpool2x2(x: &TensorCHW) -> Result<(TensorCHW, PoolIndices)> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(format!(
            "max pooling needs even dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = TensorCHW::zeros(c, oh, ow);
    let mut argmax = vec![0u8; c * oh * ow];
    for ch in 0..c {
        let src = x.channel(ch);
        let base = ch * oh * ow;
        let dst = out.channel_mut(ch);
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                let cand = [r0[2 * ox], r0[2 * ox + 1], r1[2 * ox], r1[2 * ox + 1]];
                let mut best = 0;
                for i in 1..4 {
                    if cand[i] > cand[best] {
                        best = i;
                    }
                }
                dst[oy * ow + ox] = cand[best];
                argmax[base + oy * ow + ox] = best as u8;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            channels: c,
            in_height: h,
            in_width: w,
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the position that won its window.
pub fn maxpool2x2_backward(grad: &TensorCHW, idx: &PoolIndices) -> TensorCHW {
    let (oh, ow) = (idx.in_height / 2, idx.in_width / 2);
    assert_eq!(grad.shape(), (idx.channels, oh, ow));
    let w = idx.in_width;
    let mut out = TensorCHW::zeros(idx.channels, idx.in_height, idx.in_width);
    for ch in 0..idx.channels {
        let g = grad.channel(ch);
        let a = &idx.argmax[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = out.channel_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let i = oy * ow + ox;
                let pos = a[i] as usize;
                let (y, x) = (2 * oy + pos / 2, 2 * ox + pos % 2);
                dst[y * w + x] = g[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maximum() {
        let x = TensorCHW::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data, vec![4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn constant_map_stays_constant_and_ties_go_first() {
        let x = TensorCHW::new(1, 4, 4, vec![2.5; 16]).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data, vec![2.5; 4]);
        assert!(idx.argmax.iter().all(|&a| a == 0));
    }

    #[test]
    fn odd_dims_are_rejected() {
        assert!(maxpool2x2(&TensorCHW::zeros(1, 3, 4)).is_err());
        assert!(maxpool2x2(&TensorCHW::zeros(1, 4, 5)).is_err());
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = TensorCHW::new(1, 2, 4, vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 7.0]).unwrap();
        let (_, idx) = maxpool2x2(&x).unwrap();
        let g = TensorCHW::new(1, 1, 2, vec![10.0, 20.0]).unwrap();
        let gi = maxpool2x2_backward(&g, &idx);
        assert_eq!(gi.data, vec![0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
    }
}
