use super::TensorCHW;

// Half-pixel-centre bilinear ×2 along one axis: output 2i samples the
// source at i - 0.25, output 2i+1 at i + 0.25, with edge clamping.
#[inline]
fn neighbours(i: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(1), (i + 1).min(n - 1))
}

/// Bilinear ×2 upsampling with half-pixel centres (no corner alignment).
pub fn upsample_bilinear_x2(x: &TensorCHW) -> TensorCHW {
    let (c, h, w) = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = TensorCHW::zeros(c, oh, ow);
    let mut rows = vec![0.0f32; h * ow];
    for ch in 0..c {
        let src = x.channel(ch);
        for y in 0..h {
            let s = &src[y * w..(y + 1) * w];
            let d = &mut rows[y * ow..(y + 1) * ow];
            for i in 0..w {
                let (l, r) = neighbours(i, w);
                d[2 * i] = 0.75 * s[i] + 0.25 * s[l];
                d[2 * i + 1] = 0.75 * s[i] + 0.25 * s[r];
            }
        }
        let dst = out.channel_mut(ch);
        for j in 0..h {
            let (u, b) = neighbours(j, h);
            let (cur, up, down) = (
                &rows[j * ow..(j + 1) * ow],
                &rows[u * ow..(u + 1) * ow],
                &rows[b * ow..(b + 1) * ow],
            );
            for x in 0..ow {
                dst[2 * j * ow + x] = 0.75 * cur[x] + 0.25 * up[x];
                dst[(2 * j + 1) * ow + x] = 0.75 * cur[x] + 0.25 * down[x];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear_x2`].
pub fn upsample_bilinear_x2_backward(grad: &TensorCHW) -> TensorCHW {
    let (c, oh, ow) = grad.shape();
    assert!(oh % 2 == 0 && ow % 2 == 0);
    let (h, w) = (oh / 2, ow / 2);
    let mut out = TensorCHW::zeros(c, h, w);
    let mut rows = vec![0.0f32; h * ow];
    for ch in 0..c {
        let g = grad.channel(ch);
        rows.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..h {
            let (u, b) = neighbours(j, h);
            for x in 0..ow {
                let g0 = g[2 * j * ow + x];
                let g1 = g[(2 * j + 1) * ow + x];
                rows[j * ow + x] += 0.75 * (g0 + g1);
                rows[u * ow + x] += 0.25 * g0;
                rows[b * ow + x] += 0.25 * g1;
            }
        }
        let dst = out.channel_mut(ch);
        for y in 0..h {
            let r = &rows[y * ow..(y + 1) * ow];
            let d = &mut dst[y * w..(y + 1) * w];
            for i in 0..w {
                let (l, rr) = neighbours(i, w);
                d[i] += 0.75 * (r[2 * i] + r[2 * i + 1]);
                d[l] += 0.25 * r[2 * i];
                d[rr] += 0.25 * r[2 * i + 1];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_preserved() {
        let x = TensorCHW::new(2, 3, 5, vec![1.25; 30]).unwrap();
        let y = upsample_bilinear_x2(&x);
        assert_eq!(y.shape(), (2, 6, 10));
        assert!(y.data.iter().all(|&v| v == 1.25));
        let single = upsample_bilinear_x2(&TensorCHW::new(1, 1, 1, vec![-3.0]).unwrap());
        assert_eq!(single.data, vec![-3.0; 4]);
    }

    #[test]
    fn ramp_matches_half_pixel_formula() {
        let x = TensorCHW::new(1, 1, 4, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample_bilinear_x2(&x);
        // source coordinate of output j is (j + 0.5) / 2 - 0.5, clamped to [0, 3]
        let expected: Vec<f32> = (0..8)
            .map(|j| (((j as f32) + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0))
            .collect();
        assert_eq!(&y.data[..8], &expected[..]);
        assert_eq!(&y.data[8..], &expected[..]);
    }

    #[test]
    fn backward_is_adjoint() {
        let x = TensorCHW::from_fn(2, 3, 4, |c, y, x| {
            ((c * 13 + y * 5 + x * 3) % 7) as f32 - 3.0
        });
        let g = TensorCHW::from_fn(2, 6, 8, |c, y, x| {
            ((c * 11 + y * 3 + x * 5) % 9) as f32 - 4.0
        });
        let lhs: f64 = upsample_bilinear_x2(&x)
            .data
            .iter()
            .zip(&g.data)
            .map(|(a, b)| (*a * *b) as f64)
            .sum();
        let rhs: f64 = upsample_bilinear_x2_backward(&g)
            .data
            .iter()
            .zip(&x.data)
            .map(|(a, b)| (*a * *b) as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
