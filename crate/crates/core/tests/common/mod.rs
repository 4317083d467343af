//! Independent f64 reference implementations and test helpers.
#![allow(dead_code)]

use ascnn::metrics::Mask3;
use ascnn::tensor::{ConvKernelSet, ConvMode, TensorCHW};
use rand::Rng;

pub mod grad;

pub type Map = Vec<Vec<Vec<f64>>>;

pub fn to_map(t: &TensorCHW) -> Map {
    (0..t.channels)
        .map(|c| {
            (0..t.height)
                .map(|y| (0..t.width).map(|x| t.get(c, y, x) as f64).collect())
                .collect()
        })
        .collect()
}

pub fn flatten(m: &Map) -> Vec<f64> {
    m.iter().flatten().flatten().copied().collect()
}

pub fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> TensorCHW {
    TensorCHW::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0f32..1.0))
}

/// Random tensor with every entry at least `gap` away from zero.
pub fn random_tensor_off_zero(
    rng: &mut impl Rng,
    c: usize,
    h: usize,
    w: usize,
    gap: f32,
) -> TensorCHW {
    TensorCHW::from_fn(c, h, w, |_, _, _| {
        let v = rng.random_range(gap..1.0f32);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn random_kernels(
    rng: &mut impl Rng,
    mode: ConvMode,
    cin: usize,
    cout: usize,
) -> ConvKernelSet {
    let mut k = ConvKernelSet::zeros(mode, cin, cout).unwrap();
    k.weights
        .iter_mut()
        .for_each(|w| *w = rng.random_range(-0.5f32..0.5));
    k.biases
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5f32..0.5));
    k
}

/// Direct summation over the zero-padded neighbourhood.
pub fn conv_naive(x: &Map, mode: ConvMode, cin: usize, cout: usize, w: &[f64], b: &[f64]) -> Map {
    let (h, wd) = (x[0].len(), x[0][0].len());
    let at = |c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x[c][y as usize][xx as usize]
        }
    };
    let mut out = vec![vec![vec![0.0; wd]; h]; cout];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b[o];
                match mode {
                    ConvMode::Standard => {
                        for i in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let wv = w[((o * cin + i) * 3 + ky) * 3 + kx];
                                    s += wv
                                        * at(
                                            i,
                                            y as isize + ky as isize - 1,
                                            xx as isize + kx as isize - 1,
                                        );
                                }
                            }
                        }
                    }
                    ConvMode::Depthwise => {
                        let i = o / (cout / cin);
                        for ky in 0..3 {
                            for kx in 0..3 {
                                s += w[o * 9 + ky * 3 + kx]
                                    * at(
                                        i,
                                        y as isize + ky as isize - 1,
                                        xx as isize + kx as isize - 1,
                                    );
                            }
                        }
                    }
                    ConvMode::Pointwise => {
                        for i in 0..cin {
                            s += w[o * cin + i] * x[i][y][xx];
                        }
                    }
                    ConvMode::Group { .. } => unreachable!(),
                }
                out[o][y][xx] = s;
            }
        }
    }
    out
}

pub fn conv_naive_ks(x: &Map, k: &ConvKernelSet) -> Map {
    let w: Vec<f64> = k.weights.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = k.biases.iter().map(|&v| v as f64).collect();
    conv_naive(x, k.mode, k.in_channels, k.out_channels, &w, &b)
}

pub fn maxpool_naive(x: &Map) -> Map {
    x.iter()
        .map(|ch| {
            (0..ch.len() / 2)
                .map(|y| {
                    (0..ch[0].len() / 2)
                        .map(|xx| {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    m = m.max(ch[2 * y + dy][2 * xx + dx]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Half-pixel-centre source coordinate of output index `i` when doubling `n` samples.
fn src(i: usize, n: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, s - lo as f64)
}

pub fn upsample_naive(x: &Map) -> Map {
    x.iter()
        .map(|ch| {
            let (h, w) = (ch.len(), ch[0].len());
            (0..2 * h)
                .map(|y| {
                    let (y0, y1, fy) = src(y, h);
                    (0..2 * w)
                        .map(|xx| {
                            let (x0, x1, fx) = src(xx, w);
                            let top = ch[y0][x0] * (1.0 - fx) + ch[y0][x1] * fx;
                            let bot = ch[y1][x0] * (1.0 - fx) + ch[y1][x1] * fx;
                            top * (1.0 - fy) + bot * fy
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Per-channel standardization by the channel's own statistics, then γ, β.
pub fn instance_norm_naive(x: &Map, gamma: &[f64], beta: &[f64], eps: f64) -> Map {
    x.iter()
        .enumerate()
        .map(|(c, ch)| {
            let v: Vec<f64> = ch.iter().flatten().copied().collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            ch.iter()
                .map(|row| {
                    row.iter()
                        .map(|a| gamma[c] * (a - mean) / (var + eps).sqrt() + beta[c])
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Per-channel standardization by statistics over the whole batch.
pub fn batch_norm_naive(xs: &[Map], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<Map> {
    let c = xs[0].len();
    let mut stats = vec![(0.0, 0.0); c];
    for (ch, st) in stats.iter_mut().enumerate() {
        let v: Vec<f64> = xs
            .iter()
            .flat_map(|x| x[ch].iter().flatten().copied())
            .collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        *st = (mean, v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n);
    }
    xs.iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(ch, m)| {
                    let (mean, var) = stats[ch];
                    m.iter()
                        .map(|row| {
                            row.iter()
                                .map(|a| gamma[ch] * (a - mean) / (var + eps).sqrt() + beta[ch])
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Mean over pixels of −log softmax(true class).
pub fn cross_entropy_naive(logits: &Map, labels: &[u8]) -> f64 {
    let (k, h, w) = (logits.len(), logits[0].len(), logits[0][0].len());
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let z: Vec<f64> = (0..k).map(|c| logits[c][y][x]).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[labels[y * w + x] as usize];
        }
    }
    total / (h * w) as f64
}

pub fn relu_naive(x: &Map) -> Map {
    x.iter()
        .map(|c| {
            c.iter()
                .map(|r| r.iter().map(|v| v.max(0.0)).collect())
                .collect()
        })
        .collect()
}

/// Positive parts of every channel, then negative-part magnitudes.
pub fn full_relu_naive(x: &Map) -> Map {
    let mut out = relu_naive(x);
    out.extend(x.iter().map(|c| {
        c.iter()
            .map(|r| r.iter().map(|v| (-v).max(0.0)).collect())
            .collect::<Vec<_>>()
    }));
    out
}

pub fn dot(a: &Map, r: &[f64]) -> f64 {
    flatten(a).iter().zip(r).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` at `x` along every coordinate.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xv = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xv[i];
            xv[i] = orig + h;
            let up = f(&xv);
            xv[i] = orig - h;
            let down = f(&xv);
            xv[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

pub fn reshape(v: &[f64], c: usize, h: usize, w: usize) -> Map {
    (0..c)
        .map(|ci| {
            (0..h)
                .map(|y| v[(ci * h + y) * w..(ci * h + y) * w + w].to_vec())
                .collect()
        })
        .collect()
}

pub fn f32s(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// All-pairs symmetric 95th-percentile boundary distance.
pub fn hd95_bruteforce(a: &Mask3, b: &Mask3) -> Option<f64> {
    let [d, h, w] = a.dims;
    let boundary = |m: &Mask3| -> Vec<[i64; 3]> {
        let get = |z: i64, y: i64, x: i64| {
            z >= 0
                && y >= 0
                && x >= 0
                && z < d as i64
                && y < h as i64
                && x < w as i64
                && m.bits[((z as usize) * h + y as usize) * w + x as usize]
        };
        let mut out = vec![];
        for z in 0..d as i64 {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if get(z, y, x)
                        && [
                            (-1, 0, 0),
                            (1, 0, 0),
                            (0, -1, 0),
                            (0, 1, 0),
                            (0, 0, -1),
                            (0, 0, 1),
                        ]
                        .iter()
                        .any(|(dz, dy, dx)| !get(z + dz, y + dy, x + dx))
                    {
                        out.push([z, y, x]);
                    }
                }
            }
        }
        out
    };
    let (ba, bb) = (boundary(a), boundary(b));
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return Some(0.0),
        (true, false) | (false, true) => return None,
        _ => {}
    }
    let directed = |from: &[[i64; 3]], to: &[[i64; 3]]| {
        let mut ds: Vec<f64> = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        ((p[0] - q[0]).pow(2) + (p[1] - q[1]).pow(2) + (p[2] - q[2]).pow(2)) as f64
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        ds.sort_by(f64::total_cmp);
        let rank = 0.95 * (ds.len() - 1) as f64;
        let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
        ds[lo] + (ds[hi] - ds[lo]) * (rank - lo as f64)
    };
    Some(directed(&ba, &bb).max(directed(&bb, &ba)))
}

/// One random convolution against [`conv_naive`]; returns the relative error.
pub fn conv_oracle_case(rng: &mut impl Rng, mode: ConvMode) -> f64 {
    let cin = rng.random_range(1..=6);
    let cout = match mode {
        ConvMode::Depthwise => cin * rng.random_range(1..=3),
        _ => rng.random_range(1..=10),
    };
    let (h, w) = (rng.random_range(1..=14), rng.random_range(1..=14));
    let x = random_tensor(rng, cin, h, w);
    let k = random_kernels(rng, mode, cin, cout);
    let fast = ascnn::tensor::conv2d(&x, &k).unwrap();
    let slow = conv_naive_ks(&to_map(&x), &k);
    rel_err(&f64s(&fast.data), &flatten(&slow), 1e-12)
}

pub const CONV_MODES: [ConvMode; 3] =
    [ConvMode::Standard, ConvMode::Depthwise, ConvMode::Pointwise];

/// Random mask of size up to `max`³ with a random fill density.
pub fn random_mask(rng: &mut impl Rng, dims: [usize; 3]) -> Mask3 {
    let density = rng.random_range(0.0..0.6);
    let bits = (0..dims.iter().product())
        .map(|_| rng.random_bool(density))
        .collect();
    Mask3::new(dims, bits).unwrap()
}

pub fn random_dims(rng: &mut impl Rng, max: usize) -> [usize; 3] {
    [
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
    ]
}

/// Random 3D label volume whose non-background voxels sit in a few slabs.
pub fn random_labels(
    rng: &mut impl Rng,
    depth: usize,
    h: usize,
    w: usize,
) -> ascnn::volume::LabelVolume {
    let mut labels = vec![0u8; depth * h * w];
    for _ in 0..rng.random_range(0..5) {
        let start = rng.random_range(0..depth);
        let end = (start + rng.random_range(1..12)).min(depth);
        let class = rng.random_range(1..=3u8);
        for z in start..end {
            for p in 0..h * w {
                if rng.random_bool(0.3) {
                    labels[z * h * w + p] = class;
                }
            }
        }
    }
    ascnn::volume::LabelVolume::new(depth, h, w, labels).unwrap()
}
