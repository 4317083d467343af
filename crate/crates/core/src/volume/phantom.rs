//! Seeded synthetic 4-modality brain with a nested ellipsoidal tumor.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{label, LabelVolume, Modality, PatientCase, Volume3D};
use crate::error::{Error, Result};

/// Tissue intensities per modality (FLAIR, T1, T1c, T2), as fractions of
/// `intensity_scale`.
const BRAIN: [f32; 4] = [0.45, 0.50, 0.50, 0.42];
const EDEMA: [f32; 4] = [0.90, 0.38, 0.42, 0.88];
const NECROSIS: [f32; 4] = [0.60, 0.22, 0.20, 0.95];
const ENHANCING: [f32; 4] = [0.75, 0.42, 1.00, 0.62];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Slices, rows, columns.
    pub dims: [usize; 3],
    /// Brain ellipsoid semi-axes (slice, row, column), centered in the volume.
    pub brain_radii: [f32; 3],
    /// Whole-tumor ellipsoid semi-axes before jitter.
    pub tumor_radii: [f32; 3],
    /// Tumor-core semi-axes as a fraction of the whole-tumor semi-axes.
    pub core_ratio: f32,
    /// Necrotic center as a fraction of the core; the rest of the core is the enhancing rim.
    pub necrosis_ratio: f32,
    /// Relative per-case jitter of tumor radii and tissue contrasts.
    pub jitter: f32,
    /// Largest tumor-center shift along the slice axis, in slices.
    pub slice_shift: f32,
    /// Per-voxel Gaussian noise, relative to the healthy-tissue level.
    pub noise: f32,
    /// Amplitude of the smooth, midline-symmetric tissue pattern.
    pub texture: f32,
    pub intensity_scale: f32,
    /// Brain-bearing slices at the high end whose upper half is missing.
    pub clipped_slices: usize,
}

impl Default for PhantomParams {
    /// 155 × 240 × 240, the BRATS geometry.
    fn default() -> Self {
        Self {
            dims: [155, 240, 240],
            brain_radii: [60.0, 78.0, 92.0],
            tumor_radii: [18.0, 22.0, 24.0],
            core_ratio: 0.6,
            necrosis_ratio: 0.55,
            jitter: 0.15,
            slice_shift: 15.0,
            noise: 0.15,
            texture: 0.1,
            intensity_scale: 1000.0,
            clipped_slices: 0,
        }
    }
}

impl PhantomParams {
    /// A 16-slice volume with a large tumor, for training and tests that need speed.
    pub fn desk() -> Self {
        Self {
            dims: [16, 240, 240],
            brain_radii: [8.0, 78.0, 92.0],
            tumor_radii: [6.0, 26.0, 30.0],
            core_ratio: 0.7,
            necrosis_ratio: 0.5,
            slice_shift: 1.0,
            ..Self::default()
        }
    }

    fn center(&self) -> [f32; 3] {
        self.dims.map(|d| (d as f32 - 1.0) / 2.0)
    }

    fn has_tumor(&self) -> bool {
        self.tumor_radii.iter().all(|&r| r > 0.0)
    }

    /// Slice interval `[lo, hi]` of brain-bearing slices.
    fn brain_slices(&self) -> (usize, usize) {
        let c = self.center()[0];
        let r = self.brain_radii[0];
        let lo = (0..self.dims[0])
            .find(|&z| (z as f32 - c).abs() < r)
            .unwrap_or(0);
        let hi = (0..self.dims[0])
            .rev()
            .find(|&z| (z as f32 - c).abs() < r)
            .unwrap_or(0);
        (lo, hi)
    }

    /// Allowed range of the tumor center along the slice axis for a tumor of
    /// slice semi-axis `rz`: tumor slices stay strictly inside the brain-bearing
    /// range, off the first and last slice, and away from clipped slices.
    fn tumor_slice_range(&self, rz: f32) -> Option<(f32, f32)> {
        let (lo, hi) = self.brain_slices();
        let top = hi.checked_sub(self.clipped_slices)? as f32;
        let lo = lo.max(1) as f32 - 1.0 + rz;
        let hi = top.min(self.dims[0] as f32 - 2.0) + 1.0 - rz;
        let c = self.center()[0];
        let (lo, hi) = (lo.max(c - self.slice_shift), hi.min(c + self.slice_shift));
        (lo <= hi).then_some((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dims.iter().any(|&d| d < 2) {
            return bad(format!("phantom dims {:?} too small", self.dims));
        }
        for a in 0..3 {
            let r = self.brain_radii[a];
            if !(r > 0.0) || 2.0 * r > self.dims[a] as f32 + 1.0 {
                return bad(format!(
                    "brain semi-axis {r} does not fit dimension {}",
                    self.dims[a]
                ));
            }
            let t = self.tumor_radii[a];
            if !(t >= 0.0) || t * (1.0 + self.jitter) > r {
                return bad(format!(
                    "tumor semi-axis {t} does not fit brain semi-axis {r}"
                ));
            }
        }
        if !(self.core_ratio > 0.0 && self.core_ratio <= 1.0)
            || !(self.necrosis_ratio > 0.0 && self.necrosis_ratio < 1.0)
        {
            return bad("nesting ratios must satisfy 0 < necrosis < 1 and 0 < core ≤ 1".into());
        }
        if !(0.0..0.5).contains(&self.jitter)
            || self.noise < 0.0
            || self.texture < 0.0
            || self.slice_shift < 0.0
        {
            return bad("jitter must be in [0, 0.5); noise, texture, shift non-negative".into());
        }
        if !(self.intensity_scale > 0.0) {
            return bad("intensity scale must be positive".into());
        }
        let (lo, hi) = self.brain_slices();
        if self.clipped_slices > hi - lo {
            return bad(format!(
                "{} clipped slices exceed the brain",
                self.clipped_slices
            ));
        }
        if self.has_tumor()
            && self
                .tumor_slice_range(self.tumor_radii[0] * (1.0 + self.jitter))
                .is_none()
        {
            return bad("tumor cannot be placed with tumor-free slices at both ends".into());
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f32; 3],
    radii: [f32; 3],
}

impl Ellipsoid {
    fn rho2(&self, p: [f32; 3]) -> f32 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum()
    }

    fn contains(&self, p: [f32; 3]) -> bool {
        self.rho2(p) < 1.0
    }

    fn scaled(&self, s: f32) -> Ellipsoid {
        Ellipsoid {
            center: self.center,
            radii: self.radii.map(|r| r * s),
        }
    }
}

struct Tumor {
    whole: Ellipsoid,
    core: Ellipsoid,
    necrosis: Ellipsoid,
}

fn place_tumor(params: &PhantomParams, rng: &mut ChaCha8Rng) -> Option<Tumor> {
    if !params.has_tumor() {
        return None;
    }
    let j = params.jitter;
    let radii = params
        .tumor_radii
        .map(|r| r * rng.random_range(1.0 - j..=1.0 + j));
    let (zlo, zhi) = params.tumor_slice_range(radii[0]).expect("validated");
    let c = params.center();
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let center = [
        rng.random_range(zlo..=zhi),
        c[1] + side * rng.random_range(0.15..0.45) * params.brain_radii[1],
        c[2] + rng.random_range(-0.35..0.35) * params.brain_radii[2],
    ];
    let whole = Ellipsoid { center, radii };
    let core = whole.scaled(params.core_ratio);
    let necrosis = core.scaled(params.necrosis_ratio);
    Some(Tumor {
        whole,
        core,
        necrosis,
    })
}

/// Generates one case; a pure function of `seed` and `params`.
pub fn gen_phantom(seed: u64, params: &PhantomParams) -> Result<PatientCase> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [d, h, w] = params.dims;
    let c = params.center();
    let brain = Ellipsoid {
        center: c,
        radii: params.brain_radii,
    };
    let tumor = place_tumor(params, &mut rng);
    let contrast: [[f32; 4]; 4] = [BRAIN, EDEMA, NECROSIS, ENHANCING].map(|t| {
        t.map(|v| {
            v * params.intensity_scale
                * rng.random_range(1.0 - params.jitter / 2.0..=1.0 + params.jitter / 2.0)
        })
    });
    let phase: [f32; 2] = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
    let (_, top) = params.brain_slices();
    let clip_from = top + 1 - params.clipped_slices;

    let n = d * h * w;
    let mut labels = vec![label::BACKGROUND; n];
    let mut tissue = vec![u8::MAX; n];
    let mut pattern = vec![0f32; n];
    for z in 0..d {
        for y in 0..h {
            let clipped = z >= clip_from && (y as f32) < c[1];
            for x in 0..w {
                let p = [z as f32, y as f32, x as f32];
                let rho2 = brain.rho2(p);
                if rho2 >= 1.0 || clipped {
                    continue;
                }
                let i = (z * h + y) * w + x;
                // Mirror-symmetric about the row midline.
                let dy = (p[1] - c[1]).abs();
                pattern[i] = 1.0
                    + params.texture
                        * (0.8 * rho2
                            + 0.5
                                * (dy / 9.0 + phase[0]).cos()
                                * ((p[2] - c[2]) / 11.0 + phase[1]).cos());
                let class = match &tumor {
                    Some(t) if t.necrosis.contains(p) => label::NCR_NET,
                    Some(t) if t.core.contains(p) => label::ENHANCING,
                    Some(t) if t.whole.contains(p) => label::EDEMA,
                    _ => label::BACKGROUND,
                };
                labels[i] = class;
                tissue[i] = match class {
                    label::EDEMA => 1,
                    label::NCR_NET => 2,
                    label::ENHANCING => 3,
                    _ => 0,
                };
            }
        }
    }

    let mut volumes = Vec::with_capacity(4);
    for m in Modality::ALL {
        let mi = m.index();
        let noise = Normal::new(0.0f32, params.noise * contrast[0][mi]).expect("finite std");
        let mut voxels = vec![0f32; n];
        for i in 0..n {
            if tissue[i] == u8::MAX {
                continue;
            }
            let base = contrast[tissue[i] as usize][mi] * pattern[i];
            voxels[i] = (base + noise.sample(&mut rng)).max(1.0);
        }
        volumes.push(Volume3D::new(d, h, w, voxels, m)?);
    }
    let truth = LabelVolume::new(d, h, w, labels)?;
    PatientCase::new(
        format!("phantom-{seed:06}"),
        volumes.try_into().expect("four modalities"),
        Some(truth),
    )
}
