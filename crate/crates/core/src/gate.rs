//! Pre-network slice gate: drops tumor-free slices by background fraction
//! and upper/lower symmetry scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::volume::{Modality, PatientCase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SSIMParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Dynamic range the inputs are rescaled to.
    pub dynamic_range: f64,
}

impl Default for SSIMParams {
    fn default() -> Self {
        let l = 1.0;
        let c2 = (0.03f64 * l).powi(2);
        Self {
            c1: (0.01f64 * l).powi(2),
            c2,
            c3: c2 / 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            dynamic_range: l,
        }
    }
}

impl SSIMParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidConfig(
                "SSIM constants and range must be positive".into(),
            ));
        }
        if ![self.alpha, self.beta, self.gamma]
            .iter()
            .all(|e| e.is_finite() && *e >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "SSIM exponents must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub tau_bg: f64,
    pub tau_sym: f64,
    pub tau_outline: f64,
    pub gate_modality: Modality,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            tau_bg: 0.97,
            tau_sym: 0.28,
            tau_outline: 0.50,
            gate_modality: Modality::Flair,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_bg", self.tau_bg),
            ("tau_sym", self.tau_sym),
            ("tau_outline", self.tau_outline),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateCriterion {
    EndBackground,
    HealthySymmetric,
    IncompleteOutline,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceVerdict {
    pub slice: usize,
    pub retained: bool,
    pub criterion: GateCriterion,
    pub bg_fraction: f64,
    /// `None` when no pixel pair lies inside the brain.
    pub content_ssim: Option<f64>,
    pub outline_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceGateReport {
    pub slices: Vec<SliceVerdict>,
}

impl SliceGateReport {
    /// Every slice retained; used when gating is disabled.
    pub fn retain_all(depth: usize) -> Self {
        let slices = (0..depth)
            .map(|slice| SliceVerdict {
                slice,
                retained: true,
                criterion: GateCriterion::None,
                bg_fraction: 0.0,
                content_ssim: None,
                outline_ssim: 1.0,
            })
            .collect();
        Self { slices }
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        self.slices
            .iter()
            .filter(|v| v.retained)
            .map(|v| v.slice)
            .collect()
    }

    pub fn removed_count(&self) -> usize {
        self.slices.iter().filter(|v| !v.retained).count()
    }

    pub fn count(&self, criterion: GateCriterion) -> usize {
        self.slices
            .iter()
            .filter(|v| v.criterion == criterion)
            .count()
    }

    /// One JSON record per slice, newline-terminated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for v in &self.slices {
            out.push_str(&serde_json::to_string(v)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let slices = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<SliceVerdict>, _>>()?;
        Ok(Self { slices })
    }
}

fn signed_pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(e)
    }
}

fn ssim_pairs(pairs: impl Iterator<Item = (f64, f64)> + Clone, params: &SSIMParams) -> f64 {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs.clone() {
        n += 1.0;
        sx += x;
        sy += y;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
        cxy += (x - mx) * (y - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let (sdx, sdy) = (vx.sqrt(), vy.sqrt());
    let l = (2.0 * mx * my + params.c1) / (mx * mx + my * my + params.c1);
    let c = (2.0 * sdx * sdy + params.c2) / (vx + vy + params.c2);
    let s = (cxy + params.c3) / (sdx * sdy + params.c3);
    signed_pow(l, params.alpha) * signed_pow(c, params.beta) * signed_pow(s, params.gamma)
}

/// Luminance × contrast × structure with statistics over the whole rasters.
pub fn ssim_global(x: &[f64], y: &[f64], params: &SSIMParams) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "SSIM over {} and {} values",
            x.len(),
            y.len()
        )));
    }
    Ok(ssim_pairs(x.iter().copied().zip(y.iter().copied()), params))
}

/// Fraction of pixels with intensity ≤ 0.
pub fn background_fraction(slice: &[f32]) -> f64 {
    slice.iter().filter(|&&v| v <= 0.0).count() as f64 / slice.len() as f64
}

/// Rows `[0, H/2)` and rows `[H/2, H)` flipped vertically; an odd last row is dropped.
pub fn half_split_mirror<T: Copy>(
    slice: &[T],
    height: usize,
    width: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    if slice.len() != height * width {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for {height}x{width}",
            slice.len()
        )));
    }
    let half = height / 2;
    let upper = slice[..half * width].to_vec();
    let mut lower = Vec::with_capacity(half * width);
    for r in (half..2 * half).rev() {
        lower.extend_from_slice(&slice[r * width..(r + 1) * width]);
    }
    Ok((upper, lower))
}

/// Filled silhouette: 1 where intensity > 0.
pub fn outline_mask(slice: &[f32]) -> Vec<u8> {
    slice.iter().map(|&v| u8::from(v > 0.0)).collect()
}

/// Outline test score: SSIM of the two silhouette halves.
pub fn outline_ssim(
    slice: &[f32],
    height: usize,
    width: usize,
    params: &SSIMParams,
) -> Result<f64> {
    let mask: Vec<f64> = outline_mask(slice).into_iter().map(f64::from).collect();
    let (upper, lower) = half_split_mirror(&mask, height, width)?;
    ssim_global(&upper, &lower, params)
}

/// Content test score. The slice is rescaled to `[0, dynamic_range]`, then
/// the upper half is compared to the mirrored lower half over the pixel
/// pairs lying inside the brain in both halves.
pub fn content_ssim(
    slice: &[f32],
    height: usize,
    width: usize,
    params: &SSIMParams,
) -> Result<Option<f64>> {
    let (upper, lower) = half_split_mirror(slice, height, width)?;
    let (lo, hi) = slice
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = (hi - lo) as f64;
    let scale = |v: f32| {
        if span > 0.0 {
            (v - lo) as f64 / span * params.dynamic_range
        } else {
            0.0
        }
    };
    let pairs = upper
        .iter()
        .zip(&lower)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (scale(*a), scale(*b)));
    if pairs.clone().next().is_none() {
        return Ok(None);
    }
    Ok(Some(ssim_pairs(pairs, params)))
}

/// Verdict for one slice; tests run in the order background, outline, content.
pub fn gate_slice(
    slice: &[f32],
    height: usize,
    width: usize,
    index: usize,
    thresholds: &GateThresholds,
    params: &SSIMParams,
) -> Result<SliceVerdict> {
    let bg_fraction = background_fraction(slice);
    let outline = outline_ssim(slice, height, width, params)?;
    let content = content_ssim(slice, height, width, params)?;
    let criterion = if bg_fraction >= thresholds.tau_bg {
        GateCriterion::EndBackground
    } else if outline <= thresholds.tau_outline {
        GateCriterion::IncompleteOutline
    } else if content.is_some_and(|s| s >= thresholds.tau_sym) {
        GateCriterion::HealthySymmetric
    } else {
        GateCriterion::None
    };
    Ok(SliceVerdict {
        slice: index,
        retained: criterion == GateCriterion::None,
        criterion,
        bg_fraction,
        content_ssim: content,
        outline_ssim: outline,
    })
}

/// Gates every slice of the case on raw intensities of the gate modality.
pub fn gate_case(
    case: &PatientCase,
    thresholds: &GateThresholds,
    params: &SSIMParams,
    exec: Exec,
) -> Result<SliceGateReport> {
    thresholds.validate()?;
    params.validate()?;
    let v = case.volume(thresholds.gate_modality);
    let slices = exec
        .map_range(v.depth, |z| {
            gate_slice(v.slice(z), v.height, v.width, z, thresholds, params)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceGateReport { slices })
}

/// Outcome of one threshold setting over labeled cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub tau_sym: f64,
    pub tau_outline: f64,
    pub tau_bg: f64,
    pub slices: usize,
    pub removed: usize,
    pub tumor_slices_removed: usize,
}

/// Sweeps `tau_sym` over `grid` with the other thresholds fixed; cases need truth.
pub fn calibrate(
    cases: &[PatientCase],
    base: &GateThresholds,
    params: &SSIMParams,
    grid: &[f64],
    exec: Exec,
) -> Result<Vec<CalibrationRow>> {
    let mut verdicts = Vec::new();
    let ungated = GateThresholds {
        tau_sym: f64::INFINITY,
        ..*base
    };
    for case in cases {
        let truth = case
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("{} has no truth", case.case_id)))?;
        let v = case.volume(base.gate_modality);
        let scored = exec
            .map_range(v.depth, |z| {
                gate_slice(v.slice(z), v.height, v.width, z, &ungated, params)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        for s in scored {
            let tumor = truth.slice(s.slice).iter().any(|&l| l != 0);
            verdicts.push((s, tumor));
        }
    }
    Ok(grid
        .iter()
        .map(|&tau| {
            let removed: Vec<bool> = verdicts
                .iter()
                .map(|(s, _)| !s.retained || s.content_ssim.is_some_and(|c| c >= tau))
                .collect();
            CalibrationRow {
                tau_sym: tau,
                tau_outline: base.tau_outline,
                tau_bg: base.tau_bg,
                slices: verdicts.len(),
                removed: removed.iter().filter(|&&r| r).count(),
                tumor_slices_removed: removed
                    .iter()
                    .zip(&verdicts)
                    .filter(|(r, (_, t))| **r && *t)
                    .count(),
            }
        })
        .collect())
}
