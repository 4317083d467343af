//! Post-network cleanup by slice-run persistence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{label, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFilterParams {
    pub min_wt_run: usize,
    pub min_et_run: usize,
}

impl Default for RunFilterParams {
    fn default() -> Self {
        Self {
            min_wt_run: 7,
            min_et_run: 6,
        }
    }
}

impl RunFilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_wt_run == 0 || self.min_et_run == 0 {
            return Err(Error::InvalidConfig(
                "run lengths must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Maximal runs `[start, end)` of consecutive slices for which `present` holds.
pub fn slice_runs(present: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (z, &p) in present.iter().enumerate() {
        match (p, start) {
            (true, None) => start = Some(z),
            (false, Some(s)) => {
                runs.push((s, z));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, present.len()));
    }
    runs
}

fn presence(v: &LabelVolume, hit: impl Fn(u8) -> bool) -> Vec<bool> {
    (0..v.depth)
        .map(|z| v.slice(z).iter().any(|&l| hit(l)))
        .collect()
}

/// Erases tumor in whole-tumor runs shorter than `min_wt_run`, then turns
/// enhancing tumor in runs shorter than `min_et_run` into class 1.
pub fn refine_labels(pred: &LabelVolume, params: &RunFilterParams) -> Result<LabelVolume> {
    params.validate()?;
    if let Some(index) = pred.labels.iter().position(|&l| l > label::ENHANCING) {
        return Err(Error::InvalidLabel {
            value: pred.labels[index],
            index,
        });
    }
    let mut out = pred.clone();
    for (a, b) in slice_runs(&presence(&out, |l| l != label::BACKGROUND)) {
        if b - a < params.min_wt_run {
            for z in a..b {
                out.slice_mut(z).fill(label::BACKGROUND);
            }
        }
    }
    for (a, b) in slice_runs(&presence(&out, |l| l == label::ENHANCING)) {
        if b - a < params.min_et_run {
            for z in a..b {
                for l in out.slice_mut(z) {
                    if *l == label::ENHANCING {
                        *l = label::NCR_NET;
                    }
                }
            }
        }
    }
    Ok(out)
}
