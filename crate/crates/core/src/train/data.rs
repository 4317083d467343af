use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{gate_case, GateThresholds, SSIMParams};
use crate::par::Exec;
use crate::tensor::TensorCHW;
use crate::volume::{crop_slice, CropWindow, PatientCase};

/// One network input with its per-pixel classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: TensorCHW,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flip {
    None,
    UpDown,
    LeftRight,
}

impl Flip {
    /// Variants each sample contributes when augmenting.
    pub const AUGMENTED: [Flip; 3] = [Flip::None, Flip::UpDown, Flip::LeftRight];
}

fn flip_plane<T: Copy>(data: &[T], height: usize, width: usize, flip: Flip) -> Vec<T> {
    match flip {
        Flip::None => data.to_vec(),
        Flip::UpDown => (0..height)
            .rev()
            .flat_map(|r| data[r * width..(r + 1) * width].iter().copied())
            .collect(),
        Flip::LeftRight => (0..height)
            .flat_map(|r| data[r * width..(r + 1) * width].iter().rev().copied())
            .collect(),
    }
}

impl Sample {
    pub fn flipped(&self, flip: Flip) -> Sample {
        let input = match flip {
            Flip::None => self.input.clone(),
            Flip::UpDown => self.input.flip_vertical(),
            Flip::LeftRight => self.input.flip_horizontal(),
        };
        Sample {
            input,
            labels: flip_plane(&self.labels, self.input.height, self.input.width, flip),
        }
    }
}

/// Each sample followed by its up-down and left-right flips.
pub fn augment(samples: &[Sample]) -> Vec<Sample> {
    samples
        .iter()
        .flat_map(|s| Flip::AUGMENTED.map(|f| s.flipped(f)))
        .collect()
}

/// Gate each case, normalize it, and crop every retained slice with its truth.
pub fn collect_samples(
    cases: &[PatientCase],
    window: &CropWindow,
    thresholds: &GateThresholds,
    ssim: &SSIMParams,
    exec: Exec,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for case in cases {
        let truth = case.truth.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("training case {} has no truth", case.case_id))
        })?;
        let [_, h, w] = case.dims();
        let report = gate_case(case, thresholds, ssim, exec)?;
        let norm = case.normalized();
        for z in report.retained_indices() {
            out.push(Sample {
                input: norm.slice_tensor(z, window)?,
                labels: crop_slice(truth.slice(z), h, w, window)?,
            });
        }
    }
    Ok(out)
}
