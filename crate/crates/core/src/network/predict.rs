use super::state::NetworkState;
use crate::error::{Error, Result};
use crate::gate::SliceGateReport;
use crate::par::Exec;
use crate::tensor::TensorCHW;
use crate::volume::{embed_labels, CropWindow, LabelVolume, PatientCase};

/// Per-pixel class of highest score; ties go to the lower class.
pub fn argmax_labels(logits: &TensorCHW) -> Vec<u8> {
    let plane = logits.plane();
    (0..plane)
        .map(|i| {
            let mut best = 0;
            for c in 1..logits.channels {
                if logits.data[c * plane + i] > logits.data[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Labels a raw case: modality normalization, then for each retained slice
/// crop, inference, argmax and embedding. Removed slices are background.
pub fn predict_case(
    case: &PatientCase,
    state: &NetworkState,
    report: &SliceGateReport,
    window: &CropWindow,
    exec: Exec,
) -> Result<LabelVolume> {
    let [d, h, w] = case.dims();
    if report.slices.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "gate report has {} slices, case has {d}",
            report.slices.len()
        )));
    }
    window.check_fits(h, w)?;
    if (window.out_h, window.out_w) != (state.spec.input_height, state.spec.input_width) {
        return Err(Error::InvalidShape(format!(
            "window {}x{} does not match network input {}x{}",
            window.out_h, window.out_w, state.spec.input_height, state.spec.input_width
        )));
    }
    let mut out = LabelVolume::background(d, h, w);
    let retained = report.retained_indices();
    if retained.is_empty() {
        return Ok(out);
    }
    if !state.norms_initialized() {
        return Err(Error::UninitializedStats);
    }
    let norm = case.normalized();
    let slices = exec
        .map(&retained, |&z| -> Result<Vec<u8>> {
            let logits = state.infer(&norm.slice_tensor(z, window)?)?;
            embed_labels(&argmax_labels(&logits), window, h, w)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for (&z, labels) in retained.iter().zip(slices) {
        out.slice_mut(z).copy_from_slice(&labels);
    }
    Ok(out)
}
