//! Volumes, labels, patient cases, cropping and modality-wise normalization.

mod bvol;
mod phantom;

pub use bvol::{
    load_case, load_case_dir, read_labels, read_volume, save_case, write_labels, write_volume,
    CasePaths,
};
pub use phantom::{gen_phantom, PhantomParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorCHW;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "FLAIR")]
    Flair,
    #[serde(rename = "T1")]
    T1,
    #[serde(rename = "T1c")]
    T1c,
    #[serde(rename = "T2")]
    T2,
}

impl Modality {
    /// Channel order of the network input.
    pub const ALL: [Modality; 4] = [Modality::Flair, Modality::T1, Modality::T1c, Modality::T2];

    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::Flair => "flair",
            Modality::T1 => "t1",
            Modality::T1c => "t1c",
            Modality::T2 => "t2",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flair" => Ok(Modality::Flair),
            "t1" => Ok(Modality::T1),
            "t1c" | "t1ce" => Ok(Modality::T1c),
            "t2" => Ok(Modality::T2),
            other => Err(Error::InvalidConfig(format!("unknown modality {other:?}"))),
        }
    }
}

/// Label alphabet used internally; enhancing tumor is 4 in files.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    /// Necrotic / non-enhancing tumor core.
    pub const NCR_NET: u8 = 1;
    pub const EDEMA: u8 = 2;
    pub const ENHANCING: u8 = 3;
    pub const ENHANCING_EXTERNAL: u8 = 4;
}

/// A scalar raster of `depth` slices of `height × width`, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub voxels: Vec<f32>,
    pub modality: Modality,
}

impl Volume3D {
    pub fn new(
        depth: usize,
        height: usize,
        width: usize,
        voxels: Vec<f32>,
        modality: Modality,
    ) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "empty volume {depth}x{height}x{width}"
            )));
        }
        if voxels.len() != depth * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} voxels for {depth}x{height}x{width}",
                voxels.len()
            )));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::MalformedHeader(format!("non-finite voxel at {i}")));
        }
        Ok(Self {
            depth,
            height,
            width,
            voxels,
            modality,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.voxels[z * p..(z + 1) * p]
    }
}

/// Class ids per voxel in the internal alphabet `{0, 1, 2, 3}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(depth: usize, height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != depth * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {depth}x{height}x{width}",
                labels.len()
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l > label::ENHANCING) {
            return Err(Error::InvalidLabel {
                value: labels[index],
                index,
            });
        }
        Ok(Self {
            depth,
            height,
            width,
            labels,
        })
    }

    pub fn background(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
            labels: vec![0; depth * height * width],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let p = self.height * self.width;
        &self.labels[z * p..(z + 1) * p]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [u8] {
        let p = self.height * self.width;
        &mut self.labels[z * p..(z + 1) * p]
    }
}

/// Four co-registered modality volumes of one patient plus optional truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientCase {
    pub case_id: String,
    /// FLAIR, T1, T1c, T2 in that order.
    pub volumes: [Volume3D; 4],
    pub truth: Option<LabelVolume>,
}

impl PatientCase {
    pub fn new(
        case_id: impl Into<String>,
        volumes: [Volume3D; 4],
        truth: Option<LabelVolume>,
    ) -> Result<Self> {
        let dims = volumes[0].dims();
        for (v, m) in volumes.iter().zip(Modality::ALL) {
            if v.modality != m {
                return Err(Error::InvalidConfig(format!(
                    "expected {m:?} volume, got {:?}",
                    v.modality
                )));
            }
            if v.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "{:?} is {:?}, FLAIR is {dims:?}",
                    v.modality,
                    v.dims()
                )));
            }
        }
        if let Some(t) = &truth {
            if t.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "truth is {:?}, volumes are {dims:?}",
                    t.dims()
                )));
            }
        }
        Ok(Self {
            case_id: case_id.into(),
            volumes,
            truth,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.volumes[0].dims()
    }

    pub fn volume(&self, m: Modality) -> &Volume3D {
        &self.volumes[m.index()]
    }

    /// Copy with every modality standardized over its whole volume.
    pub fn normalized(&self) -> PatientCase {
        PatientCase {
            case_id: self.case_id.clone(),
            volumes: self.volumes.clone().map(|v| modality_normalize(&v)),
            truth: self.truth.clone(),
        }
    }

    /// Network input for slice `z`: the four modalities cropped to `window`.
    pub fn slice_tensor(&self, z: usize, window: &CropWindow) -> Result<TensorCHW> {
        let (h, w) = (self.volumes[0].height, self.volumes[0].width);
        let mut data = Vec::with_capacity(4 * window.out_h * window.out_w);
        for v in &self.volumes {
            data.extend(crop_slice(v.slice(z), h, w, window)?);
        }
        TensorCHW::new(4, window.out_h, window.out_w, data)
    }
}

/// Sub-raster taken out of every slice before it enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub row_offset: usize,
    pub col_offset: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Default for CropWindow {
    fn default() -> Self {
        Self {
            row_offset: 36,
            col_offset: 20,
            out_h: 168,
            out_w: 200,
        }
    }
}

impl CropWindow {
    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        if self.row_offset + self.out_h > height || self.col_offset + self.out_w > width {
            return Err(Error::WindowOutOfBounds {
                row_offset: self.row_offset,
                col_offset: self.col_offset,
                out_h: self.out_h,
                out_w: self.out_w,
                height,
                width,
            });
        }
        Ok(())
    }
}

/// `out(r, c) = slice(r + row_offset, c + col_offset)`.
pub fn crop_slice<T: Copy>(
    slice: &[T],
    height: usize,
    width: usize,
    window: &CropWindow,
) -> Result<Vec<T>> {
    if slice.len() != height * width {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for {height}x{width}",
            slice.len()
        )));
    }
    window.check_fits(height, width)?;
    let mut out = Vec::with_capacity(window.out_h * window.out_w);
    for r in 0..window.out_h {
        let start = (r + window.row_offset) * width + window.col_offset;
        out.extend_from_slice(&slice[start..start + window.out_w]);
    }
    Ok(out)
}

/// Places a cropped label map back at its window; everything else is background.
pub fn embed_labels(
    pred: &[u8],
    window: &CropWindow,
    height: usize,
    width: usize,
) -> Result<Vec<u8>> {
    window.check_fits(height, width)?;
    if pred.len() != window.out_h * window.out_w {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {}x{} window",
            pred.len(),
            window.out_h,
            window.out_w
        )));
    }
    let mut out = vec![label::BACKGROUND; height * width];
    for r in 0..window.out_h {
        let start = (r + window.row_offset) * width + window.col_offset;
        out[start..start + window.out_w]
            .copy_from_slice(&pred[r * window.out_w..(r + 1) * window.out_w]);
    }
    Ok(out)
}

/// Guard below which a volume is treated as constant.
pub const NORMALIZE_MIN_STD: f64 = 1e-8;

/// `(v − μ) / σ` with μ, σ over every voxel of the volume (background
/// included); a constant volume maps to zeros.
pub fn modality_normalize(volume: &Volume3D) -> Volume3D {
    let n = volume.voxels.len() as f64;
    let mean = volume.voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = volume
        .voxels
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let voxels = if std < NORMALIZE_MIN_STD {
        vec![0.0; volume.voxels.len()]
    } else {
        volume
            .voxels
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect()
    };
    Volume3D {
        voxels,
        ..volume.clone()
    }
}
