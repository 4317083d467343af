//! BVOL v1: one JSON header line, then the raw little-endian raster.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{label, LabelVolume, Modality, PatientCase, Volume3D};
use crate::error::{Error, Result};

const MAGIC: &str = "BVOL1";
const MAX_HEADER: u64 = 4096;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    dtype: String,
    dims: [usize; 3],
    modality: Option<String>,
}

fn modality_tag(m: Modality) -> &'static str {
    match m {
        Modality::Flair => "FLAIR",
        Modality::T1 => "T1",
        Modality::T1c => "T1c",
        Modality::T2 => "T2",
    }
}

fn write_header(w: &mut impl Write, header: &Header) -> Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = Vec::new();
    r.take(MAX_HEADER).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader("missing header terminator".into()));
    }
    let header: Header = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}",
            header.magic
        )));
    }
    if header.dims.contains(&0) {
        return Err(Error::MalformedHeader(format!(
            "zero dimension in {:?}",
            header.dims
        )));
    }
    Ok(header)
}

fn read_payload(r: &mut impl Read, bytes: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; bytes];
    r.read_exact(&mut buf)
        .map_err(|_| Error::MalformedHeader(format!("payload shorter than {bytes} bytes")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::MalformedHeader(
            "trailing bytes after payload".into(),
        ));
    }
    Ok(buf)
}

pub fn write_volume(path: &Path, volume: &Volume3D) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_header(
        &mut w,
        &Header {
            magic: MAGIC.into(),
            dtype: "f32le".into(),
            dims: volume.dims(),
            modality: Some(modality_tag(volume.modality).into()),
        },
    )?;
    for v in &volume.voxels {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let header = read_header(&mut r)?;
    if header.dtype != "f32le" {
        return Err(Error::MalformedHeader(format!(
            "expected f32le volume, got {:?}",
            header.dtype
        )));
    }
    let modality: Modality = header
        .modality
        .as_deref()
        .ok_or_else(|| Error::MalformedHeader("volume without modality".into()))?
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("unknown modality {:?}", header.modality)))?;
    let [d, h, w] = header.dims;
    let raw = read_payload(&mut r, d * h * w * 4)?;
    let voxels = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3D::new(d, h, w, voxels, modality)
}

/// Writes labels with enhancing tumor as 4.
pub fn write_labels(path: &Path, labels: &LabelVolume) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_header(
        &mut w,
        &Header {
            magic: MAGIC.into(),
            dtype: "u8".into(),
            dims: labels.dims(),
            modality: None,
        },
    )?;
    let external: Vec<u8> = labels
        .labels
        .iter()
        .map(|&l| {
            if l == label::ENHANCING {
                label::ENHANCING_EXTERNAL
            } else {
                l
            }
        })
        .collect();
    w.write_all(&external)?;
    w.flush()?;
    Ok(())
}

/// Reads external labels {0, 1, 2, 4} into the internal alphabet.
pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let header = read_header(&mut r)?;
    if header.dtype != "u8" {
        return Err(Error::MalformedHeader(format!(
            "expected u8 labels, got {:?}",
            header.dtype
        )));
    }
    let [d, h, w] = header.dims;
    let mut labels = read_payload(&mut r, d * h * w)?;
    for (index, l) in labels.iter_mut().enumerate() {
        *l = match *l {
            0..=2 => *l,
            label::ENHANCING_EXTERNAL => label::ENHANCING,
            value => return Err(Error::InvalidLabel { value, index }),
        };
    }
    LabelVolume::new(d, h, w, labels)
}

/// File locations of one case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasePaths {
    /// FLAIR, T1, T1c, T2.
    pub modalities: [PathBuf; 4],
    pub truth: Option<PathBuf>,
}

impl CasePaths {
    /// `<dir>/{flair,t1,t1c,t2}.bvol`, plus `seg.bvol` when present.
    pub fn in_dir(dir: &Path) -> Self {
        let modalities = Modality::ALL.map(|m| dir.join(format!("{}.bvol", m.file_stem())));
        let seg = dir.join("seg.bvol");
        let truth = seg.exists().then_some(seg);
        Self { modalities, truth }
    }
}

pub fn load_case(case_id: &str, paths: &CasePaths) -> Result<PatientCase> {
    let mut volumes = Vec::with_capacity(4);
    for (p, m) in paths.modalities.iter().zip(Modality::ALL) {
        let v = read_volume(p)?;
        if v.modality != m {
            return Err(Error::MalformedHeader(format!(
                "{} holds {:?}, expected {m:?}",
                p.display(),
                v.modality
            )));
        }
        volumes.push(v);
    }
    let truth = paths.truth.as_deref().map(read_labels).transpose()?;
    let volumes: [Volume3D; 4] = volumes.try_into().expect("four modalities");
    PatientCase::new(case_id, volumes, truth)
}

/// Loads a case directory; the case id is the directory name.
pub fn load_case_dir(dir: &Path) -> Result<PatientCase> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_case(&id, &CasePaths::in_dir(dir))
}

/// Writes the case as a directory understood by [`load_case_dir`].
pub fn save_case(dir: &Path, case: &PatientCase) -> Result<()> {
    fs::create_dir_all(dir)?;
    for v in &case.volumes {
        write_volume(&dir.join(format!("{}.bvol", v.modality.file_stem())), v)?;
    }
    if let Some(t) = &case.truth {
        write_labels(&dir.join("seg.bvol"), t)?;
    }
    Ok(())
}
