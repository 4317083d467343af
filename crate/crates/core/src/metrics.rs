//! Tumor regions and overlap/boundary metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{label, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    ET,
    WT,
    TC,
}

impl Region {
    /// Column order of reports and tables.
    pub const ALL: [Region; 3] = [Region::ET, Region::WT, Region::TC];

    pub fn contains(self, l: u8) -> bool {
        match self {
            Region::WT => l != label::BACKGROUND,
            Region::TC => l == label::NCR_NET || l == label::ENHANCING,
            Region::ET => l == label::ENHANCING,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::ET => "ET",
            Region::WT => "WT",
            Region::TC => "TC",
        }
    }
}

/// Binary volume, slice-major like [`LabelVolume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    pub dims: [usize; 3],
    pub bits: Vec<bool>,
}

impl Mask3 {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "{} voxels for {dims:?}",
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn region_mask(labels: &LabelVolume, region: Region) -> Mask3 {
    Mask3 {
        dims: labels.dims(),
        bits: labels.labels.iter().map(|&l| region.contains(l)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub p1: usize,
    pub t1: usize,
    pub p0: usize,
    pub t0: usize,
    pub i1: usize,
    pub i0: usize,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Mask3, truth: &Mask3) -> Result<Self> {
        if pred.dims != truth.dims {
            return Err(Error::DimensionMismatch(format!(
                "pred {:?} vs truth {:?}",
                pred.dims, truth.dims
            )));
        }
        let mut c = ConfusionCounts {
            p1: 0,
            t1: 0,
            p0: 0,
            t0: 0,
            i1: 0,
            i0: 0,
        };
        for (&p, &t) in pred.bits.iter().zip(&truth.bits) {
            match (p, t) {
                (true, true) => c.i1 += 1,
                (false, false) => c.i0 += 1,
                _ => {}
            }
            if p {
                c.p1 += 1
            } else {
                c.p0 += 1
            }
            if t {
                c.t1 += 1
            } else {
                c.t0 += 1
            }
        }
        Ok(c)
    }

    /// `2·I1 / (P1 + T1)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        if self.p1 + self.t1 == 0 {
            1.0
        } else {
            2.0 * self.i1 as f64 / (self.p1 + self.t1) as f64
        }
    }

    /// `I1 / T1`; 1 when the truth is empty.
    pub fn sens(&self) -> f64 {
        if self.t1 == 0 {
            1.0
        } else {
            self.i1 as f64 / self.t1 as f64
        }
    }

    /// `I0 / T0`; 1 when the truth covers everything.
    pub fn spec(&self) -> f64 {
        if self.t0 == 0 {
            1.0
        } else {
            self.i0 as f64 / self.t0 as f64
        }
    }

    /// `(P1 − I1) / P1`; 0 for an empty prediction.
    pub fn fdr(&self) -> f64 {
        if self.p1 == 0 {
            0.0
        } else {
            (self.p1 - self.i1) as f64 / self.p1 as f64
        }
    }

    pub fn fnr(&self) -> f64 {
        1.0 - self.sens()
    }
}

pub fn dice_sens_spec(pred: &Mask3, truth: &Mask3) -> Result<(f64, f64, f64)> {
    let c = ConfusionCounts::from_masks(pred, truth)?;
    Ok((c.dice(), c.sens(), c.spec()))
}

pub fn fdr_fnr(pred: &Mask3, truth: &Mask3) -> Result<(f64, f64)> {
    let c = ConfusionCounts::from_masks(pred, truth)?;
    Ok((c.fdr(), c.fnr()))
}

/// Mask voxels with at least one face neighbour outside the mask; voxels
/// beyond the volume edge count as outside.
pub fn boundary_voxels(mask: &Mask3) -> Vec<[usize; 3]> {
    let [d, h, w] = mask.dims;
    let at = |z: usize, y: usize, x: usize| mask.bits[(z * h + y) * w + x];
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !at(z, y, x) {
                    continue;
                }
                let edge = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                if edge
                    || !at(z - 1, y, x)
                    || !at(z + 1, y, x)
                    || !at(z, y - 1, x)
                    || !at(z, y + 1, x)
                    || !at(z, y, x - 1)
                    || !at(z, y, x + 1)
                {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

const FAR: f64 = 1e30;

/// In-place 1D squared distance transform of sampled function `f`.
fn edt_1d(f: &mut [f64], v: &mut [usize], zb: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    zb[0] = f64::NEG_INFINITY;
    zb[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= zb[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= zb[k] {
                v[0] = q;
                zb[0] = f64::NEG_INFINITY;
                zb[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            zb[k] = s;
            zb[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while zb[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *o = (q as f64 - p as f64).powi(2) + f[p];
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance to the nearest of `sites`, on the box
/// `lo..=hi`.
fn squared_edt(sites: &[[usize; 3]], lo: [usize; 3], hi: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let dims = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
    let [d, h, w] = dims;
    let mut g = vec![FAR; d * h * w];
    for s in sites {
        g[((s[0] - lo[0]) * h + (s[1] - lo[1])) * w + (s[2] - lo[2])] = 0.0;
    }
    let n = d.max(h).max(w);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut zb) = (vec![0usize; n], vec![0.0; n + 1]);
    let strides = [h * w, w, 1];
    for axis in [2, 1, 0] {
        let len = dims[axis];
        let stride = strides[axis];
        for base in 0..g.len() {
            if (base / stride) % len != 0 {
                continue;
            }
            for i in 0..len {
                f[i] = g[base + i * stride];
            }
            edt_1d(&mut f[..len], &mut v, &mut zb, &mut out[..len]);
            for i in 0..len {
                g[base + i * stride] = f[i];
            }
        }
    }
    (g, dims)
}

fn directed_p95(from: &[[usize; 3]], to: &[[usize; 3]], lo: [usize; 3], hi: [usize; 3]) -> f64 {
    let (g, [_, h, w]) = squared_edt(to, lo, hi);
    let mut d: Vec<f64> = from
        .iter()
        .map(|s| g[((s[0] - lo[0]) * h + (s[1] - lo[1])) * w + (s[2] - lo[2])].sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    percentile(&d, 95.0)
}

/// Symmetric 95th-percentile boundary distance in voxel units. `Some(0)` when
/// both masks are empty, `None` when exactly one is.
pub fn hausdorff95(pred: &Mask3, truth: &Mask3) -> Result<Option<f64>> {
    if pred.dims != truth.dims {
        return Err(Error::DimensionMismatch(format!(
            "pred {:?} vs truth {:?}",
            pred.dims, truth.dims
        )));
    }
    let a = boundary_voxels(pred);
    let b = boundary_voxels(truth);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(Some(0.0)),
        (true, false) | (false, true) => return Ok(None),
        _ => {}
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    for p in a.iter().chain(&b) {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Ok(Some(
        directed_p95(&a, &b, lo, hi).max(directed_p95(&b, &a, lo, hi)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub dice: f64,
    pub sens: f64,
    pub spec: f64,
    pub fdr: f64,
    pub fnr: f64,
    /// `None` when exactly one of the masks is empty.
    pub hd95: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] = ["dice", "sens", "spec", "fdr", "fnr", "hd95"];

impl RegionMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "dice" => Some(self.dice),
            "sens" => Some(self.sens),
            "spec" => Some(self.spec),
            "fdr" => Some(self.fdr),
            "fnr" => Some(self.fnr),
            "hd95" => self.hd95,
            _ => None,
        }
    }
}

pub const CONVENTIONS: &str = "empty truth and prediction: dice 1, sens 1, hd95 0; empty prediction only: dice 0, sens 0, fdr 0; \
empty truth only: sens 1, hd95 undefined; spec 1 when the truth covers every voxel; \
hd95 over 6-connected boundary voxels, euclidean voxel units, linear-interpolated 95th percentile, max of both directions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub case_id: String,
    #[serde(rename = "ET")]
    pub et: RegionMetrics,
    #[serde(rename = "WT")]
    pub wt: RegionMetrics,
    #[serde(rename = "TC")]
    pub tc: RegionMetrics,
    pub conventions: String,
}

impl RegionReport {
    pub fn region(&self, r: Region) -> &RegionMetrics {
        match r {
            Region::ET => &self.et,
            Region::WT => &self.wt,
            Region::TC => &self.tc,
        }
    }

    /// `case_id,ET_dice,…,TC_hd95`; undefined distances are left empty.
    pub fn csv_header() -> String {
        let mut cols = vec!["case_id".to_string()];
        for r in Region::ALL {
            cols.extend(METRIC_NAMES.iter().map(|m| format!("{}_{m}", r.name())));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.case_id.clone()];
        for r in Region::ALL {
            let m = self.region(r);
            cols.extend(
                METRIC_NAMES
                    .iter()
                    .map(|k| m.get(k).map(|v| format!("{v:.6}")).unwrap_or_default()),
            );
        }
        cols.join(",")
    }
}

pub fn evaluate_region(
    pred: &LabelVolume,
    truth: &LabelVolume,
    region: Region,
) -> Result<RegionMetrics> {
    let p = region_mask(pred, region);
    let t = region_mask(truth, region);
    let c = ConfusionCounts::from_masks(&p, &t)?;
    Ok(RegionMetrics {
        dice: c.dice(),
        sens: c.sens(),
        spec: c.spec(),
        fdr: c.fdr(),
        fnr: c.fnr(),
        hd95: hausdorff95(&p, &t)?,
    })
}

pub fn evaluate_case(
    case_id: &str,
    pred: &LabelVolume,
    truth: &LabelVolume,
) -> Result<RegionReport> {
    Ok(RegionReport {
        case_id: case_id.to_string(),
        et: evaluate_region(pred, truth, Region::ET)?,
        wt: evaluate_region(pred, truth, Region::WT)?,
        tc: evaluate_region(pred, truth, Region::TC)?,
        conventions: CONVENTIONS.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Most frequent value after rounding to two decimals; ties go to the smaller value.
    pub mode: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mut best = (0usize, 0i64);
    let cents: Vec<i64> = sorted.iter().map(|v| (v * 100.0).round() as i64).collect();
    let mut i = 0;
    while i < n {
        let j = cents[i..]
            .iter()
            .position(|&c| c != cents[i])
            .map_or(n, |k| i + k);
        if j - i > best.0 {
            best = (j - i, cents[i]);
        }
        i = j;
    }
    Some(Summary {
        mean,
        median,
        mode: best.1 as f64 / 100.0,
        count: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    /// ET, WT, TC.
    pub regions: [Option<Summary>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub cases: usize,
    pub rows: Vec<AggregateRow>,
    /// Reports whose distance was undefined, per region.
    pub hd95_undefined: [usize; 3],
}

pub fn aggregate(reports: &[RegionReport]) -> AggregateTable {
    let rows = METRIC_NAMES
        .iter()
        .map(|&metric| AggregateRow {
            metric: metric.to_string(),
            regions: Region::ALL.map(|r| {
                let v: Vec<f64> = reports
                    .iter()
                    .filter_map(|rep| rep.region(r).get(metric))
                    .collect();
                summarize(&v)
            }),
        })
        .collect();
    let hd95_undefined = Region::ALL.map(|r| {
        reports
            .iter()
            .filter(|rep| rep.region(r).hd95.is_none())
            .count()
    });
    AggregateTable {
        cases: reports.len(),
        rows,
        hd95_undefined,
    }
}

impl AggregateTable {
    /// One row per metric; columns mean, median, mode, each over ET, WT, TC.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for stat in ["mean", "median", "mode"] {
            for r in Region::ALL {
                out.push_str(&format!(",{stat}_{}", r.name()));
            }
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.metric);
            for stat in 0..3 {
                for s in &row.regions {
                    let cell = s.map(|s| match stat {
                        0 => format!("{:.4}", s.mean),
                        1 => format!("{:.4}", s.median),
                        _ => format!("{:.2}", s.mode),
                    });
                    out.push(',');
                    out.push_str(&cell.unwrap_or_default());
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: [usize; 3], on: &[usize]) -> Mask3 {
        let mut bits = vec![false; dims.iter().product()];
        for &i in on {
            bits[i] = true;
        }
        Mask3 { dims, bits }
    }

    #[test]
    fn region_nesting_on_label_three() {
        let v = LabelVolume::new(1, 1, 2, vec![3, 0]).unwrap();
        let et = region_mask(&v, Region::ET);
        assert_eq!(et, region_mask(&v, Region::TC));
        assert_eq!(et, region_mask(&v, Region::WT));
    }

    #[test]
    fn hand_counted_overlap() {
        let p = mask([4, 4, 4], &[0, 1]);
        let t = mask([4, 4, 4], &[1, 2]);
        let (d, s, sp) = dice_sens_spec(&p, &t).unwrap();
        assert_eq!((d, s), (0.5, 0.5));
        assert!((sp - 61.0 / 62.0).abs() < 1e-15);
        let (fdr, fnr) = fdr_fnr(&p, &t).unwrap();
        assert_eq!((fdr, fnr), (0.5, 0.5));
        assert!((fdr - (1.0 - 1.0 / (2.0 / d - 1.0 / s))).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let e = mask([2, 2, 2], &[]);
        let t = mask([2, 2, 2], &[3]);
        assert_eq!(dice_sens_spec(&e, &e).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(dice_sens_spec(&e, &t).unwrap().0, 0.0);
        assert_eq!(dice_sens_spec(&e, &t).unwrap().1, 0.0);
        assert_eq!(fdr_fnr(&e, &t).unwrap(), (0.0, 1.0));
        assert_eq!(hausdorff95(&e, &e).unwrap(), Some(0.0));
        assert_eq!(hausdorff95(&e, &t).unwrap(), None);
    }

    #[test]
    fn two_voxels_three_apart() {
        let dims = [1, 1, 8];
        assert_eq!(
            hausdorff95(&mask(dims, &[1]), &mask(dims, &[4])).unwrap(),
            Some(3.0)
        );
        let dims = [5, 5, 5];
        let a = mask(dims, &[0]);
        let b = mask(dims, &[(4 * 5 + 4) * 5 + 4]);
        assert!((hausdorff95(&a, &b).unwrap().unwrap() - 48f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let m = mask([3, 4, 5], &[7, 8, 9, 22, 40]);
        assert_eq!(hausdorff95(&m, &m).unwrap(), Some(0.0));
    }

    #[test]
    fn interior_voxels_are_not_boundary() {
        let m = Mask3 {
            dims: [3, 3, 3],
            bits: vec![true; 27],
        };
        assert_eq!(boundary_voxels(&m).len(), 26);
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (0..=10).map(f64::from).collect();
        assert!((percentile(&v, 95.0) - 9.5).abs() < 1e-12);
        assert_eq!(percentile(&[2.0], 95.0), 2.0);
    }

    #[test]
    fn summary_of_table_example() {
        let s = summarize(&[0.89, 0.89, 0.85]).unwrap();
        assert!((s.mean - 0.876_666_666_666_666_7).abs() < 1e-12);
        assert_eq!((s.median, s.mode), (0.89, 0.89));
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn perfect_prediction_report() {
        let v = LabelVolume::new(1, 2, 3, vec![0, 1, 2, 3, 3, 0]).unwrap();
        let r = evaluate_case("a", &v, &v).unwrap();
        for reg in Region::ALL {
            assert_eq!(r.region(reg).dice, 1.0);
            assert_eq!(r.region(reg).hd95, Some(0.0));
        }
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"ET\"") && json.contains("\"hd95\":0.0"));
        let t = aggregate(&[r.clone(), r]);
        let csv = t.to_csv();
        assert!(csv.starts_with("metric,mean_ET,mean_WT,mean_TC,median_ET"));
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("dice,1.0000,1.0000,1.0000"));
    }
}
