//! Segmentation overlap, surface distance and deformation smoothness.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::deform::{jacobian_det, DeformationField};
use crate::error::{Error, Result};
use crate::volume::labels::for_each_neighbor6;
use crate::volume::{check_spacing, Dims, LabelId, LabelVolume};

/// Determinants are clamped to this before taking the logarithm.
pub const LOG_JACOBIAN_FLOOR: f64 = 1e-9;

/// `2|A ∩ B| / (|A| + |B|)` for one label; 1 when both are empty.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: LabelId) -> Result<f64> {
    a.dims().check_same(&b.dims(), "dice")?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Number of scores averaged by [`dice30`]: `ceil(0.3 * n)`.
pub fn dice30_count(n: usize) -> usize {
    (3 * n).div_ceil(10)
}

/// Mean of the lowest 30% (rounded up) of the scores.
pub fn dice30(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("dice30 needs at least one score"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("dice30: NaN score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = dice30_count(scores.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Labelled voxels with at least one unlabelled 6-neighbour or on a face.
pub fn boundary_mask(l: &LabelVolume, label: LabelId) -> Vec<bool> {
    let dims = l.dims();
    let labels = l.labels();
    (0..dims.len())
        .map(|i| {
            if labels[i] != label {
                return false;
            }
            let p = dims.coords(i);
            if (0..3).any(|a| p[a] == 0 || p[a] + 1 == dims.axis(a)) {
                return true;
            }
            let mut outside = false;
            for_each_neighbor6(dims, i, |j| outside |= labels[j] != label);
            outside
        })
        .collect()
}

/// One-dimensional squared distance transform of `f` at sample spacing `h`
/// (lower envelope of parabolas). Infinite entries are not sites.
fn edt_line(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let xq = q as f64 * h;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&r) => {
                    let xr = r as f64 * h;
                    let s = ((f[q] + xq * xq) - (f[r] + xr * xr)) / (2.0 * (xq - xr));
                    if s <= *z.last().expect("envelope boundary") {
                        v.pop();
                        z.pop();
                        continue;
                    }
                    v.push(q);
                    z.push(s);
                    break;
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = p as f64 * h;
        while z[k + 1] < x {
            k += 1;
        }
        let d = x - v[k] as f64 * h;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in mm²) from every voxel to the nearest
/// `true` voxel of `sites`; infinite when there are none.
pub fn squared_distance_transform(sites: &[bool], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let mut d: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    for axis in 0..3 {
        let (len, step) = (dims.axis(axis), dims.stride(axis));
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for start in (0..dims.len()).filter(|&i| dims.coords(i)[axis] == 0) {
            for k in 0..len {
                line[k] = d[start + k * step];
            }
            edt_line(&line, spacing[axis], &mut out);
            for k in 0..len {
                d[start + k * step] = out[k];
            }
        }
    }
    d
}

/// Nearest-rank 95th percentile of non-empty `values`.
fn percentile95(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = (95 * values.len()).div_ceil(100);
    values[rank.max(1) - 1]
}

/// 95th-percentile symmetric surface distance in mm.
pub fn hd95(a: &LabelVolume, b: &LabelVolume, label: LabelId, spacing: [f64; 3]) -> Result<f64> {
    a.dims().check_same(&b.dims(), "hd95")?;
    check_spacing(&spacing)?;
    let dims = a.dims();
    let ba = boundary_mask(a, label);
    let bb = boundary_mask(b, label);
    if !ba.contains(&true) || !bb.contains(&true) {
        return Err(Error::invalid(format!(
            "hd95: label {label} is empty in one of the volumes"
        )));
    }
    let directed = |from: &[bool], to: &[bool]| {
        let dt = squared_distance_transform(to, dims, spacing);
        let d: Vec<f64> = from
            .iter()
            .zip(&dt)
            .filter(|(f, _)| **f)
            .map(|(_, d)| d.sqrt())
            .collect();
        percentile95(d)
    };
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)))
}

/// Population standard deviation of `ln(max(det J, 1e-9))` over all voxels.
pub fn sdlogj(phi: &DeformationField) -> Result<f64> {
    let det = jacobian_det(phi)?;
    let logs: Vec<f64> = det.data().iter().map(|d| d.max(LOG_JACOBIAN_FLOOR).ln()).collect();
    Ok(population_std(&logs))
}

/// Shifted by the first value so that constant input gives exactly 0.
fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let shift = x[0];
    let (mut s, mut s2) = (0.0, 0.0);
    for &v in x {
        let d = v - shift;
        s += d;
        s2 += d * d;
    }
    let mean = s / n;
    (s2 / n - mean * mean).max(0.0).sqrt()
}

/// Metrics of one label; `None` when the label is absent from either volume.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelMetrics {
    pub label: LabelId,
    pub dice: Option<f64>,
    pub hd95_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairMetrics {
    pub labels: Vec<LabelMetrics>,
    /// Mean over labels present in both volumes; `None` if there are none.
    pub mean_dice: Option<f64>,
    pub dice30: Option<f64>,
    pub sdlogj: f64,
}

impl PairMetrics {
    pub fn dice_scores(&self) -> Vec<f64> {
        self.labels.iter().filter_map(|l| l.dice).collect()
    }
}

/// Dice and HD95 per label of `label_set`, plus SdLogJ of `phi`.
pub fn evaluate_pair(
    fixed_labels: &LabelVolume,
    warped_labels: &LabelVolume,
    phi: &DeformationField,
    label_set: &[LabelId],
    spacing: [f64; 3],
) -> Result<PairMetrics> {
    fixed_labels.dims().check_same(&warped_labels.dims(), "evaluate_pair")?;
    fixed_labels.dims().check_same(&phi.dims(), "evaluate_pair")?;
    let mut labels = Vec::with_capacity(label_set.len());
    for &label in label_set {
        let present = fixed_labels.count(label) > 0 && warped_labels.count(label) > 0;
        labels.push(if present {
            LabelMetrics {
                label,
                dice: Some(dice(fixed_labels, warped_labels, label)?),
                hd95_mm: Some(hd95(fixed_labels, warped_labels, label, spacing)?),
            }
        } else {
            LabelMetrics {
                label,
                dice: None,
                hd95_mm: None,
            }
        });
    }
    let scores: Vec<f64> = labels.iter().filter_map(|l| l.dice).collect();
    let (mean_dice, dice30) = if scores.is_empty() {
        (None, None)
    } else {
        (
            Some(scores.iter().sum::<f64>() / scores.len() as f64),
            Some(dice30(&scores)?),
        )
    };
    Ok(PairMetrics {
        labels,
        mean_dice,
        dice30,
        sdlogj: sdlogj(phi)?,
    })
}

/// Column header of the metrics CSV.
pub const METRICS_HEADER: [&str; 7] = ["pair_id", "label", "dice", "hd95_mm", "mean_dice", "dice30", "sdlogj"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| format!("{x:?}"))
}

/// Writes per-label rows and one `summary` row per pair. When more than one
/// pair is given, a final `all` row holds Dice30 over every pair's scores.
pub fn write_metrics_csv<W: Write>(out: W, pairs: &[(String, PairMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for (id, m) in pairs {
        for l in &m.labels {
            w.write_record([
                id.clone(),
                l.label.to_string(),
                cell(l.dice),
                cell(l.hd95_mm),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.write_record([
            id.clone(),
            "summary".into(),
            String::new(),
            String::new(),
            cell(m.mean_dice),
            cell(m.dice30),
            format!("{:?}", m.sdlogj),
        ])?;
    }
    if pairs.len() > 1 {
        let scores: Vec<f64> = pairs.iter().flat_map(|(_, m)| m.dice_scores()).collect();
        let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        let d30 = if scores.is_empty() {
            None
        } else {
            Some(dice30(&scores)?)
        };
        w.write_record([
            "all".into(),
            "summary".into(),
            String::new(),
            String::new(),
            cell(mean),
            cell(d30),
            String::new(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<metrics csv>"), e))?;
    Ok(())
}

pub fn write_metrics_file(path: impl AsRef<Path>, pairs: &[(String, PairMetrics)]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(std::io::BufWriter::new(file), pairs)
}
