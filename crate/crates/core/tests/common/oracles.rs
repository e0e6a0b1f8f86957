//! Brute-force reference implementations used by the test suites.

#![allow(dead_code)]

use gradreg::deform::DeformationField;
use gradreg::volume::{Dims, LabelVolume};

fn neighbor(dims: Dims, p: [usize; 3], axis: usize, step: isize) -> Option<[usize; 3]> {
    let v = p[axis] as isize + step;
    if v < 0 || v >= dims.axis(axis) as isize {
        return None;
    }
    let mut q = p;
    q[axis] = v as usize;
    Some(q)
}

pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u16) -> f64 {
    let sa: std::collections::HashSet<usize> = (0..a.labels().len()).filter(|&i| a.labels()[i] == label).collect();
    let sb: std::collections::HashSet<usize> = (0..b.labels().len()).filter(|&i| b.labels()[i] == label).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

/// Repeatedly removes the smallest score until 30% (rounded up) are taken.
pub fn dice30(scores: &[f64]) -> f64 {
    let mut k = 0;
    while 10 * k < 3 * scores.len() {
        k += 1;
    }
    let mut left = scores.to_vec();
    let mut total = 0.0;
    for _ in 0..k {
        let (pos, _) = left.iter().enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, &v)| if v < best.1 { (i, v) } else { best },
        );
        total += left.remove(pos);
    }
    total / k as f64
}

pub fn boundary(l: &LabelVolume, label: u16) -> Vec<[usize; 3]> {
    let dims = l.dims();
    let mut out = Vec::new();
    for z in 0..dims.nz() {
        for y in 0..dims.ny() {
            for x in 0..dims.nx() {
                if l.get(x, y, z) != label {
                    continue;
                }
                let p = [x, y, z];
                let edge = (0..3).any(|a| {
                    [-1, 1].iter().any(|&s| match neighbor(dims, p, a, s) {
                        None => true,
                        Some(q) => l.get(q[0], q[1], q[2]) != label,
                    })
                });
                if edge {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn directed_p95(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rank = 1;
    while 100 * rank < 95 * d.len() {
        rank += 1;
    }
    d[rank - 1]
}

/// All-pairs boundary distances.
pub fn hd95(a: &LabelVolume, b: &LabelVolume, label: u16, spacing: [f64; 3]) -> f64 {
    let (ba, bb) = (boundary(a, label), boundary(b, label));
    directed_p95(&ba, &bb, spacing).max(directed_p95(&bb, &ba, spacing))
}

/// Jacobian determinant written out per voxel from coordinates.
pub fn jacobian(phi: &DeformationField) -> Vec<f64> {
    let dims = phi.dims();
    let val = |c: usize, p: [usize; 3]| phi.channel(c)[dims.index(p[0], p[1], p[2])];
    let mut out = Vec::with_capacity(dims.len());
    for z in 0..dims.nz() {
        for y in 0..dims.ny() {
            for x in 0..dims.nx() {
                let p = [x, y, z];
                let mut m = [[0.0; 3]; 3];
                for d in 0..3 {
                    let n = dims.axis(d);
                    for (c, row) in m.iter_mut().enumerate() {
                        let at = |k: usize| {
                            let mut q = p;
                            q[d] = k;
                            val(c, q)
                        };
                        row[d] = if p[d] == 0 {
                            at(1) - at(0)
                        } else if p[d] == n - 1 {
                            at(n - 1) - at(n - 2)
                        } else {
                            (at(p[d] + 1) - at(p[d] - 1)) / 2.0
                        };
                    }
                }
                let minor =
                    |r: [usize; 2], c: [usize; 2]| m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]];
                out.push(
                    m[0][0] * minor([1, 2], [1, 2]) - m[0][1] * minor([1, 2], [0, 2]) + m[0][2] * minor([1, 2], [0, 1]),
                );
            }
        }
    }
    out
}

/// Two-pass population standard deviation of the clamped log-determinant.
pub fn sdlogj(phi: &DeformationField) -> f64 {
    let logs: Vec<f64> = jacobian(phi).iter().map(|d| d.max(1e-9).ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    (logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Mean of the negative part of the determinant, summed over both fields.
pub fn folding(phi_ab: &DeformationField, phi_ba: &DeformationField) -> f64 {
    [phi_ab, phi_ba]
        .iter()
        .map(|phi| {
            let det = jacobian(phi);
            det.iter().map(|d| (-d).max(0.0)).sum::<f64>() / det.len() as f64
        })
        .sum()
}
