//! Finite-difference Jacobian determinant of a deformation field.
//!
//! Derivatives are in voxel units: central differences in the interior,
//! one-sided differences on the faces.

use super::DeformationField;
use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Difference stencil along one axis at position `i`: `(plus, minus, scale)`
/// such that the derivative is `scale * (f[plus] - f[minus])`.
#[inline]
fn diff_stencil(i: usize, n: usize) -> (usize, usize, f64) {
    if i == 0 {
        (1, 0, 1.0)
    } else if i == n - 1 {
        (n - 1, n - 2, 1.0)
    } else {
        (i + 1, i - 1, 0.5)
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0.iter().any(|&n| n < 3) {
        return Err(Error::shape(format!(
            "Jacobian needs at least 3 voxels per axis, got {:?}",
            dims.0
        )));
    }
    Ok(())
}

/// `J[c][d] = d phi_c / d x_d` at voxel `i`.
pub fn difference_matrix(phi: &DeformationField, i: usize) -> [[f64; 3]; 3] {
    let dims = phi.dims();
    let p = dims.coords(i);
    let mut j = [[0.0; 3]; 3];
    for d in 0..3 {
        let (plus, minus, scale) = diff_stencil(p[d], dims.axis(d));
        let s = dims.stride(d);
        let ip = i - p[d] * s + plus * s;
        let im = i - p[d] * s + minus * s;
        for (c, row) in j.iter_mut().enumerate() {
            let ch = phi.channel(c);
            row[d] = scale * (ch[ip] - ch[im]);
        }
    }
    j
}

/// Determinant by cofactor expansion along the first row.
#[inline]
pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `d det / d m[r][c]`.
#[inline]
fn cofactors(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            -(m[1][0] * m[2][2] - m[1][2] * m[2][0]),
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            -(m[0][1] * m[2][2] - m[0][2] * m[2][1]),
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            -(m[0][0] * m[2][1] - m[0][1] * m[2][0]),
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            -(m[0][0] * m[1][2] - m[0][2] * m[1][0]),
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

/// Per-voxel Jacobian determinant as a one-channel volume.
pub fn jacobian_det(phi: &DeformationField) -> Result<Volume> {
    let dims = phi.dims();
    check_dims(dims)?;
    let data = (0..dims.len()).map(|i| det3(&difference_matrix(phi, i))).collect();
    Ok(Volume::from_parts(dims, 1, [1.0; 3], data))
}

/// Gradient of `sum_p upstream[p] * det(J(p))` with respect to `phi`.
pub fn vjp_jacobian_det(phi: &DeformationField, upstream: &[f64]) -> Result<Vec<f64>> {
    let dims = phi.dims();
    check_dims(dims)?;
    let n = dims.len();
    if upstream.len() != n {
        return Err(Error::shape("Jacobian adjoint: upstream must have one channel"));
    }
    let mut grad = vec![0.0; 3 * n];
    for i in 0..n {
        let u = upstream[i];
        if u == 0.0 {
            continue;
        }
        let cof = cofactors(&difference_matrix(phi, i));
        let p = dims.coords(i);
        for d in 0..3 {
            let (plus, minus, scale) = diff_stencil(p[d], dims.axis(d));
            let s = dims.stride(d);
            let ip = i - p[d] * s + plus * s;
            let im = i - p[d] * s + minus * s;
            for (c, row) in cof.iter().enumerate() {
                let g = u * row[d] * scale;
                grad[c * n + ip] += g;
                grad[c * n + im] -= g;
            }
        }
    }
    Ok(grad)
}
