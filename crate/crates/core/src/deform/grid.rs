use super::{DeformationField, GradientField, PreActivationField};
use crate::error::{Error, Result};
use crate::volume::Dims;

/// Linear interpolation along one axis from a control grid of stride `s`
/// to `n_out` samples.
fn resample_axis(src: &[f64], src_dims: Dims, axis: usize, n_out: usize, s: usize) -> (Vec<f64>, Dims) {
    let mut out_dims = src_dims;
    out_dims.0[axis] = n_out;
    let (n_src, n_dst) = (src_dims.len(), out_dims.len());
    let channels = src.len() / n_src;
    let src_stride = src_dims.stride(axis);
    let mut out = vec![0.0; channels * n_dst];
    for o in 0..n_dst {
        let mut c = out_dims.coords(o);
        let i = c[axis];
        let (k, r) = (i / s, i % s);
        c[axis] = k;
        let base = src_dims.index(c[0], c[1], c[2]);
        for ch in 0..channels {
            let src_ch = &src[ch * n_src..];
            out[ch * n_dst + o] = if r == 0 {
                src_ch[base]
            } else {
                let t = r as f64 / s as f64;
                (1.0 - t) * src_ch[base] + t * src_ch[base + src_stride]
            };
        }
    }
    (out, out_dims)
}

/// Transpose of [`resample_axis`].
fn resample_axis_adjoint(up: &[f64], src_dims: Dims, axis: usize, n_out: usize, s: usize) -> Vec<f64> {
    let mut out_dims = src_dims;
    out_dims.0[axis] = n_out;
    let (n_src, n_dst) = (src_dims.len(), out_dims.len());
    let channels = up.len() / n_dst;
    let src_stride = src_dims.stride(axis);
    let mut grad = vec![0.0; channels * n_src];
    for o in 0..n_dst {
        let mut c = out_dims.coords(o);
        let i = c[axis];
        let (k, r) = (i / s, i % s);
        c[axis] = k;
        let base = src_dims.index(c[0], c[1], c[2]);
        for ch in 0..channels {
            let u = up[ch * n_dst + o];
            let g = &mut grad[ch * n_src..];
            if r == 0 {
                g[base] += u;
            } else {
                let t = r as f64 / s as f64;
                g[base] += (1.0 - t) * u;
                g[base + src_stride] += t * u;
            }
        }
    }
    grad
}

/// Trilinear interpolation of a control-grid field to full image resolution.
/// Exact at control points; stride 1 is the identity.
pub fn upsample(delta: &PreActivationField, image_dims: Dims) -> Result<PreActivationField> {
    if !delta.fits(image_dims) {
        return Err(Error::shape(format!(
            "control grid {:?} at stride {} does not fit image {:?}",
            delta.dims.0, delta.stride, image_dims.0
        )));
    }
    Ok(PreActivationField {
        dims: image_dims,
        stride: 1,
        data: upsample_raw(&delta.data, delta.dims, delta.stride, image_dims),
    })
}

pub(crate) fn upsample_raw(data: &[f64], control: Dims, stride: usize, image_dims: Dims) -> Vec<f64> {
    if stride == 1 {
        return data.to_vec();
    }
    let mut cur = data.to_vec();
    let mut dims = control;
    for axis in 0..3 {
        let (next, nd) = resample_axis(&cur, dims, axis, image_dims.axis(axis), stride);
        cur = next;
        dims = nd;
    }
    cur
}

/// Adjoint of [`upsample`]: maps a full-resolution gradient back onto the
/// control grid of `delta`.
pub fn vjp_upsample(delta: &PreActivationField, image_dims: Dims, upstream: &[f64]) -> Result<Vec<f64>> {
    if !delta.fits(image_dims) || upstream.len() != 3 * image_dims.len() {
        return Err(Error::shape("upsample adjoint: shape mismatch"));
    }
    Ok(vjp_upsample_raw(upstream, delta.dims, delta.stride, image_dims))
}

pub(crate) fn vjp_upsample_raw(upstream: &[f64], control: Dims, stride: usize, image_dims: Dims) -> Vec<f64> {
    if stride == 1 {
        return upstream.to_vec();
    }
    // dims before each forward axis pass
    let mut stages = [control; 3];
    for axis in 1..3 {
        stages[axis] = stages[axis - 1];
        stages[axis].0[axis - 1] = image_dims.axis(axis - 1);
    }
    let mut cur = upstream.to_vec();
    for axis in (0..3).rev() {
        cur = resample_axis_adjoint(&cur, stages[axis], axis, image_dims.axis(axis), stride);
    }
    cur
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn activate_raw(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 2.0 * sigmoid(v)).collect()
}

pub(crate) fn vjp_activate_raw(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(upstream)
        .map(|(&v, &u)| {
            let s = sigmoid(v);
            2.0 * s * (1.0 - s) * u
        })
        .collect()
}

/// `g = 2 * sigmoid(x)`, so `x = 0` maps to the identity gradient 1.
pub fn activate(x: &PreActivationField) -> Result<GradientField> {
    if x.stride != 1 {
        return Err(Error::shape("activate expects a full-resolution field (stride 1)"));
    }
    Ok(GradientField {
        dims: x.dims,
        data: activate_raw(&x.data),
    })
}

pub fn vjp_activate(x: &PreActivationField, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != x.data.len() {
        return Err(Error::shape("activate adjoint: shape mismatch"));
    }
    Ok(vjp_activate_raw(&x.data, upstream))
}

/// Inclusive prefix sum of channel `c` along axis `c`, minus one.
pub(crate) fn integrate_raw(g: &[f64], dims: Dims) -> Vec<f64> {
    let n = dims.len();
    let mut phi = vec![0.0; 3 * n];
    for axis in 0..3 {
        let (len, step) = (dims.axis(axis), dims.stride(axis));
        let src = &g[axis * n..(axis + 1) * n];
        let dst = &mut phi[axis * n..(axis + 1) * n];
        for start in line_starts(dims, axis) {
            let mut sum = 0.0;
            for k in 0..len {
                let i = start + k * step;
                sum += src[i];
                dst[i] = sum - 1.0;
            }
        }
    }
    phi
}

pub(crate) fn vjp_integrate_raw(upstream: &[f64], dims: Dims) -> Vec<f64> {
    let n = dims.len();
    let mut grad = vec![0.0; 3 * n];
    for axis in 0..3 {
        let (len, step) = (dims.axis(axis), dims.stride(axis));
        let src = &upstream[axis * n..(axis + 1) * n];
        let dst = &mut grad[axis * n..(axis + 1) * n];
        for start in line_starts(dims, axis) {
            let mut sum = 0.0;
            for k in (0..len).rev() {
                let i = start + k * step;
                sum += src[i];
                dst[i] = sum;
            }
        }
    }
    grad
}

/// Linear index of the first voxel of every line parallel to `axis`.
fn line_starts(dims: Dims, axis: usize) -> impl Iterator<Item = usize> {
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (sa, sb) = (dims.stride(a), dims.stride(b));
    let (na, nb) = (dims.axis(a), dims.axis(b));
    (0..nb).flat_map(move |j| (0..na).map(move |i| i * sa + j * sb))
}

/// Cumulative-sum integration: `phi_x(i, y, z) = sum_{k <= i} g_x(k, y, z) - 1`,
/// and likewise along y and z.
pub fn integrate(g: &GradientField) -> DeformationField {
    DeformationField::from_raw(g.dims, integrate_raw(&g.data, g.dims))
}

/// Adjoint of [`integrate`]: reverse suffix sums along each channel's axis.
pub fn vjp_integrate(dims: Dims, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != 3 * dims.len() {
        return Err(Error::shape("integrate adjoint: shape mismatch"));
    }
    Ok(vjp_integrate_raw(upstream, dims))
}
