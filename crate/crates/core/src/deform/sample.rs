//! Backward trilinear sampling with coordinate clamping.

use super::DeformationField;
use crate::error::{Error, Result};
use crate::volume::{Dims, LabelVolume, Volume};

#[derive(Clone, Copy, Debug)]
struct AxisWeights {
    i0: usize,
    i1: usize,
    t: f64,
    /// False when the coordinate was clamped (or the axis has one voxel):
    /// the sample then does not move with the coordinate.
    free: bool,
}

#[inline]
fn axis_weights(c: f64, n: usize) -> AxisWeights {
    if n == 1 {
        return AxisWeights {
            i0: 0,
            i1: 0,
            t: 0.0,
            free: false,
        };
    }
    let hi = (n - 1) as f64;
    let free = (0.0..=hi).contains(&c);
    let cc = c.clamp(0.0, hi);
    let i0 = (cc.floor() as usize).min(n - 2);
    AxisWeights {
        i0,
        i1: i0 + 1,
        t: cc - i0 as f64,
        free,
    }
}

/// The eight corner indices of a trilinear sample, their weights, and the
/// derivatives of the weights with respect to each sample coordinate.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub dw: [[f64; 8]; 3],
}

impl Stencil {
    /// Corner `k` has offsets `(k & 1, (k >> 1) & 1, k >> 2)`.
    #[inline]
    pub fn at(dims: Dims, c: [f64; 3]) -> Self {
        let a = [
            axis_weights(c[0], dims.nx()),
            axis_weights(c[1], dims.ny()),
            axis_weights(c[2], dims.nz()),
        ];
        let lin = |ax: &AxisWeights| [1.0 - ax.t, ax.t];
        let dlin = |ax: &AxisWeights| if ax.free { [-1.0, 1.0] } else { [0.0, 0.0] };
        let (wx, wy, wz) = (lin(&a[0]), lin(&a[1]), lin(&a[2]));
        let (dx, dy, dz) = (dlin(&a[0]), dlin(&a[1]), dlin(&a[2]));
        let mut s = Stencil {
            idx: [0; 8],
            w: [0.0; 8],
            dw: [[0.0; 8]; 3],
        };
        for k in 0..8 {
            let (bx, by, bz) = (k & 1, (k >> 1) & 1, k >> 2);
            let x = if bx == 0 { a[0].i0 } else { a[0].i1 };
            let y = if by == 0 { a[1].i0 } else { a[1].i1 };
            let z = if bz == 0 { a[2].i0 } else { a[2].i1 };
            s.idx[k] = dims.index(x, y, z);
            s.w[k] = wx[bx] * wy[by] * wz[bz];
            s.dw[0][k] = dx[bx] * wy[by] * wz[bz];
            s.dw[1][k] = wx[bx] * dy[by] * wz[bz];
            s.dw[2][k] = wx[bx] * wy[by] * dz[bz];
        }
        s
    }

    #[inline]
    pub fn value(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..8 {
            acc += self.w[k] * v[self.idx[k]];
        }
        acc
    }

    #[inline]
    pub fn gradient(&self, v: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            for k in 0..8 {
                *ga += self.dw[a][k] * v[self.idx[k]];
            }
        }
        g
    }

    #[inline]
    pub fn scatter(&self, target: &mut [f64], amount: f64) {
        for k in 0..8 {
            target[self.idx[k]] += self.w[k] * amount;
        }
    }
}

/// Resamples every channel of `src` (a channel-major buffer on `dims`) at
/// the coordinates in `phi`.
fn sample_channels(src: &[f64], dims: Dims, phi: &DeformationField) -> Vec<f64> {
    let n = dims.len();
    let channels = src.len() / n;
    let mut out = vec![0.0; src.len()];
    for i in 0..n {
        let s = Stencil::at(dims, phi.at(i));
        for c in 0..channels {
            out[c * n + i] = s.value(&src[c * n..(c + 1) * n]);
        }
    }
    out
}

/// Adjoint of [`sample_channels`] with respect to the coordinates and,
/// optionally, the sampled buffer.
fn sample_channels_vjp(
    src: &[f64],
    dims: Dims,
    phi: &DeformationField,
    upstream: &[f64],
    want_src: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let n = dims.len();
    let channels = src.len() / n;
    let mut dphi = vec![0.0; 3 * n];
    let mut dsrc = want_src.then(|| vec![0.0; src.len()]);
    for i in 0..n {
        let s = Stencil::at(dims, phi.at(i));
        let mut g = [0.0; 3];
        for c in 0..channels {
            let u = upstream[c * n + i];
            if u == 0.0 {
                continue;
            }
            let gc = s.gradient(&src[c * n..(c + 1) * n]);
            for a in 0..3 {
                g[a] += u * gc[a];
            }
            if let Some(d) = dsrc.as_mut() {
                s.scatter(&mut d[c * n..(c + 1) * n], u);
            }
        }
        for a in 0..3 {
            dphi[a * n + i] = g[a];
        }
    }
    (dphi, dsrc)
}

/// Backward warp: `out(p) = img(phi(p))` per channel, trilinear, with sample
/// coordinates clamped to the volume.
pub fn warp(img: &Volume, phi: &DeformationField) -> Result<Volume> {
    img.dims().check_same(&phi.dims(), "warp")?;
    let data = sample_channels(img.data(), img.dims(), phi);
    Volume::from_parts(img.dims(), img.channels(), img.spacing(), data).with_storage(img.storage())
}

fn check_upstream(len: usize, expected: usize, what: &str) -> Result<()> {
    if len != expected {
        return Err(Error::shape(format!("{what}: upstream length {len} != {expected}")));
    }
    Ok(())
}

/// Gradient of `<upstream, warp(img, phi)>` with respect to `phi`. Zero along
/// any axis where the coordinate is clamped.
pub fn vjp_warp(img: &Volume, phi: &DeformationField, upstream: &[f64]) -> Result<Vec<f64>> {
    img.dims().check_same(&phi.dims(), "warp adjoint")?;
    check_upstream(upstream.len(), img.data().len(), "warp adjoint")?;
    Ok(sample_channels_vjp(img.data(), img.dims(), phi, upstream, false).0)
}

/// Gradients of `<upstream, warp(img, phi)>` with respect to both `phi` and `img`.
pub fn vjp_warp_image(img: &Volume, phi: &DeformationField, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    img.dims().check_same(&phi.dims(), "warp adjoint")?;
    check_upstream(upstream.len(), img.data().len(), "warp adjoint")?;
    let (dphi, dimg) = sample_channels_vjp(img.data(), img.dims(), phi, upstream, true);
    Ok((dphi, dimg.expect("requested")))
}

/// Nearest-neighbour label warp. Coordinates are clamped; exact half-voxel
/// ties round toward negative infinity.
pub fn warp_labels(l: &LabelVolume, phi: &DeformationField) -> Result<LabelVolume> {
    let dims = l.dims();
    dims.check_same(&phi.dims(), "warp_labels")?;
    let nearest = |c: f64, n: usize| (c - 0.5).ceil().clamp(0.0, (n - 1) as f64) as usize;
    let labels = (0..dims.len())
        .map(|i| {
            let c = phi.at(i);
            l.get(
                nearest(c[0], dims.nx()),
                nearest(c[1], dims.ny()),
                nearest(c[2], dims.nz()),
            )
        })
        .collect();
    let out = LabelVolume::from_parts(dims, l.spacing(), labels);
    match l.label_names() {
        Some(names) => out.with_names(names.clone()),
        None => Ok(out),
    }
}

/// `(outer ∘ inner)(p) = outer(inner(p))`, sampling `outer` trilinearly.
pub fn compose(outer: &DeformationField, inner: &DeformationField) -> Result<DeformationField> {
    outer.dims().check_same(&inner.dims(), "compose")?;
    Ok(DeformationField::from_raw(
        outer.dims(),
        sample_channels(outer.data(), outer.dims(), inner),
    ))
}

/// Gradients of `<upstream, compose(outer, inner)>` as `(d outer, d inner)`.
pub fn vjp_compose(
    outer: &DeformationField,
    inner: &DeformationField,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    outer.dims().check_same(&inner.dims(), "compose adjoint")?;
    check_upstream(upstream.len(), outer.data().len(), "compose adjoint")?;
    let (dinner, douter) = sample_channels_vjp(outer.data(), outer.dims(), inner, upstream, true);
    Ok((douter.expect("requested"), dinner))
}
