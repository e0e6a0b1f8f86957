//! Deformation-field algebra.
//!
//! The forward chain is
//!
//! ```text
//! delta (control grid) --upsample--> x --activate--> g in (0,2) --integrate--> phi
//! ```
//!
//! and `phi` is used to resample images (`warp`), labels (`warp_labels`) or
//! other fields (`compose`). Every differentiable stage has a `vjp_*`
//! counterpart returning the exact vector-Jacobian product, which the engine
//! chains in reverse.
//!
//! All vector fields are stored like a 3-channel [`Volume`]: channel-major,
//! x-fastest, channel `c` holding the `c`-th coordinate component.

pub(crate) mod grid;
mod jacobian;
mod sample;

use crate::error::{Error, Result};
use crate::volume::{first_non_finite, Dims, Volume};

pub use grid::{activate, integrate, upsample, vjp_activate, vjp_integrate, vjp_upsample};
pub use jacobian::{det3, difference_matrix, jacobian_det, vjp_jacobian_det};
pub use sample::{compose, vjp_compose, vjp_warp, vjp_warp_image, warp, warp_labels, Stencil};

/// Optimization variable: 3 channels of unbounded reals on a control grid
/// that is coarser than the image grid by `stride` along every axis.
///
/// For an image axis of length `n` the control axis has
/// `ceil((n - 1) / stride) + 1` points, control point `k` sitting on image
/// voxel `k * stride`. The last control cell may extend past the image and is
/// truncated on upsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct PreActivationField {
    dims: Dims,
    stride: usize,
    data: Vec<f64>,
}

impl PreActivationField {
    pub fn control_dims(image_dims: Dims, stride: usize) -> Dims {
        assert!(stride >= 1);
        Dims(image_dims.0.map(|n| (n.max(1) - 1).div_ceil(stride) + 1))
    }

    pub fn new(dims: Dims, stride: usize, data: Vec<f64>) -> Result<Self> {
        if stride == 0 || !dims.is_positive() {
            return Err(Error::invalid("stride and dims must be positive"));
        }
        if data.len() != 3 * dims.len() {
            return Err(Error::shape(format!(
                "pre-activation data length {} != 3 x {}",
                data.len(),
                dims.len()
            )));
        }
        if let Some(index) = first_non_finite(&data) {
            return Err(Error::NonFinite { index });
        }
        Ok(PreActivationField { dims, stride, data })
    }

    /// The all-zero field, which integrates to the identity deformation.
    pub fn zeros(image_dims: Dims, stride: usize) -> Self {
        let dims = Self::control_dims(image_dims, stride);
        PreActivationField {
            dims,
            stride,
            data: vec![0.0; 3 * dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn negated(&self) -> Self {
        PreActivationField {
            dims: self.dims,
            stride: self.stride,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    /// True if this control grid matches `image_dims` at its stride.
    pub fn fits(&self, image_dims: Dims) -> bool {
        Self::control_dims(image_dims, self.stride) == self.dims
    }
}

/// Per-axis spatial gradients `(d phi_x/dx, d phi_y/dy, d phi_z/dz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    dims: Dims,
    data: Vec<f64>,
}

impl GradientField {
    /// Validates that every value is strictly inside `(0, 2)`.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * dims.len() {
            return Err(Error::shape("gradient field needs 3 channels"));
        }
        if let Some(i) = data.iter().position(|&g| !(g > 0.0 && g < 2.0)) {
            return Err(Error::invalid(format!(
                "gradient value {} at index {i} outside (0, 2)",
                data[i]
            )));
        }
        Ok(GradientField { dims, data })
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 3 * dims.len());
        GradientField { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Absolute sample coordinates, in voxel units, for every voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    dims: Dims,
    data: Vec<f64>,
}

impl DeformationField {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if !dims.is_positive() {
            return Err(Error::invalid("dims must be positive"));
        }
        if data.len() != 3 * dims.len() {
            return Err(Error::shape(format!(
                "deformation data length {} != 3 x {}",
                data.len(),
                dims.len()
            )));
        }
        if let Some(index) = first_non_finite(&data) {
            return Err(Error::NonFinite { index });
        }
        Ok(DeformationField { dims, data })
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 3 * dims.len());
        DeformationField { dims, data }
    }

    /// `phi(p) = p`.
    pub fn identity(dims: Dims) -> Self {
        Self::from_fn(dims, |p| p.map(|c| c as f64))
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 3]) -> [f64; 3]) -> Self {
        let n = dims.len();
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let v = f(dims.coords(i));
            for c in 0..3 {
                data[c * n + i] = v[c];
            }
        }
        DeformationField { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, i: usize) -> [f64; 3] {
        let n = self.dims.len();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    /// Returns a copy with `offset` added to every coordinate.
    pub fn shifted(&self, offset: [f64; 3]) -> Self {
        let n = self.dims.len();
        let mut data = self.data.clone();
        for c in 0..3 {
            data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += offset[c]);
        }
        DeformationField { dims: self.dims, data }
    }

    /// Views the field as a 3-channel volume (e.g. for writing to disk).
    pub fn to_volume(&self) -> Volume {
        Volume::from_parts(self.dims, 3, [1.0; 3], self.data.clone())
    }

    pub fn from_volume(v: &Volume) -> Result<Self> {
        if v.channels() != 3 {
            return Err(Error::shape(format!(
                "deformation field needs 3 channels, got {}",
                v.channels()
            )));
        }
        Ok(DeformationField {
            dims: v.dims(),
            data: v.data().to_vec(),
        })
    }

    /// Mean Euclidean distance between `phi(p)` and `p`, in voxels.
    pub fn mean_displacement(&self) -> f64 {
        let n = self.dims.len();
        let total: f64 = (0..n)
            .map(|i| {
                let p = self.dims.coords(i);
                let q = self.at(i);
                (0..3).map(|c| (q[c] - p[c] as f64).powi(2)).sum::<f64>().sqrt()
            })
            .sum();
        total / n as f64
    }
}
