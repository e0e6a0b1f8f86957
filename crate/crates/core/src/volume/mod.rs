//! Volume and label-volume data model.
//!
//! Voxel data is stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Multi-channel volumes are channel-major, so
//! channel `c` occupies `data[c * n .. (c + 1) * n]` with `n = nx * ny * nz`.

mod io;
pub(crate) mod labels;
mod window;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_volume, volume_paths, write_labels, write_volume, AnyVolume, VolumeHeader, VolumeRef};
pub use labels::{largest_component, one_hot};
pub use window::{hu_window, stack_windows, HuWindow, ABDOMEN, BONE, CT_WINDOWS, LUNG};

/// Label id stored per voxel. `0` is background.
pub type LabelId = u16;

/// Grid extent `(nx, ny, nz)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims([nx, ny, nz])
    }

    pub fn cube(n: usize) -> Self {
        Dims([n, n, n])
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn axis(&self, a: usize) -> usize {
        self.0[a]
    }

    /// Number of voxels.
    #[inline]
    pub fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear-index step between neighbours along axis `a`.
    #[inline]
    pub fn stride(&self, a: usize) -> usize {
        match a {
            0 => 1,
            1 => self.0[0],
            _ => self.0[0] * self.0[1],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.0[0];
        let ny = self.0[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&n| n > 0)
    }

    pub(crate) fn check_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::shape(format!("{what}: dims {:?} vs {:?}", self.0, other.0)));
        }
        Ok(())
    }
}

/// On-disk scalar type of a payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    F32,
    F64,
    U16,
}

impl ScalarType {
    pub fn size(self) -> usize {
        match self {
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
            ScalarType::U16 => 2,
        }
    }
}

pub(crate) fn check_spacing(spacing: &[f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")))
    }
}

pub(crate) fn first_non_finite(data: &[f64]) -> Option<usize> {
    data.iter().position(|v| !v.is_finite())
}

/// Multi-channel real-valued 3D field with voxel spacing.
///
/// In memory everything is `f64`; `storage` records the payload type used
/// when the volume is written (and is set from the header when read).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    channels: usize,
    spacing: [f64; 3],
    storage: ScalarType,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: Dims, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !dims.is_positive() || channels == 0 {
            return Err(Error::invalid(format!(
                "dims {:?} and channels {channels} must be positive",
                dims.0
            )));
        }
        if data.len() != dims.len() * channels {
            return Err(Error::shape(format!(
                "data length {} != {} voxels x {} channels",
                data.len(),
                dims.len(),
                channels
            )));
        }
        if let Some(index) = first_non_finite(&data) {
            return Err(Error::NonFinite { index });
        }
        Ok(Volume {
            dims,
            channels,
            spacing: [1.0; 3],
            storage: ScalarType::F32,
            data,
        })
    }

    /// Constructor for data already known to satisfy the invariants.
    pub(crate) fn from_parts(dims: Dims, channels: usize, spacing: [f64; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len() * channels);
        Volume {
            dims,
            channels,
            spacing,
            storage: ScalarType::F32,
            data,
        }
    }

    pub fn zeros(dims: Dims, channels: usize) -> Self {
        Self::filled(dims, channels, 0.0)
    }

    pub fn filled(dims: Dims, channels: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self::from_parts(dims, channels, [1.0; 3], vec![value; dims.len() * channels])
    }

    /// Builds a single-channel volume from a function of voxel coordinates.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz() {
            for y in 0..dims.ny() {
                for x in 0..dims.nx() {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume::new(dims, 1, data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_spacing(&spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn with_storage(mut self, storage: ScalarType) -> Result<Self> {
        if storage == ScalarType::U16 {
            return Err(Error::invalid("u16 storage is reserved for label volumes"));
        }
        self.storage = storage;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn storage(&self) -> ScalarType {
        self.storage
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
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.dims.len() + self.dims.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub(crate) fn check_same_shape(&self, other: &Volume, what: &str) -> Result<()> {
        self.dims.check_same(&other.dims, what)?;
        if self.channels != other.channels {
            return Err(Error::shape(format!(
                "{what}: {} vs {} channels",
                self.channels, other.channels
            )));
        }
        Ok(())
    }
}

/// Integer organ labels per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: [f64; 3],
    labels: Vec<LabelId>,
    label_names: Option<BTreeMap<LabelId, String>>,
}

impl LabelVolume {
    pub fn new(dims: Dims, labels: Vec<LabelId>) -> Result<Self> {
        if !dims.is_positive() {
            return Err(Error::invalid(format!("dims {:?} must be positive", dims.0)));
        }
        if labels.len() != dims.len() {
            return Err(Error::shape(format!(
                "label count {} != {} voxels",
                labels.len(),
                dims.len()
            )));
        }
        Ok(LabelVolume {
            dims,
            spacing: [1.0; 3],
            labels,
            label_names: None,
        })
    }

    pub(crate) fn from_parts(dims: Dims, spacing: [f64; 3], labels: Vec<LabelId>) -> Self {
        LabelVolume {
            dims,
            spacing,
            labels,
            label_names: None,
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::from_parts(dims, [1.0; 3], vec![0; dims.len()])
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_spacing(&spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    /// Attaches an id→name map. Every label present in the volume must be named.
    pub fn with_names(mut self, names: BTreeMap<LabelId, String>) -> Result<Self> {
        if let Some(missing) = self
            .present_labels()
            .into_iter()
            .find(|l| *l != 0 && !names.contains_key(l))
        {
            return Err(Error::invalid(format!("label {missing} has no name")));
        }
        self.label_names = Some(names);
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn label_names(&self) -> Option<&BTreeMap<LabelId, String>> {
        self.label_names.as_ref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> LabelId {
        self.labels[self.dims.index(x, y, z)]
    }

    /// Sorted distinct labels, including background if present.
    pub fn present_labels(&self) -> Vec<LabelId> {
        let mut seen = vec![false; LabelId::MAX as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen.iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(l, _)| l as LabelId)
            .collect()
    }

    pub fn count(&self, label: LabelId) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}
