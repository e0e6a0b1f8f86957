//! JSON sidecar + raw little-endian payload.
//!
//! `<name>.json` holds the header, `<name>.raw` the payload, channel-major
//! then x-fastest. Labels are stored as `u16` with a single channel.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_spacing, first_non_finite, Dims, LabelId, LabelVolume, ScalarType, Volume};
use crate::error::{Error, Result};

pub const AXIS_ORDER: &str = "x-fastest";
pub const BYTE_ORDER: &str = "little";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub channels: usize,
    pub spacing_mm: [f64; 3],
    pub dtype: ScalarType,
    pub order: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<BTreeMap<LabelId, String>>,
}

impl VolumeHeader {
    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |m: String| Err(Error::format(path, m));
        if self.order != AXIS_ORDER {
            return bad(format!("unsupported axis order {:?}", self.order));
        }
        if self.byte_order != BYTE_ORDER {
            return bad(format!("unsupported byte order {:?}", self.byte_order));
        }
        if self.dims.contains(&0) || self.channels == 0 {
            return bad(format!(
                "dims {:?} and channels {} must be positive",
                self.dims, self.channels
            ));
        }
        if self.dtype == ScalarType::U16 && self.channels != 1 {
            return bad("u16 label volumes must have one channel".into());
        }
        check_spacing(&self.spacing_mm).map_err(|e| Error::format(path, e.to_string()))
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels * self.dtype.size()
    }
}

/// Result of [`read_volume`]: the header dtype decides which kind is returned.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Image(Volume),
    Labels(LabelVolume),
}

impl AnyVolume {
    pub fn into_image(self) -> Result<Volume> {
        match self {
            AnyVolume::Image(v) => Ok(v),
            AnyVolume::Labels(_) => Err(Error::invalid("expected an image volume, found labels")),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Labels(l) => Ok(l),
            AnyVolume::Image(_) => Err(Error::invalid("expected a label volume, found an image")),
        }
    }
}

fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(base.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

/// Header and payload paths for a volume named by `path` (with or without
/// a `.json`/`.raw` extension).
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = base_path(path);
    (with_suffix(&base, ".json"), with_suffix(&base, ".raw"))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let (json_path, raw_path) = volume_paths(path.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, format!("corrupt header: {e}")))?;
    header.validate(&json_path)?;

    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if bytes.len() != header.payload_len() {
        return Err(Error::format(
            &raw_path,
            format!(
                "payload length mismatch: {} bytes, header requires {}",
                bytes.len(),
                header.payload_len()
            ),
        ));
    }

    let dims = Dims(header.dims);
    match header.dtype {
        ScalarType::U16 => {
            let labels: Vec<LabelId> = bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            let mut vol = LabelVolume::from_parts(dims, header.spacing_mm, labels);
            if let Some(names) = header.label_names {
                vol = vol
                    .with_names(names)
                    .map_err(|e| Error::format(&json_path, e.to_string()))?;
            }
            Ok(AnyVolume::Labels(vol))
        }
        dtype => {
            let data: Vec<f64> = if dtype == ScalarType::F32 {
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect()
            } else {
                bytes
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            };
            if let Some(index) = first_non_finite(&data) {
                return Err(Error::format(
                    &raw_path,
                    format!("non-finite payload value at index {index}"),
                ));
            }
            let mut vol = Volume::from_parts(dims, header.channels, header.spacing_mm, data);
            vol.storage = dtype;
            Ok(AnyVolume::Image(vol))
        }
    }
}

/// Borrowed volume of either kind, accepted by [`write_volume`].
#[derive(Clone, Copy, Debug)]
pub enum VolumeRef<'a> {
    Image(&'a Volume),
    Labels(&'a LabelVolume),
}

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        VolumeRef::Image(v)
    }
}

impl<'a> From<&'a LabelVolume> for VolumeRef<'a> {
    fn from(v: &'a LabelVolume) -> Self {
        VolumeRef::Labels(v)
    }
}

impl<'a> From<&'a AnyVolume> for VolumeRef<'a> {
    fn from(v: &'a AnyVolume) -> Self {
        match v {
            AnyVolume::Image(v) => VolumeRef::Image(v),
            AnyVolume::Labels(l) => VolumeRef::Labels(l),
        }
    }
}

/// Writes header and payload. The payload is fully encoded and validated
/// before either file is created.
pub fn write_volume<'a>(v: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, raw_path) = volume_paths(path.as_ref());
    let (header, payload) = match v.into() {
        VolumeRef::Image(v) => {
            let mut payload = Vec::with_capacity(v.data.len() * v.storage.size());
            match v.storage {
                ScalarType::F32 => {
                    for (i, &x) in v.data.iter().enumerate() {
                        let f = x as f32;
                        if !f.is_finite() {
                            return Err(Error::NonFinite { index: i });
                        }
                        payload.extend_from_slice(&f.to_le_bytes());
                    }
                }
                _ => {
                    for (i, &x) in v.data.iter().enumerate() {
                        if !x.is_finite() {
                            return Err(Error::NonFinite { index: i });
                        }
                        payload.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            let header = VolumeHeader {
                dims: v.dims.0,
                channels: v.channels,
                spacing_mm: v.spacing,
                dtype: v.storage,
                order: AXIS_ORDER.into(),
                byte_order: BYTE_ORDER.into(),
                label_names: None,
            };
            (header, payload)
        }
        VolumeRef::Labels(l) => {
            let payload: Vec<u8> = l.labels.iter().flat_map(|x| x.to_le_bytes()).collect();
            let header = VolumeHeader {
                dims: l.dims.0,
                channels: 1,
                spacing_mm: l.spacing,
                dtype: ScalarType::U16,
                order: AXIS_ORDER.into(),
                byte_order: BYTE_ORDER.into(),
                label_names: l.label_names.clone(),
            };
            (header, payload)
        }
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))
}

/// Convenience wrapper for label volumes.
pub fn write_labels(l: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_volume(l, path)
}
