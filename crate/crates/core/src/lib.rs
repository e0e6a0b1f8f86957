//! Deformable 3D image registration with a spatial-gradient deformation model.
//!
//! Both directions of a registration are generated from a single
//! pre-activation field: `+delta` drives the A→B deformation and `-delta` the
//! B→A one. Each field is mapped into per-axis spatial gradients in `(0, 2)`,
//! integrated by cumulative sum into absolute sample coordinates, and used to
//! warp the images backward with trilinear interpolation.
//!
//! Modules:
//! - [`volume`]: volume data model, raw+JSON I/O, HU windowing, label utilities
//! - [`deform`]: activation, integration, warping, composition, Jacobians and
//!   the reverse-mode adjoint of each stage
//! - [`losses`]: similarity, Dice, smoothness, Jacobian and inverse-consistency
//!   terms with analytic gradients
//! - [`engine`]: forward/backward pipeline, multi-step refinement, Adam
//!   optimizer, gradient checks
//! - [`metrics`]: Dice, Dice30, HD95 and SdLogJ
//! - [`phantom`]: synthetic labeled phantoms and analytic ground-truth warps

pub mod deform;
pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod volume;

pub use error::{Error, Result};
