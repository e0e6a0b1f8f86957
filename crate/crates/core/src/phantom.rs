//! Synthetic labelled volumes and analytic deformations with exact inverses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::deform::{warp, warp_labels, DeformationField};
use crate::error::{Error, Result};
use crate::volume::{check_spacing, Dims, LabelId, LabelVolume, Volume};

/// 64-bit linear congruential generator (Knuth's MMIX constants). The state
/// advances before every draw; uniforms use the top 53 bits.
#[derive(Clone, Debug)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Lcg64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by Box–Muller, one value per pair of uniforms
    /// (the sine branch is discarded).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    /// Center in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub semi_axes: [f64; 3],
    pub label: LabelId,
    pub intensity: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] as f64 - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub ellipsoids: Vec<Ellipsoid>,
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit_spacing")]
    pub spacing_mm: [f64; 3],
}

impl PhantomSpec {
    /// A body-like ellipsoid holding five smaller organ-like ones, sized
    /// relative to `dims`.
    pub fn abdominal(dims: Dims, seed: u64) -> Self {
        let s = dims.0.map(|n| n as f64 - 1.0);
        let at = |fx: f64, fy: f64, fz: f64| [fx * s[0], fy * s[1], fz * s[2]];
        let size = |fx: f64, fy: f64, fz: f64| [fx * s[0], fy * s[1], fz * s[2]];
        let organ = |center, semi_axes, label, intensity| Ellipsoid {
            center,
            semi_axes,
            label,
            intensity,
        };
        PhantomSpec {
            dims,
            ellipsoids: vec![
                organ(at(0.5, 0.5, 0.5), size(0.44, 0.44, 0.44), 1, 0.3),
                organ(at(0.32, 0.35, 0.45), size(0.1, 0.16, 0.14), 2, 0.8),
                organ(at(0.68, 0.36, 0.5), size(0.08, 0.12, 0.12), 3, 0.6),
                organ(at(0.5, 0.62, 0.42), size(0.07, 0.07, 0.2), 4, 1.0),
                organ(at(0.32, 0.68, 0.6), size(0.07, 0.1, 0.09), 5, 0.45),
                organ(at(0.67, 0.66, 0.58), size(0.08, 0.09, 0.1), 6, 0.7),
            ],
            background: 0.0,
            noise_sigma: 0.02,
            seed,
            spacing_mm: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dims.is_positive() {
            return Err(Error::invalid("phantom dims must be positive"));
        }
        check_spacing(&self.spacing_mm)?;
        if !self.background.is_finite() || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("background must be finite and noise_sigma >= 0"));
        }
        for (k, e) in self.ellipsoids.iter().enumerate() {
            if e.label == 0 || self.ellipsoids[..k].iter().any(|o| o.label == e.label) {
                return Err(Error::invalid(format!(
                    "ellipsoid label {} must be distinct and nonzero",
                    e.label
                )));
            }
            if !e.intensity.is_finite() || e.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("ellipsoid {} has non-finite values", e.label)));
            }
            if e.semi_axes.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
                return Err(Error::invalid(format!(
                    "ellipsoid {} needs positive semi-axes",
                    e.label
                )));
            }
            for a in 0..3 {
                let hi = (self.dims.axis(a) - 1) as f64;
                if e.center[a] - e.semi_axes[a] < 0.0 || e.center[a] + e.semi_axes[a] > hi {
                    return Err(Error::invalid(format!(
                        "ellipsoid {} extends outside the volume",
                        e.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders the ellipsoids (later ones overwrite earlier ones) and adds
/// Gaussian noise to the intensities, visiting voxels in storage order.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelVolume)> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = Lcg64::new(spec.seed);
    let mut intensity = vec![spec.background; dims.len()];
    let mut labels = vec![0 as LabelId; dims.len()];
    for i in 0..dims.len() {
        let p = dims.coords(i);
        for e in &spec.ellipsoids {
            if e.contains(p) {
                intensity[i] = e.intensity;
                labels[i] = e.label;
            }
        }
        if spec.noise_sigma > 0.0 {
            intensity[i] += spec.noise_sigma * rng.next_gaussian();
        }
    }
    Ok((
        Volume::new(dims, 1, intensity)?.with_spacing(spec.spacing_mm)?,
        LabelVolume::new(dims, labels)?.with_spacing(spec.spacing_mm)?,
    ))
}

/// Ground-truth deformation with a closed-form inverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AnalyticWarp {
    /// `phi(p) = p + offset`.
    Translation { offset: [f64; 3] },
    /// `phi_x(p) = p_x + amplitude * sin(2 pi p_y / wavelength)`; other axes
    /// unchanged.
    Sinusoidal { amplitude: f64, wavelength: f64 },
}

impl AnalyticWarp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AnalyticWarp::Translation { offset } => {
                if offset.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("translation offset must be finite"));
                }
            }
            AnalyticWarp::Sinusoidal { amplitude, wavelength } => {
                if !(wavelength > 0.0 && wavelength.is_finite() && amplitude.is_finite()) {
                    return Err(Error::invalid(
                        "sinusoid needs a positive wavelength and finite amplitude",
                    ));
                }
                if amplitude.abs() * 2.0 * PI / wavelength >= 1.0 {
                    return Err(Error::invalid("sinusoid amplitude * 2pi / wavelength must be < 1"));
                }
            }
        }
        Ok(())
    }

    /// Largest displacement magnitude along any axis, in voxels.
    pub fn max_displacement(&self) -> f64 {
        match *self {
            AnalyticWarp::Translation { offset } => offset.iter().fold(0.0, |m, v| m.max(v.abs())),
            AnalyticWarp::Sinusoidal { amplitude, .. } => amplitude.abs(),
        }
    }

    fn displacement(&self, p: [usize; 3]) -> [f64; 3] {
        match *self {
            AnalyticWarp::Translation { offset } => offset,
            AnalyticWarp::Sinusoidal { amplitude, wavelength } => {
                [amplitude * (2.0 * PI * p[1] as f64 / wavelength).sin(), 0.0, 0.0]
            }
        }
    }
}

/// The field and its exact inverse.
pub fn analytic_field(w: &AnalyticWarp, dims: Dims) -> Result<(DeformationField, DeformationField)> {
    w.validate()?;
    let apply = |sign: f64| {
        DeformationField::from_fn(dims, |p| {
            let d = w.displacement(p);
            [0, 1, 2].map(|a| p[a] as f64 + sign * d[a])
        })
    };
    Ok((apply(1.0), apply(-1.0)))
}

/// A fixed phantom and its deformed copy with the ground-truth fields.
#[derive(Clone, Debug)]
pub struct PhantomPair {
    pub fixed: Volume,
    pub fixed_labels: LabelVolume,
    pub moving: Volume,
    pub moving_labels: LabelVolume,
    /// `moving = warp(fixed, forward)`.
    pub forward: DeformationField,
    /// Exact inverse of `forward`; the ideal moving→fixed field.
    pub inverse: DeformationField,
}

pub fn make_pair(spec: &PhantomSpec, w: &AnalyticWarp) -> Result<PhantomPair> {
    let (fixed, fixed_labels) = make_phantom(spec)?;
    let (forward, inverse) = analytic_field(w, spec.dims)?;
    Ok(PhantomPair {
        moving: warp(&fixed, &forward)?,
        moving_labels: warp_labels(&fixed_labels, &forward)?,
        fixed,
        fixed_labels,
        forward,
        inverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcg_sequence_is_fixed() {
        let mut r = Lcg64::new(0);
        assert_eq!(r.next_u64(), Lcg64::INCREMENT);
        assert_eq!(
            r.next_u64(),
            Lcg64::INCREMENT
                .wrapping_mul(Lcg64::MULTIPLIER)
                .wrapping_add(Lcg64::INCREMENT)
        );
        let mut r = Lcg64::new(7);
        let u: Vec<f64> = (0..1000).map(|_| r.next_f64()).collect();
        assert!(u.iter().all(|v| (0.0..1.0).contains(v)));
        let mean = u.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn gaussian_moments() {
        let mut r = Lcg64::new(3);
        let z: Vec<f64> = (0..20000).map(|_| r.next_gaussian()).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn empty_phantom_is_background() {
        let spec = PhantomSpec {
            dims: Dims::cube(4),
            ellipsoids: vec![],
            background: 0.25,
            noise_sigma: 0.0,
            seed: 0,
            spacing_mm: [1.0; 3],
        };
        let (img, lab) = make_phantom(&spec).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.25));
        assert!(lab.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = PhantomSpec::abdominal(Dims::cube(20), 0);
        assert!(spec.validate().is_ok());
        spec.ellipsoids[1].center[0] = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = PhantomSpec::abdominal(Dims::cube(20), 0);
        spec.ellipsoids[2].label = 2;
        assert!(spec.validate().is_err());
        let mut spec = PhantomSpec::abdominal(Dims::cube(20), 0);
        spec.ellipsoids[0].semi_axes[1] = 0.0;
        assert!(spec.validate().is_err());
        assert!(AnalyticWarp::Sinusoidal {
            amplitude: 4.0,
            wavelength: 24.0
        }
        .validate()
        .is_err());
        assert!(AnalyticWarp::Sinusoidal {
            amplitude: 3.0,
            wavelength: 24.0
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn warp_json_forms() {
        let w: AnalyticWarp = serde_json::from_str(r#"{"kind":"sinusoidal","amplitude":3,"wavelength":24}"#).unwrap();
        assert_eq!(
            w,
            AnalyticWarp::Sinusoidal {
                amplitude: 3.0,
                wavelength: 24.0
            }
        );
        let t: AnalyticWarp = serde_json::from_str(r#"{"kind":"translation","offset":[2,0,0]}"#).unwrap();
        assert_eq!(
            t,
            AnalyticWarp::Translation {
                offset: [2.0, 0.0, 0.0]
            }
        );
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let d = Dims::new(5, 6, 4);
        let (f, g) = analytic_field(
            &AnalyticWarp::Sinusoidal {
                amplitude: 0.0,
                wavelength: 8.0,
            },
            d,
        )
        .unwrap();
        assert_eq!(f, DeformationField::identity(d));
        assert_eq!(g, DeformationField::identity(d));
    }
}
