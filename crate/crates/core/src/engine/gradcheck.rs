use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::RegistrationConfig;
use super::pipeline::{multistep_forward, objective_and_gradient, RegistrationPair};
use crate::deform::{jacobian_det, PreActivationField};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::volume::{one_hot, Dims, LabelVolume, Volume};

/// Largest axis length accepted by [`gradient_check`].
pub const MAX_CHECK_AXIS: usize = 8;

/// Derivatives whose magnitudes both stay below this are treated as equal.
const ZERO_GUARD: f64 = 1e-10;
/// Central differences lose about `eps * |loss| / step` to rounding, so
/// derivatives are compared on a scale of at least this fraction of the loss.
const LOSS_SCALE_FLOOR: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const DIRECTIONS: usize = 4;
const TERM_NAMES: [&str; 5] = ["sim", "seg", "reg", "jac", "inv"];

/// Finite-difference agreement for one weighting of the loss.
#[derive(Clone, Debug, Serialize)]
pub struct TermCheck {
    pub term: String,
    pub weight: f64,
    pub max_rel_error: f64,
    /// Largest directional derivative seen, for judging the error scale.
    pub max_abs_derivative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheckReport {
    pub dims: [usize; 3],
    pub seed: u64,
    /// One entry per active term, then `total` with every term active.
    pub terms: Vec<TermCheck>,
    /// Voxels with a negative Jacobian determinant in the checked instance.
    pub negative_jacobians: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradientCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.terms.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(LOSS_SCALE_FLOOR * loss.abs());
    if scale < ZERO_GUARD {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn random_unit(rng: &mut ChaCha8Rng, shapes: &[PreActivationField]) -> Vec<Vec<f64>> {
    let mut dir: Vec<Vec<f64>> = shapes
        .iter()
        .map(|d| (0..d.data().len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let norm = dir.iter().flatten().map(|v: &f64| v * v).sum::<f64>().sqrt();
    dir.iter_mut().flatten().for_each(|v| *v /= norm);
    dir
}

fn displaced(deltas: &[PreActivationField], dir: &[Vec<f64>], h: f64) -> Result<Vec<PreActivationField>> {
    deltas
        .iter()
        .zip(dir)
        .map(|(d, v)| {
            let data = d.data().iter().zip(v).map(|(x, y)| x + h * y).collect();
            PreActivationField::new(d.dims(), d.stride(), data)
        })
        .collect()
}

fn check_weights(
    pair: &RegistrationPair,
    deltas: &[PreActivationField],
    w: &LossWeights,
    directions: &[Vec<Vec<f64>>],
) -> Result<(f64, f64)> {
    let (loss, grad) = objective_and_gradient(pair, deltas, w)?;
    let mut worst = 0.0f64;
    let mut largest = 0.0f64;
    for dir in directions {
        let analytic: f64 = grad
            .iter()
            .flatten()
            .zip(dir.iter().flatten())
            .map(|(g, v)| g * v)
            .sum();
        let plus = multistep_forward(pair, &displaced(deltas, dir, FD_STEP)?, w)?
            .breakdown
            .total;
        let minus = multistep_forward(pair, &displaced(deltas, dir, -FD_STEP)?, w)?
            .breakdown
            .total;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric, loss.total));
        largest = largest.max(analytic.abs()).max(numeric.abs());
    }
    Ok((worst, largest))
}

/// Compares analytic directional derivatives with central differences on a
/// given instance, once per active loss term and once with all terms.
pub fn gradient_check_instance(
    pair: &RegistrationPair,
    deltas: &[PreActivationField],
    config: &RegistrationConfig,
    seed: u64,
    tolerance: f64,
) -> Result<GradientCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let directions: Vec<_> = (0..DIRECTIONS).map(|_| random_unit(&mut rng, deltas)).collect();
    let weights = config.weights.as_array();
    let mut terms = Vec::new();
    for (k, name) in TERM_NAMES.iter().enumerate() {
        if weights[k] == 0.0 {
            continue;
        }
        let mut only = [0.0; 5];
        only[k] = weights[k];
        let (err, largest) = check_weights(pair, deltas, &LossWeights::from_array(only), &directions)?;
        terms.push(TermCheck {
            term: name.to_string(),
            weight: weights[k],
            max_rel_error: err,
            max_abs_derivative: largest,
        });
    }
    let (err, largest) = check_weights(pair, deltas, &config.weights, &directions)?;
    terms.push(TermCheck {
        term: "total".into(),
        weight: 1.0,
        max_rel_error: err,
        max_abs_derivative: largest,
    });

    let fwd = multistep_forward(pair, deltas, &LossWeights::zero())?;
    let mut negative_jacobians = 0;
    for s in &fwd.steps {
        for phi in [&s.phi_ab, &s.phi_ba] {
            negative_jacobians += jacobian_det(phi)?.data().iter().filter(|&&d| d < 0.0).count();
        }
    }
    let passed = terms.iter().all(|t| t.max_rel_error < tolerance);
    Ok(GradientCheckReport {
        dims: pair.dims().0,
        seed,
        terms,
        negative_jacobians,
        tolerance,
        passed,
    })
}

/// Random instance for [`gradient_check`]: noise images, three-class label
/// maps and large step fields so that some Jacobians are negative.
pub fn random_check_instance(
    dims: Dims,
    config: &RegistrationConfig,
    seed: u64,
) -> Result<(RegistrationPair, Vec<PreActivationField>)> {
    if dims.0.iter().any(|&n| n > MAX_CHECK_AXIS) {
        return Err(Error::invalid(format!(
            "gradient check dims {:?} exceed {MAX_CHECK_AXIS} per axis",
            dims.0
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.len();
    let mut image = || Volume::new(dims, 1, (0..n).map(|_| rng.gen::<f64>()).collect());
    let (a, b) = (image()?, image()?);
    let mut labels = || LabelVolume::new(dims, (0..n).map(|_| rng.gen_range(0..3)).collect());
    let (la, lb) = (labels()?, labels()?);
    let pair = RegistrationPair::new(a, b)?.with_segmentations(one_hot(&la, &[1, 2])?, one_hot(&lb, &[1, 2])?)?;
    let deltas = (0..config.steps)
        .map(|_| {
            let shape = PreActivationField::zeros(dims, config.control_stride);
            let data = (0..shape.data().len())
                .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            PreActivationField::new(shape.dims(), shape.stride(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pair, deltas))
}

/// Gradient check on a random instance of size `dims` (at most 8 per axis).
pub fn gradient_check(dims: Dims, config: &RegistrationConfig, seed: u64) -> Result<GradientCheckReport> {
    let (pair, deltas) = random_check_instance(dims, config, seed)?;
    gradient_check_instance(&pair, &deltas, config, seed, 1e-5)
}
