use log::debug;

use super::adam::Adam;
use super::config::{RegistrationConfig, CONVERGENCE_WINDOW};
use super::pipeline::{multistep_forward, objective_and_gradient, RegistrationPair};
use crate::deform::{warp_labels, DeformationField, PreActivationField};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::volume::{one_hot, LabelId, LabelVolume, Volume};

/// Optimizer state between iterations.
#[derive(Clone, Debug)]
pub struct RegistrationState {
    pub deltas: Vec<PreActivationField>,
    pub optimizers: Vec<Adam>,
    pub trace: Vec<LossBreakdown>,
}

impl RegistrationState {
    /// All step fields at zero, i.e. identity deformations.
    pub fn initial(pair: &RegistrationPair, config: &RegistrationConfig) -> Self {
        let deltas: Vec<_> = (0..config.steps)
            .map(|_| PreActivationField::zeros(pair.dims(), config.control_stride))
            .collect();
        let optimizers = deltas
            .iter()
            .map(|d| Adam::new(d.data().len(), config.learning_rate, config.adam_betas, config.adam_eps))
            .collect();
        RegistrationState {
            deltas,
            optimizers,
            trace: Vec::new(),
        }
    }

    /// Evaluates the loss, records it and applies one Adam update.
    /// Returns `true` once the loss has stopped changing (no update is
    /// applied in that case).
    pub fn iterate(&mut self, pair: &RegistrationPair, config: &RegistrationConfig) -> Result<bool> {
        let (loss, grads) = objective_and_gradient(pair, &self.deltas, &config.weights)?;
        let iteration = self.trace.len();
        let finite = loss.total.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
        self.trace.push(loss);
        if !finite {
            return Err(Error::Divergence {
                iteration,
                trace: std::mem::take(&mut self.trace),
            });
        }
        if iteration >= CONVERGENCE_WINDOW {
            let prev = self.trace[iteration - CONVERGENCE_WINDOW].total;
            if (loss.total - prev).abs() <= config.convergence_tol * prev.abs() {
                return Ok(true);
            }
        }
        for ((delta, opt), g) in self.deltas.iter_mut().zip(&mut self.optimizers).zip(&grads) {
            opt.step(delta.data_mut(), g);
        }
        Ok(false)
    }
}

/// Outcome of [`optimize`].
#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub deltas: Vec<PreActivationField>,
    /// A→B field composed over the inference steps: `a_warp = warp(a, phi_ab)`.
    pub phi_ab: DeformationField,
    pub phi_ba: DeformationField,
    pub a_warp: Volume,
    pub b_warp: Volume,
    /// Loss at the start of every completed iteration.
    pub trace: Vec<LossBreakdown>,
    /// Loss of the returned fields over all optimized steps.
    pub final_loss: LossBreakdown,
    pub converged: bool,
}

impl RegistrationResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Optimizes one field per step from zero and returns the last iterate.
pub fn optimize(pair: &RegistrationPair, config: &RegistrationConfig) -> Result<RegistrationResult> {
    config.validate()?;
    let mut state = RegistrationState::initial(pair, config);
    let mut converged = false;
    for it in 0..config.iterations {
        converged = state.iterate(pair, config)?;
        if it % 50 == 0 || converged {
            debug!("iteration {it}: total {:.6e}", state.trace[it].total);
        }
        if converged {
            break;
        }
    }
    let fwd = multistep_forward(pair, &state.deltas, &config.weights)?;
    if !fwd.breakdown.total.is_finite() {
        return Err(Error::Divergence {
            iteration: state.trace.len(),
            trace: state.trace,
        });
    }
    let k = config.inference_steps();
    let (phi_ab, phi_ba) = fwd.composed_fields(k)?;
    let last = &fwd.steps[k - 1];
    Ok(RegistrationResult {
        a_warp: last.a_warp.clone(),
        b_warp: last.b_warp.clone(),
        phi_ab,
        phi_ba,
        deltas: state.deltas,
        trace: state.trace,
        final_loss: fwd.breakdown,
        converged,
    })
}

/// Registration of a labelled pair.
#[derive(Clone, Debug)]
pub struct LabeledRegistration {
    pub result: RegistrationResult,
    /// Labels used for the segmentation term (union of both volumes).
    pub label_set: Vec<LabelId>,
    pub a_labels_warp: Option<LabelVolume>,
    pub b_labels_warp: Option<LabelVolume>,
}

/// Registers A onto B (and B onto A). When label maps are given, every
/// foreground label present in either becomes one segmentation channel, and
/// the label maps are warped with the composed fields.
pub fn register_pair(
    a: &Volume,
    b: &Volume,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    config: &RegistrationConfig,
) -> Result<LabeledRegistration> {
    let mut pair = RegistrationPair::new(a.clone(), b.clone())?;
    let mut label_set = Vec::new();
    if let Some((la, lb)) = labels {
        a.dims().check_same(&la.dims(), "moving labels")?;
        b.dims().check_same(&lb.dims(), "fixed labels")?;
        label_set = la.present_labels();
        label_set.extend(lb.present_labels());
        label_set.sort_unstable();
        label_set.dedup();
        label_set.retain(|&l| l != 0);
        if !label_set.is_empty() {
            pair = pair.with_segmentations(one_hot(la, &label_set)?, one_hot(lb, &label_set)?)?;
        }
    }
    let result = optimize(&pair, config)?;
    let (a_labels_warp, b_labels_warp) = match labels {
        Some((la, lb)) => (
            Some(warp_labels(la, &result.phi_ab)?),
            Some(warp_labels(lb, &result.phi_ba)?),
        ),
        None => (None, None),
    };
    Ok(LabeledRegistration {
        result,
        label_set,
        a_labels_warp,
        b_labels_warp,
    })
}

/// Writes the loss trace as `iteration,sim,seg,reg,jac,inv,total`.
pub fn write_trace<W: std::io::Write>(out: W, trace: &[LossBreakdown]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "sim", "seg", "reg", "jac", "inv", "total"])?;
    for (i, b) in trace.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(b.terms().iter().chain([&b.total]).map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()
        .map_err(|e| Error::io(std::path::Path::new("<trace csv>"), e))?;
    Ok(())
}
