//! Registration loss terms.
//!
//! Each term is a symmetric sum over the two registration directions and
//! returns its value per direction together with the exact gradient with
//! respect to the quantities it reads directly (warped volumes, gradient
//! fields or deformation fields). The engine chains those gradients back to
//! the optimization variable.
//!
//! All sums are normalized to per-voxel means so that weights do not depend
//! on image size.

use serde::{Deserialize, Serialize};

use crate::deform::{compose, jacobian_det, vjp_compose, vjp_jacobian_det, DeformationField, GradientField};
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Smoothing constant of the soft Dice.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Weights of the five terms: similarity, segmentation, smoothness,
/// Jacobian folding and inverse consistency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            delta: 0.01,
            epsilon: 10.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.alpha, self.beta, self.gamma, self.delta, self.epsilon]
    }

    pub fn from_array(w: [f64; 5]) -> Self {
        LossWeights {
            alpha: w[0],
            beta: w[1],
            gamma: w[2],
            delta: w[3],
            epsilon: w[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )))
        }
    }
}

/// Term values and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sim: f64,
    pub seg: f64,
    pub reg: f64,
    pub jac: f64,
    pub inv: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total = alpha*sim + beta*seg + gamma*reg + delta*jac + epsilon*inv`.
    pub fn from_terms(terms: [f64; 5], w: &LossWeights) -> Self {
        let [sim, seg, reg, jac, inv] = terms;
        LossBreakdown {
            sim,
            seg,
            reg,
            jac,
            inv,
            total: w.alpha * sim + w.beta * seg + w.gamma * reg + w.delta * jac + w.epsilon * inv,
        }
    }

    pub fn terms(&self) -> [f64; 5] {
        [self.sim, self.seg, self.reg, self.jac, self.inv]
    }

    /// Term-wise sum of several breakdowns, recombined with `w`.
    pub fn sum<'a>(items: impl IntoIterator<Item = &'a LossBreakdown>, w: &LossWeights) -> Self {
        let mut t = [0.0; 5];
        for b in items {
            for (acc, v) in t.iter_mut().zip(b.terms()) {
                *acc += v;
            }
        }
        Self::from_terms(t, w)
    }
}

/// One loss term split by direction, with gradients w.r.t. the A→B and B→A
/// inputs it reads.
#[derive(Clone, Debug)]
pub struct PairTerm {
    pub ab: f64,
    pub ba: f64,
    pub grad_ab: Vec<f64>,
    pub grad_ba: Vec<f64>,
}

impl PairTerm {
    pub fn value(&self) -> f64 {
        self.ab + self.ba
    }
}

fn mse_with_grad(x: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mut sum = 0.0;
    let grad = x
        .iter()
        .zip(target)
        .map(|(&a, &b)| {
            let d = a - b;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    (sum / n, grad)
}

/// Mean squared intensity error, `mean((a_warp - b)^2) + mean((b_warp - a)^2)`.
pub fn loss_sim(a_warp: &Volume, b: &Volume, b_warp: &Volume, a: &Volume) -> Result<PairTerm> {
    a_warp.check_same_shape(b, "loss_sim")?;
    b_warp.check_same_shape(a, "loss_sim")?;
    a_warp.check_same_shape(a, "loss_sim")?;
    let (ab, grad_ab) = mse_with_grad(a_warp.data(), b.data());
    let (ba, grad_ba) = mse_with_grad(b_warp.data(), a.data());
    Ok(PairTerm {
        ab,
        ba,
        grad_ab,
        grad_ba,
    })
}

/// Soft Dice loss averaged over channels, with its gradient w.r.t. `p`.
fn soft_dice(p: &Volume, q: &Volume) -> (f64, Vec<f64>) {
    let n = p.dims().len();
    let k = p.channels();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.data().len()];
    for c in 0..k {
        let (pc, qc) = (p.channel(c), q.channel(c));
        let (mut inter, mut sp, mut sq) = (0.0, 0.0, 0.0);
        for i in 0..n {
            inter += pc[i] * qc[i];
            sp += pc[i];
            sq += qc[i];
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = sp + sq + DICE_SMOOTH;
        loss += 1.0 - num / den;
        let scale = -1.0 / (den * den * k as f64);
        let g = &mut grad[c * n..(c + 1) * n];
        for i in 0..n {
            g[i] = (2.0 * qc[i] * den - num) * scale;
        }
    }
    (loss / k as f64, grad)
}

/// Soft Dice between warped one-hot segmentations and the opposite image's
/// one-hot segmentation, both directions.
pub fn loss_seg(a_seg_warp: &Volume, b_seg: &Volume, b_seg_warp: &Volume, a_seg: &Volume) -> Result<PairTerm> {
    a_seg_warp.check_same_shape(b_seg, "loss_seg")?;
    b_seg_warp.check_same_shape(a_seg, "loss_seg")?;
    a_seg_warp.check_same_shape(a_seg, "loss_seg")?;
    let (ab, grad_ab) = soft_dice(a_seg_warp, b_seg);
    let (ba, grad_ba) = soft_dice(b_seg_warp, a_seg);
    Ok(PairTerm {
        ab,
        ba,
        grad_ab,
        grad_ba,
    })
}

/// Mean squared deviation of the predicted gradients from 1; zero exactly
/// when both deformations are the identity.
pub fn loss_reg(g_ab: &GradientField, g_ba: &GradientField) -> Result<PairTerm> {
    g_ab.dims().check_same(&g_ba.dims(), "loss_reg")?;
    let ones = vec![1.0; g_ab.data().len()];
    let (ab, grad_ab) = mse_with_grad(g_ab.data(), &ones);
    let (ba, grad_ba) = mse_with_grad(g_ba.data(), &ones);
    Ok(PairTerm {
        ab,
        ba,
        grad_ab,
        grad_ba,
    })
}

fn folding(phi: &DeformationField) -> Result<(f64, Vec<f64>)> {
    let det = jacobian_det(phi)?;
    let n = det.data().len() as f64;
    let mut sum = 0.0;
    let upstream: Vec<f64> = det
        .data()
        .iter()
        .map(|&d| {
            if d < 0.0 {
                sum += -d;
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    let grad = if sum > 0.0 {
        vjp_jacobian_det(phi, &upstream)?
    } else {
        vec![0.0; phi.data().len()]
    };
    Ok((sum / n, grad))
}

/// Mean of the negative part of the Jacobian determinant, both directions.
pub fn loss_jac(phi_ab: &DeformationField, phi_ba: &DeformationField) -> Result<PairTerm> {
    phi_ab.dims().check_same(&phi_ba.dims(), "loss_jac")?;
    let (ab, grad_ab) = folding(phi_ab)?;
    let (ba, grad_ba) = folding(phi_ba)?;
    Ok(PairTerm {
        ab,
        ba,
        grad_ab,
        grad_ba,
    })
}

/// Mean squared distance between `outer ∘ inner` and the identity over the
/// voxels selected by `mask`, with gradients `(d outer, d inner)`.
fn composition_error(
    outer: &DeformationField,
    inner: &DeformationField,
    mask: &[bool],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let dims = outer.dims();
    let n = dims.len();
    let count = mask.iter().filter(|m| **m).count();
    let comp = compose(outer, inner)?;
    let mut sum = 0.0;
    let mut upstream = vec![0.0; 3 * n];
    for i in (0..n).filter(|&i| mask[i]) {
        let p = dims.coords(i);
        let q = comp.at(i);
        for c in 0..3 {
            let e = q[c] - p[c] as f64;
            sum += e * e;
            upstream[c * n + i] = 2.0 * e / count as f64;
        }
    }
    let (d_outer, d_inner) = vjp_compose(outer, inner, &upstream)?;
    Ok((sum / count as f64, d_outer, d_inner))
}

fn loss_inv_masked(phi_ab: &DeformationField, phi_ba: &DeformationField, mask: &[bool]) -> Result<PairTerm> {
    phi_ab.dims().check_same(&phi_ba.dims(), "loss_inv")?;
    if !mask.iter().any(|m| *m) {
        return Err(Error::invalid("inverse-consistency mask selects no voxels"));
    }
    let (ab, mut grad_ab, mut grad_ba) = composition_error(phi_ab, phi_ba, mask)?;
    let (ba, d_ba, d_ab) = composition_error(phi_ba, phi_ab, mask)?;
    grad_ab.iter_mut().zip(&d_ab).for_each(|(g, d)| *g += d);
    grad_ba.iter_mut().zip(&d_ba).for_each(|(g, d)| *g += d);
    Ok(PairTerm {
        ab,
        ba,
        grad_ab,
        grad_ba,
    })
}

/// Inverse consistency: mean squared coordinate error of
/// `phi_ab ∘ phi_ba` and `phi_ba ∘ phi_ab` against the identity.
pub fn loss_inv(phi_ab: &DeformationField, phi_ba: &DeformationField) -> Result<PairTerm> {
    let mask = vec![true; phi_ab.dims().len()];
    loss_inv_masked(phi_ab, phi_ba, &mask)
}

/// [`loss_inv`] restricted to voxels at least `margin` voxels from every face.
pub fn loss_inv_interior(phi_ab: &DeformationField, phi_ba: &DeformationField, margin: usize) -> Result<PairTerm> {
    let dims = phi_ab.dims();
    let mask: Vec<bool> = (0..dims.len())
        .map(|i| {
            let p = dims.coords(i);
            (0..3).all(|a| p[a] >= margin && p[a] + margin < dims.axis(a))
        })
        .collect();
    loss_inv_masked(phi_ab, phi_ba, &mask)
}

/// One-hot segmentations for the supervised term.
#[derive(Clone, Copy, Debug)]
pub struct SegInputs<'a> {
    pub a_seg: &'a Volume,
    pub b_seg: &'a Volume,
    pub a_seg_warp: &'a Volume,
    pub b_seg_warp: &'a Volume,
}

/// Everything [`loss_total`] reads.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    pub a: &'a Volume,
    pub b: &'a Volume,
    pub a_warp: &'a Volume,
    pub b_warp: &'a Volume,
    pub g_ab: &'a GradientField,
    pub g_ba: &'a GradientField,
    pub phi_ab: &'a DeformationField,
    pub phi_ba: &'a DeformationField,
    pub seg: Option<SegInputs<'a>>,
}

/// Weighted total with the weighted gradient for every direct input.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub breakdown: LossBreakdown,
    pub grad_a_warp: Vec<f64>,
    pub grad_b_warp: Vec<f64>,
    pub grad_a_seg_warp: Option<Vec<f64>>,
    pub grad_b_seg_warp: Option<Vec<f64>>,
    pub grad_g_ab: Vec<f64>,
    pub grad_g_ba: Vec<f64>,
    pub grad_phi_ab: Vec<f64>,
    pub grad_phi_ba: Vec<f64>,
}

fn scaled(v: Vec<f64>, w: f64) -> Vec<f64> {
    v.into_iter().map(|x| x * w).collect()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Evaluates all five terms. Without segmentations the Dice term is 0.
pub fn loss_total(inputs: &LossInputs, w: &LossWeights) -> Result<LossEvaluation> {
    w.validate()?;
    let sim = loss_sim(inputs.a_warp, inputs.b, inputs.b_warp, inputs.a)?;
    let seg = inputs
        .seg
        .map(|s| loss_seg(s.a_seg_warp, s.b_seg, s.b_seg_warp, s.a_seg))
        .transpose()?;
    let reg = loss_reg(inputs.g_ab, inputs.g_ba)?;
    let jac = loss_jac(inputs.phi_ab, inputs.phi_ba)?;
    let inv = loss_inv(inputs.phi_ab, inputs.phi_ba)?;
    if inputs.g_ab.dims() != inputs.phi_ab.dims() || inputs.phi_ab.dims() != inputs.a.dims() {
        return Err(Error::shape("loss_total: fields and images must share dims"));
    }

    let terms = [
        sim.value(),
        seg.as_ref().map_or(0.0, PairTerm::value),
        reg.value(),
        jac.value(),
        inv.value(),
    ];
    let breakdown = LossBreakdown::from_terms(terms, w);

    let mut grad_phi_ab = scaled(jac.grad_ab, w.delta);
    let mut grad_phi_ba = scaled(jac.grad_ba, w.delta);
    add_into(&mut grad_phi_ab, &scaled(inv.grad_ab, w.epsilon));
    add_into(&mut grad_phi_ba, &scaled(inv.grad_ba, w.epsilon));
    let (grad_a_seg_warp, grad_b_seg_warp) = match seg {
        Some(s) => (Some(scaled(s.grad_ab, w.beta)), Some(scaled(s.grad_ba, w.beta))),
        None => (None, None),
    };
    Ok(LossEvaluation {
        breakdown,
        grad_a_warp: scaled(sim.grad_ab, w.alpha),
        grad_b_warp: scaled(sim.grad_ba, w.alpha),
        grad_a_seg_warp,
        grad_b_seg_warp,
        grad_g_ab: scaled(reg.grad_ab, w.gamma),
        grad_g_ba: scaled(reg.grad_ba, w.gamma),
        grad_phi_ab,
        grad_phi_ba,
    })
}
