use crate::deform::grid::{
    activate_raw, integrate_raw, upsample_raw, vjp_activate_raw, vjp_integrate_raw, vjp_upsample_raw,
};
use crate::deform::{compose, vjp_warp, vjp_warp_image, warp, DeformationField, GradientField, PreActivationField};
use crate::error::{Error, Result};
use crate::losses::{loss_total, LossBreakdown, LossEvaluation, LossInputs, LossWeights, SegInputs};
use crate::volume::{Dims, Volume};

/// Images (and optional one-hot segmentations) of the two volumes being
/// registered. A→B maps A onto B.
#[derive(Clone, Debug)]
pub struct RegistrationPair {
    pub a: Volume,
    pub b: Volume,
    pub seg: Option<(Volume, Volume)>,
}

impl RegistrationPair {
    pub fn new(a: Volume, b: Volume) -> Result<Self> {
        a.check_same_shape(&b, "registration pair")?;
        if a.dims().0.iter().any(|&n| n < 3) {
            return Err(Error::shape(format!(
                "registration needs at least 3 voxels per axis, got {:?}",
                a.dims().0
            )));
        }
        Ok(RegistrationPair { a, b, seg: None })
    }

    /// Attaches one-hot segmentations (same channel set for both volumes).
    pub fn with_segmentations(mut self, a_seg: Volume, b_seg: Volume) -> Result<Self> {
        a_seg.check_same_shape(&b_seg, "segmentation pair")?;
        self.a.dims().check_same(&a_seg.dims(), "segmentation")?;
        self.seg = Some((a_seg, b_seg));
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.a.dims()
    }

    /// The same problem with the roles of A and B exchanged.
    pub fn swapped(&self) -> Self {
        RegistrationPair {
            a: self.b.clone(),
            b: self.a.clone(),
            seg: self.seg.as_ref().map(|(a, b)| (b.clone(), a.clone())),
        }
    }
}

/// Everything one refinement step computed on the way forward.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Full-resolution pre-activation for A→B; B→A uses its negation.
    pub upsampled: Vec<f64>,
    pub g_ab: GradientField,
    pub g_ba: GradientField,
    pub phi_ab: DeformationField,
    pub phi_ba: DeformationField,
    pub a_warp: Volume,
    pub b_warp: Volume,
    pub a_seg_warp: Option<Volume>,
    pub b_seg_warp: Option<Volume>,
    pub eval: LossEvaluation,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub steps: Vec<StepOutput>,
    /// Sum of the per-step losses.
    pub breakdown: LossBreakdown,
}

impl ForwardOutput {
    /// Composition of the first `k` step fields in each direction, so that
    /// warping the original A with the first returns the `k`-th step's A.
    pub fn composed_fields(&self, k: usize) -> Result<(DeformationField, DeformationField)> {
        if k == 0 || k > self.steps.len() {
            return Err(Error::invalid(format!(
                "cannot compose {k} of {} steps",
                self.steps.len()
            )));
        }
        let mut ab = self.steps[0].phi_ab.clone();
        let mut ba = self.steps[0].phi_ba.clone();
        for s in &self.steps[1..k] {
            ab = compose(&ab, &s.phi_ab)?;
            ba = compose(&ba, &s.phi_ba)?;
        }
        Ok((ab, ba))
    }
}

fn check_deltas(pair: &RegistrationPair, deltas: &[PreActivationField]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::invalid("at least one step field is required"));
    }
    for d in deltas {
        if !d.fits(pair.dims()) {
            return Err(Error::shape(format!(
                "step field {:?} at stride {} does not fit image {:?}",
                d.dims().0,
                d.stride(),
                pair.dims().0
            )));
        }
    }
    Ok(())
}

/// Single-step forward pass.
pub fn forward_pass(pair: &RegistrationPair, delta: &PreActivationField, w: &LossWeights) -> Result<ForwardOutput> {
    multistep_forward(pair, std::slice::from_ref(delta), w)
}

/// Runs one step per field, each step warping the previous step's output.
pub fn multistep_forward(
    pair: &RegistrationPair,
    deltas: &[PreActivationField],
    w: &LossWeights,
) -> Result<ForwardOutput> {
    check_deltas(pair, deltas)?;
    w.validate()?;
    let dims = pair.dims();
    let mut steps: Vec<StepOutput> = Vec::with_capacity(deltas.len());
    let targets = (&pair.a, &pair.b, pair.seg.as_ref().map(|(x, y)| (x, y)));
    for delta in deltas {
        // Step i resamples the output of step i - 1 and compares it with the
        // original opposite volume.
        let (a, b, seg) = match steps.last() {
            None => (&pair.a, &pair.b, pair.seg.as_ref().map(|(x, y)| (x, y))),
            Some(prev) => (
                &prev.a_warp,
                &prev.b_warp,
                prev.a_seg_warp.as_ref().zip(prev.b_seg_warp.as_ref()),
            ),
        };
        let upsampled = upsample_raw(delta.data(), delta.dims(), delta.stride(), dims);
        let negated: Vec<f64> = upsampled.iter().map(|v| -v).collect();
        let g_ab = GradientField::from_raw(dims, activate_raw(&upsampled));
        let g_ba = GradientField::from_raw(dims, activate_raw(&negated));
        let phi_ab = DeformationField::from_raw(dims, integrate_raw(g_ab.data(), dims));
        let phi_ba = DeformationField::from_raw(dims, integrate_raw(g_ba.data(), dims));
        let a_warp = warp(a, &phi_ab)?;
        let b_warp = warp(b, &phi_ba)?;
        let (a_seg_warp, b_seg_warp) = match seg {
            Some((sa, sb)) => (Some(warp(sa, &phi_ab)?), Some(warp(sb, &phi_ba)?)),
            None => (None, None),
        };
        let seg_inputs = match (targets.2, &a_seg_warp, &b_seg_warp) {
            (Some((sa, sb)), Some(wa), Some(wb)) => Some(SegInputs {
                a_seg: sa,
                b_seg: sb,
                a_seg_warp: wa,
                b_seg_warp: wb,
            }),
            _ => None,
        };
        let eval = loss_total(
            &LossInputs {
                a: targets.0,
                b: targets.1,
                a_warp: &a_warp,
                b_warp: &b_warp,
                g_ab: &g_ab,
                g_ba: &g_ba,
                phi_ab: &phi_ab,
                phi_ba: &phi_ba,
                seg: seg_inputs,
            },
            w,
        )?;
        steps.push(StepOutput {
            upsampled,
            g_ab,
            g_ba,
            phi_ab,
            phi_ba,
            a_warp,
            b_warp,
            a_seg_warp,
            b_seg_warp,
            eval,
        });
    }
    let breakdown = LossBreakdown::sum(steps.iter().map(|s| &s.eval.breakdown), w);
    Ok(ForwardOutput { steps, breakdown })
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Reverse pass for one direction of one step. Returns the gradient with
/// respect to the step's integrated gradient field and, when requested,
/// with respect to the step's input image and segmentation.
fn backward_direction(
    img_in: &Volume,
    seg_in: Option<&Volume>,
    phi: &DeformationField,
    d_img_warp: Vec<f64>,
    d_seg_warp: Option<Vec<f64>>,
    d_phi_direct: &[f64],
    d_g_direct: &[f64],
    want_inputs: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>)> {
    let dims = phi.dims();
    let (mut dphi, d_img) = if want_inputs {
        let (p, i) = vjp_warp_image(img_in, phi, &d_img_warp)?;
        (p, Some(i))
    } else {
        (vjp_warp(img_in, phi, &d_img_warp)?, None)
    };
    let mut d_seg = None;
    if let (Some(s), Some(ds)) = (seg_in, d_seg_warp) {
        if want_inputs {
            let (p, i) = vjp_warp_image(s, phi, &ds)?;
            add_into(&mut dphi, &p);
            d_seg = Some(i);
        } else {
            add_into(&mut dphi, &vjp_warp(s, phi, &ds)?);
        }
    }
    add_into(&mut dphi, d_phi_direct);
    let mut dg = vjp_integrate_raw(&dphi, dims);
    add_into(&mut dg, d_g_direct);
    Ok((dg, d_img, d_seg))
}

/// Loss and its gradient with respect to every step field.
pub fn objective_and_gradient(
    pair: &RegistrationPair,
    deltas: &[PreActivationField],
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let fwd = multistep_forward(pair, deltas, w)?;
    let dims = pair.dims();
    let mut grads = vec![Vec::new(); deltas.len()];
    // Gradients flowing into the images produced by the current step from later steps.
    let mut carry_a: Option<Vec<f64>> = None;
    let mut carry_b: Option<Vec<f64>> = None;
    let mut carry_sa: Option<Vec<f64>> = None;
    let mut carry_sb: Option<Vec<f64>> = None;
    for i in (0..deltas.len()).rev() {
        let st = &fwd.steps[i];
        let (a_in, b_in, seg_in) = if i == 0 {
            (&pair.a, &pair.b, pair.seg.as_ref().map(|(x, y)| (x, y)))
        } else {
            let p = &fwd.steps[i - 1];
            (&p.a_warp, &p.b_warp, p.a_seg_warp.as_ref().zip(p.b_seg_warp.as_ref()))
        };
        let with_carry = |g: &Vec<f64>, c: Option<Vec<f64>>| {
            let mut g = g.clone();
            if let Some(c) = c {
                add_into(&mut g, &c);
            }
            g
        };
        let d_a = with_carry(&st.eval.grad_a_warp, carry_a.take());
        let d_b = with_carry(&st.eval.grad_b_warp, carry_b.take());
        let d_sa = st.eval.grad_a_seg_warp.as_ref().map(|g| with_carry(g, carry_sa.take()));
        let d_sb = st.eval.grad_b_seg_warp.as_ref().map(|g| with_carry(g, carry_sb.take()));
        let want = i > 0;
        let (dg_ab, ca, csa) = backward_direction(
            a_in,
            seg_in.map(|s| s.0),
            &st.phi_ab,
            d_a,
            d_sa,
            &st.eval.grad_phi_ab,
            &st.eval.grad_g_ab,
            want,
        )?;
        let (dg_ba, cb, csb) = backward_direction(
            b_in,
            seg_in.map(|s| s.1),
            &st.phi_ba,
            d_b,
            d_sb,
            &st.eval.grad_phi_ba,
            &st.eval.grad_g_ba,
            want,
        )?;
        carry_a = ca;
        carry_b = cb;
        carry_sa = csa;
        carry_sb = csb;

        let negated: Vec<f64> = st.upsampled.iter().map(|v| -v).collect();
        let d_ab = vjp_activate_raw(&st.upsampled, &dg_ab);
        let d_ba = vjp_activate_raw(&negated, &dg_ba);
        let du: Vec<f64> = d_ab.iter().zip(&d_ba).map(|(x, y)| x - y).collect();
        grads[i] = vjp_upsample_raw(&du, deltas[i].dims(), deltas[i].stride(), dims);
    }
    Ok((fwd.breakdown, grads))
}
