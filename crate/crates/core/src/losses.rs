//! Training objectives, recorded on a [`Tape`] so they can be differentiated.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::motion::SkeletonTopology;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub adv: f64,
    pub reg: f64,
    pub joint: f64,
    pub trip: f64,
    /// Triplet margin δ.
    pub margin: f64,
    /// Weight of the FK-position term inside the content loss.
    pub pos: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            reg: 0.5,
            joint: 0.3,
            trip: 0.3,
            margin: 5.0,
            pos: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.reg, self.joint, self.trip, self.margin, self.pos];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Scalar values of every loss term for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub con: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub reg: f64,
    pub joint: f64,
    pub trip: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("L_con", self.con),
            ("L_adv_g", self.adv_g),
            ("L_adv_d", self.adv_d),
            ("L_reg", self.reg),
            ("L_joint", self.joint),
            ("L_trip", self.trip),
        ]
    }
}

/// Generator objective `L_con + α_adv·L_adv + α_reg·L_reg + α_joint·L_joint + α_trip·L_trip`.
pub fn total(c: &LossComponents, w: &LossWeights, iteration: usize) -> Result<f64> {
    if let Some((name, _)) = c.named().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Divergence {
            component: name.to_string(),
            iteration,
        });
    }
    Ok(c.con + w.adv * c.adv_g + w.reg * c.reg + w.joint * c.joint + w.trip * c.trip)
}

fn same_shape(tape: &Tape, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

fn l1_mean<'a>(tape: &mut Tape<'a>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    tape.mean(d)
}

/// Mean L1 over quaternion components plus `lambda_pos` × mean L1 over
/// root-free FK positions (multiplied by `position_scale`).
pub fn content_consistency<'a>(
    tape: &mut Tape<'a>,
    output: Var,
    target: Var,
    skel: &'a SkeletonTopology,
    lambda_pos: f64,
    position_scale: f64,
) -> Result<Var> {
    same_shape(tape, output, target)?;
    let rot = l1_mean(tape, output, target);
    if lambda_pos == 0.0 {
        return Ok(rot);
    }
    let po = tape.fk(output, skel);
    let pt = tape.fk(target, skel);
    let pos = l1_mean(tape, po, pt);
    let pos = tape.scale(pos, lambda_pos * position_scale);
    Ok(tape.add(rot, pos))
}

fn class_score<'a>(tape: &mut Tape<'a>, scores: Var, class: usize) -> Result<Var> {
    let n = tape.value(scores).len();
    if class >= n {
        return Err(Error::InvalidArgument(format!("style class {class} out of range for {n} heads")));
    }
    Ok(tape.slice(scores, class, 1))
}

/// `(D^t(real) − 1)² + D^t(fake)²`.
pub fn adversarial_d<'a>(tape: &mut Tape<'a>, real_scores: Var, fake_scores: Var, class: usize) -> Result<Var> {
    let r = class_score(tape, real_scores, class)?;
    let f = class_score(tape, fake_scores, class)?;
    let r = tape.add_scalar(r, -1.0);
    let r = tape.square(r);
    let f = tape.square(f);
    let s = tape.add(r, f);
    Ok(tape.sum(s))
}

/// `(D^t(fake) − 1)²`.
pub fn adversarial_g<'a>(tape: &mut Tape<'a>, fake_scores: Var, class: usize) -> Result<Var> {
    let f = class_score(tape, fake_scores, class)?;
    let f = tape.add_scalar(f, -1.0);
    let f = tape.square(f);
    Ok(tape.sum(f))
}

/// Mean absolute difference between a fake feature and the mean real feature.
pub fn feature_matching<'a>(tape: &mut Tape<'a>, fake: Var, real: &[Var]) -> Result<Var> {
    if real.is_empty() {
        return Err(Error::InvalidArgument("feature matching needs at least one real feature".into()));
    }
    for r in real {
        same_shape(tape, fake, *r)?;
    }
    let m = tape.average(real);
    Ok(l1_mean(tape, fake, m))
}

/// Mean over views of `‖code3d − code2d‖²`.
pub fn joint_embedding<'a>(tape: &mut Tape<'a>, code3d: Var, codes2d: &[Var]) -> Result<Var> {
    if codes2d.is_empty() {
        return Err(Error::InvalidArgument("joint embedding needs at least one 2D code".into()));
    }
    let mut terms = Vec::with_capacity(codes2d.len());
    for c in codes2d {
        same_shape(tape, code3d, *c)?;
        let d = tape.sub(code3d, *c);
        let d = tape.square(d);
        terms.push(tape.sum(d));
    }
    Ok(tape.average(&terms))
}

/// `max(0, ‖a − p‖ − ‖a − n‖ + margin)`.
pub fn triplet<'a>(tape: &mut Tape<'a>, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
    same_shape(tape, anchor, positive)?;
    same_shape(tape, anchor, negative)?;
    let dp = tape.sub(anchor, positive);
    let dp = tape.norm(dp);
    let dn = tape.sub(anchor, negative);
    let dn = tape.norm(dn);
    let d = tape.sub(dp, dn);
    let d = tape.add_scalar(d, margin);
    Ok(tape.relu(d))
}

/// Evaluates a loss on constant tensors.
pub fn eval_loss(inputs: &[Tensor], f: impl for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}
