//! Attack success functions: `f(x+δ) ≤ 0` exactly when the attack succeeds.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{recon_loss, recon_loss_var, ModelState};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    SupUntargeted,
    SupTargeted,
    UnsupRecon,
    Custom,
}

/// Builds `f` on a tape from the node holding `x+δ`.
pub type CustomLoss = Arc<dyn Fn(&mut Tape, Var) -> Result<Var> + Send + Sync>;

/// `logit_y − max_{j≠y} logit_j + κ`.
pub fn f_sup_untargeted(logits: &[f64], y: usize, kappa: f64) -> Result<f64> {
    let best = max_other(logits, y)?;
    Ok(logits[y] - logits[best] + kappa)
}

/// `max_{j≠y′} logit_j − logit_{y′} + κ`.
pub fn f_sup_targeted(logits: &[f64], target: usize, kappa: f64) -> Result<f64> {
    let best = max_other(logits, target)?;
    Ok(logits[best] - logits[target] + kappa)
}

/// `‖x − Φ(x+δ)‖₂ − ‖x − Φ(x)‖₂ + κ`.
pub fn f_unsup(x: &Tensor, delta: &Tensor, model: &ModelState, kappa: f64) -> Result<f64> {
    if x.shape() != delta.shape() {
        return Err(Error::Shape {
            expected: x.shape().to_vec(),
            got: delta.shape().to_vec(),
        });
    }
    let xpd = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect(),
    )?;
    let base = recon_loss(x, &model.reconstruct(x)?)?;
    Ok(recon_loss(x, &model.reconstruct(&xpd)?)? - base + kappa)
}

/// Index of the largest entry other than `skip` (first on ties).
fn max_other(logits: &[f64], skip: usize) -> Result<usize> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if skip >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "class {skip} out of range for {} logits",
            logits.len()
        )));
    }
    Ok((0..logits.len())
        .filter(|&j| j != skip)
        .fold(None, |best: Option<usize>, j| match best {
            Some(b) if logits[b] >= logits[j] => Some(b),
            _ => Some(j),
        })
        .expect("at least one other class"))
}

/// A criterion bound to one clean sample. For the unsupervised kind the
/// clean reconstruction loss is computed once, on construction.
#[derive(Clone)]
pub struct AttackCriterion {
    kind: CriterionKind,
    kappa: f64,
    class: Option<usize>,
    model: Option<Arc<ModelState>>,
    baseline: Option<f64>,
    custom: Option<CustomLoss>,
}

impl fmt::Debug for AttackCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttackCriterion")
            .field("kind", &self.kind)
            .field("kappa", &self.kappa)
            .field("class", &self.class)
            .field("baseline", &self.baseline)
            .finish_non_exhaustive()
    }
}

impl AttackCriterion {
    /// Untargeted attack on a classifier whose true label is `y`.
    pub fn untargeted(model: Arc<ModelState>, y: usize, kappa: f64) -> Result<Self> {
        Self::supervised(CriterionKind::SupUntargeted, model, y, kappa)
    }

    /// Targeted attack towards class `target`.
    pub fn targeted(model: Arc<ModelState>, target: usize, kappa: f64) -> Result<Self> {
        Self::supervised(CriterionKind::SupTargeted, model, target, kappa)
    }

    fn supervised(kind: CriterionKind, model: Arc<ModelState>, class: usize, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        let classes = model
            .spec()
            .classes
            .ok_or_else(|| Error::InvalidArgument("supervised criterion needs a classifier".into()))?;
        if classes < 2 || class >= classes {
            return Err(Error::InvalidArgument(format!("class {class} invalid for {classes} classes")));
        }
        Ok(AttackCriterion {
            kind,
            kappa,
            class: Some(class),
            model: Some(model),
            baseline: None,
            custom: None,
        })
    }

    /// Reconstruction criterion of an autoencoder around the clean sample `x`.
    pub fn unsupervised(model: Arc<ModelState>, x: &Tensor, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        let baseline = recon_loss(x, &model.reconstruct(x)?)?;
        Ok(AttackCriterion {
            kind: CriterionKind::UnsupRecon,
            kappa,
            class: None,
            model: Some(model),
            baseline: Some(baseline),
            custom: None,
        })
    }

    /// Arbitrary differentiable `f(x+δ)`; κ is added to its output.
    pub fn custom(loss: CustomLoss, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(AttackCriterion {
            kind: CriterionKind::Custom,
            kappa,
            class: None,
            model: None,
            baseline: None,
            custom: Some(loss),
        })
    }

    pub fn kind(&self) -> CriterionKind {
        self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn model(&self) -> Option<&Arc<ModelState>> {
        self.model.as_ref()
    }

    /// Cached `‖x − Φ(x)‖₂` for the unsupervised kind.
    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    /// `f` on the tape. `x` is the clean sample and `xpd` holds `x+δ`.
    pub fn on_tape(&self, tape: &mut Tape, x: Var, xpd: Var) -> Result<Var> {
        let f = match self.kind {
            CriterionKind::SupUntargeted | CriterionKind::SupTargeted => {
                let model = self.model.as_ref().expect("supervised criterion has a model");
                let params = model.bind(tape);
                let logits = model.forward_on(tape, &params, xpd)?.output;
                let values = tape.value(logits).data().to_vec();
                let class = self.class.expect("supervised criterion has a class");
                let other = max_other(&values, class)?;
                let (pos, neg) = if self.kind == CriterionKind::SupUntargeted {
                    (class, other)
                } else {
                    (other, class)
                };
                let a = tape.pick(logits, pos)?;
                let b = tape.pick(logits, neg)?;
                tape.sub(a, b)?
            }
            CriterionKind::UnsupRecon => {
                let model = self.model.as_ref().expect("unsupervised criterion has a model");
                let params = model.bind(tape);
                let out = model.forward_on(tape, &params, xpd)?.output;
                let shape = tape.value(x).shape().to_vec();
                let xhat = tape.reshape(out, &shape)?;
                let r = recon_loss_var(tape, x, xhat)?;
                tape.shift(r, -self.baseline.expect("baseline cached"))?
            }
            CriterionKind::Custom => (self.custom.as_ref().expect("custom criterion has a loss"))(tape, xpd)?,
        };
        if tape.value(f).shape() != [1] {
            return Err(Error::InvalidArgument("criterion must be scalar".into()));
        }
        Ok(if self.kappa != 0.0 { tape.shift(f, self.kappa)? } else { f })
    }

    /// `f(x+δ)` evaluated directly.
    pub fn evaluate(&self, x: &Tensor, xpd: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let pv = tape.leaf(xpd.clone());
        let f = self.on_tape(&mut tape, xv, pv)?;
        Ok(tape.value(f).item())
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("κ must be ≥ 0, got {kappa}")));
    }
    Ok(())
}
