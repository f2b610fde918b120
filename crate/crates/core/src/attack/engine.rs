use std::sync::Arc;
use std::time::Instant;

use super::ops::{c_update, hinge, project_box, stationarity};
use super::{AttackConfig, AttackCriterion, AttackResult, Direction, Similarity, TraceRow};
use crate::error::{Error, Result};
use crate::mine::{Extractor, MineEstimator};
use crate::models::recon_loss_var;
use crate::seed::derive_seed;
use crate::tensor::{Tape, Tensor, Var};

const PENALTY_LB: f64 = 1e-3;
const PENALTY_UB: f64 = 1e9;
const PENALTY_C0: f64 = 1e-3;

/// Per-sample attack state: the clean sample, its criterion and whatever
/// the similarity term needs (a MINE estimator or a feature extractor).
#[derive(Clone, Debug)]
pub struct AttackSetup {
    x: Tensor,
    criterion: AttackCriterion,
    similarity: Similarity,
    direction: Direction,
    estimator: Option<MineEstimator>,
    extractor: Option<Extractor>,
    reference_views: Option<Arc<Tensor>>,
}

/// Nodes of the first half of one evaluation: everything that does not
/// depend on the statistics network.
struct Partial {
    x: Var,
    xpd: Var,
    f: Var,
    views: Option<Var>,
}

/// One evaluation of `F(δ, c)`.
struct Evaluated {
    objective: Var,
    f: f64,
    raw: f64,
}

impl AttackSetup {
    /// Builds the similarity machinery for sample `index`; the projection
    /// bank and the statistics network draw from `bank:index` and
    /// `mine:index` under `cfg.seed`.
    pub fn new(x: &Tensor, criterion: AttackCriterion, cfg: &AttackConfig, index: u64) -> Result<AttackSetup> {
        if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("sample must lie in [0, 1]".into()));
        }
        let model = criterion.model().map(|m| &**m);
        let (mut estimator, mut extractor, mut reference_views) = (None, None, None);
        match cfg.similarity {
            Similarity::Mine => {
                let ex = Extractor::for_config(&cfg.mine, model, x.len(), derive_seed(cfg.seed, "bank", index))?;
                estimator = Some(MineEstimator::new(x, ex, &cfg.mine, derive_seed(cfg.seed, "mine", index))?);
            }
            Similarity::L2Feature | Similarity::CosineFeature => {
                let ex = Extractor::for_config(&cfg.mine, model, x.len(), derive_seed(cfg.seed, "bank", index))?;
                reference_views = Some(Arc::new(ex.features(x)?));
                extractor = Some(ex);
            }
            Similarity::ReconL2 => {
                if !model.is_some_and(|m| m.spec().kind.is_autoencoder()) {
                    return Err(Error::InvalidArgument("recon-l2 similarity needs an autoencoder criterion".into()));
                }
            }
        }
        Ok(AttackSetup {
            x: x.clone(),
            criterion,
            similarity: cfg.similarity,
            direction: cfg.direction,
            estimator,
            extractor,
            reference_views,
        })
    }

    pub fn sample(&self) -> &Tensor {
        &self.x
    }

    pub fn criterion(&self) -> &AttackCriterion {
        &self.criterion
    }

    pub fn estimator(&self) -> Option<&MineEstimator> {
        self.estimator.as_ref()
    }

    pub fn estimator_mut(&mut self) -> Option<&mut MineEstimator> {
        self.estimator.as_mut()
    }

    /// Signed score that best-tracking maximizes: `±I` for MINE, and for
    /// the dissimilarity measures `+D` when minimizing MI, `−D` otherwise.
    pub fn score(&self, raw: f64) -> f64 {
        let maximize = self.direction == Direction::MaximizeMi;
        if maximize == (self.similarity == Similarity::Mine) {
            raw
        } else {
            -raw
        }
    }

    fn partial(&self, tape: &mut Tape, delta: Var) -> Result<Partial> {
        let x = tape.leaf(self.x.clone());
        let xpd = tape.add(x, delta)?;
        let f = self.criterion.on_tape(tape, x, xpd)?;
        let views = match (&self.estimator, &self.extractor) {
            (Some(est), _) => Some(est.extractor().features_on(tape, xpd)?),
            (None, Some(ex)) => Some(ex.features_on(tape, xpd)?),
            (None, None) => None,
        };
        Ok(Partial { x, xpd, f, views })
    }

    /// Raw similarity node on the tape.
    fn similarity_on(&self, tape: &mut Tape, p: &Partial) -> Result<Var> {
        match self.similarity {
            Similarity::Mine => {
                let est = self.estimator.as_ref().expect("MINE similarity has an estimator");
                let params = est.stats().bind(tape);
                est.dv_on(tape, &params, p.views.expect("views computed"))
            }
            Similarity::L2Feature => {
                let u = tape.leaf_shared(self.reference_views.clone().expect("reference views"));
                let diff = tape.sub(p.views.expect("views computed"), u)?;
                Ok(tape.l2_norm(diff)?)
            }
            Similarity::CosineFeature => {
                let u = tape.leaf_shared(self.reference_views.clone().expect("reference views"));
                let v = p.views.expect("views computed");
                let uv = tape.mul(u, v)?;
                let dot = tape.sum(uv)?;
                let nu = tape.l2_norm(u)?;
                let nv = tape.l2_norm(v)?;
                if tape.value(nu).item() == 0.0 || tape.value(nv).item() == 0.0 {
                    return Ok(tape.leaf(Tensor::scalar(1.0)));
                }
                let denom = tape.mul(nu, nv)?;
                let cos = tape.div(dot, denom)?;
                let neg = tape.scale(cos, -1.0)?;
                Ok(tape.shift(neg, 1.0)?)
            }
            Similarity::ReconL2 => {
                let model = self.criterion.model().expect("checked on construction");
                let params = model.bind(tape);
                let out = model.forward_on(tape, &params, p.xpd)?.output;
                let xhat = tape.reshape(out, self.x.shape())?;
                recon_loss_var(tape, p.x, xhat)
            }
        }
    }

    /// Completes `F = c·f⁺ − score` on the tape. The hinge gate closes the
    /// criterion term when `f ≤ 0`.
    fn complete(&self, tape: &mut Tape, p: &Partial, c: f64) -> Result<Evaluated> {
        let raw_var = self.similarity_on(tape, p)?;
        let raw = tape.value(raw_var).item();
        let f = tape.value(p.f).item();
        let flip = self.score(1.0);
        let neg_score = tape.scale(raw_var, -flip)?;
        let objective = if hinge(f).1 && c != 0.0 {
            let cf = tape.scale(p.f, c)?;
            tape.add(cf, neg_score)?
        } else {
            neg_score
        };
        Ok(Evaluated { objective, f, raw })
    }

    /// Runs `steps` MINE ascent steps on the views already on the tape.
    fn train_mine(&mut self, tape: &Tape, p: &Partial, steps: usize) -> Result<()> {
        if let Some(est) = self.estimator.as_mut() {
            if steps > 0 {
                let v = tape.value(p.views.expect("views computed")).clone();
                est.ascend(&v, steps)?;
            }
        }
        Ok(())
    }

    /// MINE warm-up at `δ = 0`.
    fn warm_up(&mut self) -> Result<()> {
        let steps = match &self.estimator {
            Some(est) => est.warmup_steps(),
            None => return Ok(()),
        };
        let mut tape = Tape::new();
        let d = tape.leaf(Tensor::zeros(self.x.shape().to_vec()));
        let p = self.partial(&mut tape, d)?;
        self.train_mine(&tape, &p, steps)
    }

    /// `F(δ, c)`, its gradient in δ, `f(x+δ)` and the raw similarity.
    fn gradient(&self, delta: &Tensor, c: f64) -> Result<(Tensor, f64, f64)> {
        let mut tape = Tape::new();
        let d = tape.leaf(delta.clone());
        let p = self.partial(&mut tape, d)?;
        let e = self.complete(&mut tape, &p, c)?;
        let g = tape.backward(e.objective, &[d])?.remove(0);
        Ok((g, e.f, e.raw))
    }

    /// One iteration after the δ step: criterion and views at `x+δ`, then
    /// `steps` MINE updates, then `F` under the updated statistics network
    /// with the multiplier returned by `next_c(f⁺)`.
    fn advance(&mut self, delta: &Tensor, steps: usize, next_c: impl FnOnce(f64) -> Result<f64>) -> Result<Step> {
        let mut tape = Tape::new();
        let d = tape.leaf(delta.clone());
        let p = self.partial(&mut tape, d)?;
        self.train_mine(&tape, &p, steps)?;
        let fplus = hinge(tape.value(p.f).item()).0;
        let c = next_c(fplus)?;
        let e = self.complete(&mut tape, &p, c)?;
        let grad = tape.backward(e.objective, &[d])?.remove(0);
        if let (Some(est), Similarity::Mine) = (self.estimator.as_mut(), self.similarity) {
            est.record(e.raw);
        }
        Ok(Step {
            grad,
            f: e.f,
            fplus,
            c,
            raw: e.raw,
        })
    }
}

struct Step {
    grad: Tensor,
    f: f64,
    fplus: f64,
    c: f64,
    raw: f64,
}

/// `F(δ, c) = c·f⁺(x+δ) − score(x, x+δ)` on a caller-owned tape where
/// `delta` is a node, with the statistics network frozen at its current
/// parameters. Returns the objective node.
pub fn objective_on(setup: &AttackSetup, tape: &mut Tape, delta: Var, c: f64) -> Result<Var> {
    let p = setup.partial(tape, delta)?;
    Ok(setup.complete(tape, &p, c)?.objective)
}

/// Best-so-far bookkeeping shared by both algorithms.
struct Best {
    delta: Option<Tensor>,
    raw: Option<f64>,
    score: f64,
}

impl Best {
    fn new() -> Best {
        Best {
            delta: None,
            raw: None,
            score: f64::NEG_INFINITY,
        }
    }

    fn offer(&mut self, setup: &AttackSetup, delta: &Tensor, f: f64, raw: f64) -> bool {
        let s = setup.score(raw);
        if f <= 0.0 && s > self.score {
            self.delta = Some(delta.clone());
            self.raw = Some(raw);
            self.score = s;
            true
        } else {
            false
        }
    }
}

fn descend(delta: &mut Tensor, grad: &Tensor, x: &Tensor, alpha: f64, eps: f64) {
    delta.data_mut().iter_mut().zip(grad.data()).for_each(|(d, g)| *d -= alpha * g);
    project_box(delta.data_mut(), x.data(), eps);
}

/// The MinMax attack: alternating projected descent on δ and ascent on the
/// multiplier `c`, with the statistics network updated in between.
pub fn minmax_attack(x: &Tensor, criterion: AttackCriterion, cfg: &AttackConfig) -> Result<AttackResult> {
    let setup = AttackSetup::new(x, criterion, cfg, 0)?;
    minmax_with(setup, cfg)
}

/// [`minmax_attack`] on a prepared setup, e.g. one with a pre-trained or
/// frozen estimator.
pub fn minmax_with(mut setup: AttackSetup, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let start = Instant::now();
    let x = setup.x.clone();
    let inner = setup.estimator().map_or(0, |e| e.inner_steps());
    setup.warm_up()?;

    let mut delta = Tensor::zeros(x.shape().to_vec());
    let mut c = 0.0;
    let (mut grad, _, _) = setup.gradient(&delta, c)?;
    let mut best = Best::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        descend(&mut delta, &grad, &x, cfg.alpha, cfg.epsilon);
        let step = setup.advance(&delta, inner, |fplus| c_update(c, t, cfg.beta, fplus, cfg.c_max))?;
        c = step.c;
        let stat = stationarity(delta.data(), c, step.grad.data(), step.fplus, cfg.epsilon, x.data(), cfg.c_max);
        trace.push(TraceRow {
            t,
            f: step.f,
            c,
            mi: step.raw,
            stationarity_sq: stat,
        });
        best.offer(&setup, &delta, step.f, step.raw);
        grad = step.grad;
    }
    Ok(AttackResult {
        success: best.delta.is_some(),
        delta: best.delta,
        best_mi: best.raw,
        trace,
        search_c: Vec::new(),
        iterations: cfg.iterations,
        wallclock_ms: start.elapsed().as_millis() as u64,
    })
}

/// Penalty baseline: `B` search steps of `T′` projected descent iterations
/// on `c·f⁺ − score` with `c` fixed per step and δ restarted from zero.
/// Between steps `c` follows the binary search on `[10⁻³, 10⁹]`.
pub fn penalty_attack(x: &Tensor, criterion: AttackCriterion, cfg: &AttackConfig) -> Result<AttackResult> {
    let setup = AttackSetup::new(x, criterion, cfg, 0)?;
    penalty_with(setup, cfg)
}

pub fn penalty_with(mut setup: AttackSetup, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let start = Instant::now();
    let x = setup.x.clone();
    let inner = setup.estimator().map_or(0, |e| e.inner_steps());
    setup.warm_up()?;

    let (mut lb, mut ub, mut c) = (PENALTY_LB, PENALTY_UB, PENALTY_C0);
    let mut best = Best::new();
    let mut search_c = Vec::with_capacity(cfg.penalty.search_steps);
    let mut trace = Vec::with_capacity(cfg.penalty.search_steps * cfg.penalty.inner_iterations);
    let mut t = 0;
    for _ in 0..cfg.penalty.search_steps {
        search_c.push(c);
        let mut delta = Tensor::zeros(x.shape().to_vec());
        let (mut grad, _, _) = setup.gradient(&delta, c)?;
        let mut step_success = false;
        for _ in 0..cfg.penalty.inner_iterations {
            t += 1;
            descend(&mut delta, &grad, &x, cfg.alpha, cfg.epsilon);
            let step = setup.advance(&delta, inner, |_| Ok(c))?;
            let stat = stationarity(delta.data(), c, step.grad.data(), step.fplus, cfg.epsilon, x.data(), cfg.c_max);
            trace.push(TraceRow {
                t,
                f: step.f,
                c,
                mi: step.raw,
                stationarity_sq: stat,
            });
            step_success |= step.f <= 0.0;
            best.offer(&setup, &delta, step.f, step.raw);
            grad = step.grad;
        }
        (lb, ub, c) = next_penalty_c(lb, ub, c, step_success);
    }
    Ok(AttackResult {
        success: best.delta.is_some(),
        delta: best.delta,
        best_mi: best.raw,
        trace,
        search_c,
        iterations: t,
        wallclock_ms: start.elapsed().as_millis() as u64,
    })
}

/// One binary-search update of `(lb, ub, c)`.
pub(crate) fn next_penalty_c(lb: f64, ub: f64, c: f64, success: bool) -> (f64, f64, f64) {
    if success {
        let ub = ub.min(c);
        let c = if ub < PENALTY_UB { (lb + ub) / 2.0 } else { c };
        (lb, ub, c)
    } else {
        let lb = lb.max(c);
        let c = if ub < PENALTY_UB { (lb + ub) / 2.0 } else { c * 10.0 };
        (lb, ub, c)
    }
}
