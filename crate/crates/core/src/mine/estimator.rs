use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{dv_on, shuffle_perm, Extractor, MineConfig};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, ModelState};
use crate::seed;
use crate::tensor::{OptimizerState, Tape, Tensor, Var};

/// Statistics network bound to one reference sample `x`.
///
/// θ is warm-started across updates; every ascent step draws a fresh
/// marginal permutation, and the most recent one is kept for evaluating the
/// bound and its gradient with respect to δ.
#[derive(Clone, Debug)]
pub struct MineEstimator {
    stats: ModelState,
    extractor: Extractor,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    inner_steps: usize,
    warmup_steps: usize,
    reference: Tensor,
    u: Arc<Tensor>,
    perm: Vec<usize>,
    estimate: Option<f64>,
    history: Vec<f64>,
}

impl MineEstimator {
    pub fn new(x: &Tensor, extractor: Extractor, cfg: &MineConfig, seed: u64) -> Result<MineEstimator> {
        let u = extractor.features(x)?;
        let spec = ModelSpec::mine_statistics(extractor.view_len(), &cfg.hidden);
        let stats = ModelState::init(spec, seed::derive_seed(seed, "mine-init", 0))?;
        let mut rng = seed::stream(seed, "mine-shuffle", 0);
        let perm = shuffle_perm(extractor.k(), &mut rng);
        Ok(MineEstimator {
            stats,
            extractor,
            opt: OptimizerState::adam(cfg.learning_rate)?,
            rng,
            inner_steps: cfg.inner_steps,
            warmup_steps: cfg.warmup_steps,
            reference: x.clone(),
            u: Arc::new(u),
            perm,
            estimate: None,
            history: Vec::new(),
        })
    }

    pub fn stats(&self) -> &ModelState {
        &self.stats
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    pub fn reference(&self) -> &Tensor {
        &self.reference
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Latest recorded estimate.
    pub fn estimate(&self) -> Option<f64> {
        self.estimate
    }

    /// Every estimate recorded by [`MineEstimator::mine_update`].
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Views of a perturbed sample.
    pub fn views(&self, xpd: &Tensor) -> Result<Tensor> {
        self.extractor.features(xpd)
    }

    /// DV bound with the current θ and permutation, on a tape where the
    /// statistics parameters were bound as `params` and `v` holds the views
    /// of `x+δ`.
    pub fn dv_on(&self, tape: &mut Tape, params: &[Var], v: Var) -> Result<Var> {
        let u = tape.leaf_shared(self.u.clone());
        dv_on(tape, &self.stats, params, u, v, &self.perm)
    }

    /// Current `I(θ)` for the pair `(x, xpd)`.
    pub fn objective(&self, xpd: &Tensor) -> Result<f64> {
        let v = self.views(xpd)?;
        self.objective_views(&v)
    }

    fn objective_views(&self, v: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.stats.bind(&mut tape);
        let vv = tape.leaf(v.clone());
        let i = self.dv_on(&mut tape, &params, vv)?;
        Ok(tape.value(i).item())
    }

    /// `steps` ascent steps `θ ← θ + Adam(∇_θ I)` on fixed views `v`.
    pub(crate) fn ascend(&mut self, v: &Tensor, steps: usize) -> Result<()> {
        let v = Arc::new(v.clone());
        for _ in 0..steps {
            self.perm = shuffle_perm(self.extractor.k(), &mut self.rng);
            let mut tape = Tape::new();
            let params = self.stats.bind(&mut tape);
            let vv = tape.leaf_shared(v.clone());
            let i = self.dv_on(&mut tape, &params, vv)?;
            let mut grads = tape.backward(i, &params)?;
            drop(tape);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x = -*x);
            }
            self.opt.step(self.stats.params_mut(), &grads)?;
        }
        Ok(())
    }

    pub(crate) fn record(&mut self, estimate: f64) {
        self.estimate = Some(estimate);
        self.history.push(estimate);
    }

    /// Runs `steps` warm-started ascent steps on the pair `(x, xpd)` and
    /// returns the bound under the updated θ.
    pub fn mine_update(&mut self, xpd: &Tensor, steps: usize) -> Result<f64> {
        if xpd.shape() != self.reference.shape() {
            return Err(Error::Shape {
                expected: self.reference.shape().to_vec(),
                got: xpd.shape().to_vec(),
            });
        }
        let v = self.views(xpd)?;
        self.ascend(&v, steps)?;
        let i = self.objective_views(&v)?;
        self.record(i);
        Ok(i)
    }

    /// `I(θ)` at `x+δ` and its gradient with respect to δ, θ and the
    /// permutation held fixed.
    pub fn mi_gradient_wrt_delta(&self, delta: &Tensor) -> Result<(f64, Tensor)> {
        if delta.shape() != self.reference.shape() {
            return Err(Error::Shape {
                expected: self.reference.shape().to_vec(),
                got: delta.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let params = self.stats.bind(&mut tape);
        let x = tape.leaf(self.reference.clone());
        let d = tape.leaf(delta.clone());
        let xpd = tape.add(x, d)?;
        let v = self.extractor.features_on(&mut tape, xpd)?;
        let i = self.dv_on(&mut tape, &params, v)?;
        let g = tape.backward(i, &[d])?.remove(0);
        Ok((tape.value(i).item(), g))
    }

    /// Adds `c` to the output bias of the statistics network.
    pub fn shift_statistics(&mut self, c: f64) {
        let mut params = self.stats.params_mut();
        if let Some(b) = params.last_mut() {
            b.data_mut().iter_mut().for_each(|v| *v += c);
        }
    }
}
