//! MINE on correlated Gaussian pairs, where the true MI is known in closed
//! form. Used to calibrate the estimator before trusting it per sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::synth_gaussian_pairs;
use crate::error::Result;
use crate::models::{ModelSpec, ModelState};
use crate::seed;
use crate::tensor::{OptimizerState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub rho: f64,
    pub dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Size of the training pool of pairs.
    pub train_pairs: usize,
    /// Size of the held-out pool; the estimate averages the minibatch bound
    /// over its disjoint batches.
    pub eval_pairs: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            rho: 0.9,
            dim: 20,
            steps: 5000,
            batch: 256,
            hidden: vec![100, 100],
            learning_rate: 1e-3,
            train_pairs: 20_000,
            eval_pairs: 20_000,
            eval_every: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub analytic: f64,
    /// Held-out minibatch DV bound after the last step.
    pub estimate: f64,
    pub relative_error: f64,
    pub steps: usize,
    /// `(step, held-out estimate)` every `eval_every` steps.
    pub history: Vec<(usize, f64)>,
}

/// DV bound with joint pairs `(u_i, v_i)` and marginal pairs `(u_i, v′_i)`.
fn batch_dv(tape: &mut Tape, stats: &ModelState, params: &[Var], u: Var, v: Var, v_marg: Var) -> Result<Var> {
    let j = tape.concat_cols(u, v)?;
    let m = tape.concat_cols(u, v_marg)?;
    let tj = stats.forward_on(tape, params, j)?.output;
    let tm = stats.forward_on(tape, params, m)?.output;
    let a = tape.mean(tj)?;
    let b = tape.log_mean_exp(tm)?;
    Ok(tape.sub(a, b)?)
}

/// Trains a statistics network by ascending the DV bound on minibatches of
/// joint pairs against marginal pairs assembled from an independent
/// minibatch, then evaluates the same minibatch bound on held-out pairs.
pub fn calibrate_gaussian(cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    let train = synth_gaussian_pairs(cfg.rho, cfg.dim, cfg.train_pairs, seed::derive_seed(cfg.seed, "calib-train", 0))?;
    let eval = synth_gaussian_pairs(cfg.rho, cfg.dim, cfg.eval_pairs, seed::derive_seed(cfg.seed, "calib-eval", 0))?;
    let split = |p: &crate::data::GaussianPairs, idx: &[usize]| -> Result<(Tensor, Tensor)> {
        let mut u = Vec::with_capacity(idx.len() * p.dim);
        let mut v = Vec::with_capacity(idx.len() * p.dim);
        for &i in idx {
            u.extend_from_slice(p.u(i));
            v.extend_from_slice(p.v(i));
        }
        Ok((Tensor::new(vec![idx.len(), p.dim], u)?, Tensor::new(vec![idx.len(), p.dim], v)?))
    };

    let spec = ModelSpec::mine_statistics(cfg.dim, &cfg.hidden);
    let mut stats = ModelState::init(spec, seed::derive_seed(cfg.seed, "calib-init", 0))?;
    let mut opt = OptimizerState::adam(cfg.learning_rate)?;
    let mut rng = seed::stream(cfg.seed, "calib-batches", 0);

    // Held-out estimate: the minibatch DV bound averaged over disjoint
    // held-out batches, marginals taken from the neighbouring batch.
    let nb = (cfg.eval_pairs / cfg.batch).max(1);
    let mut held_out = Vec::with_capacity(nb);
    for b in 0..nb {
        let idx: Vec<usize> = (b * cfg.batch..((b + 1) * cfg.batch).min(cfg.eval_pairs)).collect();
        let next: Vec<usize> = idx.iter().map(|i| (i + cfg.batch) % cfg.eval_pairs).collect();
        let (u, v) = split(&eval, &idx)?;
        let (_, vm) = split(&eval, &next)?;
        held_out.push((u, v, vm));
    }
    let evaluate = |stats: &ModelState| -> Result<f64> {
        let mut total = 0.0;
        for (u, v, vm) in &held_out {
            let mut tape = Tape::new();
            let params = stats.bind(&mut tape);
            let u = tape.leaf(u.clone());
            let v = tape.leaf(v.clone());
            let vm = tape.leaf(vm.clone());
            let i = batch_dv(&mut tape, stats, &params, u, v, vm)?;
            total += tape.value(i).item();
        }
        Ok(total / held_out.len() as f64)
    };

    let mut history = Vec::new();
    for step in 1..=cfg.steps {
        let joint: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..cfg.train_pairs)).collect();
        let other: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..cfg.train_pairs)).collect();
        let (u, v) = split(&train, &joint)?;
        let (_, v_marg) = split(&train, &other)?;

        let mut tape = Tape::new();
        let params = stats.bind(&mut tape);
        let uv = tape.leaf(u);
        let vv = tape.leaf(v);
        let vm = tape.leaf(v_marg);
        let i = batch_dv(&mut tape, &stats, &params, uv, vv, vm)?;
        let mut grads = tape.backward(i, &params)?;
        drop(tape);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = -*x);
        }
        opt.step(stats.params_mut(), &grads)?;

        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            history.push((step, evaluate(&stats)?));
        }
    }
    let estimate = match history.last() {
        Some(&(s, e)) if s == cfg.steps => e,
        _ => evaluate(&stats)?,
    };
    let analytic = crate::data::gaussian_mi(cfg.rho, cfg.dim);
    Ok(CalibrationReport {
        analytic,
        estimate,
        relative_error: (estimate - analytic).abs() / analytic,
        steps: cfg.steps,
        history,
    })
}
