//! Per-sample mutual information estimation with the Donsker–Varadhan bound.
//!
//! A single pair `(x, x+δ)` carries no distribution, so an auxiliary batch is
//! built from it: either `K` seeded Gaussian compressions `M_k x` or the `K`
//! feature maps of a model's first convolution. Joint pairs share the index
//! `k`; marginal pairs combine `u_k` with `v_{π(k)}` for a random permutation
//! `π`.

mod bank;
mod calibrate;
mod estimator;

pub use bank::{make_projection_bank, ProjectionBank};
pub use calibrate::{calibrate_gaussian, CalibrationConfig, CalibrationReport};
pub use estimator::MineEstimator;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LayerSpec, ModelState, Padding};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// First-conv features when the target model starts with a convolution,
    /// random sampling otherwise.
    Auto,
    Random,
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MineConfig {
    pub scheme: SchemeKind,
    /// Number of projection matrices (random sampling only).
    pub k: usize,
    pub d_prime: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Ascent steps per attack iteration (T_I).
    pub inner_steps: usize,
    /// Ascent steps at δ = 0 before the first attack iteration.
    pub warmup_steps: usize,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            scheme: SchemeKind::Auto,
            k: 500,
            d_prime: 128,
            hidden: vec![100, 100],
            learning_rate: 1e-4,
            inner_steps: 10,
            warmup_steps: 10,
        }
    }
}

/// Maps one sample to `K` compressed views.
#[derive(Clone, Debug)]
pub enum Extractor {
    Bank(ProjectionBank),
    /// First conv layer of a target model (weight `[K, C, kh, kw]`).
    Conv {
        input_shape: Vec<usize>,
        weight: Arc<Tensor>,
        bias: Arc<Tensor>,
        pad: usize,
    },
}

impl Extractor {
    /// Borrows the first layer of `model`, which must be a convolution.
    pub fn from_conv(model: &ModelState) -> Result<Extractor> {
        let spec = model.spec();
        match spec.layers.first() {
            Some(LayerSpec::Conv2d { kernel, padding, .. }) => Ok(Extractor::Conv {
                input_shape: spec.input_shape.clone(),
                weight: model.params()[0].clone(),
                bias: model.params()[1].clone(),
                pad: match padding {
                    Padding::Same => (kernel - 1) / 2,
                    Padding::Valid => 0,
                },
            }),
            _ => Err(Error::NoConvLayer),
        }
    }

    /// Resolves `cfg.scheme` against an optional target model for inputs of
    /// `d` elements. The bank is drawn from `bank_seed`.
    pub fn for_config(cfg: &MineConfig, model: Option<&ModelState>, d: usize, bank_seed: u64) -> Result<Extractor> {
        let conv = model.map(Extractor::from_conv);
        match (cfg.scheme, conv) {
            (SchemeKind::Conv, Some(c)) => c,
            (SchemeKind::Conv, None) => Err(Error::NoConvLayer),
            (SchemeKind::Auto, Some(Ok(c))) => Ok(c),
            _ => Ok(Extractor::Bank(make_projection_bank(bank_seed, d, cfg.d_prime, cfg.k)?)),
        }
    }

    /// Number of views `K`.
    pub fn k(&self) -> usize {
        match self {
            Extractor::Bank(b) => b.k(),
            Extractor::Conv { weight, .. } => weight.shape()[0],
        }
    }

    /// Length `d′` of each view.
    pub fn view_len(&self) -> usize {
        match self {
            Extractor::Bank(b) => b.d_prime(),
            Extractor::Conv {
                input_shape,
                weight,
                pad,
                ..
            } => {
                let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
                (input_shape[1] + 2 * pad + 1 - kh) * (input_shape[2] + 2 * pad + 1 - kw)
            }
        }
    }

    /// `[K, d′]` views of the sample held in `x`.
    pub fn features_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Extractor::Bank(b) => b.compress_on(tape, x),
            Extractor::Conv {
                input_shape,
                weight,
                bias,
                pad,
            } => {
                let len: usize = input_shape.iter().product();
                if tape.try_value(x)?.len() != len {
                    return Err(Error::Shape {
                        expected: input_shape.clone(),
                        got: tape.value(x).shape().to_vec(),
                    });
                }
                let mut shape = vec![1];
                shape.extend_from_slice(input_shape);
                let img = tape.reshape(x, &shape)?;
                let w = tape.leaf_shared(weight.clone());
                let b = tape.leaf_shared(bias.clone());
                let y = tape.conv2d(img, w, b, *pad)?;
                Ok(tape.reshape(y, &[self.k(), self.view_len()])?)
            }
        }
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let f = self.features_on(&mut tape, xv)?;
        Ok(tape.value(f).clone())
    }
}

/// First-conv feature maps of `x`, one flattened row per filter.
pub fn conv_features(model: &ModelState, x: &Tensor) -> Result<Tensor> {
    Extractor::from_conv(model)?.features(x)
}

/// `K` joint pairs `(u_k, v_k)` and `K` marginal pairs `(u_k, v_{perm[k]})`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub u: Tensor,
    pub v: Tensor,
    pub perm: Vec<usize>,
}

impl PairBatch {
    pub fn new(u: Tensor, v: Tensor, perm: Vec<usize>) -> Result<PairBatch> {
        if u.shape().len() != 2 || u.shape() != v.shape() {
            return Err(Error::Shape {
                expected: u.shape().to_vec(),
                got: v.shape().to_vec(),
            });
        }
        if !is_permutation(&perm, u.shape()[0]) {
            return Err(Error::InvalidArgument("marginal index is not a permutation".into()));
        }
        Ok(PairBatch { u, v, perm })
    }

    /// Pairs with a freshly shuffled marginal index.
    pub fn shuffled<R: Rng>(u: Tensor, v: Tensor, rng: &mut R) -> Result<PairBatch> {
        let k = u.shape().first().copied().unwrap_or(0);
        PairBatch::new(u, v, shuffle_perm(k, rng))
    }

    pub fn k(&self) -> usize {
        self.perm.len()
    }
}

pub fn shuffle_perm<R: Rng>(k: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p
}

fn is_permutation(p: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    p.len() == k
        && p.iter().all(|&i| {
            i < k && !std::mem::replace(&mut seen[i], true)
        })
}

/// `mean_k T(u_k, v_k) − ln mean_k exp T(u_k, v_{perm[k]})` on the tape.
pub fn dv_on(tape: &mut Tape, stats: &ModelState, params: &[Var], u: Var, v: Var, perm: &[usize]) -> Result<Var> {
    let joint = tape.concat_cols(u, v)?;
    let shuffled = tape.gather_rows(v, perm)?;
    let marginal = tape.concat_cols(u, shuffled)?;
    let tj = stats.forward_on(tape, params, joint)?.output;
    let tm = stats.forward_on(tape, params, marginal)?.output;
    let a = tape.mean(tj)?;
    let b = tape.log_mean_exp(tm)?;
    Ok(tape.sub(a, b)?)
}

/// DV estimate `I(θ)` of a pair batch under the statistics network `stats`.
pub fn dv_objective(stats: &ModelState, batch: &PairBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let params = stats.bind(&mut tape);
    let u = tape.leaf(batch.u.clone());
    let v = tape.leaf(batch.v.clone());
    let i = dv_on(&mut tape, stats, &params, u, v, &batch.perm)?;
    Ok(tape.value(i).item())
}
