//! Adversarial perturbations that satisfy an attack criterion while keeping
//! (or destroying) mutual information with the clean sample.
//!
//! [`minmax_attack`] solves `min_δ max_c c·f⁺(x+δ) − Ĩ(x, x+δ)` by
//! alternating projected steps; [`penalty_attack`] is the fixed-`c`
//! baseline with a binary search over `c`.

mod batch;
mod criteria;
mod engine;
mod ops;

pub(crate) use batch::fmt_f64;
pub use batch::{attack_batch, best_so_far, write_summary_csv, write_trace_csv, SummaryRow, TRACE_HEADER, SUMMARY_HEADER};
pub use criteria::{f_sup_targeted, f_sup_untargeted, f_unsup, AttackCriterion, CriterionKind, CustomLoss};
pub use engine::{minmax_attack, minmax_with, objective_on, penalty_attack, penalty_with, AttackSetup};
pub use ops::{alt_similarity, c_update, hinge, is_feasible, project_box, stationarity, FeatureDistance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mine::MineConfig;
use crate::tensor::Tensor;

/// Whether the attack keeps the sample similar (supervised) or dissimilar
/// (unsupervised adversarial examples).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    MaximizeMi,
    MinimizeMi,
}

/// Similarity term of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    Mine,
    /// Euclidean distance between views of `x` and `x+δ`.
    L2Feature,
    /// One minus the cosine between views of `x` and `x+δ`.
    CosineFeature,
    /// `‖x − Φ(x+δ)‖₂` of the attacked autoencoder, maximized.
    ReconL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Binary search steps `B`.
    pub search_steps: usize,
    /// Iterations per search step `T′`.
    pub inner_iterations: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            search_steps: 9,
            inner_iterations: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub direction: Direction,
    pub similarity: Similarity,
    pub mine: MineConfig,
    pub c_max: f64,
    pub kappa: f64,
    pub penalty: PenaltyConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha: 0.01,
            beta: 0.1,
            iterations: 40,
            epsilon: 1.0,
            direction: Direction::MaximizeMi,
            similarity: Similarity::Mine,
            mine: MineConfig::default(),
            c_max: 1e6,
            kappa: 0.0,
            penalty: PenaltyConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Defaults for unsupervised adversarial examples: minimize MI, no
    /// effective L∞ bound.
    pub fn unsupervised() -> Self {
        AttackConfig {
            direction: Direction::MinimizeMi,
            ..AttackConfig::default()
        }
    }

    /// Zero step sizes are accepted: they freeze δ or c, which is useful
    /// for diagnostics.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("step sizes must be ≥ 0, got α={} β={}", self.alpha, self.beta));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("ε must lie in (0, 1], got {}", self.epsilon));
        }
        if self.iterations == 0 {
            return bad("T must be ≥ 1".into());
        }
        if !(self.c_max > 0.0) {
            return bad(format!("c̄ must be positive, got {}", self.c_max));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("κ must be ≥ 0, got {}", self.kappa));
        }
        if self.penalty.search_steps == 0 || self.penalty.inner_iterations == 0 {
            return bad("penalty search needs B ≥ 1 and T′ ≥ 1".into());
        }
        Ok(())
    }
}

/// One iteration of an attack: criterion value, multiplier and raw
/// similarity at the new iterate, and the squared stationarity residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub f: f64,
    pub c: f64,
    pub mi: f64,
    pub stationarity_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    /// Best successful perturbation, if any iterate succeeded.
    pub delta: Option<Tensor>,
    /// Raw similarity value (MI for the MINE objective) at `delta`.
    pub best_mi: Option<f64>,
    pub success: bool,
    pub trace: Vec<TraceRow>,
    /// Multiplier used in each penalty search step; empty for MinMax.
    pub search_c: Vec<f64>,
    pub iterations: usize,
    pub wallclock_ms: u64,
}
