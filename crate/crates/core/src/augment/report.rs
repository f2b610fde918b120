use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::AugmentMethod;
use crate::attack::fmt_f64;

pub const LEDGER_HEADER: &str = "run_id,method,asr,original_train_loss,retrained_train_loss,original_test_error,retrained_test_error,improvement_pct,generation_ms,retrain_ms,original_seed,retrain_seed,plan_seed,train_size,augmented_size";

/// Improvement is relative to the original model: `(orig − new)/orig`, in
/// percent, so positive means the retrained model reconstructs better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub method: AugmentMethod,
    /// Attack success rate on the training set (UAE methods only).
    pub asr: Option<f64>,
    pub original_train_loss: f64,
    pub retrained_train_loss: f64,
    pub original_test_error: f64,
    pub retrained_test_error: f64,
    pub improvement_pct: f64,
    pub generation_ms: u64,
    pub retrain_ms: u64,
    pub original_seed: u64,
    pub retrain_seed: u64,
    pub plan_seed: u64,
    pub train_size: usize,
    pub augmented_size: usize,
}

fn method_name(m: AugmentMethod) -> &'static str {
    match m {
        AugmentMethod::MineUae => "mine-uae",
        AugmentMethod::L2Uae => "l2-uae",
        AugmentMethod::Gaussian => "gaussian",
        AugmentMethod::Geometric => "geometric",
    }
}

impl AugmentationReport {
    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("method", method_name(self.method).to_string()),
            ("asr", self.asr.map_or_else(|| "NA".to_string(), fmt_f64)),
            ("original_train_loss", fmt_f64(self.original_train_loss)),
            ("retrained_train_loss", fmt_f64(self.retrained_train_loss)),
            ("original_test_error", fmt_f64(self.original_test_error)),
            ("retrained_test_error", fmt_f64(self.retrained_test_error)),
            ("improvement_pct", fmt_f64(self.improvement_pct)),
            ("generation_ms", self.generation_ms.to_string()),
            ("retrain_ms", self.retrain_ms.to_string()),
            ("original_seed", self.original_seed.to_string()),
            ("retrain_seed", self.retrain_seed.to_string()),
            ("plan_seed", self.plan_seed.to_string()),
            ("train_size", self.train_size.to_string()),
            ("augmented_size", self.augmented_size.to_string()),
        ]
    }

    /// Flat `key = value` lines.
    pub fn to_key_value(&self, run_id: &str) -> String {
        let mut out = format!("run_id = {run_id}\n");
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// One ledger row matching [`LEDGER_HEADER`], without trailing newline.
    pub fn ledger_row(&self, run_id: &str) -> String {
        let mut cells = vec![run_id.to_string()];
        cells.extend(self.fields().into_iter().map(|(_, v)| v));
        cells.join(",")
    }

    /// Same report with wall-clock fields zeroed, for byte-stable output.
    pub fn without_timing(&self) -> Self {
        AugmentationReport {
            generation_ms: 0,
            retrain_ms: 0,
            ..self.clone()
        }
    }
}
