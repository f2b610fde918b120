use std::io::Write;

use rayon::prelude::*;

use super::engine::{minmax_with, penalty_with, AttackSetup};
use super::{AttackConfig, AttackCriterion, AttackResult, TraceRow};
use crate::error::Result;
use crate::tensor::Tensor;

pub const TRACE_HEADER: &str = "t,f,c,mi,stationarity_sq";
pub const SUMMARY_HEADER: &str = "sample_id,success,best_mi,iters,wallclock_ms";

/// 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            fmt_f64(r.f),
            fmt_f64(r.c),
            fmt_f64(r.mi),
            fmt_f64(r.stationarity_sq)
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub sample_id: usize,
    pub success: bool,
    pub best_mi: Option<f64>,
    pub iters: usize,
    pub wallclock_ms: u64,
}

impl SummaryRow {
    pub fn new(sample_id: usize, r: &AttackResult) -> Self {
        SummaryRow {
            sample_id,
            success: r.success,
            best_mi: r.best_mi,
            iters: r.iterations,
            wallclock_ms: r.wallclock_ms,
        }
    }
}

/// Summary rows; a missing best MI is written as an empty cell.
pub fn write_summary_csv<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        let mi = r.best_mi.map(fmt_f64).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.sample_id, r.success, mi, r.iters, r.wallclock_ms)?;
    }
    Ok(())
}

/// Running best raw similarity over successful iterates (`f ≤ 0`), where
/// "best" is the largest `score`. `None` until the first success.
pub fn best_so_far(trace: &[TraceRow], score: impl Fn(f64) -> f64) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    trace
        .iter()
        .map(|r| {
            if r.f <= 0.0 && best.is_none_or(|b| score(r.mi) > score(b)) {
                best = Some(r.mi);
            }
            best
        })
        .collect()
}

/// Attacks every `(sample_id, x)` in parallel. Sample `i` draws its
/// projection bank and statistics network from its own seed streams, so the
/// results do not depend on scheduling. Output order follows the input.
pub fn attack_batch<C>(samples: &[(usize, Tensor)], criterion: C, cfg: &AttackConfig, penalty: bool) -> Vec<Result<AttackResult>>
where
    C: Fn(usize, &Tensor) -> Result<AttackCriterion> + Sync,
{
    samples
        .par_iter()
        .map(|(id, x)| {
            let setup = AttackSetup::new(x, criterion(*id, x)?, cfg, *id as u64)?;
            if penalty {
                penalty_with(setup, cfg)
            } else {
                minmax_with(setup, cfg)
            }
        })
        .collect()
}
