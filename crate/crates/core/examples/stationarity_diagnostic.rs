//! Tracks the stationarity residual ‖L(δ, c)‖² of the MinMax iteration on a
//! smooth criterion with a frozen estimator, and prints its running minimum.

use std::sync::Arc;

use uae::attack::{minmax_attack, AttackConfig, AttackCriterion, CustomLoss};
use uae::mine::{MineConfig, SchemeKind};
use uae::tensor::Tensor;

fn main() -> uae::Result<()> {
    let x = Tensor::vector((0..16).map(|i| 0.3 + 0.025 * i as f64).collect())?;
    let anchor: Vec<f64> = x.data().iter().map(|v| 1.0 - v).collect();
    let radius = 0.6 * x.data().iter().zip(&anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    // ‖x+δ − a‖² − r: succeeds once x+δ is close enough to the anchor.
    let loss: CustomLoss = Arc::new(move |tape, xpd| {
        let a = tape.leaf(Tensor::vector(anchor.clone())?);
        let d = tape.sub(xpd, a)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq)?;
        Ok(tape.shift(s, -radius)?)
    });
    let cfg = AttackConfig {
        iterations: 400,
        mine: MineConfig {
            scheme: SchemeKind::Random,
            k: 16,
            d_prime: 4,
            hidden: vec![],
            learning_rate: 1e-3,
            inner_steps: 0,
            warmup_steps: 0,
        },
        ..AttackConfig::default()
    };
    let r = minmax_attack(&x, AttackCriterion::custom(loss, 0.0)?, &cfg)?;
    let mut best = f64::INFINITY;
    for row in &r.trace {
        best = best.min(row.stationarity_sq);
        if row.t % 50 == 0 || row.t == 1 {
            println!("t {:>3}  f {:+.4}  c {:.4}  ‖L‖² {:.3e}  prefix-min {best:.3e}", row.t, row.f, row.c, row.stationarity_sq);
        }
    }
    Ok(())
}
