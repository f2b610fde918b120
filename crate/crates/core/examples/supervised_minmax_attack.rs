//! Untargeted MinMax attack on a small CNN classifier, against the penalty
//! baseline with the same iteration budget.

use std::sync::Arc;

use uae::attack::{minmax_attack, penalty_attack, AttackConfig, AttackCriterion, PenaltyConfig};
use uae::data::{synth_digits, Split};
use uae::mine::{MineConfig, SchemeKind};
use uae::models::{train_model, ModelSpec, TrainConfig};

fn main() -> uae::Result<()> {
    let train = synth_digits(2000, 3, Split::Train)?;
    let test = synth_digits(50, 3, Split::Test)?;
    let spec = ModelSpec::classifier(vec![1, 28, 28], 8, 32, 10);
    let model = Arc::new(train_model(spec, &train, &TrainConfig { epochs: 2, ..TrainConfig::default() })?);
    println!("clean test accuracy {:.3}", model.accuracy(&test)?);

    let cfg = AttackConfig {
        iterations: 300,
        mine: MineConfig {
            scheme: SchemeKind::Random,
            k: 32,
            d_prime: 8,
            hidden: vec![32],
            learning_rate: 1e-3,
            inner_steps: 1,
            warmup_steps: 10,
        },
        penalty: PenaltyConfig {
            search_steps: 3,
            inner_iterations: 100,
        },
        ..AttackConfig::default()
    };
    for i in 0..3 {
        let x = test.sample_tensor(i);
        let y = test.label(i).unwrap_or(0);
        let crit = AttackCriterion::untargeted(model.clone(), y, 0.0)?;
        let mm = minmax_attack(&x, crit.clone(), &cfg)?;
        let pen = penalty_attack(&x, crit, &cfg)?;
        let show = |v: Option<f64>| v.map_or("-".to_string(), |m| format!("{m:.3}"));
        println!(
            "sample {i} (label {y}): MinMax success {} MI {}  |  penalty success {} MI {}",
            mm.success,
            show(mm.best_mi),
            pen.success,
            show(pen.best_mi)
        );
    }
    Ok(())
}
