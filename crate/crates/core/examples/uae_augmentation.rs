//! Retrains a dense autoencoder on UAE-augmented data and on
//! Gaussian-noise-augmented data, and compares test reconstruction error.

use std::sync::Arc;

use uae::attack::AttackConfig;
use uae::augment::{run_augmentation, AugmentMethod, AugmentationPlan};
use uae::data::{synth_digits, Split};
use uae::mine::{MineConfig, SchemeKind};
use uae::models::{train_model, ModelSpec, TrainConfig};

fn main() -> uae::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let train = synth_digits(n, 11, Split::Train)?;
    let test = synth_digits(300, 11, Split::Test)?;
    let base = TrainConfig {
        epochs: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = Arc::new(train_model(ModelSpec::dense_ae(vec![1, 28, 28], 128), &train, &base)?);
    let attack = AttackConfig {
        mine: MineConfig {
            scheme: SchemeKind::Random,
            k: 32,
            d_prime: 16,
            hidden: vec![32, 32],
            learning_rate: 1e-3,
            inner_steps: 2,
            warmup_steps: 50,
        },
        ..AttackConfig::unsupervised()
    };
    for method in [AugmentMethod::MineUae, AugmentMethod::L2Uae, AugmentMethod::Gaussian, AugmentMethod::Geometric] {
        let plan = AugmentationPlan {
            method,
            attack: attack.clone(),
            ..AugmentationPlan::default()
        };
        let (_, r) = run_augmentation(&train, &test, &model, &base, &plan)?;
        let asr = r.asr.map_or("-".to_string(), |a| format!("{:.1}%", 100.0 * a));
        println!(
            "{method:?}: test error {:.7} -> {:.7} ({:+.3}%), ASR {asr}",
            r.original_test_error, r.retrained_test_error, r.improvement_pct
        );
    }
    Ok(())
}
