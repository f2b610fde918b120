//! Unsupervised adversarial examples against a convolutional autoencoder:
//! the perturbed input reconstructs no worse than the original while
//! sharing as little information with it as the attack can find.

use std::sync::Arc;

use uae::attack::{f_unsup, minmax_attack, AttackConfig, AttackCriterion};
use uae::data::{synth_digits, Split};
use uae::mine::{MineConfig, SchemeKind};
use uae::models::{recon_loss, train_model, ModelSpec, TrainConfig};
use uae::tensor::Tensor;

fn main() -> uae::Result<()> {
    let train = synth_digits(2000, 5, Split::Train)?;
    let spec = ModelSpec::conv_ae(vec![1, 28, 28], 16);
    let model = Arc::new(train_model(spec, &train, &TrainConfig { epochs: 3, ..TrainConfig::default() })?);
    println!("training loss by epoch {:.4?}", model.meta.loss_history);
    let cfg = AttackConfig {
        alpha: 0.3,
        beta: 0.5,
        mine: MineConfig {
            scheme: SchemeKind::Conv,
            hidden: vec![100, 100],
            learning_rate: 1e-3,
            inner_steps: 10,
            warmup_steps: 200,
            ..MineConfig::default()
        },
        ..AttackConfig::unsupervised()
    };
    for i in 0..3 {
        let x = train.sample_tensor(i);
        let r = minmax_attack(&x, AttackCriterion::unsupervised(model.clone(), &x, 0.0)?, &cfg)?;
        let Some(delta) = r.delta else {
            println!("sample {i}: no successful iterate");
            continue;
        };
        let adv = Tensor::new(x.shape().to_vec(), x.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect())?;
        // Both losses are measured against the clean sample x.
        println!(
            "sample {i}: ‖x − Φ(x)‖ {:.4}, ‖x − Φ(x+δ)‖ {:.4}, f = {:.4}, MI {:.3}, ‖δ‖ {:.3}",
            recon_loss(&x, &model.reconstruct(&x)?)?,
            recon_loss(&x, &model.reconstruct(&adv)?)?,
            f_unsup(&x, &delta, &model, 0.0)?,
            r.best_mi.unwrap_or(f64::NAN),
            recon_loss(&x, &adv)?,
        );
    }
    Ok(())
}
