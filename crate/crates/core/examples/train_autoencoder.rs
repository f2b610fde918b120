//! Trains the dense autoencoder on synthetic digits, saves a checkpoint and
//! reloads it.

use uae::data::{synth_digits, Split};
use uae::models::{train_model, ModelSpec, ModelState, TrainConfig};

fn main() -> uae::Result<()> {
    let train = synth_digits(1000, 7, Split::Train)?;
    let test = synth_digits(200, 7, Split::Test)?;
    let spec = ModelSpec::dense_ae(vec![1, 28, 28], 64);
    let cfg = TrainConfig {
        epochs: 5,
        seed: 1,
        ..TrainConfig::default()
    };
    let model = train_model(spec.clone(), &train, &cfg)?;
    for (epoch, loss) in model.meta.loss_history.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.6}", epoch + 1);
    }
    println!("test reconstruction error {:.6}", model.dataset_recon_error(&test)?);

    let dir = std::env::temp_dir().join("uae-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("dense-ae.ckpt");
    model.save(&path)?;
    let back = ModelState::load(spec, &path)?;
    println!("checkpoint {} reloads identically: {}", path.display(), back.params() == model.params());
    Ok(())
}
