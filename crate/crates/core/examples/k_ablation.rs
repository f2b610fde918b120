//! Effect of the number of random projections K on the per-sample MI
//! estimate between an image and a noisy copy of it.

use uae::data::{synth_digits, Split};
use uae::mine::{make_projection_bank, Extractor, MineConfig, MineEstimator, SchemeKind};
use uae::seed::rng_from;
use uae::tensor::Tensor;

use rand_distr::{Distribution, Normal};

fn main() -> uae::Result<()> {
    let x = synth_digits(1, 2, Split::Train)?.sample_tensor(0);
    let noise = Normal::new(0.0, 0.1).expect("valid σ");
    let mut rng = rng_from(9);
    let noisy = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect(),
    )?;
    for k in [8, 32, 128, 500] {
        let cfg = MineConfig {
            scheme: SchemeKind::Random,
            k,
            d_prime: 32,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            inner_steps: 1,
            warmup_steps: 0,
        };
        let (mut same, mut other) = (Vec::new(), Vec::new());
        for seed in 0..3 {
            let bank = make_projection_bank(seed, x.len(), cfg.d_prime, k)?;
            let mut a = MineEstimator::new(&x, Extractor::Bank(bank.clone()), &cfg, seed)?;
            let mut b = MineEstimator::new(&x, Extractor::Bank(bank), &cfg, seed)?;
            same.push(a.mine_update(&x, 300)?);
            other.push(b.mine_update(&noisy, 300)?);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("K {k:>3}: I(x, x) {:.3}   I(x, x + noise) {:.3}", mean(&same), mean(&other));
    }
    Ok(())
}
