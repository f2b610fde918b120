//! Worked examples for every operation, each checked against an oracle
//! computed here rather than by the library. Shared by the example suite
//! and by the acceptance run.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use uae::attack::*;
use uae::augment::*;
use uae::data::*;
use uae::mine::*;
use uae::models::*;
use uae::seed::rng_from;
use uae::tensor::*;

pub type Outcome = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn catalogue() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("square_derivative_at_three", square_derivative_at_three),
        ("inactive_relu_gradient", inactive_relu_gradient),
        ("dense_net_gradcheck", dense_net_gradcheck),
        ("sgd_step", sgd_step),
        ("zero_gradient_step", zero_gradient_step),
        ("adam_first_step", adam_first_step),
        ("gradcheck_linear_and_square", gradcheck_linear_and_square),
        ("dense_sigmoid_gradcheck", dense_sigmoid_gradcheck),
        ("zero_dense_ae_outputs_half", zero_dense_ae_outputs_half),
        ("trained_linear_ae_fits_its_point", trained_linear_ae_fits_its_point),
        ("zero_conv_ae_outputs_half", zero_conv_ae_outputs_half),
        ("recon_loss_values", recon_loss_values),
        ("classifier_logits", classifier_logits),
        ("training_run_oracles", training_run_oracles),
        ("projection_bank_statistics", projection_bank_statistics),
        ("compress_oracles", compress_oracles),
        ("conv_feature_maps", conv_feature_maps),
        ("dv_objective_values", dv_objective_values),
        ("mine_update_zero_steps", mine_update_zero_steps),
        ("mine_prefers_identical_partner", mine_prefers_identical_partner),
        ("mi_gradient_oracles", mi_gradient_oracles),
        ("supervised_criteria", supervised_criteria),
        ("unsupervised_criterion", unsupervised_criterion),
        ("hinge_values", hinge_values),
        ("project_box_values", project_box_values),
        ("c_update_values", c_update_values),
        ("frozen_attack_returns_clean_sample", frozen_attack_returns_clean_sample),
        ("grid_search_oracle", grid_search_oracle),
        ("penalty_schedule_traces", penalty_schedule_traces),
        ("stationarity_values", stationarity_values),
        ("alt_similarity_values", alt_similarity_values),
        ("disabled_attack_duplicates", disabled_attack_duplicates),
        ("uae_counting_oracle", uae_counting_oracle),
        ("gaussian_augment_oracles", gaussian_augment_oracles),
        ("geometric_oracles", geometric_oracles),
        ("retrain_determinism_and_copies", retrain_determinism_and_copies),
        ("asr_counts", asr_counts),
        ("idx_byte_oracles", idx_byte_oracles),
        ("csv_normalization", csv_normalization),
        ("gaussian_pair_oracles", gaussian_pair_oracles),
        ("cli_attack_trace_rows", cli_attack_trace_rows),
        ("cli_augment_ledger_row", cli_augment_ledger_row),
        ("cli_report_lists_runs", cli_report_lists_runs),
    ]
}

// ---- tensor core ----

fn square_derivative_at_three() -> Outcome {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.mul(x, x).map_err(err)?;
    let g = tape.backward(y, &[x]).map_err(err)?;
    ensure!(g[0].item() == 6.0, "d(x²)/dx at 3 = {}", g[0].item());
    Ok(())
}

fn inactive_relu_gradient() -> Outcome {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(-2.0));
    let y = tape.relu(x).map_err(err)?;
    let g = tape.backward(y, &[x]).map_err(err)?;
    ensure!(g[0].item() == 0.0, "relu gradient at −2 = {}", g[0].item());
    Ok(())
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()).unwrap()
}

/// Three dense layers with the given activation between them, summed to a
/// scalar; the input row is the point being differentiated.
fn dense_net_check(seed: u64, sigmoid: bool) -> Outcome {
    let mut rng = rng_from(seed);
    let (d, h1, h2, o) = (5, 7, 6, 3);
    let ws = [
        random_tensor(&mut rng, vec![d, h1], 1.0),
        random_tensor(&mut rng, vec![h1, h2], 1.0),
        random_tensor(&mut rng, vec![h2, o], 1.0),
    ];
    let bs = [
        random_tensor(&mut rng, vec![h1], 0.5),
        random_tensor(&mut rng, vec![h2], 0.5),
        random_tensor(&mut rng, vec![o], 0.5),
    ];
    let point = random_tensor(&mut rng, vec![1, d], 1.0);
    let report = finite_diff_check(
        |tape, x| {
            let mut h = x;
            for (i, (w, b)) in ws.iter().zip(&bs).enumerate() {
                let w = tape.leaf(w.clone());
                let b = tape.leaf(b.clone());
                let z = tape.matmul(h, w)?;
                h = tape.add_row(z, b)?;
                if i < 2 {
                    h = if sigmoid { tape.sigmoid(h)? } else { tape.relu(h)? };
                }
            }
            tape.sum(h)
        },
        &point,
        1e-5,
        1e-4,
    )
    .map_err(err)?;
    ensure!(report.passed, "seed {seed}: worst relative error {:.3e}", report.worst_error);
    Ok(())
}

fn dense_net_gradcheck() -> Outcome {
    (0..10).try_for_each(|s| dense_net_check(s, false))
}

fn dense_sigmoid_gradcheck() -> Outcome {
    (0..10).try_for_each(|s| dense_net_check(100 + s, true))
}

fn sgd_step() -> Outcome {
    let mut opt = OptimizerState::sgd(0.1).map_err(err)?;
    let mut p = Tensor::scalar(1.0);
    opt.step([&mut p], &[Tensor::scalar(2.0)]).map_err(err)?;
    ensure!(close(p.item(), 1.0 - 0.1 * 2.0, 1e-15), "sgd gave {}", p.item());
    Ok(())
}

fn zero_gradient_step() -> Outcome {
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let mut opt = OptimizerState::new(kind, 0.05).map_err(err)?;
        let mut p = Tensor::vector(vec![0.3, -2.0, 7.0]).map_err(err)?;
        let before = p.clone();
        opt.step([&mut p], &[Tensor::zeros(vec![3])]).map_err(err)?;
        ensure!(p == before, "{kind:?} moved with a zero gradient");
    }
    Ok(())
}

fn adam_first_step() -> Outcome {
    let mut opt = OptimizerState::adam(0.001).map_err(err)?;
    let mut p = Tensor::scalar(0.0);
    opt.step([&mut p], &[Tensor::scalar(1.0)]).map_err(err)?;
    // m̂ = (0.1·1)/(1−0.9) = 1, v̂ = (0.001·1)/(1−0.999) = 1.
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (g, lr) = (1.0f64, 0.001);
    let m_hat = (1.0 - b1) * g / (1.0 - b1);
    let v_hat = (1.0 - b2) * g * g / (1.0 - b2.powi(1));
    let expected = -lr * m_hat / (v_hat.sqrt() + eps);
    ensure!(close(p.item(), expected, 1e-15), "adam step {} vs {expected}", p.item());
    ensure!(close(p.item(), -0.001, 1e-10), "adam step is not ≈ lr");
    Ok(())
}

fn gradcheck_linear_and_square() -> Outcome {
    let point = Tensor::vector(vec![0.3, -1.2, 2.5]).map_err(err)?;
    let coef = Tensor::new(vec![3, 1], vec![2.0, -1.0, 0.5]).map_err(err)?;
    for h in [1e-2, 1e-5, 0.5] {
        let r = finite_diff_check(
            |tape, x| {
                let row = tape.reshape(x, &[1, 3])?;
                let c = tape.leaf(coef.clone());
                let y = tape.matmul(row, c)?;
                tape.sum(y)
            },
            &point,
            h,
            1e-8,
        )
        .map_err(err)?;
        ensure!(r.passed, "linear function at h={h}: {:.3e}", r.worst_error);
    }
    let r = finite_diff_check(|tape, x| tape.mul(x, x), &Tensor::scalar(0.0), 1e-5, 1e-12).map_err(err)?;
    ensure!(r.analytic == [0.0] && r.numeric == [0.0], "x² at 0: {:?} {:?}", r.analytic, r.numeric);
    Ok(())
}

// ---- model zoo ----

fn zero_dense_ae_outputs_half() -> Outcome {
    let m = ModelState::zeros(ModelSpec::dense_ae(vec![6], 3)).map_err(err)?;
    let x = Tensor::vector(vec![0.1, 0.9, 0.0, 1.0, 0.5, 0.3]).map_err(err)?;
    let out = m.reconstruct(&x).map_err(err)?;
    ensure!(out.data().iter().all(|&v| v == 0.5), "{:?}", out.data());
    Ok(())
}

fn trained_linear_ae_fits_its_point() -> Outcome {
    let spec = ModelSpec {
        kind: ModelKind::DenseAe,
        input_shape: vec![4],
        layers: vec![LayerSpec::Dense { units: 4 }, LayerSpec::Dense { units: 4 }, LayerSpec::Sigmoid],
        latent_layer: Some(0),
        sparsity: 0.0,
        classes: None,
    };
    let point = [0.2, 0.8, 0.5, 0.3];
    let data = Dataset::new(vec![4], point.to_vec(), None, Split::Train, "one point").map_err(err)?;
    let cfg = TrainConfig {
        epochs: 1500,
        batch_size: 1,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let m = train_model(spec, &data, &cfg).map_err(err)?;
    let out = m.reconstruct(&Tensor::vector(point.to_vec()).map_err(err)?).map_err(err)?;
    let mse: f64 = out.data().iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0;
    ensure!(mse < 1e-6, "reconstruction MSE {mse:.3e} on the training point");
    Ok(())
}

fn zero_conv_ae_outputs_half() -> Outcome {
    let m = ModelState::zeros(ModelSpec::conv_ae(vec![1, 8, 8], 4)).map_err(err)?;
    let out = m.reconstruct(&Tensor::zeros(vec![1, 8, 8])).map_err(err)?;
    ensure!(out.data().iter().all(|&v| v == 0.5), "conv-ae output not 0.5");
    Ok(())
}

fn recon_loss_values() -> Outcome {
    let t = |v: Vec<f64>| Tensor::vector(v).unwrap();
    ensure!(recon_loss(&t(vec![0.3, 0.7]), &t(vec![0.3, 0.7])).map_err(err)? == 0.0, "x = x̂");
    ensure!(recon_loss(&t(vec![1.0, 0.0]), &t(vec![0.0, 0.0])).map_err(err)? == 1.0, "unit vector");
    let v = recon_loss(&t(vec![1.0, 1.0]), &t(vec![0.0, 0.0])).map_err(err)?;
    ensure!(close(v, std::f64::consts::SQRT_2, 1e-15), "√2 case gave {v}");
    Ok(())
}

fn classifier_logits() -> Outcome {
    let spec = ModelSpec {
        layers: vec![LayerSpec::Dense { units: 2 }],
        ..ModelSpec::mlp_classifier(vec![2], 1, 2)
    };
    let x = Tensor::vector(vec![3.0, 1.0]).map_err(err)?;
    let zero = ModelState::zeros(spec.clone()).map_err(err)?;
    ensure!(zero.logits(&x).map_err(err)?.data() == [0.0, 0.0], "zero net logits");
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).map_err(err)?;
    let m = ModelState::from_params(spec, vec![eye, Tensor::zeros(vec![2])]).map_err(err)?;
    let l = m.logits(&x).map_err(err)?;
    ensure!(l.data() == [3.0, 1.0], "identity logits {:?}", l.data());
    let z: f64 = l.data().iter().map(|v| v.exp()).sum();
    let s: f64 = l.data().iter().map(|v| v.exp() / z).sum();
    ensure!(close(s, 1.0, 1e-15), "softmax sums to {s}");
    Ok(())
}

fn training_run_oracles() -> Outcome {
    let data = Dataset::new(vec![6], vec![0.1, 0.9, 0.3, 0.7, 0.5, 0.2], None, Split::Train, "one").map_err(err)?;
    let spec = ModelSpec::dense_ae(vec![6], 3);
    let init = ModelState::init(spec.clone(), 9).map_err(err)?;
    let initial_loss = init.dataset_recon_error(&data).map_err(err)?;
    let one = TrainConfig {
        epochs: 1,
        batch_size: 1,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let trained = train_model(spec.clone(), &data, &one).map_err(err)?;
    let after = trained.dataset_recon_error(&data).map_err(err)?;
    ensure!(after < initial_loss, "one epoch: {after} ≥ {initial_loss}");

    let zero = TrainConfig { epochs: 0, ..one.clone() };
    let z = train_model(spec.clone(), &data, &zero).map_err(err)?;
    ensure!(z.params() == init.params(), "zero epochs changed the parameters");

    let again = train_model(spec, &data, &one).map_err(err)?;
    ensure!(again == trained, "same seed, different model");
    Ok(())
}

// ---- per-sample MINE ----

fn projection_bank_statistics() -> Outcome {
    // 1000·10·100 = 1e6 entries with standard deviation 1/d′.
    let (d, dp, k) = (1000, 10, 100);
    let bank = make_projection_bank(17, d, dp, k).map_err(err)?;
    let e = bank.entries();
    ensure!(e.len() == 1_000_000, "entry count {}", e.len());
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let sigma = 1.0 / dp as f64;
    ensure!(mean.abs() <= 4.0 * sigma / n.sqrt(), "mean {mean:.3e}");
    let sd = (e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    ensure!((sd / sigma - 1.0).abs() < 0.01, "sd {sd} vs {sigma}");
    let again = make_projection_bank(17, d, dp, k).map_err(err)?;
    ensure!(again.entries() == e, "same seed, different bank");
    Ok(())
}

fn compress_oracles() -> Outcome {
    let bank = make_projection_bank(3, 3, 2, 1).map_err(err)?;
    let x = [0.2, -0.5, 0.9];
    let got = bank.compress(&x).map_err(err)?;
    let m = bank.matrix(0);
    let naive: Vec<f64> = (0..2).map(|r| (0..3).map(|c| m[r * 3 + c] * x[c]).sum()).collect();
    ensure!(got.len() == 1, "K = {}", got.len());
    for (a, b) in got[0].iter().zip(&naive) {
        ensure!(close(*a, *b, 1e-15), "compress {a} vs naive {b}");
    }
    let big = make_projection_bank(4, 5, 3, 4).map_err(err)?;
    let zero = big.compress(&[0.0; 5]).map_err(err)?;
    ensure!(zero.len() == 4 && zero.iter().flatten().all(|&v| v == 0.0), "compress(0) ≠ 0");
    let y = [0.1, 0.4, -0.3, 0.8, 0.05];
    let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
    let (a, b) = (big.compress(&y).map_err(err)?, big.compress(&y2).map_err(err)?);
    for (ra, rb) in a.iter().zip(&b) {
        for (va, vb) in ra.iter().zip(rb) {
            ensure!(2.0 * va == *vb, "compress(2x) ≠ 2·compress(x)");
        }
    }
    Ok(())
}

/// Classifier whose first layer is one conv with the given kernel.
fn single_conv(kernel: usize, padding: Padding, w: Vec<f64>, side: usize) -> ModelState {
    let spec = ModelSpec {
        kind: ModelKind::Classifier,
        input_shape: vec![1, side, side],
        layers: vec![
            LayerSpec::Conv2d {
                filters: 1,
                kernel,
                padding,
            },
            LayerSpec::Dense { units: 2 },
        ],
        latent_layer: None,
        sparsity: 0.0,
        classes: Some(2),
    };
    let out = if padding == Padding::Same { side } else { side + 1 - kernel };
    ModelState::from_params(
        spec,
        vec![
            Tensor::new(vec![1, 1, kernel, kernel], w).unwrap(),
            Tensor::zeros(vec![1]),
            Tensor::zeros(vec![out * out, 2]),
            Tensor::zeros(vec![2]),
        ],
    )
    .unwrap()
}

fn conv_feature_maps() -> Outcome {
    let side = 5;
    let m = single_conv(3, Padding::Same, vec![0.3; 9], side);
    let zero = conv_features(&m, &Tensor::zeros(vec![1, side, side])).map_err(err)?;
    ensure!(zero.data().iter().all(|&v| v == 0.0), "zero input gave nonzero maps");

    let img: Vec<f64> = (0..side * side).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let x = Tensor::new(vec![1, side, side], img.clone()).map_err(err)?;
    let id = single_conv(1, Padding::Same, vec![1.0], side);
    let f = conv_features(&id, &x).map_err(err)?;
    ensure!(f.data() == img.as_slice(), "1×1 identity kernel did not reproduce the input");

    let avg = single_conv(3, Padding::Valid, vec![1.0 / 9.0; 9], side);
    let c = Tensor::full(vec![1, side, side], 0.6);
    let f = conv_features(&avg, &c).map_err(err)?;
    ensure!(f.shape() == [1, 9], "averaging map shape {:?}", f.shape());
    ensure!(f.data().iter().all(|&v| close(v, 0.6, 1e-15)), "averaging map {:?}", f.data());
    Ok(())
}

fn linear_stats(len: usize, w: Vec<f64>, b: f64) -> ModelState {
    ModelState::from_params(
        ModelSpec::mine_statistics(len, &[]),
        vec![Tensor::new(vec![2 * len, 1], w).unwrap(), Tensor::scalar(b)],
    )
    .unwrap()
}

fn dv_objective_values() -> Outcome {
    let u = Tensor::new(vec![3, 2], vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.4]).map_err(err)?;
    let v = Tensor::new(vec![3, 2], vec![0.3, 0.3, 0.8, 0.1, 0.0, 0.7]).map_err(err)?;
    let constant = linear_stats(2, vec![0.0; 4], 1.7);
    let batch = PairBatch::new(u, v, vec![2, 0, 1]).map_err(err)?;
    let i = dv_objective(&constant, &batch).map_err(err)?;
    ensure!(i.abs() < 1e-15, "constant statistics gave {i}");

    // K = 1: the only marginal pair is the joint pair.
    let net = linear_stats(1, vec![0.7, -1.3], 0.2);
    let one = PairBatch::new(Tensor::new(vec![1, 1], vec![0.2]).unwrap(), Tensor::new(vec![1, 1], vec![0.6]).unwrap(), vec![0])
        .map_err(err)?;
    let i = dv_objective(&net, &one).map_err(err)?;
    ensure!(i.abs() < 1e-15, "K=1 gave {i}");

    // K = 2 with T(joint) = [1, 1] and T(marginal) = [0, ln 3]. Pairs are
    // (0,0), (1,1) joint and (0,1), (1,0) marginal; the net is
    // 1 + (ln 3 − 1)·relu(u − v) − relu(v − u).
    let stats = ModelState::from_params(
        ModelSpec::mine_statistics(1, &[2]),
        vec![
            Tensor::new(vec![2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
            Tensor::new(vec![2, 1], vec![3f64.ln() - 1.0, -1.0]).unwrap(),
            Tensor::scalar(1.0).reshape(vec![1]).unwrap(),
        ],
    )
    .map_err(err)?;
    let uv = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
    let two = PairBatch::new(uv.clone(), uv, vec![1, 0]).map_err(err)?;
    let i = dv_objective(&stats, &two).map_err(err)?;
    let tj = [1.0f64, 1.0];
    let tm = [0.0f64, 3f64.ln()];
    let hand = tj.iter().sum::<f64>() / 2.0 - (tm.iter().map(|t| t.exp()).sum::<f64>() / 2.0).ln();
    ensure!(close(hand, 1.0 - 2f64.ln(), 1e-15) && close(hand, 0.30685, 1e-5), "hand value {hand}");
    ensure!(close(i, hand, 1e-14), "K=2 gave {i}, want {hand}");
    Ok(())
}

fn mine_update_zero_steps() -> Outcome {
    let x = Tensor::new(vec![16], (0..16).map(|i| (i as f64 * 0.21).sin().abs()).collect()).map_err(err)?;
    let cfg = MineConfig {
        scheme: SchemeKind::Random,
        k: 8,
        d_prime: 4,
        hidden: vec![8],
        learning_rate: 1e-3,
        inner_steps: 1,
        warmup_steps: 0,
    };
    let bank = make_projection_bank(2, 16, 4, 8).map_err(err)?;
    let mut est = MineEstimator::new(&x, Extractor::Bank(bank), &cfg, 5).map_err(err)?;
    let before = est.stats().clone();
    let i = est.mine_update(&x, 0).map_err(err)?;
    ensure!(est.stats() == &before, "zero steps changed θ");
    ensure!(i == est.objective(&x).map_err(err)?, "returned value is not the current objective");
    Ok(())
}

fn mine_prefers_identical_partner() -> Outcome {
    let digits = synth_digits(1, 4, Split::Train).map_err(err)?;
    let x = digits.sample_tensor(0);
    let mut rng = rng_from(77);
    let noise = Tensor::new(x.shape().to_vec(), (0..x.len()).map(|_| rng.random::<f64>()).collect()).map_err(err)?;
    let cfg = MineConfig {
        scheme: SchemeKind::Random,
        k: 64,
        d_prime: 16,
        hidden: vec![32, 32],
        learning_rate: 1e-3,
        inner_steps: 1,
        warmup_steps: 0,
    };
    let mut wins = 0;
    for seed in 0..5 {
        let bank = make_projection_bank(seed, x.len(), cfg.d_prime, cfg.k).map_err(err)?;
        let mut same = MineEstimator::new(&x, Extractor::Bank(bank.clone()), &cfg, seed).map_err(err)?;
        let mut other = MineEstimator::new(&x, Extractor::Bank(bank), &cfg, seed).map_err(err)?;
        let a = same.mine_update(&x, 300).map_err(err)?;
        let b = other.mine_update(&noise, 300).map_err(err)?;
        if a >= b {
            wins += 1;
        }
    }
    ensure!(wins >= 3, "identical partner scored higher in only {wins}/5 paired runs");
    Ok(())
}

fn mi_gradient_oracles() -> Outcome {
    let x = Tensor::new(vec![16], (0..16).map(|i| 0.5 + 0.4 * (i as f64).sin()).collect()).map_err(err)?;
    let cfg = MineConfig {
        scheme: SchemeKind::Random,
        k: 8,
        d_prime: 4,
        hidden: vec![8],
        learning_rate: 1e-3,
        inner_steps: 1,
        warmup_steps: 0,
    };
    let bank = make_projection_bank(8, 16, 4, 8).map_err(err)?;
    let mut est = MineEstimator::new(&x, Extractor::Bank(bank), &cfg, 8).map_err(err)?;
    est.mine_update(&x, 20).map_err(err)?;
    let delta = Tensor::new(vec![16], (0..16).map(|i| 0.02 * (i as f64).cos()).collect()).map_err(err)?;
    let (_, g) = est.mi_gradient_wrt_delta(&delta).map_err(err)?;

    // Finite differences of the DV value itself.
    let h = 1e-5;
    for i in 0..16 {
        let mut up = delta.clone();
        up.data_mut()[i] += h;
        let mut down = delta.clone();
        down.data_mut()[i] -= h;
        let at = |d: &Tensor| -> std::result::Result<f64, String> {
            let xpd = Tensor::new(vec![16], x.data().iter().zip(d.data()).map(|(a, b)| a + b).collect()).unwrap();
            est.objective(&xpd).map_err(err)
        };
        let numeric = (at(&up)? - at(&down)?) / (2.0 * h);
        let a = g.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        ensure!(rel <= 1e-4, "coordinate {i}: {a} vs {numeric}");
    }

    let mut shifted = est.clone();
    shifted.shift_statistics(3.0);
    let (_, gs) = shifted.mi_gradient_wrt_delta(&delta).map_err(err)?;
    for (a, b) in g.data().iter().zip(gs.data()) {
        ensure!(close(*a, *b, 1e-12 * a.abs().max(1.0)), "shift changed the gradient: {a} vs {b}");
    }

    // A constant statistics network has no gradient with respect to the
    // pair at all.
    let constant = linear_stats(4, vec![0.0; 8], 0.4);
    let mut tape = Tape::new();
    let params = constant.bind(&mut tape);
    let u = tape.leaf(Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.1).collect()).unwrap());
    let v = tape.leaf(Tensor::new(vec![2, 4], (0..8).map(|i| 0.9 - i as f64 * 0.1).collect()).unwrap());
    let i = dv_on(&mut tape, &constant, &params, u, v, &[1, 0]).map_err(err)?;
    let g = tape.backward(i, &[u, v]).map_err(err)?;
    ensure!(g.iter().all(|t| t.data().iter().all(|&x| x == 0.0)), "constant T gave a nonzero gradient");
    Ok(())
}

// ---- attack engine ----

fn supervised_criteria() -> Outcome {
    let u = |l: &[f64], y, k| f_sup_untargeted(l, y, k).unwrap();
    let t = |l: &[f64], y, k| f_sup_targeted(l, y, k).unwrap();
    ensure!(u(&[3.0, 1.0], 0, 0.0) == 2.0, "untargeted [3,1]");
    ensure!(u(&[1.0, 3.0], 0, 0.0) == -2.0, "untargeted [1,3]");
    ensure!(u(&[1.0, 2.0, 5.0], 2, 1.0) == 5.0 - 2.0 + 1.0, "untargeted κ=1");
    ensure!(t(&[0.0, 5.0], 1, 0.0) == -5.0, "targeted [0,5]");
    ensure!(t(&[5.0, 0.0], 1, 0.0) == 5.0, "targeted [5,0]");
    ensure!(t(&[2.0, 4.0, 3.0], 0, 1.0) == 4.0 - 2.0 + 1.0, "targeted κ=1");
    Ok(())
}

fn unsupervised_criterion() -> Outcome {
    let model = ModelState::init(ModelSpec::dense_ae(vec![2], 2), 1).map_err(err)?;
    let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
    let zero = Tensor::zeros(vec![2]);
    ensure!(f_unsup(&x, &zero, &model, 0.0).map_err(err)? == 0.0, "δ=0, κ=0");
    ensure!(f_unsup(&x, &zero, &model, 0.5).map_err(err)? == 0.5, "δ=0, κ=0.5");
    // Constant decoder Φ ≡ [0.5, 0.5]: both losses are √0.5.
    let constant = ModelState::zeros(ModelSpec::dense_ae(vec![2], 2)).map_err(err)?;
    for d in [[0.0, 0.0], [-0.5, 0.7], [-1.0, 1.0]] {
        let delta = Tensor::vector(d.to_vec()).unwrap();
        let f = f_unsup(&x, &delta, &constant, 0.0).map_err(err)?;
        ensure!(f == 0.0, "constant decoder, δ={d:?}: {f}");
    }
    Ok(())
}

fn hinge_values() -> Outcome {
    ensure!(hinge(-1.0) == (0.0, false), "f = −1");
    ensure!(hinge(0.0) == (0.0, false), "f = 0");
    ensure!(hinge(2.5) == (2.5, true), "f = 2.5");
    Ok(())
}

fn project_box_values() -> Outcome {
    let mut d = [0.0, 0.0];
    project_box(&mut d, &[0.4, 0.9], 0.3);
    ensure!(d == [0.0, 0.0], "δ=0 moved");
    let mut d = [0.5];
    project_box(&mut d, &[0.95], 0.1);
    ensure!(close(d[0], 1.0 - 0.95, 1e-15) && 0.95 + d[0] <= 1.0, "ε=0.1 case gave {}", d[0]);
    let mut d = [-2.0];
    project_box(&mut d, &[0.3], 1.0);
    ensure!(close(d[0], -0.3, 1e-15) && 0.3 + d[0] >= 0.0, "ε=1 case gave {}", d[0]);
    Ok(())
}

fn c_update_values() -> Outcome {
    ensure!(c_update(0.0, 3, 0.1, 0.0, 1e6).unwrap() == 0.0, "fixed point");
    let v = c_update(1.0, 1, 0.1, 2.0, 1e6).unwrap();
    ensure!(close(v, 0.9 * 1.0 + 0.1 * 2.0, 1e-15), "t=1: {v}");
    let v = c_update(2.0, 16, 0.1, 0.0, 1e6).unwrap();
    ensure!(close(v, (1.0 - 0.1 / 2.0) * 2.0, 1e-15), "t=16: {v}");
    Ok(())
}

pub fn tiny_mine(inner: usize, warmup: usize) -> MineConfig {
    MineConfig {
        scheme: SchemeKind::Random,
        k: 8,
        d_prime: 4,
        hidden: vec![8],
        learning_rate: 1e-3,
        inner_steps: inner,
        warmup_steps: warmup,
    }
}

fn frozen_attack_returns_clean_sample() -> Outcome {
    let model = Arc::new(ModelState::init(ModelSpec::dense_ae(vec![6], 3), 4).map_err(err)?);
    let x = Tensor::vector(vec![0.2, 0.4, 0.9, 0.1, 0.6, 0.5]).unwrap();
    let cfg = AttackConfig {
        alpha: 0.0,
        beta: 0.0,
        iterations: 7,
        mine: tiny_mine(0, 0),
        ..AttackConfig::unsupervised()
    };
    let crit = AttackCriterion::unsupervised(model.clone(), &x, 0.0).map_err(err)?;
    let reference = AttackSetup::new(&x, crit.clone(), &cfg, 0).map_err(err)?;
    let expected = reference.estimator().unwrap().objective(&x).map_err(err)?;
    let r = minmax_attack(&x, crit, &cfg).map_err(err)?;
    ensure!(r.success, "no success at δ = 0");
    ensure!(r.delta.as_ref().unwrap().data().iter().all(|&v| v == 0.0), "δ* ≠ 0");
    ensure!(r.best_mi == Some(expected), "best MI {:?} vs {expected}", r.best_mi);
    Ok(())
}

/// Frozen linear statistics network (so the bound is concave in δ), a 2-D
/// sample and a linear criterion; the attack's best MI is compared with a
/// brute-force sweep of the feasible box.
pub fn grid_oracle_gap(seed: u64) -> std::result::Result<(f64, f64), String> {
    let x = Tensor::vector(vec![0.5, 0.5]).unwrap();
    let eps = 0.3;
    let loss: CustomLoss = Arc::new(|tape, xpd| {
        let w = tape.leaf(Tensor::new(vec![2, 1], vec![1.0, 0.6]).unwrap());
        let row = tape.reshape(xpd, &[1, 2])?;
        let p = tape.matmul(row, w)?;
        let s = tape.sum(p)?;
        Ok(tape.shift(s, -0.85)?)
    });
    let cfg = AttackConfig {
        alpha: 2e-3,
        beta: 0.5,
        iterations: 4000,
        epsilon: eps,
        seed,
        mine: MineConfig {
            scheme: SchemeKind::Random,
            k: 16,
            d_prime: 2,
            hidden: vec![],
            learning_rate: 1e-3,
            inner_steps: 0,
            warmup_steps: 0,
        },
        ..AttackConfig::default()
    };
    let crit = AttackCriterion::custom(loss, 0.0).map_err(err)?;
    let setup = AttackSetup::new(&x, crit.clone(), &cfg, 0).map_err(err)?;
    let est = setup.estimator().unwrap().clone();

    let n = 201;
    let mut grid_best = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            let d = [-eps + 2.0 * eps * i as f64 / (n - 1) as f64, -eps + 2.0 * eps * j as f64 / (n - 1) as f64];
            let p = [x.data()[0] + d[0], x.data()[1] + d[1]];
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                continue;
            }
            if p[0] + 0.6 * p[1] - 0.85 > 0.0 {
                continue;
            }
            let mi = est.objective(&Tensor::vector(p.to_vec()).unwrap()).map_err(err)?;
            grid_best = grid_best.max(mi);
        }
    }
    let r = minmax_with(setup, &cfg).map_err(err)?;
    let best = r.best_mi.ok_or("attack never succeeded")?;
    Ok((best, grid_best))
}

fn grid_search_oracle() -> Outcome {
    for seed in 0..3 {
        let (attack, grid) = grid_oracle_gap(seed)?;
        ensure!(attack >= grid - 1e-3, "seed {seed}: attack best {attack} below grid best {grid}");
    }
    Ok(())
}

fn penalty_schedule_traces() -> Outcome {
    let x = Tensor::vector(vec![0.5, 0.5]).unwrap();
    let constant = |value: f64| -> CustomLoss {
        Arc::new(move |tape, xpd| {
            let s = tape.sum(xpd)?;
            let z = tape.scale(s, 0.0)?;
            Ok(tape.shift(z, value)?)
        })
    };
    let cfg = AttackConfig {
        mine: tiny_mine(1, 1),
        penalty: PenaltyConfig {
            search_steps: 5,
            inner_iterations: 2,
        },
        ..AttackConfig::default()
    };
    let never = penalty_attack(&x, AttackCriterion::custom(constant(1.0), 0.0).unwrap(), &cfg).map_err(err)?;
    ensure!(!never.success, "f ≡ 1 reported success");
    for (k, c) in never.search_c.iter().enumerate() {
        let want = 1e-3 * 10f64.powi(k as i32);
        ensure!(close(*c, want, 1e-12 * want), "step {k}: c = {c}, want {want}");
    }
    let first = penalty_attack(&x, AttackCriterion::custom(constant(-1.0), 0.0).unwrap(), &cfg).map_err(err)?;
    ensure!(first.success, "f ≡ −1 did not succeed");
    ensure!(first.search_c.iter().all(|&c| c == (1e-3 + 1e-3) / 2.0), "c sequence {:?}", first.search_c);
    ensure!(cfg.penalty.search_steps * cfg.penalty.inner_iterations == first.trace.len(), "trace length");
    let defaults = PenaltyConfig::default();
    ensure!(defaults.search_steps * defaults.inner_iterations == 9000, "default penalty budget");
    Ok(())
}

fn stationarity_values() -> Outcome {
    let x = [0.5, 0.5, 0.5];
    ensure!(stationarity(&[0.1, 0.0, -0.1], 2.0, &[0.0; 3], 0.0, 0.3, &x, 1e6) == 0.0, "interior zero gradients");
    ensure!(stationarity(&[0.0; 3], 0.0, &[0.0; 3], 0.0, 0.3, &x, 1e6) == 0.0, "c = 0 boundary");
    let g = [0.01, -0.03, 0.02];
    let s = stationarity(&[0.05, 0.0, 0.1], 0.0, &g, 0.0, 0.3, &x, 1e6);
    let norm: f64 = g.iter().map(|v| v * v).sum();
    ensure!(close(s, norm, 1e-15), "{s} vs ‖g‖² = {norm}");
    Ok(())
}

fn alt_similarity_values() -> Outcome {
    let a = [0.3, -1.0, 2.0];
    ensure!(alt_similarity(&a, &a, FeatureDistance::L2).unwrap() == 0.0, "identical l2");
    ensure!(alt_similarity(&a, &a, FeatureDistance::Cosine).unwrap().abs() < 1e-15, "identical cosine");
    ensure!(alt_similarity(&[1.0, 0.0], &[0.0, 1.0], FeatureDistance::Cosine).unwrap() == 1.0, "orthogonal");
    let l2 = alt_similarity(&[1.0, 0.0], &[0.0, 2.0], FeatureDistance::L2).unwrap();
    ensure!(close(l2, 5f64.sqrt(), 1e-15) && close(l2, 2.23607, 1e-5), "[1,0] vs [0,2]: {l2}");
    Ok(())
}

// ---- augmentation ----

fn tiny_ae_and_data() -> std::result::Result<(Dataset, Arc<ModelState>), String> {
    let data = synth_digits(6, 2, Split::Train).map_err(err)?;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let model = train_model(ModelSpec::dense_ae(vec![1, 28, 28], 8), &data, &cfg).map_err(err)?;
    Ok((data, Arc::new(model)))
}

fn disabled_attack_duplicates() -> Outcome {
    let (data, model) = tiny_ae_and_data()?;
    let plan = AugmentationPlan {
        attack: AttackConfig {
            iterations: 0,
            mine: tiny_mine(1, 0),
            ..AttackConfig::unsupervised()
        },
        ..AugmentationPlan::default()
    };
    let set = generate_uae_set(&data, &model, &plan).map_err(err)?;
    ensure!(set.asr == 0.0, "ASR {}", set.asr);
    ensure!(set.augmented.len() == 2 * data.len(), "size {}", set.augmented.len());
    ensure!(&set.augmented.values()[data.values().len()..] == data.values(), "second half is not a copy");
    Ok(())
}

fn uae_counting_oracle() -> Outcome {
    let data = Dataset::new(vec![3], (0..30).map(|i| 0.2 + 0.02 * i as f64).collect(), None, Split::Train, "toy")
        .map_err(err)?;
    let fails = [1usize, 4, 8];
    let results: Vec<Option<AttackResult>> = (0..10)
        .map(|i| {
            let success = !fails.contains(&i);
            Some(AttackResult {
                delta: success.then(|| Tensor::vector(vec![0.01, -0.01, 0.005]).unwrap()),
                best_mi: success.then_some(1.0),
                success,
                trace: Vec::new(),
                search_c: Vec::new(),
                iterations: 3,
                wallclock_ms: 0,
            })
        })
        .collect();
    let set = assemble_uae_set(&data, results).map_err(err)?;
    ensure!(set.augmented.len() == 20, "size {}", set.augmented.len());
    let copies = (0..10).filter(|&i| set.augmented.sample(10 + i) == data.sample(i)).count();
    ensure!(copies == 3, "{copies} bit-equal copies");
    ensure!(set.asr == 0.7, "ASR {}", set.asr);
    Ok(())
}

fn gaussian_augment_oracles() -> Outcome {
    let n = 200_000;
    let data = Dataset::new(vec![8], vec![0.5; n], None, Split::Train, "flat").map_err(err)?;
    let copy = gaussian_augment(&data, 0.0, 1).map_err(err)?;
    ensure!(copy.values() == data.values(), "σ=0 is not a copy");
    let sigma = 0.01;
    let noisy = gaussian_augment(&data, sigma, 1).map_err(err)?;
    let d: Vec<f64> = noisy.values().iter().map(|v| v - 0.5).collect();
    let m = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    ensure!((var / (sigma * sigma) - 1.0).abs() < 0.05, "variance {var:.3e}");
    let edge = Dataset::new(vec![2], vec![0.0, 1.0].repeat(1000), None, Split::Train, "edges").map_err(err)?;
    let wide = gaussian_augment(&edge, 3.0, 2).map_err(err)?;
    ensure!(wide.values().iter().all(|v| (0.0..=1.0).contains(v)), "value outside [0,1]");
    Ok(())
}

fn geometric_oracles() -> Outcome {
    let (h, w) = (29usize, 29usize);
    let img: Vec<f64> = (0..h * w).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
    let once = apply_transform(&img, &[h, w], Transform::HorizontalFlip).map_err(err)?;
    let twice = apply_transform(&once, &[h, w], Transform::HorizontalFlip).map_err(err)?;
    ensure!(twice == img && once != img, "horizontal flip is not an involution");
    let rot0 = apply_transform(&img, &[h, w], Transform::Rotate { degrees: 0.0 }).map_err(err)?;
    ensure!(rot0 == img, "0° rotation is not the identity");

    // Single lit pixel 8 px right of the centre; rotating the image by 10°
    // counter-clockwise (y down) moves it to (cy − 8 sin θ, cx + 8 cos θ).
    let (cy, cx) = (14.0, 14.0);
    let mut one = vec![0.0; h * w];
    one[14 * w + 22] = 1.0;
    let out = apply_transform(&one, &[h, w], Transform::Rotate { degrees: 10.0 }).map_err(err)?;
    let th = 10f64.to_radians();
    let (ey, ex) = (cy - 8.0 * th.sin(), cx + 8.0 * th.cos());
    let (ry, rx) = (ey.round() as usize, ex.round() as usize);
    ensure!(out[ry * w + rx] == 1.0, "no mass at ({ry}, {rx})");
    for (i, &v) in out.iter().enumerate() {
        if v > 0.0 {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            ensure!((y - ey).abs() <= 1.0 && (x - ex).abs() <= 1.0, "stray mass at ({y}, {x})");
        }
    }
    Ok(())
}

fn retrain_determinism_and_copies() -> Outcome {
    let (data, model) = tiny_ae_and_data()?;
    let test = synth_digits(4, 3, Split::Test).map_err(err)?;
    let plan = AugmentationPlan {
        method: AugmentMethod::Gaussian,
        sigma: 0.0,
        ..AugmentationPlan::default()
    };
    let base = TrainConfig {
        epochs: 1,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let (m1, r1) = run_augmentation(&data, &test, &model, &base, &plan).map_err(err)?;
    let (m2, r2) = run_augmentation(&data, &test, &model, &base, &plan).map_err(err)?;
    ensure!(m1 == m2, "retrained models differ");
    ensure!(r1.without_timing() == r2.without_timing(), "reports differ");
    ensure!(r1.improvement_pct.is_finite() && r1.augmented_size == 2 * data.len(), "malformed report");
    Ok(())
}

fn asr_counts() -> Outcome {
    ensure!(asr(&[1.0, 2.0], &[1.5, 2.5], 0.0).unwrap() == 0.0, "all worse");
    ensure!(asr(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap() == 1.0, "all equal");
    ensure!(asr(&[1.0; 4], &[0.9, 1.0, 0.2, 1.1], 0.0).unwrap() == 0.75, "3 of 4");
    Ok(())
}

// ---- data and CLI ----

fn idx_byte_oracles() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut img = 0x0000_0803u32.to_be_bytes().to_vec();
    for d in [1u32, 2, 2] {
        img.extend(d.to_be_bytes());
    }
    img.extend([0u8, 255, 128, 64]);
    let p = dir.path().join("img");
    std::fs::write(&p, &img).map_err(err)?;
    let ds = load_idx_images(&p).map_err(err)?;
    ensure!(ds.len() == 1, "{} samples", ds.len());
    ensure!(ds.sample(0) == [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0], "values {:?}", ds.sample(0));

    let mut lab = 0x0000_0801u32.to_be_bytes().to_vec();
    lab.extend(3u32.to_be_bytes());
    lab.extend([0u8, 1, 2]);
    let l = dir.path().join("lab");
    std::fs::write(&l, &lab).map_err(err)?;
    ensure!(load_idx_labels(&l).map_err(err)? == [0, 1, 2], "labels");

    let e = dir.path().join("empty");
    std::fs::write(&e, b"").map_err(err)?;
    ensure!(load_idx_images(&e).is_err() && load_idx_labels(&e).is_err(), "empty file accepted");
    Ok(())
}

fn csv_normalization() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let train = dir.path().join("train.csv");
    std::fs::write(&train, "0,3\n5,3\n10,3\n").map_err(err)?;
    let (ds, ranges) = load_csv(&train, &CsvSchema::default(), None).map_err(err)?;
    ensure!(ds.values() == [0.0, 0.0, 0.5, 0.0, 1.0, 0.0], "train values {:?}", ds.values());
    let test = dir.path().join("test.csv");
    std::fs::write(&test, "11,3\n1e300,3\n").map_err(err)?;
    let (te, _) = load_csv(&test, &CsvSchema::default(), Some(&ranges)).map_err(err)?;
    ensure!(te.values() == [1.0, 0.0, 1.0, 0.0], "test values {:?}", te.values());
    let (again, r2) = load_csv(&train, &CsvSchema::default(), None).map_err(err)?;
    ensure!(again == ds && r2 == ranges, "train normalization depends on the test file");
    Ok(())
}

fn gaussian_pair_oracles() -> Outcome {
    let n = 20_000;
    let p = synth_gaussian_pairs(0.0, 3, n, 5).map_err(err)?;
    let bound = 4.0 / (n as f64).sqrt();
    for j in 0..3 {
        let u: Vec<f64> = (0..n).map(|i| p.u(i)[j]).collect();
        let v: Vec<f64> = (0..n).map(|i| p.v(i)[j]).collect();
        let r = pearson(&u, &v);
        ensure!(r.abs() <= bound, "coordinate {j}: correlation {r} beyond {bound}");
    }
    let mi = -0.5 * (1.0f64 - 0.81).ln();
    ensure!(close(gaussian_mi(0.9, 1), mi, 1e-15) && close(mi, 0.8304, 1e-4), "analytic MI {mi}");
    let a = synth_gaussian_pairs(0.5, 2, 50, 9).map_err(err)?;
    let b = synth_gaussian_pairs(0.5, 2, 50, 9).map_err(err)?;
    ensure!(a.data == b.data, "same seed, different pairs");
    Ok(())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

pub const SMALL_CONFIG: &str = r#"
seed = 3
[data]
train_size = 40
test_size = 10
[model]
preset = "dense-ae"
latent = 16
[train]
epochs = 2
[attack]
iterations = 6
[attack.mine]
scheme = "random"
k = 8
d_prime = 4
hidden = [8]
[targets]
count = 2
[augment.attack]
iterations = 4
[augment.attack.mine]
scheme = "random"
k = 8
d_prime = 4
hidden = [8]
"#;

pub fn run_cli(args: &[&str]) -> std::result::Result<String, String> {
    let mut full = vec!["uae"];
    full.extend_from_slice(args);
    uae::cli::run(full).map_err(err)
}

pub fn write_config(dir: &Path) -> String {
    let p = dir.join("c.toml");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p.to_string_lossy().into_owned()
}

fn cli_attack_trace_rows() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    run_cli(&["attack", "--config", &cfg, "--sample", "0", "--out", out.to_str().unwrap()])?;
    let trace = std::fs::read_to_string(out.join("attack-3/traces/sample_0.csv")).map_err(err)?;
    let rows = trace.lines().count() - 1;
    ensure!(rows == 6, "{rows} trace rows for T = 6");
    ensure!(trace.starts_with("t,f,c,mi,stationarity_sq\n"), "trace header");
    Ok(())
}

fn cli_augment_ledger_row() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    run_cli(&["augment", "--config", &cfg, "--out", out.to_str().unwrap()])?;
    let ledger = std::fs::read_to_string(out.join("augment-3/ledger.csv")).map_err(err)?;
    let mut lines = ledger.lines();
    let header = lines.next().unwrap_or_default();
    let row = lines.next().ok_or("no ledger row")?;
    ensure!(header == LEDGER_HEADER, "header {header}");
    let cells: Vec<&str> = row.split(',').collect();
    ensure!(cells.len() == header.split(',').count(), "{} cells", cells.len());
    ensure!(cells.iter().all(|c| !c.is_empty()), "empty cell in {row}");
    Ok(())
}

fn cli_report_lists_runs() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let row = |id: &str| format!("{id},gaussian,NA,0.1,0.09,0.02,0.018,10,0,0,1,2,3,40,80");
    let ledger = dir.path().join("ledger.csv");
    std::fs::write(&ledger, format!("{LEDGER_HEADER}\n{}\n{}\n", row("run-one"), row("run-two"))).map_err(err)?;
    let text = run_cli(&["report", ledger.to_str().unwrap()])?;
    ensure!(text.contains("run-one") && text.contains("run-two"), "table:\n{text}");
    Ok(())
}

pub const CALIBRATE_CONFIG: &str = r#"
seed = 4
[calibrate]
dim = 2
steps = 40
batch = 32
hidden = [16]
train_pairs = 256
eval_pairs = 128
eval_every = 10
"#;

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Runs `command` from `config`, then reruns it from the persisted resolved
/// configuration into a second output directory. Every artifact must be
/// byte-identical, apart from the `output_dir` line of the resolved config.
pub fn replay_is_identical(command: &[&str], config: &str) -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, config).map_err(err)?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut first = command.to_vec();
    first.extend(["--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run_cli(&first)?;
    let runs: Vec<_> = std::fs::read_dir(&a).map_err(err)?.map(|e| e.unwrap().path()).collect();
    ensure!(runs.len() == 1, "expected one run directory, found {}", runs.len());
    let resolved = runs[0].join(uae::cli::RESOLVED_CONFIG);
    let mut second = command.to_vec();
    second.extend(["--config", resolved.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    run_cli(&second)?;

    let (fa, fb) = (files_under(&a), files_under(&b));
    ensure!(fa == fb, "artifact lists differ: {fa:?} vs {fb:?}");
    ensure!(fa.iter().any(|p| p.extension().is_some_and(|e| e == "csv")), "no CSV written");
    for rel in &fa {
        let (x, y) = (std::fs::read(a.join(rel)).map_err(err)?, std::fs::read(b.join(rel)).map_err(err)?);
        if rel.file_name().is_some_and(|n| n == uae::cli::RESOLVED_CONFIG) {
            let strip = |v: &[u8]| -> String {
                String::from_utf8_lossy(v).lines().filter(|l| !l.starts_with("output_dir")).collect::<Vec<_>>().join("\n")
            };
            ensure!(strip(&x) == strip(&y), "{} differs beyond output_dir", rel.display());
        } else {
            ensure!(x == y, "{} differs between runs", rel.display());
        }
    }
    Ok(())
}

// ---- gradient checks shared with the acceptance run ----

type Primitive = fn(&mut Tape, Var) -> Result<Var>;

fn weights(seed: u64, shape: Vec<usize>) -> Tensor {
    random_tensor(&mut rng_from(seed ^ 0xabcd), shape, 1.0)
}

/// Each primitive with a point shape and a map that keeps the point
/// inside the primitive's domain.
pub fn primitives() -> Vec<(&'static str, Vec<usize>, fn(f64) -> f64, Primitive)> {
    vec![
        ("add_mul", vec![2, 3], |v| v, |t, x| {
            let w = t.leaf(weights(1, vec![2, 3]));
            let a = t.mul(x, w)?;
            let b = t.add(a, x)?;
            let c = t.mul(b, b)?;
            t.sum(c)
        }),
        ("sub_div", vec![4], |v| 1.5 + v, |t, x| {
            let w = t.leaf(weights(2, vec![4]));
            let a = t.sub(w, x)?;
            let b = t.div(a, x)?;
            t.sum(b)
        }),
        ("matmul_add_row", vec![3, 4], |v| v, |t, x| {
            let w = t.leaf(weights(3, vec![4, 2]));
            let b = t.leaf(weights(4, vec![2]));
            let m = t.matmul(x, w)?;
            let r = t.add_row(m, b)?;
            let s = t.sigmoid(r)?;
            t.sum(s)
        }),
        ("conv2d_same", vec![1, 2, 5, 5], |v| v, |t, x| {
            let w = t.leaf(weights(5, vec![3, 2, 3, 3]));
            let b = t.leaf(weights(6, vec![3]));
            let y = t.conv2d(x, w, b, 1)?;
            let q = t.mul(y, y)?;
            t.sum(q)
        }),
        ("conv2d_valid_weights", vec![2, 1, 3, 3], |v| v, |t, w| {
            let x = t.leaf(weights(7, vec![1, 1, 6, 6]));
            let b = t.leaf(weights(8, vec![2]));
            let y = t.conv2d(x, w, b, 0)?;
            let s = t.sigmoid(y)?;
            t.sum(s)
        }),
        ("log_exp", vec![5], |v| 0.2 + v.abs(), |t, x| {
            let l = t.log(x)?;
            let e = t.exp(l)?;
            let p = t.mul(l, e)?;
            t.mean(p)
        }),
        ("l2_norm_scale_shift", vec![6], |v| v, |t, x| {
            let s = t.scale(x, 2.5)?;
            let h = t.shift(s, 0.3)?;
            t.l2_norm(h)
        }),
        ("max_pool_upsample", vec![1, 2, 4, 4], |v| v, |t, x| {
            let p = t.max_pool2(x)?;
            let u = t.upsample2(p)?;
            let w = t.leaf(weights(9, vec![1, 2, 4, 4]));
            let m = t.mul(u, w)?;
            t.sum(m)
        }),
        ("reshape_concat_gather", vec![6], |v| v, |t, x| {
            let r = t.reshape(x, &[3, 2])?;
            let c = t.concat_cols(r, r)?;
            let g = t.gather_rows(c, &[2, 0, 1])?;
            let w = t.leaf(weights(10, vec![3, 4]));
            let m = t.mul(g, w)?;
            let s = t.mul(m, c)?;
            t.sum(s)
        }),
        ("log_mean_exp", vec![5, 1], |v| 3.0 * v, |t, x| t.log_mean_exp(x)),
        ("pick_mul_scalar", vec![4], |v| v, |t, x| {
            let a = t.pick(x, 2)?;
            let m = t.mul_scalar(x, a)?;
            let q = t.mul(m, x)?;
            t.sum(q)
        }),
        ("softmax_cross_entropy", vec![3, 4], |v| 2.0 * v, |t, x| t.softmax_cross_entropy(x, &[1, 3, 0])),
    ]
}

/// Every primitive at a random point drawn from `seed`, h = 1e-5.
pub fn primitive_gradients(seed: u64) -> Outcome {
    let mut rng = rng_from(seed);
    for (name, shape, domain, f) in primitives() {
        let mut point = random_tensor(&mut rng, shape, 1.0);
        point.data_mut().iter_mut().for_each(|v| *v = domain(*v));
        let r = finite_diff_check(f, &point, 1e-5, 1e-4).map_err(err)?;
        ensure!(
            r.passed,
            "{name}, seed {seed}: index {} analytic {} numeric {}",
            r.worst_index,
            r.analytic[r.worst_index],
            r.numeric[r.worst_index]
        );
    }
    Ok(())
}

pub fn small_attack_setup(seed: u64) -> (Tensor, AttackSetup, AttackConfig) {
    let mut rng = rng_from(seed);
    let model = Arc::new(ModelState::init(ModelSpec::dense_ae(vec![12], 4), seed).unwrap());
    let mut x = random_tensor(&mut rng, vec![12], 0.4);
    x.data_mut().iter_mut().for_each(|v| *v += 0.5);
    let cfg = AttackConfig {
        seed,
        mine: tiny_mine(1, 5),
        kappa: 0.5,
        ..AttackConfig::unsupervised()
    };
    let crit = AttackCriterion::unsupervised(model, &x, cfg.kappa).unwrap();
    let mut setup = AttackSetup::new(&x, crit, &cfg, 0).unwrap();
    setup.estimator_mut().unwrap().mine_update(&x, 5).unwrap();
    (x, setup, cfg)
}

/// `c·f⁺(x+δ) − score` differentiated end to end, through the model, the
/// projection bank and the statistics network, at a random small δ.
pub fn composed_gradient_check(seed: u64, c: f64) -> Outcome {
    let (_, setup, _) = small_attack_setup(seed);
    let mut rng = rng_from(seed.wrapping_add(1));
    let delta = random_tensor(&mut rng, vec![12], 0.02);
    let eval = |d: &Tensor| -> std::result::Result<(f64, Tensor), String> {
        let mut tape = Tape::new();
        let v = tape.leaf(d.clone());
        let o = objective_on(&setup, &mut tape, v, c).map_err(err)?;
        let g = tape.backward(o, &[v]).map_err(err)?.remove(0);
        Ok((tape.value(o).item(), g))
    };
    let (_, g) = eval(&delta)?;
    let h = 1e-5;
    for i in 0..12 {
        let mut up = delta.clone();
        up.data_mut()[i] += h;
        let mut down = delta.clone();
        down.data_mut()[i] -= h;
        let numeric = (eval(&up)?.0 - eval(&down)?.0) / (2.0 * h);
        let a = g.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        ensure!(rel <= 1e-4, "seed {seed}, coordinate {i}: analytic {a} numeric {numeric}");
    }
    Ok(())
}
