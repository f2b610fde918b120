//! Data augmentation with unsupervised adversarial examples (and the
//! conventional baselines), retraining from scratch and reporting.

mod report;
mod transforms;

pub use report::{AugmentationReport, LEDGER_HEADER};
pub use transforms::{apply_transform, gaussian_augment, geometric_augment, rotated_coordinate, Transform};

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_batch, AttackConfig, AttackCriterion, AttackResult, Direction, Similarity};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{train_model, ModelState, TrainConfig};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMethod {
    MineUae,
    /// Maximizes `‖x − Φ(x+δ)‖₂` under the same success criterion.
    L2Uae,
    Gaussian,
    /// Flips and rotation, optionally followed by Gaussian noise.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPlan {
    pub method: AugmentMethod,
    pub sigma: f64,
    pub rotation_degrees: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub rotation: bool,
    /// Adds Gaussian noise of `sigma` after the geometric transform.
    pub geometric_noise: bool,
    pub attack: AttackConfig,
    /// Retraining epochs relative to the original model's.
    pub epoch_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        AugmentationPlan {
            method: AugmentMethod::MineUae,
            sigma: 0.01,
            rotation_degrees: 10.0,
            horizontal_flip: true,
            vertical_flip: true,
            rotation: true,
            geometric_noise: false,
            attack: AttackConfig::unsupervised(),
            epoch_ratio: 1.5,
            seed: 0,
        }
    }
}

impl AugmentationPlan {
    /// Enabled geometric transforms. Rotation is by `±rotation_degrees`.
    pub fn transforms(&self) -> Vec<Transform> {
        let mut t = Vec::new();
        if self.horizontal_flip {
            t.push(Transform::HorizontalFlip);
        }
        if self.vertical_flip {
            t.push(Transform::VerticalFlip);
        }
        if self.rotation {
            t.push(Transform::Rotate {
                degrees: self.rotation_degrees,
            });
            t.push(Transform::Rotate {
                degrees: -self.rotation_degrees,
            });
        }
        t
    }

    /// Attack settings for the UAE methods: κ = 0 and minimized MI (or the
    /// reconstruction-distance objective for L2-UAE).
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            kappa: 0.0,
            direction: Direction::MinimizeMi,
            similarity: match self.method {
                AugmentMethod::L2Uae => Similarity::ReconL2,
                _ => Similarity::Mine,
            },
            seed: derive_seed(self.seed, "attack", 0),
            ..self.attack.clone()
        }
    }
}

/// Outcome of the attack on one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct UaeRecord {
    pub index: usize,
    pub success: bool,
    pub best_mi: Option<f64>,
    pub delta: Option<Tensor>,
    pub iterations: usize,
    pub wallclock_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UaeSet {
    /// Originals followed by one entry per original.
    pub augmented: Dataset,
    pub asr: f64,
    pub records: Vec<UaeRecord>,
}

/// Fraction of samples whose adversarial loss is at most `orig − κ`.
pub fn asr(orig_losses: &[f64], adv_losses: &[f64], kappa: f64) -> Result<f64> {
    if orig_losses.len() != adv_losses.len() {
        return Err(Error::Shape {
            expected: vec![orig_losses.len()],
            got: vec![adv_losses.len()],
        });
    }
    if orig_losses.is_empty() {
        return Ok(0.0);
    }
    let hits = orig_losses.iter().zip(adv_losses).filter(|(o, a)| **a <= **o - kappa).count();
    Ok(hits as f64 / orig_losses.len() as f64)
}

/// Attacks every training sample of the autoencoder `model`. Successful
/// attacks contribute `x+δ*`; failures replicate `x`. With `T = 0` nothing
/// is attacked.
pub fn generate_uae_set(data: &Dataset, model: &Arc<ModelState>, plan: &AugmentationPlan) -> Result<UaeSet> {
    if !matches!(plan.method, AugmentMethod::MineUae | AugmentMethod::L2Uae) {
        return Err(Error::InvalidArgument("UAE generation needs the mine-uae or l2-uae method".into()));
    }
    if !model.spec().kind.is_autoencoder() {
        return Err(Error::InvalidArgument("UAE generation needs an autoencoder".into()));
    }
    let cfg = plan.attack_config();
    let results: Vec<Option<AttackResult>> = if cfg.iterations == 0 {
        vec![None; data.len()]
    } else {
        let samples: Vec<(usize, Tensor)> = (0..data.len()).map(|i| (i, data.sample_tensor(i))).collect();
        attack_batch(&samples, |_, x| AttackCriterion::unsupervised(model.clone(), x, 0.0), &cfg, false)
            .into_iter()
            .map(|r| r.map(Some))
            .collect::<Result<_>>()?
    };
    assemble_uae_set(data, results)
}

/// Builds the `2N` set from one attack outcome per sample (`None` for a
/// sample that was not attacked): `x+δ*` on success, `x` otherwise.
pub fn assemble_uae_set(data: &Dataset, results: Vec<Option<AttackResult>>) -> Result<UaeSet> {
    if results.len() != data.len() {
        return Err(Error::Shape {
            expected: vec![data.len()],
            got: vec![results.len()],
        });
    }
    let mut values = Vec::with_capacity(data.values().len());
    let mut records = Vec::with_capacity(data.len());
    for (i, r) in results.into_iter().enumerate() {
        let x = data.sample(i);
        let delta = r.as_ref().and_then(|r| r.delta.clone());
        match &delta {
            Some(d) => values.extend(x.iter().zip(d.data()).map(|(a, b)| a + b)),
            None => values.extend_from_slice(x),
        }
        records.push(UaeRecord {
            index: i,
            success: delta.is_some(),
            best_mi: r.as_ref().and_then(|r| r.best_mi),
            delta,
            iterations: r.as_ref().map_or(0, |r| r.iterations),
            wallclock_ms: r.as_ref().map_or(0, |r| r.wallclock_ms),
        });
    }
    let successes = records.iter().filter(|r| r.success).count();
    let adversarial = Dataset::new(
        data.sample_shape().to_vec(),
        values,
        data.labels().map(<[usize]>::to_vec),
        data.split(),
        format!("{} + uae", data.provenance()),
    )?;
    Ok(UaeSet {
        augmented: data.concat(&adversarial)?,
        asr: successes as f64 / data.len() as f64,
        records,
    })
}

/// The `2N` training set for the plan's conventional methods.
pub fn conventional_set(data: &Dataset, plan: &AugmentationPlan) -> Result<Dataset> {
    let seed = derive_seed(plan.seed, "augment", 0);
    let extra = match plan.method {
        AugmentMethod::Gaussian => gaussian_augment(data, plan.sigma, seed)?,
        AugmentMethod::Geometric => {
            let g = geometric_augment(data, &plan.transforms(), seed)?;
            if plan.geometric_noise {
                gaussian_augment(&g, plan.sigma, seed)?
            } else {
                g
            }
        }
        _ => return Err(Error::InvalidArgument("UAE methods go through generate_uae_set".into())),
    };
    data.concat(&extra)
}

/// Retrains from a fresh initialization (seed `retrain` under the plan
/// seed) on `augmented` for `⌈epoch_ratio × original epochs⌉` epochs, and
/// compares dataset-level reconstruction errors with `original`.
pub fn retrain_and_eval(
    train: &Dataset,
    augmented: &Dataset,
    test: &Dataset,
    original: &ModelState,
    base: &TrainConfig,
    plan: &AugmentationPlan,
) -> Result<(ModelState, AugmentationReport)> {
    if !(plan.epoch_ratio > 0.0) {
        return Err(Error::InvalidArgument(format!("epoch ratio must be positive, got {}", plan.epoch_ratio)));
    }
    let cfg = TrainConfig {
        epochs: (plan.epoch_ratio * original.meta.epochs as f64).ceil() as usize,
        seed: derive_seed(plan.seed, "retrain", 0),
        ..base.clone()
    };
    let start = Instant::now();
    let retrained = train_model(original.spec().clone(), augmented, &cfg)?;
    let retrain_ms = start.elapsed().as_millis() as u64;

    let original_test = original.dataset_recon_error(test)?;
    let retrained_test = retrained.dataset_recon_error(test)?;
    let report = AugmentationReport {
        method: plan.method,
        asr: None,
        original_train_loss: original.dataset_recon_error(train)?,
        retrained_train_loss: retrained.dataset_recon_error(train)?,
        original_test_error: original_test,
        retrained_test_error: retrained_test,
        improvement_pct: 100.0 * (original_test - retrained_test) / original_test,
        generation_ms: 0,
        retrain_ms,
        original_seed: original.meta.seed,
        retrain_seed: cfg.seed,
        plan_seed: plan.seed,
        train_size: train.len(),
        augmented_size: augmented.len(),
    };
    Ok((retrained, report))
}

/// The full pipeline: build the augmented set for `plan.method`, retrain,
/// evaluate. Only `train` is seen before evaluation.
pub fn run_augmentation(
    train: &Dataset,
    test: &Dataset,
    original: &Arc<ModelState>,
    base: &TrainConfig,
    plan: &AugmentationPlan,
) -> Result<(ModelState, AugmentationReport)> {
    let start = Instant::now();
    let (augmented, asr) = match plan.method {
        AugmentMethod::MineUae | AugmentMethod::L2Uae => {
            let set = generate_uae_set(train, original, plan)?;
            (set.augmented, Some(set.asr))
        }
        _ => (conventional_set(train, plan)?, None),
    };
    let generation_ms = start.elapsed().as_millis() as u64;
    let (model, mut report) = retrain_and_eval(train, &augmented, test, original, base, plan)?;
    report.asr = asr;
    report.generation_ms = generation_ms;
    Ok((model, report))
}
