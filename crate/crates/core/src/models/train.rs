use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::spec::{ModelKind, ModelSpec};
use super::state::ModelState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{OptimizerKind, OptimizerState, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

/// Trains a freshly initialized model. Autoencoders minimize mean squared
/// error (plus `λ₁·mean|z|` for the sparse variant); classifiers minimize
/// softmax cross-entropy. Minibatches are reshuffled every epoch from the
/// `train-shuffle` stream; the result is bit-reproducible for a given seed.
pub fn train_model(spec: ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<ModelState> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if data.sample_shape() != spec.input_shape.as_slice() {
        return Err(Error::Shape {
            expected: spec.input_shape.clone(),
            got: data.sample_shape().to_vec(),
        });
    }
    if spec.kind == ModelKind::MineStatistics {
        return Err(Error::InvalidArgument(
            "statistics networks are trained by the MI estimator".into(),
        ));
    }
    let mut model = ModelState::init(spec, cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate)?;
    let mut rng = seed::stream(cfg.seed, "train-shuffle", 0);
    let mut order: Vec<usize> = (0..data.len()).collect();

    if cfg.epochs == 0 {
        let all: Vec<usize> = (0..data.len()).collect();
        let (loss, _) = batch_loss(&model, data, &all, false)?;
        model.meta.final_loss = Some(loss);
        return Ok(model);
    }

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_loss(&model, data, batch, true)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            opt.step(model.params_mut(), &grads)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        model.meta.loss_history.push(mean);
        model.meta.epochs = epoch + 1;
    }
    model.meta.final_loss = model.meta.loss_history.last().copied();
    Ok(model)
}

/// Training loss on the selected samples and, if requested, its gradient
/// with respect to every parameter.
pub(crate) fn batch_loss(
    model: &ModelState,
    data: &Dataset,
    indices: &[usize],
    grads: bool,
) -> Result<(f64, Vec<crate::tensor::Tensor>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let x = tape.leaf(data.batch(indices));
    let fwd = match model.forward_on(&mut tape, &params, x) {
        Ok(f) => f,
        Err(Error::Tensor(crate::tensor::TensorError::NonFinite { .. })) => {
            return Ok((f64::NAN, Vec::new()))
        }
        Err(e) => return Err(e),
    };
    let spec = model.spec();
    let loss = if spec.kind == ModelKind::Classifier {
        let labels: Vec<usize> = {
            let l = data
                .labels()
                .ok_or_else(|| Error::Data("classifier training needs labels".into()))?;
            indices.iter().map(|&i| l[i]).collect()
        };
        tape.softmax_cross_entropy(fwd.output, &labels)?
    } else {
        let d = tape.sub(fwd.output, x)?;
        let sq = tape.mul(d, d)?;
        let mse = tape.mean(sq)?;
        match (spec.kind, fwd.latent) {
            (ModelKind::SparseAe, Some(z)) if spec.sparsity > 0.0 => {
                let a = tape.l1_norm(z)?;
                let n = tape.value(z).len() as f64;
                let pen = tape.scale(a, spec.sparsity / n)?;
                tape.add(mse, pen)?
            }
            _ => mse,
        }
    };
    let value = tape.value(loss).item();
    if !grads {
        return Ok((value, Vec::new()));
    }
    match tape.backward(loss, &params) {
        Ok(g) => Ok((value, g)),
        Err(crate::tensor::TensorError::NonFinite { .. }) => Ok((f64::NAN, Vec::new())),
        Err(e) => Err(e.into()),
    }
}
