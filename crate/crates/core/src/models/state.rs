use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Layout, LayerSpec, ModelSpec, Padding};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{read_checkpoint, write_checkpoint, LayerRecord, Tape, Tensor, Var};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    /// Mean minibatch loss of every epoch.
    pub loss_history: Vec<f64>,
    pub seed: u64,
}

/// Parameters plus architecture. Parameters are reference counted so that a
/// forward pass can place them on a tape without copying.
#[derive(Clone, Debug)]
pub struct ModelState {
    spec: ModelSpec,
    layout: Layout,
    params: Vec<Arc<Tensor>>,
    pub meta: TrainMeta,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.meta == other.meta
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.shape() == b.shape() && bits(a) == bits(b))
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Handles produced by [`ModelState::forward_on`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[N, ...output shape]`.
    pub output: Var,
    pub latent: Option<Var>,
    /// Output of the first conv layer (before its activation).
    pub first_conv: Option<Var>,
}

impl ModelState {
    /// Glorot-uniform weights and zero biases, drawn from the `model-init`
    /// stream of `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<ModelState> {
        let layout = spec.validate()?;
        let mut rng = seed::stream(seed, "model-init", 0);
        let mut params = Vec::with_capacity(layout.params.len());
        for shape in &layout.params {
            let n: usize = shape.iter().product();
            let data = match shape.len() {
                1 => vec![0.0; n],
                2 => glorot(&mut rng, shape[0], shape[1], n),
                _ => {
                    let rf = shape[2] * shape[3];
                    glorot(&mut rng, shape[1] * rf, shape[0] * rf, n)
                }
            };
            params.push(Arc::new(Tensor::new(shape.clone(), data)?));
        }
        Ok(ModelState {
            spec,
            layout,
            params,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
        })
    }

    /// All parameters zero.
    pub fn zeros(spec: ModelSpec) -> Result<ModelState> {
        let layout = spec.validate()?;
        let params = layout
            .params
            .iter()
            .map(|s| Arc::new(Tensor::zeros(s.clone())))
            .collect();
        Ok(ModelState {
            spec,
            layout,
            params,
            meta: TrainMeta::default(),
        })
    }

    /// Parameters in layer order (weight, then bias).
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<ModelState> {
        let layout = spec.validate()?;
        if params.len() != layout.params.len() {
            return Err(Error::InvalidSpec(format!(
                "{} parameter tensors, spec needs {}",
                params.len(),
                layout.params.len()
            )));
        }
        for (p, s) in params.iter().zip(&layout.params) {
            if p.shape() != s.as_slice() {
                return Err(Error::Shape {
                    expected: s.clone(),
                    got: p.shape().to_vec(),
                });
            }
        }
        Ok(ModelState {
            spec,
            layout,
            params: params.into_iter().map(Arc::new).collect(),
            meta: TrainMeta::default(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Arc<Tensor>] {
        &self.params
    }

    /// Mutable access for optimizer steps; copies any parameter still shared
    /// with a live tape.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(Arc::make_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.layout.outputs.last().map(Vec::as_slice).unwrap_or(&self.spec.input_shape)
    }

    /// Shape of the first conv layer's per-sample output, `[K, H, W]`.
    pub fn first_conv_shape(&self) -> Option<&[usize]> {
        self.spec.first_conv().map(|i| self.layout.outputs[i].as_slice())
    }

    /// Places the parameters on `tape` as shared leaves.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf_shared(p.clone())).collect()
    }

    /// Runs the network on `x`, shaped either `[N, ...input]` or `input`.
    /// `params` must come from [`ModelState::bind`] on the same tape.
    pub fn forward_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Forward> {
        let in_shape = tape.try_value(x)?.shape().to_vec();
        let n = self.batch_len(&in_shape)?;
        let mut cur = if in_shape == self.spec.input_shape {
            tape.reshape(x, &batched(1, &self.spec.input_shape))?
        } else {
            x
        };
        let mut p = params.iter();
        let mut next = || {
            p.next()
                .copied()
                .ok_or_else(|| Error::InvalidSpec("too few bound parameters".into()))
        };
        let mut latent = None;
        let mut first_conv = None;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Dense { .. } => {
                    let (w, b) = (next()?, next()?);
                    if tape.value(cur).shape().len() != 2 {
                        let flat = tape.value(cur).len() / n;
                        cur = tape.reshape(cur, &[n, flat])?;
                    }
                    let z = tape.matmul(cur, w)?;
                    tape.add_row(z, b)?
                }
                LayerSpec::Conv2d { kernel, padding, .. } => {
                    let (w, b) = (next()?, next()?);
                    let pad = match padding {
                        Padding::Same => (kernel - 1) / 2,
                        Padding::Valid => 0,
                    };
                    let want = if i == 0 {
                        batched(n, &self.spec.input_shape)
                    } else {
                        batched(n, &self.layout.outputs[i - 1])
                    };
                    if tape.value(cur).shape() != want.as_slice() {
                        cur = tape.reshape(cur, &want)?;
                    }
                    let y = tape.conv2d(cur, w, b, pad)?;
                    if first_conv.is_none() {
                        first_conv = Some(y);
                    }
                    y
                }
                LayerSpec::Relu => tape.relu(cur)?,
                LayerSpec::Sigmoid => tape.sigmoid(cur)?,
                LayerSpec::MaxPool2 => tape.max_pool2(cur)?,
                LayerSpec::Upsample2 => tape.upsample2(cur)?,
                LayerSpec::Reshape { shape } => tape.reshape(cur, &batched(n, shape))?,
            };
            if Some(i) == self.spec.latent_layer {
                latent = Some(cur);
            }
        }
        let out_shape = batched(n, self.output_shape());
        if tape.value(cur).shape() != out_shape.as_slice() {
            cur = tape.reshape(cur, &out_shape)?;
        }
        Ok(Forward {
            output: cur,
            latent,
            first_conv,
        })
    }

    fn batch_len(&self, shape: &[usize]) -> Result<usize> {
        let input = &self.spec.input_shape;
        if shape == input.as_slice() {
            Ok(1)
        } else if shape.len() == input.len() + 1 && &shape[1..] == input.as_slice() {
            Ok(shape[0])
        } else {
            Err(Error::Shape {
                expected: input.clone(),
                got: shape.to_vec(),
            })
        }
    }

    /// Inference on `[N, ...input]` or a single `input`-shaped sample; the
    /// result keeps the batch axis only if the input had one.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let single = x.shape() == self.spec.input_shape.as_slice();
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = self.forward_on(&mut tape, &params, xv)?.output;
        let t = tape.value(out).clone();
        if single {
            Ok(t.reshape(self.output_shape().to_vec())?)
        } else {
            Ok(t)
        }
    }

    /// Autoencoder reconstruction, same shape as `x`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        if !self.spec.kind.is_autoencoder() {
            return Err(Error::InvalidArgument("model is not an autoencoder".into()));
        }
        self.forward(x)
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if self.spec.classes.is_none() {
            return Err(Error::InvalidArgument("model is not a classifier".into()));
        }
        self.forward(x)
    }

    /// First conv layer output for one sample, `[K, H, W]`.
    pub fn first_conv_output(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.first_conv_shape().ok_or(Error::NoConvLayer)?.to_vec();
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let fwd = self.forward_on(&mut tape, &params, xv)?;
        let v = tape.value(fwd.first_conv.ok_or(Error::NoConvLayer)?).clone();
        Ok(v.reshape(shape)?)
    }

    /// Mean over samples of the per-sample mean squared reconstruction error.
    pub fn dataset_recon_error(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for chunk in chunks(data.len(), 256) {
            let x = data.batch(&chunk);
            let xhat = self.reconstruct(&x)?;
            let per = data.sample_len();
            for (a, b) in x.data().chunks(per).zip(xhat.data().chunks(per)) {
                total += a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / per as f64;
            }
        }
        Ok(total / data.len() as f64)
    }

    /// Fraction of labelled samples whose arg-max logit is the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::Data("accuracy needs labels".into()))?;
        let mut correct = 0usize;
        for chunk in chunks(data.len(), 256) {
            let logits = self.logits(&data.batch(&chunk))?;
            let c = logits.shape()[1];
            for (row, &i) in logits.data().chunks(c).zip(&chunk) {
                if argmax(row) == labels[i] {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut it = self.params.iter();
        let records: Vec<LayerRecord> = self
            .layout
            .records
            .iter()
            .map(|(tag, shape)| {
                let n = tag.param_shapes(shape).map(|v| v.len()).unwrap_or(0);
                LayerRecord {
                    tag: *tag,
                    shape: shape.clone(),
                    params: it.by_ref().take(n).map(|p| (**p).clone()).collect(),
                }
            })
            .collect();
        write_checkpoint(BufWriter::new(File::create(path)?), &records)?;
        Ok(())
    }

    /// Loads parameters for `spec`, checking every layer record against it.
    pub fn load(spec: ModelSpec, path: impl AsRef<Path>) -> Result<ModelState> {
        let records = read_checkpoint(BufReader::new(File::open(path)?))?;
        let layout = spec.validate()?;
        if records.len() != layout.records.len()
            || records
                .iter()
                .zip(&layout.records)
                .any(|(r, (tag, shape))| r.tag != *tag || &r.shape != shape)
        {
            return Err(Error::InvalidSpec("checkpoint does not match model spec".into()));
        }
        let params = records.into_iter().flat_map(|r| r.params).collect();
        ModelState::from_params(spec, params)
    }
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

pub(crate) fn batched(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(n);
    s.extend_from_slice(shape);
    s
}

pub(crate) fn chunks(len: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..len).step_by(size).map(move |s| (s..(s + size).min(len)).collect())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}
