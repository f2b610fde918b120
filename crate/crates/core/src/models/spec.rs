use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LayerTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    DenseAe,
    SparseAe,
    ConvAe,
    Classifier,
    MineStatistics,
}

impl ModelKind {
    pub fn is_autoencoder(self) -> bool {
        matches!(self, ModelKind::DenseAe | ModelKind::SparseAe | ModelKind::ConvAe)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    Same,
    Valid,
}

/// One layer of a sequential network. Dense layers flatten their input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: usize, padding: Padding },
    Relu,
    Sigmoid,
    MaxPool2,
    Upsample2,
    Reshape { shape: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-sample input shape, e.g. `[1, 28, 28]` or `[784]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output is the latent code (autoencoders).
    #[serde(default)]
    pub latent_layer: Option<usize>,
    /// λ₁ of the sparse autoencoder's `L1` penalty on the latent code.
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    #[serde(default)]
    pub classes: Option<usize>,
}

fn default_sparsity() -> f64 {
    1e-5
}

/// Shape bookkeeping produced by [`ModelSpec::validate`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    /// Per-sample output shape of every layer.
    pub outputs: Vec<Vec<usize>>,
    /// Parameter shapes in layer order.
    pub params: Vec<Vec<usize>>,
    /// Checkpoint tag and descriptor shape of every layer.
    pub records: Vec<(LayerTag, Vec<usize>)>,
}

impl ModelSpec {
    /// One dense encoder layer with relu and one dense decoder layer with
    /// sigmoid.
    pub fn dense_ae(input_shape: Vec<usize>, latent: usize) -> ModelSpec {
        let d = input_shape.iter().product();
        ModelSpec {
            kind: ModelKind::DenseAe,
            input_shape: input_shape.clone(),
            layers: vec![
                LayerSpec::Dense { units: latent },
                LayerSpec::Relu,
                LayerSpec::Dense { units: d },
                LayerSpec::Sigmoid,
                LayerSpec::Reshape { shape: input_shape },
            ],
            latent_layer: Some(1),
            sparsity: 0.0,
            classes: None,
        }
    }

    pub fn sparse_ae(input_shape: Vec<usize>, latent: usize, sparsity: f64) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::SparseAe,
            sparsity,
            ..Self::dense_ae(input_shape, latent)
        }
    }

    /// Two conv+relu+pool encoder stages of `filters` filters, mirrored by an
    /// upsample+conv+relu decoder and a final single-channel sigmoid conv.
    pub fn conv_ae(input_shape: Vec<usize>, filters: usize) -> ModelSpec {
        let c = input_shape.first().copied().unwrap_or(1);
        let conv = |f| LayerSpec::Conv2d {
            filters: f,
            kernel: 3,
            padding: Padding::Same,
        };
        ModelSpec {
            kind: ModelKind::ConvAe,
            input_shape,
            layers: vec![
                conv(filters),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                conv(filters),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Upsample2,
                conv(filters),
                LayerSpec::Relu,
                LayerSpec::Upsample2,
                conv(c),
                LayerSpec::Sigmoid,
            ],
            latent_layer: Some(5),
            sparsity: 0.0,
            classes: None,
        }
    }

    /// conv+relu+pool, one hidden dense layer, linear logits.
    pub fn classifier(input_shape: Vec<usize>, filters: usize, hidden: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Classifier,
            input_shape,
            layers: vec![
                LayerSpec::Conv2d {
                    filters,
                    kernel: 3,
                    padding: Padding::Same,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Dense { units: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { units: classes },
            ],
            latent_layer: None,
            sparsity: 0.0,
            classes: Some(classes),
        }
    }

    /// Dense-only classifier for vector inputs.
    pub fn mlp_classifier(input_shape: Vec<usize>, hidden: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Classifier,
            input_shape,
            layers: vec![
                LayerSpec::Dense { units: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { units: classes },
            ],
            latent_layer: None,
            sparsity: 0.0,
            classes: Some(classes),
        }
    }

    /// MLP `T_θ(u, v)` on the concatenated pair of length `2·pair_len`.
    pub fn mine_statistics(pair_len: usize, hidden: &[usize]) -> ModelSpec {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: 1 });
        ModelSpec {
            kind: ModelKind::MineStatistics,
            input_shape: vec![2 * pair_len],
            layers,
            latent_layer: None,
            sparsity: 0.0,
            classes: None,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-sample shape of the latent code, when the spec names one.
    pub fn latent_shape(&self) -> Option<Vec<usize>> {
        let layout = self.validate().ok()?;
        self.latent_layer.map(|i| layout.outputs[i].clone())
    }

    /// Index of the first conv layer, if any.
    pub fn first_conv(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    pub(crate) fn validate(&self) -> Result<Layout> {
        let bad = |msg: String| Error::InvalidSpec(msg);
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(bad(format!("input shape {:?}", self.input_shape)));
        }
        if !(self.sparsity >= 0.0 && self.sparsity.is_finite()) {
            return Err(bad(format!("sparsity must be ≥ 0, got {}", self.sparsity)));
        }
        let mut shape = self.input_shape.clone();
        let mut layout = Layout {
            outputs: Vec::with_capacity(self.layers.len()),
            params: Vec::new(),
            records: Vec::new(),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let (tag, desc) = match layer {
                LayerSpec::Dense { units } => {
                    if *units == 0 {
                        return Err(bad(format!("layer {i}: zero units")));
                    }
                    let fan_in = shape.iter().product();
                    shape = vec![*units];
                    (LayerTag::Dense, vec![fan_in, *units])
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("layer {i}: conv needs [C,H,W] input, got {shape:?}")));
                    }
                    if *filters == 0 || *kernel == 0 {
                        return Err(bad(format!("layer {i}: empty conv")));
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow, tag) = match padding {
                        Padding::Same => {
                            if kernel % 2 == 0 {
                                return Err(bad(format!("layer {i}: same padding needs an odd kernel")));
                            }
                            (h, w, LayerTag::Conv2dSame)
                        }
                        Padding::Valid => {
                            if *kernel > h || *kernel > w {
                                return Err(bad(format!("layer {i}: kernel larger than input")));
                            }
                            (h - kernel + 1, w - kernel + 1, LayerTag::Conv2dValid)
                        }
                    };
                    shape = vec![*filters, oh, ow];
                    (tag, vec![*filters, c, *kernel, *kernel])
                }
                LayerSpec::Relu => (LayerTag::Relu, vec![]),
                LayerSpec::Sigmoid => (LayerTag::Sigmoid, vec![]),
                LayerSpec::MaxPool2 => {
                    if shape.len() != 3 || !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
                        return Err(bad(format!("layer {i}: max-pool needs even [C,H,W], got {shape:?}")));
                    }
                    shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
                    (LayerTag::MaxPool2, vec![])
                }
                LayerSpec::Upsample2 => {
                    if shape.len() != 3 {
                        return Err(bad(format!("layer {i}: upsample needs [C,H,W], got {shape:?}")));
                    }
                    shape = vec![shape[0], shape[1] * 2, shape[2] * 2];
                    (LayerTag::Upsample2, vec![])
                }
                LayerSpec::Reshape { shape: target } => {
                    let n: usize = target.iter().product();
                    if target.is_empty() || n != shape.iter().product::<usize>() {
                        return Err(bad(format!("layer {i}: cannot reshape {shape:?} to {target:?}")));
                    }
                    shape = target.clone();
                    (LayerTag::Reshape, target.clone())
                }
            };
            layout.params.extend(tag.param_shapes(&desc)?);
            layout.records.push((tag, desc));
            layout.outputs.push(shape.clone());
        }
        let out = layout.outputs.last().cloned().unwrap_or(self.input_shape.clone());
        match self.kind {
            k if k.is_autoencoder() => {
                if out != self.input_shape {
                    return Err(bad(format!(
                        "autoencoder output {out:?} does not match input {:?}",
                        self.input_shape
                    )));
                }
                if !matches!(self.layers.iter().rev().find(|l| !matches!(l, LayerSpec::Reshape { .. })), Some(LayerSpec::Sigmoid)) {
                    return Err(bad("autoencoder must end in a sigmoid".into()));
                }
                match self.latent_layer {
                    Some(i) if i < self.layers.len() => {}
                    _ => return Err(bad("autoencoder needs a valid latent layer".into())),
                }
            }
            ModelKind::Classifier => {
                let classes = self.classes.ok_or_else(|| bad("classifier needs a class count".into()))?;
                if classes < 2 || out != [classes] {
                    return Err(bad(format!("classifier output {out:?} vs {classes} classes")));
                }
            }
            ModelKind::MineStatistics => {
                if out != [1] || self.input_shape.len() != 1 || !self.input_shape[0].is_multiple_of(2) {
                    return Err(bad("statistics network maps an even-length pair to a scalar".into()));
                }
            }
            _ => unreachable!(),
        }
        Ok(layout)
    }
}
