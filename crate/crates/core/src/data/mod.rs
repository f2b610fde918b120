//! Datasets: in-memory container, IDX and CSV ingestion, synthetic sources.

mod idx;
mod synth;
mod tabular;

pub use idx::{
    load_idx, load_idx_images, load_idx_labels, parse_idx, read_idx, write_idx, IdxFile, IMAGES_MAGIC,
    LABELS_MAGIC,
};
pub use synth::{gaussian_mi, squash, synth_digits, synth_gaussian_pairs, GaussianPairs, DIGIT_SIDE};
pub use tabular::{load_csv, CsvSchema, FeatureRange};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Equally shaped samples with values in `[0, 1]`, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    data: Vec<f64>,
    labels: Option<Vec<usize>>,
    split: Split,
    provenance: String,
}

impl Dataset {
    /// Values are clamped into `[0, 1]`; NaN is rejected.
    pub fn new(
        sample_shape: Vec<usize>,
        mut data: Vec<f64>,
        labels: Option<Vec<usize>>,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || per == 0 {
            return Err(Error::Data(format!("invalid sample shape {sample_shape:?}")));
        }
        if !data.len().is_multiple_of(per) {
            return Err(Error::Data(format!(
                "{} values do not split into samples of {per}",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("NaN in dataset".into()));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if let Some(l) = &labels {
            if l.len() != data.len() / per {
                return Err(Error::Data(format!(
                    "{} labels for {} samples",
                    l.len(),
                    data.len() / per
                )));
            }
        }
        Ok(Dataset {
            sample_shape,
            data,
            labels,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_tensor(&self, i: usize) -> Tensor {
        Tensor::from_parts_unchecked(self.sample_shape.clone(), self.sample(i).to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Stacks the selected samples into a `[n, ...sample_shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::from_parts_unchecked(shape, data)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Dataset {
            sample_shape: self.sample_shape.clone(),
            data,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Appends the samples of `other`, which must share the sample shape.
    /// Labels survive only if both sides carry them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.sample_shape != other.sample_shape {
            return Err(Error::Shape {
                expected: self.sample_shape.clone(),
                got: other.sample_shape.clone(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Dataset {
            sample_shape: self.sample_shape.clone(),
            data,
            labels,
            split: self.split,
            provenance: self.provenance.clone(),
        })
    }

    pub fn with_sample_shape(mut self, shape: Vec<usize>) -> Result<Dataset> {
        if shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::Shape {
                expected: self.sample_shape,
                got: shape,
            });
        }
        self.sample_shape = shape;
        Ok(self)
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }

    /// Builds a dataset from per-sample vectors sharing `sample_shape`.
    pub fn from_samples(
        sample_shape: Vec<usize>,
        samples: &[Vec<f64>],
        labels: Option<Vec<usize>>,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Dataset> {
        let data = samples.iter().flatten().copied().collect();
        Dataset::new(sample_shape, data, labels, split, provenance)
    }
}
