//! Run configuration: one TOML document with a section per component.
//! Unknown keys are rejected, and the resolved document (every default
//! filled in) is written next to the outputs so a run can be replayed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::augment::AugmentationPlan;
use crate::data::{load_csv, load_idx, synth_digits, CsvSchema, Dataset, Split};
use crate::error::{Error, Result};
use crate::mine::CalibrationConfig;
use crate::models::{ModelKind, ModelSpec, TrainConfig};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    SynthDigits,
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_size: usize,
    pub test_size: usize,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub csv_has_header: bool,
    pub csv_label_column: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::SynthDigits,
            train_size: 5000,
            test_size: 1000,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_csv: None,
            test_csv: None,
            csv_has_header: false,
            csv_label_column: None,
        }
    }
}

/// Named architectures; `custom` takes `spec` verbatim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    DenseAe,
    SparseAe,
    ConvAe,
    Classifier,
    MlpClassifier,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub preset: Preset,
    pub latent: usize,
    pub filters: usize,
    pub hidden: usize,
    pub classes: usize,
    pub sparsity: f64,
    /// Resolved architecture. Filled from the preset unless `custom`.
    pub spec: Option<ModelSpec>,
    /// Trained weights to load instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: Preset::DenseAe,
            latent: 128,
            filters: 16,
            hidden: 64,
            classes: 10,
            sparsity: 1e-5,
            spec: None,
            checkpoint: None,
        }
    }
}

impl ModelConfig {
    pub fn resolve_spec(&self, input_shape: &[usize]) -> Result<ModelSpec> {
        let shape = input_shape.to_vec();
        let spec = match self.preset {
            Preset::DenseAe => ModelSpec::dense_ae(shape, self.latent),
            Preset::SparseAe => ModelSpec::sparse_ae(shape, self.latent, self.sparsity),
            Preset::ConvAe => ModelSpec::conv_ae(shape, self.filters),
            Preset::Classifier => ModelSpec::classifier(shape, self.filters, self.hidden, self.classes),
            Preset::MlpClassifier => ModelSpec::mlp_classifier(shape, self.hidden, self.classes),
            Preset::Custom => self
                .spec
                .clone()
                .ok_or_else(|| Error::Config("preset `custom` needs [model.spec]".into()))?,
        };
        if let Some(given) = &self.spec {
            if self.preset != Preset::Custom && given != &spec {
                return Err(Error::Config("[model.spec] disagrees with the preset; use preset = \"custom\"".into()));
            }
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    Minmax,
    Penalty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionChoice {
    /// Untargeted for classifiers, reconstruction for autoencoders.
    Auto,
    Untargeted,
    Targeted,
    Unsupervised,
}

/// Which test samples the `attack` command attacks, and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetsConfig {
    pub method: AttackMethod,
    pub criterion: CriterionChoice,
    /// Target class for targeted attacks.
    pub target_class: Option<usize>,
    pub first_sample: usize,
    pub count: usize,
    pub split: Split,
}

impl Default for TargetsConfig {
    fn default() -> Self {
        TargetsConfig {
            method: AttackMethod::Minmax,
            criterion: CriterionChoice::Auto,
            target_class: None,
            first_sample: 0,
            count: 10,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Record measured wall-clock times in CSV outputs. Off by default so
    /// that repeated runs produce identical files.
    pub timing: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub targets: TargetsConfig,
    pub augment: AugmentationPlan,
    pub calibrate: CalibrationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            timing: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            attack: AttackConfig::default(),
            targets: TargetsConfig::default(),
            augment: AugmentationPlan::default(),
            calibrate: CalibrationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_id(&self, command: &str) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{command}-{}", self.seed))
    }

    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.output_dir.join(self.run_id(command))
    }

    /// Train and test splits. Normalization statistics of CSV data come from
    /// the train file only.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let need = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
            p.clone().ok_or_else(|| Error::Config(format!("[data] {what} is required for this source")))
        };
        match d.source {
            DataSource::SynthDigits => {
                let s = derive_seed(self.seed, "data", 0);
                Ok((synth_digits(d.train_size, s, Split::Train)?, synth_digits(d.test_size, s, Split::Test)?))
            }
            DataSource::Idx => {
                let check = |p: &PathBuf| -> Result<()> {
                    if p.exists() {
                        Ok(())
                    } else {
                        Err(Error::Data(format!("dataset file {} not found", p.display())))
                    }
                };
                let (ti, te) = (need(&d.train_images, "train_images")?, need(&d.test_images, "test_images")?);
                check(&ti)?;
                check(&te)?;
                let train = load_idx(&ti, d.train_labels.as_deref())?.take(d.train_size);
                let test = load_idx(&te, d.test_labels.as_deref())?.with_split(Split::Test).take(d.test_size);
                Ok((train, test))
            }
            DataSource::Csv => {
                let schema = CsvSchema {
                    has_header: d.csv_has_header,
                    label_column: d.csv_label_column,
                };
                let (train, ranges) = load_csv(need(&d.train_csv, "train_csv")?, &schema, None)?;
                let (test, _) = load_csv(need(&d.test_csv, "test_csv")?, &schema, Some(&ranges))?;
                Ok((train.take(d.train_size), test.with_split(Split::Test).take(d.test_size)))
            }
        }
    }

    /// Copy with every derived value written out: the model spec resolved
    /// against the data shape and the run id fixed.
    pub fn resolved(&self, command: &str, input_shape: &[usize]) -> Result<RunConfig> {
        let mut r = self.clone();
        r.run_id = Some(self.run_id(command));
        r.model.spec = Some(self.model.resolve_spec(input_shape)?);
        Ok(r)
    }

    pub fn check(&self) -> Result<()> {
        self.attack.validate()?;
        if self.model.preset != Preset::Custom {
            if let Some(spec) = &self.model.spec {
                if spec.kind == ModelKind::MineStatistics {
                    return Err(Error::Config("a statistics network cannot be the target model".into()));
                }
            }
        }
        Ok(())
    }
}
