//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fxq_core::fxp::{Granularity, OverflowMode, RoundMode};
use fxq_core::qlayers::ModelConfig;
use fxq_core::resource::LossConfig;
use fxq_core::trainer::{AdamConfig, Dataset, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, synth_dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub loss: LossSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            loss: LossSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Synthetic only.
    pub samples: usize,
    /// Synthetic only.
    pub separation: f64,
    /// CSV only.
    pub path: Option<PathBuf>,
    /// CSV only: target column names.
    pub targets: Vec<String>,
    pub task: Task,
    pub val_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            samples: 6000,
            separation: 0.6,
            path: None,
            targets: vec!["label".into()],
            task: Task::Classification,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GranularitySpec {
    PerTensor,
    PerChannel,
    PerParameter,
}

impl From<GranularitySpec> for Granularity {
    fn from(g: GranularitySpec) -> Self {
        match g {
            GranularitySpec::PerTensor => Granularity::PerTensor,
            GranularitySpec::PerChannel => Granularity::PerChannel,
            GranularitySpec::PerParameter => Granularity::PerParameter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundSpec {
    #[serde(rename = "RND")]
    Rnd,
    #[serde(rename = "TRN")]
    Trn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverflowSpec {
    #[serde(rename = "WRAP")]
    Wrap,
    #[serde(rename = "SAT")]
    Sat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    pub weight_granularity: GranularitySpec,
    pub act_granularity: GranularitySpec,
    pub weight_f_init: f64,
    pub act_f_init: f64,
    pub act_i_init: f64,
    pub act_round: RoundSpec,
    pub act_overflow: OverflowSpec,
    pub input_frac_bits: i32,
    pub input_signed: bool,
    /// SAT activations clip with the continuous integer width.
    pub sat_continuous_i: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            sizes: vec![16, 64, 32, 32, 5],
            weight_granularity: GranularitySpec::PerParameter,
            act_granularity: GranularitySpec::PerParameter,
            weight_f_init: 2.0,
            act_f_init: 4.0,
            act_i_init: 4.0,
            act_round: RoundSpec::Rnd,
            act_overflow: OverflowSpec::Wrap,
            input_frac_bits: 6,
            input_signed: true,
            sat_continuous_i: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First restart period in epochs; defaults to a quarter of the run.
    pub restart_epochs: Option<usize>,
    pub restart_mult: usize,
    pub lr_min: f64,
    pub bitwidth_lr_scale: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            restart_epochs: t.restart_epochs,
            restart_mult: t.restart_mult,
            lr_min: t.lr_min,
            bitwidth_lr_scale: t.bitwidth_lr_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub beta_init: f64,
    pub beta_final: f64,
    pub gamma: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            beta_init: l.beta_init,
            beta_final: l.beta_final,
            gamma: l.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// `[beta_init, beta_final]` pairs.
    pub betas: Vec<[f64; 2]>,
    pub threads: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            betas: vec![[1e-7, 1e-6], [1e-6, 1e-5], [1e-5, 1e-4], [1e-4, 1e-3]],
            threads: 4,
        }
    }
}

/// Seeds of the independent random streams of a run.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            data: self.seed,
            split: self.seed.wrapping_add(1),
            init: self.seed.wrapping_add(2),
            shuffle: self.seed.wrapping_add(3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            bail!("dataset.val_fraction must lie in (0, 1)");
        }
        match d.kind {
            DatasetKind::Synthetic => {
                if d.samples == 0 || !(d.separation.is_finite() && d.separation >= 0.0) {
                    bail!("synthetic dataset needs samples > 0 and a finite separation >= 0");
                }
                if d.task != Task::Classification {
                    bail!("the synthetic dataset is a classification task");
                }
            }
            DatasetKind::Csv => {
                if d.path.is_none() {
                    bail!("dataset.path is required for kind = \"csv\"");
                }
            }
        }
        if self.model.sizes.len() < 2 || self.model.sizes.contains(&0) {
            bail!("model.sizes needs at least two positive entries");
        }
        self.train_config(String::new()).validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            weight_granularity: m.weight_granularity.into(),
            act_granularity: m.act_granularity.into(),
            weight_f_init: m.weight_f_init,
            act_f_init: m.act_f_init,
            act_i_init: m.act_i_init,
            act_overflow: match m.act_overflow {
                OverflowSpec::Wrap => OverflowMode::Wrap,
                OverflowSpec::Sat => OverflowMode::Sat,
            },
            act_round: match m.act_round {
                RoundSpec::Rnd => RoundMode::Rnd,
                RoundSpec::Trn => RoundMode::Trn,
            },
            input_frac_bits: m.input_frac_bits,
            input_signed: m.input_signed,
        }
    }

    pub fn train_config(&self, label: String) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seeds().shuffle,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            restart_epochs: t.restart_epochs,
            restart_mult: t.restart_mult,
            lr_min: t.lr_min,
            bitwidth_lr_scale: t.bitwidth_lr_scale,
            loss: LossConfig {
                beta_init: self.loss.beta_init,
                beta_final: self.loss.beta_final,
                gamma: self.loss.gamma,
                total_steps: 1,
            },
            label,
        }
    }

    /// Builds the dataset and splits it into `(train, validation)`.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.dataset;
        let full = match d.kind {
            DatasetKind::Synthetic => synth_dataset(d.samples, self.seeds().data, d.separation),
            DatasetKind::Csv => {
                let path = d.path.as_ref().expect("validated");
                load_csv(path, &d.targets, d.task == Task::Classification)?
            }
        };
        let (train, val) = full.split(d.val_fraction, self.seeds().split)?;
        let (n_in, n_out) = (self.model.sizes[0], *self.model.sizes.last().expect("validated"));
        if train.n_features != n_in || train.n_outputs() != n_out {
            bail!(
                "dataset has {} features and {} outputs, model.sizes expects {n_in} and {n_out}",
                train.n_features,
                train.n_outputs()
            );
        }
        Ok((train, val))
    }
}
