use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::dataset::{Dataset, Targets};
use super::pareto::{Checkpoint, ParetoSet};
use super::schedule::CosineRestarts;
use crate::autodiff::Tape;
use crate::qlayers::{DeployModel, ParamKind, QModel};
use crate::resource::{calibrate, ebops_exact, ebops_surrogate_value, freeze, total_loss, LossConfig};
use crate::{Error, Result};

/// Bounds applied to the continuous bit-width parameters after each update.
const BITWIDTH_RANGE: (f64, f64) = (-16.0, 32.0);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// First restart period in epochs; `None` means `max(epochs / 4, 1)`.
    pub restart_epochs: Option<usize>,
    pub restart_mult: usize,
    pub lr_min: f64,
    /// Learning-rate multiplier for the bit-width parameters.
    pub bitwidth_lr_scale: f64,
    /// `total_steps` is overwritten with the run's step count.
    pub loss: LossConfig,
    /// Label stored on every checkpoint of this run.
    pub label: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            restart_epochs: None,
            restart_mult: 2,
            lr_min: 1e-5,
            bitwidth_lr_scale: 1.0,
            loss: LossConfig::default(),
            label: String::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad(format!("epochs and batch_size must be positive: {} / {}", self.epochs, self.batch_size));
        }
        if self.restart_epochs == Some(0) || self.restart_mult == 0 {
            return bad("restart period and multiplier must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.adam.lr) {
            return bad(format!("lr_min {} outside [0, lr]", self.lr_min));
        }
        if !(self.bitwidth_lr_scale.is_finite() && self.bitwidth_lr_scale >= 0.0) {
            return bad("bitwidth_lr_scale must be finite and non-negative".into());
        }
        self.adam.validate()?;
        self.loss.validate()
    }

    pub fn steps_per_epoch(&self, train_rows: usize) -> usize {
        train_rows.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> CosineRestarts {
        let t0_epochs = self.restart_epochs.unwrap_or((self.epochs / 4).max(1));
        CosineRestarts {
            lr_max: self.adam.lr,
            lr_min: self.lr_min,
            t0: t0_epochs * steps_per_epoch,
            t_mult: self.restart_mult,
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub beta: f64,
    /// Mean task loss (without regularizers) over the epoch's batches.
    pub train_loss: f64,
    pub val_metric: f64,
    pub surrogate_ebops: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pareto: ParetoSet,
    pub history: Vec<EpochMetrics>,
    pub model: QModel,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy for classification, negative RMSE for regression.
fn metric_of(outputs: &[f64], n_out: usize, data: &Dataset) -> f64 {
    let rows = data.len();
    if rows == 0 {
        return f64::NAN;
    }
    match &data.targets {
        Targets::Classes { labels, .. } => {
            let hits = outputs
                .chunks_exact(n_out)
                .zip(labels)
                .filter(|(o, &l)| argmax(o) == l)
                .count();
            hits as f64 / rows as f64
        }
        Targets::Regression { values, .. } => {
            let se: f64 = outputs.iter().zip(values).map(|(o, t)| (o - t) * (o - t)).sum();
            -libm::sqrt(se / values.len() as f64)
        }
    }
}

fn check_fit(model: &QModel, data: &Dataset) -> Result<()> {
    if data.n_features != model.n_inputs() || data.n_outputs() != model.n_outputs() {
        return Err(Error::ShapeMismatch {
            op: "train",
            detail: format!(
                "dataset {}->{} for model {}->{}",
                data.n_features,
                data.n_outputs(),
                model.n_inputs(),
                model.n_outputs()
            ),
        });
    }
    Ok(())
}

/// Validation metric of the training-semantics forward.
pub fn evaluate(model: &mut QModel, data: &Dataset) -> Result<f64> {
    check_fit(model, data)?;
    let mut out = Vec::with_capacity(data.len() * model.n_outputs());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(1024) {
        out.extend_from_slice(model.predict(data.batch(chunk)?)?.data());
    }
    Ok(metric_of(&out, model.n_outputs(), data))
}

/// Validation metric of the integer deployment forward.
pub fn evaluate_deployed(model: &DeployModel, data: &Dataset) -> f64 {
    let out: Vec<f64> = data.rows().flat_map(|r| model.forward(r)).collect();
    metric_of(&out, model.n_outputs(), data)
}

/// Trains `model` in place and returns the Pareto front of the epoch
/// snapshots, scored with the surrogate EBOPs.
pub fn train(model: QModel, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_set.validate()?;
    check_fit(&model, train_set)?;
    check_fit(&model, val_set)?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = model;
    let spe = cfg.steps_per_epoch(train_set.len());
    let total = spe * cfg.epochs;
    let loss_cfg = LossConfig {
        total_steps: total,
        ..cfg.loss
    };
    let sched = cfg.schedule(spe);
    let kinds = model.param_kinds();
    let scales: Vec<f64> = kinds
        .iter()
        .map(|k| match k {
            ParamKind::Weight | ParamKind::Bias => 1.0,
            ParamKind::BitWidth { trainable: true } => cfg.bitwidth_lr_scale,
            ParamKind::BitWidth { trainable: false } => 0.0,
        })
        .collect();
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut opt = Adam::new(cfg.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut pareto = ParetoSet::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        model.reset_stats();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = sched.lr_at(step);
        for batch in order.chunks(cfg.batch_size) {
            lr = sched.lr_at(step);
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let x = train_set.batch(batch)?;
            let out = model.forward_train(&mut tape, &b, x, true)?;
            let base = match &train_set.targets {
                Targets::Classes { labels, .. } => {
                    let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                    tape.softmax_cross_entropy(out, &y)?
                }
                Targets::Regression { values, n_outputs } => {
                    let n = *n_outputs;
                    let mut y = Vec::with_capacity(batch.len() * n);
                    for &i in batch {
                        y.extend_from_slice(&values[i * n..(i + 1) * n]);
                    }
                    tape.mse(out, &y)?
                }
            };
            let base_value = tape.value(base).item();
            let loss = total_loss(&mut tape, base, &model, &b, &loss_cfg, step)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, value });
            }
            loss_sum += base_value;
            tape.backward(loss)?;
            let zeros: Vec<Vec<f64>> = sizes.iter().map(|&n| alloc::vec![0.0; n]).collect();
            let grads: Vec<&[f64]> = b
                .vars
                .iter()
                .zip(&zeros)
                .map(|(&v, z)| tape.grad(v).unwrap_or(z))
                .collect();
            let mut params = model.parameters_mut();
            opt.step(lr, &mut params, &grads, &scales)?;
            for (p, k) in params.iter_mut().zip(&kinds) {
                if matches!(k, ParamKind::BitWidth { trainable: true }) {
                    for v in p.iter_mut() {
                        *v = v.clamp(BITWIDTH_RANGE.0, BITWIDTH_RANGE.1);
                    }
                }
            }
            step += 1;
        }
        // Statistics cover the whole epoch, which the surrogate needs.
        let surrogate = ebops_surrogate_value(&model)?.value;
        let val_metric = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate(&mut model, val_set)?
        };
        history.push(EpochMetrics {
            epoch,
            step,
            lr,
            beta: loss_cfg.beta_at(step.saturating_sub(1)),
            train_loss: loss_sum / spe as f64,
            val_metric,
            surrogate_ebops: surrogate,
        });
        pareto.insert(Checkpoint {
            epoch,
            label: cfg.label.clone(),
            val_metric,
            ebops: surrogate,
            surrogate_ebops: surrogate,
            exact: false,
            model: model.clone(),
            calibration: None,
        });
    }
    Ok(TrainOutcome {
        pareto,
        history,
        model,
    })
}

/// Calibrates every member on `calib_set`, rescores it with the exact EBOPs
/// and the deployment-forward metric on `val_set`, and rebuilds the front.
pub fn finalize(set: ParetoSet, calib_set: &Dataset, val_set: &Dataset) -> Result<ParetoSet> {
    let mut out = ParetoSet::new();
    for mut c in set.into_members() {
        let calib = calibrate(&mut c.model, calib_set.rows())?;
        let report = ebops_exact(&c.model, &calib)?;
        let deployed = freeze(&c.model, &calib)?;
        if !val_set.is_empty() {
            c.val_metric = evaluate_deployed(&deployed, val_set);
        }
        c.ebops = report.total as f64;
        c.exact = true;
        c.calibration = Some(calib);
        out.insert(c);
    }
    Ok(out)
}
