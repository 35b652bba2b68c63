//! Subcommand implementations. Each returns a value the binary prints and a
//! test can inspect.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fxq_core::compile::{emit_ir, interpret, lower_deployed, parse_ir, FxpGraph, FxpValue};
use fxq_core::qlayers::{DeployModel, QModel};
use fxq_core::resource::{calibrate, ebops_exact, ebops_of_deployed, freeze, EbopsReport};
use fxq_core::trainer::{evaluate_deployed, finalize, train, Checkpoint, Dataset, EpochMetrics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointFile;
use crate::config::ExperimentConfig;
use crate::report::{activation_widths, ebops_text, weight_widths, write_csv, ParetoRow};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARETO_FILE: &str = "pareto.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.json";

#[derive(Debug, Clone, Serialize)]
struct MetricsRow {
    epoch: usize,
    step: usize,
    lr: f64,
    beta: f64,
    train_loss: f64,
    val_metric: f64,
    surrogate_ebops: f64,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        Self {
            epoch: m.epoch,
            step: m.step,
            lr: m.lr,
            beta: m.beta,
            train_loss: m.train_loss,
            val_metric: m.val_metric,
            surrogate_ebops: m.surrogate_ebops,
        }
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out: PathBuf,
    pub beta_init: f64,
    pub beta_final: f64,
    /// Deployment-forward validation metric of the last-epoch model.
    pub final_val_metric: f64,
    /// Exact EBOPs of the calibrated last-epoch model.
    pub final_ebops: u64,
    pub pareto_size: usize,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pruned_fraction(d: &DeployModel) -> f64 {
    weight_widths(d).zero_fraction()
}

fn calibrated_checkpoint(model: QModel, label: &str, epoch: usize, calib_set: &Dataset, val: &Dataset) -> Result<Checkpoint> {
    let mut model = model;
    let calib = calibrate(&mut model, calib_set.rows())?;
    let report = ebops_exact(&model, &calib)?;
    let deployed = freeze(&model, &calib)?;
    Ok(Checkpoint {
        epoch,
        label: label.into(),
        val_metric: evaluate_deployed(&deployed, val),
        ebops: report.total as f64,
        surrogate_ebops: f64::NAN,
        exact: true,
        model,
        calibration: Some(calib),
    })
}

/// Trains one model and writes the run directory:
/// `config.toml`, `metrics.csv`, `checkpoints/*.json` and `pareto.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.out;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml())?;

    let (train_set, val_set) = cfg.datasets()?;
    let mut model = QModel::mlp(
        &cfg.model.sizes,
        &cfg.model_config(),
        &mut ChaCha8Rng::seed_from_u64(cfg.seeds().init),
    )?;
    for l in &mut model.layers {
        l.act_q.sat_continuous_i = cfg.model.sat_continuous_i;
    }
    let label = out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let outcome = train(model, &train_set, &val_set, &cfg.train_config(label.clone()))?;
    let rows: Vec<MetricsRow> = outcome.history.iter().map(MetricsRow::from).collect();
    write(&out.join(METRICS_FILE), &write_csv(&rows)?)?;

    let calib_set = train_set.concat(&val_set)?;
    let pareto = finalize(outcome.pareto, &calib_set, &val_set)?;
    let mut table = Vec::new();
    for c in pareto.members() {
        let name = format!("epoch-{:04}.json", c.epoch);
        let file = CheckpointFile::from_checkpoint(c)?;
        file.save(&ckpt_dir.join(&name))?;
        let d = file.deploy()?;
        table.push(ParetoRow {
            label: c.label.clone(),
            epoch: c.epoch,
            val_metric: c.val_metric,
            ebops: c.ebops,
            surrogate_ebops: c.surrogate_ebops,
            lut_pred: ebops_of_deployed(&d).lut_pred,
            pruned_fraction: pruned_fraction(&d),
            checkpoint: format!("{CHECKPOINT_DIR}/{name}"),
        });
    }
    write(&out.join(PARETO_FILE), &write_csv(&table)?)?;

    let last_epoch = outcome.history.last().map_or(0, |h| h.epoch);
    let mut fin = calibrated_checkpoint(outcome.model, &label, last_epoch, &calib_set, &val_set)?;
    fin.surrogate_ebops = outcome.history.last().map_or(f64::NAN, |h| h.surrogate_ebops);
    CheckpointFile::from_checkpoint(&fin)?.save(&ckpt_dir.join(FINAL_CHECKPOINT))?;

    Ok(RunSummary {
        out: out.clone(),
        beta_init: cfg.loss.beta_init,
        beta_final: cfg.loss.beta_final,
        final_val_metric: fin.val_metric,
        final_ebops: fin.ebops as u64,
        pareto_size: pareto.len(),
    })
}

/// Runs one training per `(beta_init, beta_final)` pair into `out/beta-<k>`
/// on up to `threads` threads, and writes `out/sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, betas: &[[f64; 2]], threads: usize) -> Result<Vec<RunSummary>> {
    ensure!(!betas.is_empty(), "sweep needs at least one beta pair");
    let configs: Vec<ExperimentConfig> = betas
        .iter()
        .enumerate()
        .map(|(k, &[bi, bf])| {
            let mut c = cfg.clone();
            c.out = cfg.out.join(format!("beta-{k}"));
            c.loss.beta_init = bi;
            c.loss.beta_final = bf;
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let threads = threads.clamp(1, configs.len());
    let mut results: Vec<Option<Result<RunSummary>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = configs
            .chunks(configs.len().div_ceil(threads))
            .zip(results.chunks_mut(configs.len().div_ceil(threads)))
            .collect();
        for (cs, rs) in chunks {
            s.spawn(move || {
                for (c, r) in cs.iter().zip(rs.iter_mut()) {
                    *r = Some(cmd_train(c));
                }
            });
        }
    });
    let summaries = results
        .into_iter()
        .map(|r| r.expect("every run finished"))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&cfg.out)?;
    write(&cfg.out.join("sweep.csv"), &write_csv(&summaries)?)?;
    Ok(summaries)
}

/// Recalibrates a checkpoint on the configured dataset (train and
/// validation rows) and writes it to `out`.
pub fn cmd_calibrate(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EbopsReport> {
    let file = CheckpointFile::load(checkpoint)?;
    let c = file.to_checkpoint()?;
    let (train_set, val_set) = cfg.datasets()?;
    let calib_set = train_set.concat(&val_set)?;
    let mut fresh = calibrated_checkpoint(c.model, &c.label, c.epoch, &calib_set, &val_set)?;
    fresh.surrogate_ebops = c.surrogate_ebops;
    let report = ebops_exact(&fresh.model, fresh.calibration.as_ref().expect("calibrated"))?;
    CheckpointFile::from_checkpoint(&fresh)?.save(out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileSummary {
    pub ir_path: PathBuf,
    pub report: EbopsReport,
    pub nodes: usize,
    pub adders: usize,
    pub adder_depth: usize,
}

/// Lowers the checkpoint's integer model, writes `<stem>.ir` and
/// `<stem>.ebops` into `out_dir`.
pub fn cmd_compile(checkpoint: &Path, out_dir: &Path) -> Result<CompileSummary> {
    let d = CheckpointFile::load(checkpoint)?.deploy()?;
    let g = lower_deployed(&d)?;
    let report = ebops_of_deployed(&d);
    fs::create_dir_all(out_dir)?;
    let stem = checkpoint.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let ir_path = out_dir.join(format!("{stem}.ir"));
    write(&ir_path, &emit_ir(&g))?;
    let c = g.op_counts();
    let mut text = ebops_text(&report);
    let _ = writeln!(text, "nodes={}", g.nodes.len());
    let _ = writeln!(text, "adders={}", c.adders);
    let _ = writeln!(text, "adder_depth={}", g.adder_depth());
    write(&out_dir.join(format!("{stem}.ebops")), &text)?;
    Ok(CompileSummary {
        ir_path,
        report,
        nodes: g.nodes.len(),
        adders: c.adders,
        adder_depth: g.adder_depth(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub samples: usize,
    /// Samples on which the three paths disagree, per output lane.
    pub mismatches: Vec<usize>,
    /// Stored mantissas or formats that differ from those recomputed from
    /// the float weights.
    pub parameter_mismatches: usize,
}

impl VerifyReport {
    pub fn total(&self) -> usize {
        self.mismatches.iter().sum::<usize>() + self.parameter_mismatches
    }
}

fn values(v: &[FxpValue]) -> Vec<f64> {
    v.iter().map(FxpValue::value).collect()
}

fn random_input(d: &DeployModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    d.input_fmt
        .iter()
        .map(|f| {
            let (lo, hi) = f.value_range();
            // Twice the representable range, so wrapping is exercised.
            let span = (hi - lo).max(1.0);
            rng.random_range(lo - span / 2.0..=hi + span / 2.0)
        })
        .collect()
}

fn graph_outputs(g: &FxpGraph, d: &DeployModel, x: &[f64]) -> Result<Vec<f64>> {
    let inputs: Vec<FxpValue> = x.iter().zip(&d.input_fmt).map(|(&v, &f)| FxpValue::from_real(v, f)).collect();
    Ok(values(&interpret(g, &inputs)?))
}

fn count_parameter_mismatches(stored: &DeployModel, recomputed: &DeployModel) -> usize {
    let diff = |a: &[i128], b: &[i128]| a.iter().zip(b).filter(|(x, y)| x != y).count();
    let fdiff = |a: &[_], b: &[_]| a.iter().zip(b).filter(|(x, y)| x != y).count();
    let mut n = fdiff(&stored.input_fmt, &recomputed.input_fmt);
    for (s, r) in stored.layers.iter().zip(&recomputed.layers) {
        n += diff(&s.weight_mantissa, &r.weight_mantissa) + diff(&s.bias_mantissa, &r.bias_mantissa);
        n += fdiff(&s.weight_fmt, &r.weight_fmt) + fdiff(&s.bias_fmt, &r.bias_fmt) + fdiff(&s.act_fmt, &r.act_fmt);
    }
    n + stored.layers.len().abs_diff(recomputed.layers.len())
}

/// Three-way equivalence on `n` random inputs: the float model frozen with
/// the stored formats and run in deployment mode, the lowered graph of the
/// stored integer model, and that graph after an IR text round trip.
pub fn cmd_verify(checkpoint: &Path, n: usize, seed: u64) -> Result<VerifyReport> {
    let file = CheckpointFile::load(checkpoint)?;
    let stored = file.deploy()?;
    let c = file.to_checkpoint()?;
    let emulated = freeze(&c.model, c.calibration.as_ref().expect("deploy section present"))?;
    let g = lower_deployed(&stored)?;
    let g_ir = parse_ir(&emit_ir(&g))?;
    if g_ir != g {
        bail!("IR round trip changed the graph");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_input(&stored, &mut rng)).collect();
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get());
    let chunk = n.div_ceil(threads).max(1);
    let partial: Vec<Result<Vec<usize>>> = std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|xs| {
                let (emulated, stored, g, g_ir) = (&emulated, &stored, &g, &g_ir);
                s.spawn(move || -> Result<Vec<usize>> {
                    let mut m = vec![0usize; stored.n_outputs()];
                    for x in xs {
                        let a = emulated.forward(x);
                        let b = graph_outputs(g, stored, x)?;
                        let c = graph_outputs(g_ir, stored, x)?;
                        for k in 0..m.len() {
                            if a[k] != b[k] || b[k] != c[k] {
                                m[k] += 1;
                            }
                        }
                    }
                    Ok(m)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("verify worker")).collect()
    });
    let mut mismatches = vec![0usize; stored.n_outputs()];
    for p in partial {
        for (t, m) in mismatches.iter_mut().zip(p?) {
            *t += m;
        }
    }
    Ok(VerifyReport {
        samples: n,
        mismatches,
        parameter_mismatches: count_parameter_mismatches(&stored, &emulated),
    })
}

/// Writes `report.txt` (bit-width histograms per Pareto checkpoint) and
/// `pareto_table.csv` into `run_dir` and returns the text.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    let manifest = run_dir.join(PARETO_FILE);
    let mut rdr = csv::Reader::from_path(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let rows: Vec<ParetoRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let mut text = String::new();
    let mut table = Vec::new();
    for row in &rows {
        let d = CheckpointFile::load(&run_dir.join(&row.checkpoint))?.deploy()?;
        let w = weight_widths(&d);
        let a = activation_widths(&d);
        let _ = writeln!(
            text,
            "== {} (epoch {}): val_metric={:.4} ebops={} pruned_fraction={:.4}",
            row.checkpoint,
            row.epoch,
            row.val_metric,
            row.ebops,
            w.zero_fraction()
        );
        text.push_str(&w.render("weight bit-widths"));
        text.push_str(&a.render("activation bit-widths"));
        text.push('\n');
        table.push(ParetoRow {
            pruned_fraction: w.zero_fraction(),
            ..row.clone()
        });
    }
    let _ = writeln!(text, "{:>8} {:>12} {:>12} {:>10}", "epoch", "val_metric", "ebops", "pruned");
    for r in &table {
        let _ = writeln!(text, "{:>8} {:>12.4} {:>12} {:>10.4}", r.epoch, r.val_metric, r.ebops, r.pruned_fraction);
    }
    write(&run_dir.join("report.txt"), &text)?;
    write(&run_dir.join("pareto_table.csv"), &write_csv(&table)?)?;
    Ok(text)
}
