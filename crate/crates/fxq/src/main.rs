use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fxq::commands::{cmd_calibrate, cmd_compile, cmd_report, cmd_sweep, cmd_train, cmd_verify};
use fxq::config::ExperimentConfig;
use fxq::report::ebops_text;

/// Quantization-aware training with learnable bit-widths, and exact
/// fixed-point lowering of the trained networks.
#[derive(Parser)]
#[command(name = "fxq", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beta_init: Option<f64>,
    #[arg(long)]
    beta_final: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and write its run directory.
    Train(RunArgs),
    /// Train once per beta pair.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated `init:final` pairs, e.g. `1e-7:1e-6,1e-6:1e-5`.
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Recalibrate a checkpoint on the configured dataset.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        checkpoint: PathBuf,
        /// Output checkpoint; defaults to `<stem>.calibrated.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lower a checkpoint to IR and report its EBOPs.
    Compile {
        checkpoint: PathBuf,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check bit-exact agreement of the three execution paths.
    Verify {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Bit-width histograms and the Pareto table of a run directory.
    Report { run_dir: PathBuf },
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(b) = args.beta_init {
        cfg.loss.beta_init = b;
    }
    if let Some(b) = args.beta_final {
        cfg.loss.beta_final = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_betas(s: &str) -> Result<Vec<[f64; 2]>> {
    s.split(',')
        .map(|p| {
            let (a, b) = p.split_once(':').with_context(|| format!("expected `init:final`, got `{p}`"))?;
            Ok([a.trim().parse()?, b.trim().parse()?])
        })
        .collect()
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Train(args) => {
            let s = cmd_train(&load(&args)?)?;
            println!(
                "run={} val_metric={:.4} ebops={} pareto_size={}",
                s.out.display(),
                s.final_val_metric,
                s.final_ebops,
                s.pareto_size
            );
        }
        Cmd::Sweep { run, betas, threads } => {
            let cfg = load(&run)?;
            let betas = match betas {
                Some(b) => parse_betas(&b)?,
                None => cfg.sweep.betas.clone(),
            };
            let rows = cmd_sweep(&cfg, &betas, threads.unwrap_or(cfg.sweep.threads))?;
            println!("{:>10} {:>10} {:>10} {:>10}  run", "beta_init", "beta_final", "val", "ebops");
            for r in rows {
                println!(
                    "{:>10.1e} {:>10.1e} {:>10.4} {:>10}  {}",
                    r.beta_init,
                    r.beta_final,
                    r.final_val_metric,
                    r.final_ebops,
                    r.out.display()
                );
            }
        }
        Cmd::Calibrate { config, checkpoint, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| {
                let stem = checkpoint.file_stem().unwrap_or_default().to_string_lossy();
                parent(&checkpoint).join(format!("{stem}.calibrated.json"))
            });
            let report = cmd_calibrate(&cfg, &checkpoint, &out)?;
            print!("{}", ebops_text(&report));
            println!("checkpoint={}", out.display());
        }
        Cmd::Compile { checkpoint, out } => {
            let out = out.unwrap_or_else(|| parent(&checkpoint));
            let s = cmd_compile(&checkpoint, &out)?;
            print!("{}", ebops_text(&s.report));
            println!("nodes={} adders={} adder_depth={}", s.nodes, s.adders, s.adder_depth);
            println!("ir={}", s.ir_path.display());
        }
        Cmd::Verify { checkpoint, samples, seed } => {
            let r = cmd_verify(&checkpoint, samples, seed)?;
            for (k, m) in r.mismatches.iter().enumerate() {
                println!("output {k}: {m} mismatches / {} samples", r.samples);
            }
            println!("parameter mismatches: {}", r.parameter_mismatches);
            println!("total mismatches: {}", r.total());
            if r.total() > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Report { run_dir } => {
            if !run_dir.is_dir() {
                bail!("{} is not a run directory", run_dir.display());
            }
            print!("{}", cmd_report(&run_dir)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
