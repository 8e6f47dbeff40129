//! `ecg-recon`: prepare datasets, train and evaluate lead-reconstruction
//! models, and render tables and overlays.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ecg_recon::ingest::{RecordFormat, Split};
use ecg_recon::metrics::R2Variant;
use ecg_recon::models::ModelFamily;
use ecg_recon::report::TableFormat;

use commands::{EvaluateArgs, PlotSource};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "ecg-recon", version, about = "Reconstruct 12-lead ECGs from leads I, II and V2")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run config; flags override its values. Defaults to the
    /// config.toml stored next to the manifest or checkpoint, if any.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw records, preprocess them and write canonical records plus a manifest.
    Prepare {
        /// Directory scanned recursively for .csv, .txt (WFDB text) and .ecgr records.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Force one input format instead of guessing from the extension.
        #[arg(long)]
        format: Option<RecordFormat>,
        /// `record_id,subgroup` table; defaults to metadata.csv in the raw directory.
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Train one model family; writes checkpoints, train_log.jsonl and config.toml to --out.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// pix2pix-gan, lstm-unet, lstm or identity.
        #[arg(long)]
        family: Option<ModelFamily>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Weight of the L1 term in the generator loss.
        #[arg(long)]
        lambda_recon: Option<f64>,
        #[arg(long)]
        max_steps_per_epoch: Option<usize>,
        #[arg(long)]
        window_length: Option<usize>,
        #[arg(long)]
        window_stride: Option<usize>,
        /// Early-stop on the test split instead of the validation split.
        #[arg(long)]
        paper_protocol: bool,
        /// Batch normalisation on the outermost encoder and discriminator blocks too.
        #[arg(long)]
        bn_everywhere: bool,
        #[arg(long)]
        r2_variant: Option<R2Variant>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Evaluate a checkpoint on one split at full record length.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also report one table per labelled subgroup.
        #[arg(long)]
        subgroups: bool,
        #[arg(long)]
        r2_variant: Option<R2Variant>,
        #[arg(long, default_value = "markdown")]
        table_format: TableFormat,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also draw overlays for the first N records.
        #[arg(long, default_value_t = 0)]
        plots: usize,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Reconstruct one record and write all 12 leads in millivolts (.csv or .ecgr).
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<RecordFormat>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Overlay original and reconstructed leads of one record (.png or .svg).
    Plot {
        /// Up to four checkpoints; repeat the flag.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// A record file to plot.
        #[arg(long, conflicts_with_all = ["manifest", "record"])]
        input: Option<PathBuf>,
        #[arg(long, requires = "record")]
        manifest: Option<PathBuf>,
        /// Record id within --manifest.
        #[arg(long, requires = "manifest")]
        record: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Combine the evaluations of several run directories into one table.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output file, or a directory that receives comparison.md / .csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "markdown")]
        table_format: TableFormat,
        #[arg(long)]
        subgroups: bool,
    },
    /// Write synthetic dipole-consistent raw records (CSV, millivolts) for trials.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 5000)]
        length: usize,
        #[arg(long, default_value_t = 500.0)]
        fs: f32,
        /// Independent Gaussian noise per lead, mV.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(cfg: &ConfigArg, near: Option<&Path>, edit: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut run = commands::config_for(cfg.config.as_deref(), near)?;
    if let Some(seed) = cfg.seed {
        run.seed = seed;
    }
    edit(&mut run);
    run.resolve()
}

fn parent(path: &Path) -> Option<&Path> {
    path.parent().filter(|p| !p.as_os_str().is_empty())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            raw,
            out,
            format,
            metadata,
            cfg,
        } => {
            let run = resolve(&cfg, None, |_| {})?;
            commands::prepare(&raw, &out, format, metadata.as_deref(), &run)?;
        }
        Command::Train {
            manifest,
            family,
            out,
            epochs,
            patience,
            batch_size,
            lr,
            lambda_recon,
            max_steps_per_epoch,
            window_length,
            window_stride,
            paper_protocol,
            bn_everywhere,
            r2_variant,
            cfg,
        } => {
            let run = resolve(&cfg, parent(&manifest), |r| {
                let t = &mut r.train;
                t.max_epochs = epochs.unwrap_or(t.max_epochs);
                t.patience = patience.unwrap_or(t.patience);
                t.batch_size = batch_size.unwrap_or(t.batch_size);
                t.lr = lr.unwrap_or(t.lr);
                t.lambda_recon = lambda_recon.unwrap_or(t.lambda_recon);
                t.max_steps_per_epoch = max_steps_per_epoch.or(t.max_steps_per_epoch);
                t.paper_protocol |= paper_protocol;
                let p = &mut r.preprocess;
                p.window_length = window_length.unwrap_or(p.window_length);
                p.window_stride = window_stride.unwrap_or(p.window_stride);
                r.evaluate.r2_variant = r2_variant.unwrap_or(r.evaluate.r2_variant);
            })?;
            let state = commands::train(&manifest, family, &out, &run, bn_everywhere)?;
            if let (Some(r2), Some(epoch)) = (state.best_r2, state.best_epoch) {
                println!("best validation R² {r2:.4} at epoch {epoch}");
            }
            if let Some(best) = &state.best_checkpoint {
                println!("{}", best.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            subgroups,
            r2_variant,
            table_format,
            out,
            plots,
            cfg,
        } => {
            let run = resolve(&cfg, parent(&checkpoint), |r| {
                r.evaluate.subgroups |= subgroups;
                r.evaluate.r2_variant = r2_variant.unwrap_or(r.evaluate.r2_variant);
            })?;
            let args = EvaluateArgs {
                checkpoint: &checkpoint,
                manifest: &manifest,
                split,
                out: out.as_deref(),
                format: table_format,
                plots,
            };
            print!("{}", commands::evaluate(&args, &run)?);
        }
        Command::Reconstruct {
            checkpoint,
            input,
            format,
            out,
            cfg,
        } => {
            let run = resolve(&cfg, parent(&checkpoint), |_| {})?;
            commands::reconstruct(&checkpoint, &input, format, &out, &run)?;
        }
        Command::Plot {
            checkpoint,
            input,
            manifest,
            record,
            out,
            cfg,
        } => {
            let run = resolve(&cfg, parent(&checkpoint[0]), |_| {})?;
            let source = match (&input, &manifest, &record) {
                (Some(path), _, _) => PlotSource::File(path, None),
                (None, Some(m), Some(id)) => PlotSource::Manifest(m, id),
                _ => anyhow::bail!("plot needs --input or --manifest with --record"),
            };
            commands::plot(&checkpoint, source, &out, &run)?;
        }
        Command::Compare {
            runs,
            out,
            table_format,
            subgroups,
        } => {
            print!("{}", commands::compare(&runs, &out, table_format, subgroups)?);
        }
        Command::Synth {
            out,
            count,
            length,
            fs,
            noise,
            seed,
        } => commands::synth(&out, count, length, fs, seed, noise)?,
    }
    Ok(())
}

const WORKER_STACK: usize = 1 << 30;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    // Backprop through a full-length LSTM recurrence walks a graph thousands of nodes deep.
    let worker = std::thread::Builder::new()
        .stack_size(WORKER_STACK)
        .spawn(move || run(cli))
        .expect("spawn worker thread");
    match worker.join().expect("worker thread panicked") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
