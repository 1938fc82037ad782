//! `lfsr`: prepare light-field datasets, train the angular and spatial
//! networks, enhance, run baselines and evaluate.

mod commands;
mod config;
mod training;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lfsr_core::{Baseline, Error, Result};

use commands::{LayoutArg, Mode};
use config::ExperimentConfig;
use training::{RunOptions, SweepAxis, Target};

#[derive(Debug, Parser)]
#[command(name = "lfsr", version, about = "Light-field angular and spatial super-resolution")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a container and print its shape.
    Ingest { path: PathBuf },
    /// Derive the low-resolution training and test fields.
    Prepare,
    /// Train the angular networks or selected spatial networks.
    Train {
        #[arg(value_enum)]
        target: Target,
        /// Spatial perspectives as `u,v`, or `all` / `middle`.
        #[arg(long, num_args = 1..)]
        keys: Vec<String>,
        /// Continue from the checkpoints under `<out>/checkpoints`.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Model directory (default `<out>/models`).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Enhance a container with trained models.
    Enhance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Keep the known angular samples in the upsampled lenslets.
        #[arg(long)]
        copy_through: bool,
        #[arg(long, value_enum, default_value = "views")]
        layout: LayoutArg,
    },
    /// Upsample a container with a non-learned method.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// bicubic-resize, bicubic-interp or nearest.
        #[arg(long)]
        method: String,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "views")]
        layout: LayoutArg,
    },
    /// Score test containers against references (pairs matched by order).
    Evaluate {
        #[arg(long, required = true)]
        reference: Vec<PathBuf>,
        #[arg(long, required = true)]
        test: Vec<PathBuf>,
        #[arg(long, default_value = "lfsr")]
        method: String,
        /// Report path without extension (default `<out>/reports/<method>`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train architecture variants and log held-out PSNR against steps.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_enum, default_value = "angular")]
        target: Target,
        /// Spatial perspective `u,v` (spatial target only).
        #[arg(long, default_value = "0,0")]
        key: String,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let cfg = cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads {n}: {e}")))?;
    }
    let cfg = effective_config(&cli)?;
    if cli.print_effective_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given; see `lfsr --help`".into()));
    };
    let default_models = commands::models_dir(&cfg.out);
    match command {
        Command::Ingest { path } => {
            println!("{}", commands::to_json(&commands::ingest(&path)?).trim_end());
        }
        Command::Prepare => {
            let manifest = commands::prepare(&cfg)?;
            for f in &manifest.fields {
                println!(
                    "{} [{}]: {}x{} A={} -> spatial_low, angular_low",
                    f.name, f.split, f.ground_truth.height, f.ground_truth.width, f.ground_truth.angular
                );
            }
        }
        Command::Train {
            target,
            keys,
            resume,
            checkpoint_every,
            models,
        } => {
            let models = models.unwrap_or(default_models);
            let opts = RunOptions {
                resume,
                checkpoint_every,
            };
            let lines = match target {
                Target::Angular => {
                    if !keys.is_empty() {
                        return Err(Error::Config("--keys applies to spatial training only".into()));
                    }
                    training::train_angular(&cfg, &models, opts)?
                }
                Target::Spatial => training::train_spatial(&cfg, &keys, &models, opts)?,
            };
            for l in lines {
                println!("{l}");
            }
        }
        Command::Enhance {
            input,
            output,
            mode,
            models,
            copy_through,
            layout,
        } => {
            let models = models.unwrap_or(default_models);
            let meta = commands::enhance(&input, &models, mode, copy_through, &output, layout.into())?;
            println!(
                "{}: {}x{} A={} channels={}",
                output.display(),
                meta.height,
                meta.width,
                meta.angular,
                meta.channels
            );
        }
        Command::Baseline {
            input,
            output,
            method,
            mode,
            layout,
        } => {
            let method: Baseline = method.parse()?;
            let meta = commands::baseline(&input, method, mode, &output, layout.into())?;
            println!(
                "{} ({method}): {}x{} A={} channels={}",
                output.display(),
                meta.height,
                meta.width,
                meta.angular,
                meta.channels
            );
        }
        Command::Evaluate {
            reference,
            test,
            method,
            report,
        } => {
            if reference.len() != test.len() {
                return Err(Error::Config(format!(
                    "{} --reference but {} --test paths",
                    reference.len(),
                    test.len()
                )));
            }
            let pairs: Vec<_> = reference.into_iter().zip(test).collect();
            let r = commands::evaluate(&cfg, &pairs, &method)?;
            let stem = report.unwrap_or_else(|| cfg.out.join("reports").join(&method));
            commands::write_report(&r, &stem)?;
            print!("{}", r.to_table());
        }
        Command::Sweep {
            axis,
            target,
            key,
            channel,
        } => {
            let k = training::parse_keys(&[key], 0)?;
            let key = *k.first().ok_or_else(|| Error::Config("--key needs u,v".into()))?;
            let csv = training::sweep(&cfg, axis, target, key, channel)?;
            let name = match axis {
                SweepAxis::FilterSize => "filter_size",
                SweepAxis::Depth => "depth",
            };
            let target_name = match target {
                Target::Angular => "angular",
                Target::Spatial => "spatial",
            };
            let path = cfg.out.join("sweeps").join(format!("{name}_{target_name}.csv"));
            commands::write_text(&path, &csv)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "shape" => 3,
        "data" => 4,
        "model" => 5,
        "divergence" => 6,
        _ => 7,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
