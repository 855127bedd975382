use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use convpoint_cli::commands::{self, load_checkpoint};
use convpoint_cli::config::DATA_ROOT_VAR;
use convpoint_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "convpoint", version, about = "Point-cloud convolution networks: train, evaluate, segment scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to write.
        #[arg(long, default_value = "model.cvpt")]
        checkpoint: PathBuf,
        /// Per-epoch metrics CSV (epoch, loss, oa).
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        /// Data root for relative dataset paths.
        #[arg(long, env = DATA_ROOT_VAR)]
        data_root: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; prints samplings, OA, AA and mIoU as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the run configuration stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samplings: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = DATA_ROOT_VAR)]
        data_root: Option<PathBuf>,
    },
    /// Segment a scene and write it with a predicted label column.
    PredictScene {
        #[arg(long)]
        checkpoint: PathBuf,
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samplings: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write weighting-function and filter grids of a 2-d layer as CSV.
    DumpFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Kernel elements whose weighting response is dumped.
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3])]
        elements: Vec<usize>,
        /// Output channels whose composed filter is dumped.
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3])]
        channels: Vec<usize>,
        /// Output directory.
        #[arg(long, default_value = "filters")]
        out: PathBuf,
    },
    /// Time k-NN search and a convolution layer.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096])]
        points: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16])]
        neighbors: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn set_data_root(root: Option<PathBuf>) {
    if let Some(root) = root {
        std::env::set_var(DATA_ROOT_VAR, root);
    }
}

/// Configuration from `--config`, else the one stored in the checkpoint.
fn run_config(explicit: Option<&Path>, stored: Option<RunConfig>) -> Result<RunConfig, CliError> {
    match explicit {
        Some(p) => RunConfig::load(p),
        None => stored.ok_or_else(|| CliError::Config("checkpoint carries no run configuration; pass --config".into())),
    }
}

fn apply_overrides(config: &mut RunConfig, samplings: Option<usize>, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = samplings {
        config.samplings = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            config,
            seed,
            checkpoint,
            out,
            data_root,
        } => {
            set_data_root(data_root);
            let mut config = RunConfig::load(&config)?;
            apply_overrides(&mut config, None, seed)?;
            let outcome = commands::cmd_train(&config, &checkpoint, &out)?;
            if let Some(last) = outcome.epochs.last() {
                println!("epochs,loss,oa\n{},{},{}", last.epoch + 1, last.loss, last.oa);
            }
        }
        Command::Eval {
            checkpoint,
            config,
            samplings,
            seed,
            out,
            data_root,
        } => {
            set_data_root(data_root);
            let (network, stored) = load_checkpoint(&checkpoint)?;
            let mut config = run_config(config.as_deref(), stored)?;
            apply_overrides(&mut config, samplings, seed)?;
            let metrics = commands::cmd_eval(&network, &config)?;
            commands::write_metrics_report(output(out.as_deref())?, config.samplings, &metrics)?;
        }
        Command::PredictScene {
            checkpoint,
            scene,
            out,
            config,
            samplings,
            seed,
        } => {
            let (network, stored) = load_checkpoint(&checkpoint)?;
            let mut config = run_config(config.as_deref(), stored)?;
            apply_overrides(&mut config, samplings, seed)?;
            let report = commands::cmd_predict_scene(&network, &config, &scene, &out)?;
            let scored = report.prediction.scored.iter().filter(|&&s| s).count();
            println!("points,columns,scored,accuracy");
            println!(
                "{},{},{},{}",
                report.prediction.labels.len(),
                report.prediction.columns,
                scored,
                report.accuracy.map_or(String::new(), |a| a.to_string())
            );
        }
        Command::DumpFilters {
            checkpoint,
            layer,
            resolution,
            elements,
            channels,
            out,
        } => {
            let (network, _) = load_checkpoint(&checkpoint)?;
            for path in commands::cmd_dump_filters(&network, layer, resolution, &elements, &channels, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Bench {
            points,
            neighbors,
            seed,
            out,
        } => {
            let rows = commands::cmd_bench(&points, &neighbors, seed)?;
            commands::write_bench_csv(output(out.as_deref())?, &rows)?;
        }
    }
    Ok(())
}
