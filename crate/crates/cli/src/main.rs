use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparsekit::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use sparsekit::distribution::compute_distribution;
use sparsekit::engine::SparsityState;
use sparsekit::harness::{run, write_csv_file, CompareMatrix, ExperimentConfig, RunOptions};
use sparsekit::mask::{sparsity_summary, SparsitySummary};
use sparsekit::prelude::*;

#[derive(Parser)]
#[command(
    name = "sparsekit",
    version,
    about = "Pruning and sparse-training experiments on small MLPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment; prints one JSON line per evaluation.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Stop (and checkpoint) after this many steps.
        #[arg(long)]
        stop_at: Option<u64>,
        /// Continue from a checkpoint of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Prune a checkpoint's parameters in one shot and save the result.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "mag")]
        algorithm: AlgorithmKind,
        /// Target sparsity; implied by an N:M structure when omitted.
        #[arg(long)]
        sparsity: Option<f64>,
        /// `unstructured`, `N:M` or `HxW`.
        #[arg(long, default_value = "unstructured")]
        structure: StructureSpec,
        /// `uniform` or `erk`.
        #[arg(long, default_value = "uniform")]
        distribution: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to `<checkpoint>.pruned`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-layer and total sparsity of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Emit the summary as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run an algorithm × sparsity × seed grid and write a CSV.
    Compare {
        #[arg(long)]
        config_matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            stop_at,
            resume,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run(
                &cfg,
                &RunOptions {
                    stop_at,
                    resume_from: resume,
                },
            )?;
            let mut stdout = std::io::stdout().lock();
            for r in &out.records {
                writeln!(stdout, "{}", r.to_json_line())?;
            }
            log::info!("finished at step {}", out.state.step);
            Ok(())
        }
        Command::Prune {
            checkpoint,
            algorithm,
            sparsity,
            structure,
            distribution,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| sibling(&checkpoint, "pruned"));
            prune(&checkpoint, algorithm, sparsity, structure, &distribution, seed, &out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Inspect { checkpoint, json } => {
            let summary = sparsity_summary(&load_checkpoint(&checkpoint)?.state.masks);
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", table(&summary));
            }
            Ok(())
        }
        Command::Compare { config_matrix, out } => {
            let text = std::fs::read_to_string(&config_matrix)?;
            let matrix: CompareMatrix = serde_json::from_str(&text)?;
            let cells = matrix.run()?;
            write_csv_file(&matrix, &cells, &out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{suffix}"));
    dir.with_file_name(name)
}

fn prune(
    checkpoint: &Path,
    algorithm: AlgorithmKind,
    sparsity: Option<f64>,
    structure: StructureSpec,
    distribution: &str,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let params = ckpt
        .params
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no parameters to prune", checkpoint.display())))?;
    let sparsity = sparsity
        .or_else(|| structure.implied_sparsity())
        .ok_or_else(|| Error::Argument("--sparsity is required unless the structure is N:M".into()))?;
    let dist = match distribution {
        "uniform" => DistributionSpec::uniform(sparsity),
        "erk" => DistributionSpec::erk(sparsity),
        other => return Err(Error::Argument(format!("unknown distribution `{other}`"))),
    };
    let cfg = UpdaterConfig::new(algorithm, dist.clone(), ScheduleConfig::no_update(sparsity))
        .with_structure(structure)
        .with_seed(seed);
    let updater = SparsityUpdater::new(cfg.clone())?;
    let masks = updater.instant_masks(&params)?;
    let pruned = masks.apply(&params)?;
    let state = SparsityState {
        per_layer_targets: compute_distribution(&dist, &params)?,
        masks,
        ..ckpt.state
    };
    let saved = Checkpoint {
        state,
        params: Some(pruned),
        config: Some(serde_json::to_value(&cfg)?),
        metadata: serde_json::json!({ "pruned_from": checkpoint.display().to_string() }),
    };
    save_checkpoint(out, &saved)
}

fn table(summary: &SparsitySummary) -> String {
    let width = summary
        .layers
        .keys()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max("total (masked)".len());
    let mut s = format!(
        "{:<width$}  {:>10}  {:>10}  {:>8}\n",
        "layer", "nonzeros", "size", "sparsity"
    );
    let mut row = |name: &str, c: &sparsekit::mask::SparsityCount| {
        s.push_str(&format!(
            "{name:<width$}  {:>10}  {:>10}  {:>8.4}\n",
            c.nonzeros, c.size, c.sparsity
        ));
    };
    for (path, c) in &summary.layers {
        row(path, c);
    }
    row("total (masked)", &summary.masked);
    row("total", &summary.total);
    s
}
