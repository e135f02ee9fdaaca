use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use sparse_rep_cli::{commands, sweep, Context, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sparse-rep", version, about = "Sparse representation learning and Sarsa(0) control experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the number of control runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect transitions under the domain's data policy.
    GenData,
    /// Pretrain the representation network.
    TrainRep {
        /// Dataset file; defaults to OUT/dataset.bin, generated if missing.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint for another `train.epochs` epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run Sarsa(0) on the frozen representation or on tile coding.
    Control {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sparsity, overlap and heatmap tables for a representation.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Grid search over representation settings and step sizes.
    Sweep,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(runs) = cli.runs {
        config.runs = runs;
    }
    let ctx = Context::new(config, cli.out)?.with_parallel(cli.parallel);
    match cli.command {
        Command::GenData => {
            let s = commands::gen_data(&ctx)?;
            println!(
                "wrote {} ({} transitions, {} episodes)",
                ctx.dataset_path().display(),
                s.transitions,
                s.episodes
            );
        }
        Command::TrainRep { data, resume } => {
            let report = commands::train_rep(&ctx, data.as_deref(), resume.as_deref())?;
            if let Some(last) = report.history.last() {
                println!("epoch {}: mstde {:.6} penalty {:.6}", last.epoch, last.mstde, last.penalty);
            }
            println!("wrote {}", ctx.checkpoint_path().display());
        }
        Command::Control { checkpoint } => {
            let runs = commands::control(&ctx, checkpoint.as_deref())?;
            for (i, r) in runs.iter().enumerate() {
                println!(
                    "run {i}: final-{} mean return {:.1}, goal reached in {}/{} episodes",
                    commands::FINAL_EPISODES,
                    r.curve.final_mean_return(commands::FINAL_EPISODES),
                    r.curve.goals_reached(),
                    r.curve.len()
                );
            }
        }
        Command::Analyze { checkpoint } => {
            let a = commands::analyze(&ctx, checkpoint.as_deref())?;
            println!("mean instance sparsity {:.2}%", a.mean_instance_sparsity);
            println!("mean pairwise overlap {:.2}", a.mean_overlap);
        }
        Command::Sweep => {
            let report = sweep::sweep(&ctx)?;
            println!("{},mean_score,stderr", sweep::PointParams::HEADER.join(","));
            for s in report.summary.iter().take(5) {
                println!("{},{:.2},{:.2}", s.params.fields().join(","), s.score.mean, s.score.std_error);
            }
        }
    }
    Ok(())
}
