use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qmarl_cli::*;
use qmarl_core::config::ExperimentConfig;
use qmarl_core::trainer::LearnerKind;
use qmarl_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "qmarl",
    version,
    about = "Quantum multi-agent actor-critic for UAV mobile access"
)]
struct Cli {
    /// TOML experiment config; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.epochs=300`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of consecutive seeds to run, starting at the run seed.
    #[arg(long, global = true, default_value_t = 1)]
    seeds: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the quantum actors and critic.
    Train,
    /// Greedy rollouts of a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `train.infer_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Uniform random joint actions.
    BaselineRandom {
        /// Defaults to `train.epochs`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Same training loop with MLP actors and critic.
    BaselineClassical,
    /// Print the embedded 802.11ad MCS table as CSV.
    DumpMcsTable,
    /// Finite-difference check of every gradient path, plus parameter counts.
    VerifyGradients,
    /// Print the fully resolved config as TOML.
    PrintConfig,
    /// Moving-average series from metrics CSV files.
    ExportPlotData {
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn seed_dir(base: &Path, seed: u64, many: bool) -> PathBuf {
    if many {
        base.join(format!("seed-{seed}"))
    } else {
        base.to_path_buf()
    }
}

fn per_seed(
    cli: &Cli,
    cfg: &ExperimentConfig,
    command: &str,
    mut run: impl FnMut(&ExperimentConfig, &Path) -> Result<RunSummary>,
) -> Result<()> {
    let base = resolve_out_dir(cli.out.as_deref(), cfg);
    let many = cli.seeds > 1;
    let mut runs = Vec::new();
    for k in 0..cli.seeds.max(1) {
        let mut c = cfg.clone();
        c.seed = cfg.seed + k;
        let dir = seed_dir(&base, c.seed, many);
        let s = run(&c, &dir)?;
        println!(
            "{command} seed {}: reward {:.4} support {:.4} qos {:.4} -> {}",
            s.seed,
            s.summary.reward_mean,
            s.summary.support_rate_mean,
            s.summary.qos_total_mean,
            dir.display()
        );
        runs.push(s);
    }
    if many {
        let merged = merge_summaries(command, runs);
        write_merged(&base, &merged)?;
        println!(
            "{command} over {} seeds: reward {:.4} +- {:.4}",
            merged.seeds.len(),
            merged.reward_mean,
            merged.reward_std
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::ExportPlotData { window, files } = &cli.command {
        let text = export_plot_data(files, *window)?;
        match &cli.out {
            Some(p) => write_atomic(p, text.as_bytes())?,
            None => print!("{text}"),
        }
        return Ok(());
    }
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Train => per_seed(cli, &cfg, "train", |c, d| {
            run_train(c, LearnerKind::Quantum, d).map(|(_, s)| s)
        }),
        Command::BaselineClassical => per_seed(cli, &cfg, "baseline-classical", |c, d| {
            run_train(c, LearnerKind::Classical, d).map(|(_, s)| s)
        }),
        Command::Infer {
            checkpoint,
            episodes,
        } => {
            let n = episodes.unwrap_or(cfg.train.infer_episodes);
            per_seed(cli, &cfg, "infer", |c, d| run_infer(c, checkpoint, n, d))
        }
        Command::BaselineRandom { episodes } => {
            let n = episodes.unwrap_or(cfg.train.epochs);
            per_seed(cli, &cfg, "baseline-random", |c, d| run_random(c, n, d))
        }
        Command::DumpMcsTable => {
            print!("{}", mcs_table_csv()?);
            Ok(())
        }
        Command::VerifyGradients => {
            let out = run_verify_gradients(&cfg)?;
            let r = &out.report;
            let p = &out.params;
            println!(
                "circuits {} mlps {} loss chains {}",
                r.circuits, r.mlps, r.loss_checks
            );
            println!("max |shift - fd| quantum   {:.3e}", r.max_err_quantum);
            println!("max |backprop - fd| mlp    {:.3e}", r.max_err_classical);
            println!("max |chain - fd| losses    {:.3e}", r.max_err_losses);
            println!(
                "quantum parameters   {} ({} per actor, {} critic)",
                p.quantum_total, p.quantum_actor, p.quantum_critic
            );
            println!(
                "classical parameters {} ({} per actor, {} critic)",
                p.classical_total, p.classical_actor, p.classical_critic
            );
            if r.passed() {
                println!("PASS tolerance {:.0e}", r.tolerance);
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "gradient mismatch {:.3e} exceeds {:.0e}",
                    r.max_err(),
                    r.tolerance
                )))
            }
        }
        Command::PrintConfig => {
            print!("{}", render_config(&cfg)?);
            Ok(())
        }
        Command::ExportPlotData { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
