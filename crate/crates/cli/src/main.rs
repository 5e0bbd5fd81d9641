use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use budgetlab_core::pipeline::{
    compare_runs, run_pipeline, stage_compress, stage_eval, stage_gen_data, stage_rl, stage_sft,
    ExperimentConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "budgetlab", version, about = "Budget-conditioned reasoning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared experiment-config knobs. Flags override the loaded file; the preset
/// (from either source) is re-applied so its field overrides always hold.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// Experiment config TOML; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Pipeline preset: bard, sft-full, no-contrastive, additive-reward,
    /// rl-direct, or bard-no-budget.
    #[arg(long)]
    preset: Option<String>,

    /// Master seed; every stage derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,

    /// Budgets sampled per trace during compression.
    #[arg(long, value_name = "K")]
    k_budgets: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml_path(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        let preset = self.preset.clone().unwrap_or_else(|| cfg.preset.clone());
        cfg = cfg.with_preset(&preset)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(k) = self.k_budgets {
            cfg.k_budgets = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate task pools and teacher traces into OUT/data.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Compress OUT/data/traces.jsonl into the budget-conditioned dataset.
    Compress {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Supervised training on the compressed dataset (or raw traces).
    Sft {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory; defaults to OUT/data.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Group-relative policy optimization from a checkpoint.
    Rl {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Starting checkpoint; defaults to OUT/sft/sft.ckpt.
        #[arg(long, value_name = "CKPT")]
        init: Option<PathBuf>,
        /// Dataset directory holding the task pools; defaults to OUT/data.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Budget-sweep evaluation of a run's final checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to score; defaults to the run's RL (or SFT) output.
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        /// Dataset directory holding the eval tasks; defaults to OUT/data.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also dump per-sample think lengths for plotting.
        #[arg(long)]
        plot_data: bool,
    },

    /// Run every stage of the preset in order, resuming where possible.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        plot_data: bool,
    },

    /// Per-budget accuracy/fidelity/score deltas between two finished runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Also write the table as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
}

fn with_data(mut cfg: ExperimentConfig, data: &Option<PathBuf>) -> ExperimentConfig {
    if let Some(d) = data {
        cfg.paths.data = Some(d.display().to_string());
    }
    cfg
}

fn report_artifacts(artifacts: &[PathBuf]) {
    for p in artifacts {
        println!("wrote {}", p.display());
    }
}

fn print_eval_summary(out: &Path) -> Result<()> {
    let csv = out.join("eval").join("eval_summary.csv");
    let text = std::fs::read_to_string(&csv)
        .with_context(|| format!("reading {}", csv.display()))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            report_artifacts(&stage_gen_data(&cfg, &out)?);
        }
        Command::Compress { cfg, out } => {
            let cfg = cfg.resolve()?;
            report_artifacts(&stage_compress(&cfg, &out)?);
        }
        Command::Sft { cfg, data, out } => {
            let cfg = with_data(cfg.resolve()?, &data);
            report_artifacts(&stage_sft(&cfg, &out)?);
        }
        Command::Rl {
            cfg,
            init,
            data,
            out,
        } => {
            let cfg = with_data(cfg.resolve()?, &data);
            report_artifacts(&stage_rl(&cfg, &out, init.as_deref())?);
        }
        Command::Eval {
            cfg,
            ckpt,
            data,
            out,
            plot_data,
        } => {
            let cfg = with_data(cfg.resolve()?, &data);
            report_artifacts(&stage_eval(&cfg, &out, ckpt.as_deref(), plot_data)?);
            print_eval_summary(&out)?;
        }
        Command::Run {
            cfg,
            out,
            plot_data,
        } => {
            let cfg = cfg.resolve()?;
            let ledger = run_pipeline(&cfg, &out, plot_data)?;
            println!("run {} preset={} complete", ledger.run_id, ledger.preset);
            for (name, stage) in &ledger.stages {
                println!("  {name}: {:.1}s", stage.wall_clock_secs);
            }
            print_eval_summary(&out)?;
        }
        Command::Compare { run_a, run_b, csv } => {
            let cmp = compare_runs(&run_a, &run_b)?;
            print!("{}", cmp.render_text());
            if let Some(path) = csv {
                cmp.write_csv(&path)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
