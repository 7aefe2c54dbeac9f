use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mdeopt::models::EnvTag;
use mdeopt_harness::commands;
use mdeopt_harness::workspace::{write_manifest, Workspace};
use mdeopt_harness::{Baseline, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mdeopt", version, about = "Multi-fidelity placement optimization experiments")]
struct Cli {
    /// Experiment configuration (JSON); defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Experiment directory holding data, checkpoints and results.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    OnlyH,
    OnlyL,
    OnlyS,
    CombinedS2s,
    CombinedS2r,
}

#[derive(Subcommand)]
enum Command {
    /// Generate source and target datasets.
    GenData,
    /// Train the learned residual model.
    TrainLearned,
    /// Train sim-to-sim deviation estimators.
    TrainMdeS2s,
    /// Fine-tune the estimators on target data.
    FinetuneMde,
    /// Optimize placement tasks with one method.
    Optimize {
        #[arg(long, value_enum, default_value = "combined-s2s")]
        method: Method,
        #[arg(long, value_enum, default_value = "source")]
        env: Env,
        /// Number of tasks; defaults to the configuration's.
        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Heightmap RMSE and latency of every predictive model.
    EvalModels,
    /// Estimator accuracy and calibration.
    EvalMdes,
    /// All baselines on source and target tasks.
    RunBaselines,
    /// Fine-tuned versus from-scratch estimators over target sample counts.
    EfficiencyCurve,
    /// Charts and summary from the stored results.
    Report,
    /// Every step from gen-data to report.
    All,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ws = Workspace::new(&cli.out);
    std::fs::create_dir_all(&ws.root)?;
    std::fs::write(ws.root.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;

    let (name, files) = match cli.command {
        Command::GenData => ("gen-data", commands::gen_data(&cfg, &ws)?),
        Command::TrainLearned => ("train-learned", commands::train_learned(&cfg, &ws)?),
        Command::TrainMdeS2s => ("train-mde-s2s", commands::train_mde_s2s(&cfg, &ws)?),
        Command::FinetuneMde => ("finetune-mde", commands::finetune_mde(&cfg, &ws)?),
        Command::Optimize { method, env, tasks } => {
            if let Some(t) = tasks {
                cfg.eval.tasks = t;
                cfg.validate()?;
            }
            let baseline = match method {
                Method::OnlyH => Baseline::OnlyH,
                Method::OnlyL => Baseline::OnlyL,
                Method::OnlyS => Baseline::OnlyS,
                Method::CombinedS2s => Baseline::CombinedS2s,
                Method::CombinedS2r => Baseline::CombinedS2r,
            };
            let env = match env {
                Env::Source => EnvTag::Source,
                Env::Target => EnvTag::Target,
            };
            ("optimize", commands::optimize(&cfg, &ws, baseline, env)?)
        }
        Command::EvalModels => ("eval-models", commands::eval_models(&cfg, &ws)?),
        Command::EvalMdes => ("eval-mdes", commands::eval_mdes(&cfg, &ws)?),
        Command::RunBaselines => ("run-baselines", commands::run_baselines(&cfg, &ws)?),
        Command::EfficiencyCurve => ("efficiency-curve", commands::efficiency_curve(&cfg, &ws)?),
        Command::Report => ("report", commands::report(&cfg, &ws)?),
        Command::All => {
            let files = commands::run_all(&cfg, &ws)?;
            println!("wrote {} files under {}", files.len(), ws.root.display());
            return Ok(());
        }
    };
    let m = write_manifest(&ws, &cfg, name, &files)?;
    for f in &files {
        println!("{}", ws.relative(f));
    }
    println!("{}", ws.relative(&m));
    Ok(())
}
