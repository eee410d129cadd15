use std::path::PathBuf;
use std::process::ExitCode;

use chest::pipeline::{parse_value, Pipeline, RunConfig, Stage, StageOutcome};
use chest::Error;
use clap::{Parser, Subcommand};
use log::{error, info};

#[derive(Parser)]
#[command(name = "chest", version, about = "Curriculum pre-trained subgraph Transformer for top-N recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (flat JSON with dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override one config key, e.g. `train.advanced_epochs=3`. Repeatable.
    #[arg(long = "stage-override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load the network and split interactions.
    Ingest,
    /// Train the node vectors used for path ranking.
    Embed,
    /// Sample the subgraph of every training interaction.
    BuildSubgraphs,
    /// Run the pre-training courses.
    Pretrain,
    /// Fine-tune on recommendation with early stopping.
    Finetune,
    /// Rank held-out items and report HR/NDCG.
    Evaluate,
    /// Train and evaluate every ablation variant.
    Ablate,
    /// Every stage from ingest through evaluate.
    All,
    /// Write metrics.csv from completed stages.
    Export,
    /// Print the effective configuration.
    ShowConfig,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::Json(_) | Error::Parse { .. } => 2,
        Error::Dependency(_) => 3,
        Error::NumericFault(_) => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> chest::Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut overrides = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), parse_value(v.trim())));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out".into(), serde_json::json!(out)));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), serde_json::json!(seed)));
    }
    base.with_overrides(&overrides)
}

fn export(p: &Pipeline) -> chest::Result<()> {
    let (_, table) = p.export_metrics()?;
    println!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> chest::Result<()> {
    let cfg = load_config(cli)?;
    if let Command::ShowConfig = cli.command {
        cfg.check()?;
        print!("{}", cfg.to_json());
        println!("# hash {}", cfg.hash());
        return Ok(());
    }
    let mut p = Pipeline::open(cfg)?;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Embed => Stage::Embed,
        Command::BuildSubgraphs => Stage::BuildSubgraphs,
        Command::Pretrain => Stage::Pretrain,
        Command::Finetune => Stage::Finetune,
        Command::Evaluate => Stage::Evaluate,
        Command::Ablate => Stage::Ablate,
        Command::All => {
            for (s, outcome) in p.run_all()? {
                if outcome == StageOutcome::UpToDate {
                    info!("{s}: up to date");
                }
            }
            return export(&p);
        }
        Command::Export => return export(&p),
        Command::ShowConfig => unreachable!(),
    };
    p.run_stage(stage)?;
    if matches!(stage, Stage::Evaluate | Stage::Ablate) {
        export(&p)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
