use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridsynth_core::config::RunConfig;
use gridsynth_core::fixture::write_fixture;
use gridsynth_core::pipeline::{read_checkpoint, run_pipeline, write_outputs, Inputs, PipelineState, Stage};
use gridsynth_core::{GridError, Result};

#[derive(Parser, Debug)]
#[command(name = "gridsynth", version, about = "Synthesize a geographically grounded, OPF-feasible transmission grid")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for per-stage checkpoints.
    #[arg(long, global = true)]
    checkpoint_dir: Option<PathBuf>,
    /// Directory for the case, traces and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Runs every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validates the input dataset.
    Ingest,
    /// Builds buses and branches from line geometry.
    Topology,
    /// Places loads, generator costs and reactive limits.
    Assign,
    /// Selects scenario hours and builds their injections.
    Scenarios,
    /// Initializes line parameters, then sizes lines against the scenarios.
    Size,
    /// Places synchronous condensers and settles line ratings.
    Reactive,
    /// Runs DC OPF and the AC check over the evaluation hours.
    Evaluate,
    /// Writes outputs from a checkpoint.
    Export {
        /// Checkpoint to export; the latest one present when omitted.
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Runs the stages in order.
    Pipeline {
        /// First stage; earlier stages are read from the checkpoint directory.
        #[arg(long, default_value = "ingest")]
        stage: Stage,
        /// Last stage.
        #[arg(long, default_value = "metrics")]
        until: Stage,
    },
    /// Writes the bundled 30-substation fixture and its config.
    Fixture {
        /// Target directory.
        dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().ok_or_else(|| GridError::Validation("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    if cli.sequential {
        cfg.parallel = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_range(cli: &Cli, from: Stage, until: Stage) -> Result<()> {
    let cfg = load_config(cli)?;
    let inputs = Inputs::load(&cfg.inputs, &cfg)?;
    let state = run_pipeline(&cfg, &inputs, cli.checkpoint_dir.as_deref(), from, until)?;
    report(&state, &cfg, &cli.out)
}

fn report(state: &PipelineState, cfg: &RunConfig, out: &Path) -> Result<()> {
    let written = write_outputs(state, cfg, out)?;
    if let Some(m) = &state.model {
        println!("model: {} buses, {} branches ({} lines), {} generators, {} condensers", m.n_buses(), m.branches.len(), m.n_lines(), m.generators.len(), m.condensers.len());
    }
    if let Some(t) = &state.sizing {
        println!("sizing: {} iterations", t.iterations.len());
    }
    if let Some(t) = &state.reactive {
        println!("reactive: {} condensers on {} buses, {} lines doubled", t.final_active, t.n_buses, t.doubled_lines);
    }
    if let Some(r) = &state.report {
        println!("evaluation: {}/{} hours feasible", r.summary.feasible_hours, r.summary.hours);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn latest_checkpoint(dir: &Path) -> Result<PipelineState> {
    for stage in Stage::ALL.into_iter().rev() {
        if gridsynth_core::pipeline::checkpoint_path(dir, stage).exists() {
            return read_checkpoint(dir, stage);
        }
    }
    Err(GridError::Validation(format!("no checkpoints in {}", dir.display())))
}

fn run(cli: &Cli) -> Result<()> {
    let single = |stage: Stage| run_range(cli, stage, stage);
    match &cli.command {
        Command::Ingest => single(Stage::Ingest),
        Command::Topology => single(Stage::Topology),
        Command::Assign => single(Stage::Assign),
        Command::Scenarios => single(Stage::Scenarios),
        Command::Size => run_range(cli, Stage::Lineparams, Stage::Sizing),
        Command::Reactive => single(Stage::Reactive),
        Command::Evaluate => single(Stage::Metrics),
        Command::Pipeline { stage, until } => run_range(cli, *stage, *until),
        Command::Export { stage } => {
            let cfg = load_config(cli)?;
            let dir = cli.checkpoint_dir.as_deref().ok_or_else(|| GridError::Validation("export needs --checkpoint-dir".into()))?;
            let state = match stage {
                Some(s) => read_checkpoint(dir, *s)?,
                None => latest_checkpoint(dir)?,
            };
            report(&state, &cfg, &cli.out)
        }
        Command::Fixture { dir } => {
            write_fixture(dir)?;
            println!("wrote fixture to {}", dir.display());
            println!("run: gridsynth --config {} pipeline", dir.join("config.toml").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
