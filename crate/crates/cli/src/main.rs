use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fadingmem::WeightRule;
use fadingmem_cli::acceptance::{Acceptance, AcceptanceConfig, CRITERIA};
use fadingmem_cli::config::{ExperimentConfig, ExperimentKind};
use fadingmem_cli::harness::{invariant_for_eta, run_experiment, RunOutput};
use fadingmem_cli::output::{write_bytes, write_json};
use fadingmem_cli::CliError;

#[derive(Parser)]
#[command(
    name = "fadingmem",
    version,
    about = "Reinforcement with fading memories: simulation and limit theory"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Added to every seed in the config.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the config's instance once per seed, ignoring sweep grids.
    Simulate,
    /// Integrate the fluid ODE.
    Fluid,
    /// Write the invariant states of the config's instance as JSON.
    Invariant,
    /// Steady-state sweep over the config's grids.
    Sweep,
    /// Stochastic paths next to the fluid solution.
    Trajectories,
    /// Steady-state sweep over lifespan distributions.
    Lifespan,
    /// Invariant states across polynomial exponents.
    Eta,
    /// Conditional snapshot at update points.
    Snapshot,
    /// Limiting choice probabilities and rewards.
    Limits,
    /// Run the acceptance suite.
    Accept {
        /// Print the criteria without running them.
        #[arg(long)]
        list: bool,
        /// Run only these criteria, e.g. `--only A1 --only A6`.
        #[arg(long)]
        only: Vec<String>,
    },
}

fn load(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.kind = kind;
    cfg.offset_seeds(cli.seed_offset);
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_output(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    for a in &out.artifacts {
        let path = dir.join(&a.name);
        write_bytes(&path, &a.bytes)?;
        log::info!("wrote {}", path.display());
    }
    if !out.failures.is_empty() {
        log::warn!("{} cells failed; see failures.csv", out.failures.len());
    }
    Ok(())
}

fn experiment(cli: &Cli, kind: ExperimentKind) -> Result<ExitCode, CliError> {
    let mut cfg = load(cli, kind)?;
    if matches!(cli.command, Command::Simulate) {
        cfg.sweep.beta.clear();
        cfg.sweep.m.clear();
        cfg.sweep.alpha0.clear();
    }
    cfg.validate()?;
    let out = run_experiment(&cfg, cli.threads)?;
    write_output(&out_dir(cli, Some(&cfg)), &out)?;
    Ok(ExitCode::SUCCESS)
}

fn invariant(cli: &Cli) -> Result<ExitCode, CliError> {
    let cfg = load(cli, ExperimentKind::Limits)?;
    let inst = cfg.scaled_instance()?;
    let eta = match inst.weight {
        WeightRule::Linear => 1.0,
        WeightRule::Polynomial { eta } => eta,
        WeightRule::Exponential { .. } => {
            return Err(CliError::Config(
                "no invariant-state solver for the exponential rule".into(),
            ))
        }
    };
    let report = invariant_for_eta(&inst, eta)?;
    write_json(&out_dir(cli, Some(&cfg)).join("invariant.json"), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn accept(cli: &Cli, list: bool, only: &[String]) -> Result<ExitCode, CliError> {
    let mut stdout = std::io::stdout();
    if list {
        for (id, what) in CRITERIA {
            writeln!(stdout, "{id:<4} {what}")?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    let mut cfg = match &cli.config {
        Some(path) => AcceptanceConfig::load(path)?,
        None => AcceptanceConfig::builtin(),
    };
    cfg.offset_seeds(cli.seed_offset);
    let suite = Acceptance::new(cfg);
    let ids: Vec<&str> = if only.is_empty() {
        CRITERIA.iter().map(|(id, _)| *id).collect()
    } else {
        only.iter().map(String::as_str).collect()
    };
    let run = || {
        ids.iter()
            .map(|id| {
                let r = suite.run(id);
                eprintln!("{}", r.line());
                r
            })
            .collect::<Vec<_>>()
    };
    let results = fadingmem_cli::harness::with_threads(cli.threads, run)?;
    write_json(&out_dir(cli, None).join("acceptance.json"), &results)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    writeln!(stdout, "{} passed, {failed} failed", results.len() - failed)?;
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn dispatch(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Simulate | Command::Sweep => experiment(cli, ExperimentKind::SteadySweep),
        Command::Fluid => experiment(cli, ExperimentKind::Fluid),
        Command::Invariant => invariant(cli),
        Command::Trajectories => experiment(cli, ExperimentKind::Trajectories),
        Command::Lifespan => experiment(cli, ExperimentKind::LifespanStudy),
        Command::Eta => experiment(cli, ExperimentKind::EtaStudy),
        Command::Snapshot => experiment(cli, ExperimentKind::DeficientSnapshot),
        Command::Limits => experiment(cli, ExperimentKind::Limits),
        Command::Accept { list, only } => accept(cli, *list, only),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
