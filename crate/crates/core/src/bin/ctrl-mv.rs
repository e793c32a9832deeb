use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ctrl_mv::experiments::{self, Command, ExperimentConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Convergence,
    Regret,
    Tradeoff,
    Backtest,
    Sensitivity,
    Pretrain,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Convergence => Command::Convergence,
            Cmd::Regret => Command::Regret,
            Cmd::Tradeoff => Command::Tradeoff,
            Cmd::Backtest => Command::Backtest,
            Cmd::Sensitivity => Command::Sensitivity,
            Cmd::Pretrain => Command::Pretrain,
        }
    }
}

/// Continuous-time RL for mean-variance portfolio selection: experiments and backtests.
#[derive(Debug, Parser)]
#[command(name = "ctrl-mv", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON config with keys mirroring the experiment fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory; CTRL_MV_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: Args) -> ctrl_mv::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.episodes.is_some() {
        cfg.episodes = args.episodes;
    }
    if args.replications.is_some() {
        cfg.replications = args.replications;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    if let Some(o) = std::env::var_os("CTRL_MV_OUT").filter(|o| !o.is_empty()) {
        cfg.out = PathBuf::from(o);
    }
    let manifest = experiments::execute(args.command.into(), &cfg, args.config.as_deref())?;
    for f in &manifest.outputs {
        println!("{}  {}", f.sha256, cfg.out.join(&f.path).display());
    }
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
