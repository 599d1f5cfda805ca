use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jumpmil_cli::{
    cmd_check, cmd_constants, cmd_converge, cmd_mesh, cmd_pilot, cmd_simulate, load_config, with_threads, CliError,
    CliResult, RunConfig,
};

#[derive(Parser)]
#[command(name = "jumpmil", version, about = "Milstein approximation experiments for jump-diffusion SDEs")]
struct Cli {
    /// Config file with [model], [intensity], [method], [mesh], [pilot], [mc], [run] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Rebuild the config from the header of an earlier artifact.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 forces deterministic sequential execution.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. --set mesh.n=[16,32,64].
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Reuse (or store) the pilot estimate in this file.
    #[arg(long, global = true)]
    pilot_cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Det,
    Fast,
}

#[derive(Subcommand)]
enum Command {
    /// Check jump commutativity and the supplied derivatives.
    Check,
    /// Write equidistant, pilot-optimal and merton-optimal meshes.
    Mesh,
    /// Estimate E𝒴(t) and the optimal density.
    Pilot,
    /// Run a convergence study.
    Converge,
    /// Print the asymptotic constants.
    Constants,
    /// Dump one simulated path and its approximation.
    Simulate,
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut file = load_config(cli.config.as_deref(), cli.replay.as_deref())?;
    for s in &cli.overrides {
        file.set(s)?;
    }
    if let Some(seed) = cli.seed {
        file.run.seed = seed;
    }
    if let Some(t) = cli.threads {
        file.run.threads = t;
    }
    if let Some(m) = cli.mode {
        file.run.mode = match m {
            ModeArg::Det => "det",
            ModeArg::Fast => "fast",
        }
        .into();
    }
    if let Some(out) = &cli.out {
        file.run.out = out.to_string_lossy().into_owned();
    }
    Ok(RunConfig::resolve(file)?)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let cache = cli.pilot_cache.as_deref();
    with_threads(cfg.threads, || {
        let stdout = io::stdout();
        let mut out = stdout.lock();
        let res = match cli.command {
            Command::Check => cmd_check(&cfg, &mut out),
            Command::Mesh => cmd_mesh(&cfg, cache, &mut out).map(drop),
            Command::Pilot => cmd_pilot(&cfg, cache, &mut out).map(drop),
            Command::Converge => cmd_converge(&cfg, cache, &mut out).map(drop),
            Command::Constants => cmd_constants(&cfg, cache, &mut out).map(drop),
            Command::Simulate => cmd_simulate(&cfg, cache, &mut out).map(drop),
        };
        out.flush().map_err(CliError::from).and(res)
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jumpmil: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
