//! `dyson-edge` command-line entry point.

use clap::{Parser, Subcommand};
use dyson_edge::cli::run::{self, Manifest};
use dyson_edge::cli::{parse_config, RunConfig, RunContext, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "dyson-edge", version, about = "Edge simulations for beta Dyson Brownian motion")]
struct Cli {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `master_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "DYSON_EDGE_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
    /// Report errors as one JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run a β-DBM ensemble.
    Simulate,
    /// Solve the McKean-Vlasov equation along characteristics.
    Mkv,
    /// Solve the edge power series.
    Series,
    /// Rigidity and edge-bound checks on an ensemble.
    Rigidity,
    /// Mesoscopic fluctuations and the linear statistic.
    Clt,
    /// Edge statistic against the β-ensemble oracle.
    Tw,
    /// Shared-noise couplings across interpolating potentials.
    Interp,
    /// Every stage in turn.
    All,
}

/// Exit status for usage and configuration problems.
const USAGE: u8 = 2;

fn report(json: bool, kind: &str, message: &str) {
    if json {
        eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    } else {
        eprintln!("error: {message}");
    }
}

fn dispatch(cmd: Command, cfg: &RunConfig, ctx: &RunContext) -> Result<Vec<Manifest>, RunError> {
    let one = |m: Result<Manifest, RunError>| m.map(|m| vec![m]);
    match cmd {
        Command::Simulate => one(run::run_simulate(cfg, ctx)),
        Command::Mkv => one(run::run_mkv(cfg, ctx)),
        Command::Series => one(run::run_series(cfg, ctx)),
        Command::Rigidity => one(run::run_rigidity(cfg, ctx)),
        Command::Clt => one(run::run_clt(cfg, ctx)),
        Command::Tw => one(run::run_tw(cfg, ctx)),
        Command::Interp => one(run::run_interp(cfg, ctx)),
        Command::All => run::run_all(cfg, ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = &cli.config else {
        report(cli.json_errors, "usage", "missing required flag --config <FILE>");
        return ExitCode::from(USAGE);
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            report(cli.json_errors, "io", &format!("cannot read {}: {e}", path.display()));
            return ExitCode::from(USAGE);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(errs) => {
            if cli.json_errors {
                let list: Vec<String> = errs.0.iter().map(|e| e.to_string()).collect();
                eprintln!("{}", serde_json::json!({ "error": "config", "messages": list }));
            } else {
                for e in &errs.0 {
                    eprintln!("error: {e}");
                }
            }
            return ExitCode::from(USAGE);
        }
    };
    let ctx = RunContext::resolve(&cfg, cli.out.clone(), cli.seed, cli.workers, cli.quiet);
    match dispatch(cli.command, &cfg, &ctx) {
        Ok(manifests) => {
            let failed: usize = manifests.iter().map(|m| m.failures.len()).sum();
            if failed > 0 && !cli.quiet {
                eprintln!("{failed} trajectories failed; see the manifests");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(cli.json_errors, e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
