//! Command-line driver: validation suites, CMC solves, foliation assembly
//! and checks, and exports, as reproducible runs.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::Invocation;

#[derive(Parser)]
#[command(
    name = "cmcfol",
    version,
    about = "Constant-mean-curvature surfaces in hyperbolic 3-space by envelopes of horospheres"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key-value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Seed for the randomized property suites (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// 0 = errors only, 1 = normal, 2 = per-step detail.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=2))]
    verbosity: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full invariant suite and emit a pass/fail table.
    Validate(Common),
    /// Continuation run: solve CMC leaves across the configured H range.
    Solve(Common),
    /// Solve, assemble the foliation, and verify its properties.
    Foliate(Common),
    /// Export OBJ surfaces and diagnostic tables from a completed run.
    Export(Common),
    /// Summarize a completed run directory.
    Report(Common),
}

fn main() {
    let cli = Cli::parse();
    let (cmd, common): (fn(&Invocation) -> i32, Common) = match cli.command {
        Command::Validate(c) => (commands::cmd_validate, c),
        Command::Solve(c) => (commands::cmd_solve, c),
        Command::Foliate(c) => (commands::cmd_foliate, c),
        Command::Export(c) => (commands::cmd_export, c),
        Command::Report(c) => (commands::cmd_report, c),
    };
    let inv = Invocation {
        config_path: common.config,
        out_dir: common.out,
        seed: common.seed,
        verbosity: common.verbosity,
    };
    std::process::exit(cmd(&inv));
}
