use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracnehari::experiment::{describe, diagnostic, exit_code, run, ExperimentConfig, ExperimentKind};
use fracnehari::{Error, ThresholdSet};

#[derive(Parser)]
#[command(name = "fracnehari", version, about = "Nonlocal concave-convex experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every configuration key with its unit and default.
    Describe,
    /// Assemble the stiffness operator.
    Assemble(RunArgs),
    /// Threshold constants from the Sobolev estimate.
    Thresholds(RunArgs),
    /// Fibering roots and classes for random functions.
    FiberingReport(RunArgs),
    /// Positive solutions on both Nehari branches.
    SolvePositive(RunArgs),
    /// Continuation and sign-changing descent.
    SolveSignchanging(RunArgs),
    /// Sobolev estimate and bubble slope fits.
    BubbleAsymptotics(RunArgs),
    /// Level structure, radii and sphere checks.
    FountainLevels(RunArgs),
    /// Deflated search for several solutions.
    MultiSolve(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long)]
    quiet: bool,
}

fn thresholds_table(t: &ThresholdSet) -> String {
    [
        ("S estimate", t.s_estimate),
        ("|Omega|", t.omega_measure),
        ("tilde mu", t.tilde_mu),
        ("k", t.k_const),
        ("M", t.m_const),
        ("|k-M|/M", t.k_m_discrepancy),
        ("argmin g", t.g_argmin),
        ("min g", t.g_min),
        ("(s/N) S^(N/2s)", t.sobolev_level),
        ("compactness ceiling", t.compactness_ceiling),
    ]
    .iter()
    .map(|(k, v)| format!("{k:<22}{v:>24.16e}\n"))
    .collect()
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.kind = kind;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outputs = run(&cfg)?;
    let manifest = outputs.write(&dir, &cfg)?;
    if !args.quiet {
        if let Some(text) = outputs.get("thresholds.json") {
            let t: ThresholdSet = serde_json::from_str(text)?;
            print!("{}", thresholds_table(&t));
        }
        for a in &manifest.artifacts {
            println!("{}", dir.join(&a.file).display());
        }
        println!("{}", dir.join("manifest.json").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Describe => {
            print!("{}", describe());
            return ExitCode::SUCCESS;
        }
        Command::Assemble(a) => (ExperimentKind::Assemble, a),
        Command::Thresholds(a) => (ExperimentKind::Thresholds, a),
        Command::FiberingReport(a) => (ExperimentKind::FiberingReport, a),
        Command::SolvePositive(a) => (ExperimentKind::SolvePositive, a),
        Command::SolveSignchanging(a) => (ExperimentKind::SolveSignchanging, a),
        Command::BubbleAsymptotics(a) => (ExperimentKind::BubbleAsymptotics, a),
        Command::FountainLevels(a) => (ExperimentKind::FountainLevels, a),
        Command::MultiSolve(a) => (ExperimentKind::MultiSolve, a),
    };
    let mut logger = env_logger::Builder::new();
    if args.quiet {
        logger.filter_level(log::LevelFilter::Off);
    } else {
        logger.filter_level(log::LevelFilter::Warn).parse_default_env();
    }
    logger.init();
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
