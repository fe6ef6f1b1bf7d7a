#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use pcacal::{Error, Result};

use config::{KeyValues, RunConfig};

#[derive(Parser)]
#[command(name = "pcacal", version, about = "Emulate, calibrate and aggregate gridded ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (`key = value` lines)
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved plan and exit without writing anything
    #[arg(long)]
    dry_run: bool,
    /// Extra settings as `key=value`, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the emulator and discrepancy basis for one level
    Emulate(Common),
    /// Calibrate a fitted model against an observation
    Calibrate(Common),
    /// Aggregation or subsample study
    Study(Common),
    /// Hold-out validation of the emulator
    Cv(Common),
    /// Push calibrated draws through a response table
    Project(Common),
    /// Write the synthetic benchmark ensemble and observation
    Synth(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Emulate(c) => ("emulate", c),
            Command::Calibrate(c) => ("calibrate", c),
            Command::Study(c) => ("study", c),
            Command::Cv(c) => ("cv", c),
            Command::Project(c) => ("project", c),
            Command::Synth(c) => ("synth", c),
        }
    }
}

enum Failure {
    Validation(Error),
    Runtime(Error),
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut kv = match &common.config {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    };
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got `{s}`")))?;
        kv.set(k.trim(), v.trim().to_string());
    }
    if let Some(out) = &common.out {
        kv.set("out", out.display().to_string());
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed.to_string());
    }
    let cfg = RunConfig::from_kv(&mut kv)?;
    kv.finish()?;
    Ok(cfg)
}

fn execute(command: &str, common: &Common) -> std::result::Result<(), Failure> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Validation(Error::config("--threads", "must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(Error::InvalidInput(e.to_string())))?;
    }
    let cfg = load_config(common).map_err(Failure::Validation)?;
    let plan = commands::prepare(command, &cfg).map_err(Failure::Validation)?;
    if common.dry_run {
        for line in commands::describe(command, &plan, &cfg).map_err(Failure::Validation)? {
            println!("{line}");
        }
        return Ok(());
    }
    commands::run(plan, &cfg).map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, common) = cli.command.parts();
    info!("pcacal {command}");
    let (code, kind, err) = match execute(command, common) {
        Ok(()) => return ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => (2u8, "validation", e),
        Err(Failure::Runtime(e)) if e.is_numerical() => (3, "numerical", e),
        Err(Failure::Runtime(e)) => (1, "runtime", e),
    };
    let key = match &err {
        Error::Config { key, .. } => Some(key.clone()),
        _ => None,
    };
    let record = serde_json::json!({
        "error": kind,
        "command": command,
        "key": key,
        "message": err.to_string(),
        "exit_code": code,
    });
    eprintln!("{record}");
    ExitCode::from(code)
}
