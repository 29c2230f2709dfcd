//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for invalid configs,
//! arguments or input CSVs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::orchestrator::config::{apply_override, parse_override};
use crate::orchestrator::{run, BaselineMode, SimulationConfig, SimulationResult};
use crate::plot;
use crate::report::{config_hash, parse_rounds_csv, rounds_csv, RunManifest};

pub const SEED_ENV: &str = "FEDMESH_SEED";

#[derive(Debug, Parser)]
#[command(name = "fedmesh", version, about = "Hierarchical multi-edge federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write rounds.csv, events.jsonl and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dotted-path override, e.g. selection.capacity_k=10. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run several modes on the same data and seed and write compare.csv.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list of fedselect_me, fedavg_single, no_selection.
        #[arg(long, value_delimiter = ',', required = true)]
        modes: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Render SVG charts from a rounds.csv.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config, arguments or input file. Exit 2.
    Invalid(String),
    /// The simulation or artifact writing failed. Exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Invalid(m) => write!(f, "invalid input: {m}"),
            Self::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

/// Reads a config file, then applies the seed from the environment and the
/// `key=value` overrides, in that order. Overrides win.
pub fn load_config(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<SimulationConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| invalid(format!("{}: {e}", path.display())))?;
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{SEED_ENV}: `{s}` is not a nonnegative integer")))?;
        let seed = i64::try_from(seed).map_err(|_| invalid(format!("{SEED_ENV}: {seed} is too large")))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    for o in overrides {
        let (key, value) = parse_override(o).map_err(invalid)?;
        apply_override(&mut table, &key, value).map_err(invalid)?;
    }
    SimulationConfig::from_table(table).map_err(|e| match e {
        Error::Config(m) => CliError::Invalid(format!("{}: {m}", path.display())),
        other => invalid(other),
    })
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok().filter(|s| !s.trim().is_empty())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn simulate(config: &SimulationConfig) -> Result<SimulationResult, CliError> {
    let dataset = config.load_dataset().map_err(runtime)?;
    run(config, &dataset).map_err(runtime)
}

/// Writes the artifacts of one run into `out`.
fn write_run(out: &Path, config: &SimulationConfig, result: &SimulationResult, started_at: String) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let csv = rounds_csv(&result.rounds, config.topology.n_edges).map_err(runtime)?;
    write(&out.join("rounds.csv"), &csv)?;
    write(&out.join("events.jsonl"), &result.events_jsonl())?;
    write(&out.join("config.toml"), &config.to_toml_string())?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(config),
        seed: config.seed,
        started_at,
        finished_at: now(),
        artifacts: ["rounds.csv", "events.jsonl", "config.toml", "manifest.json"]
            .map(String::from)
            .to_vec(),
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    write(&out.join("manifest.json"), &(json + "\n"))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn cmd_run(config: &Path, out: &Path, overrides: &[String]) -> Result<(), CliError> {
    let config = load_config(config, overrides, env_seed().as_deref())?;
    let started_at = now();
    let result = simulate(&config)?;
    write_run(out, &config, &result, started_at)
}

pub const COMPARE_HEADER: &str = "mode,rounds,global_val_loss,global_val_accuracy,global_test_loss,\
global_test_accuracy,f1_macro,f1_weighted,auroc,jfi,delta_test_accuracy";

pub fn cmd_compare(config: &Path, modes: &[String], out: &Path, overrides: &[String]) -> Result<(), CliError> {
    if modes.len() < 2 {
        return Err(invalid("--modes needs at least two modes"));
    }
    let modes = modes
        .iter()
        .map(|m| BaselineMode::parse(m).map_err(invalid))
        .collect::<Result<Vec<_>, _>>()?;
    let base = load_config(config, overrides, env_seed().as_deref())?;
    let mut rows = vec![COMPARE_HEADER.to_string()];
    let mut first_acc = None;
    for (i, mode) in modes.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.baseline_mode = *mode;
        let started_at = now();
        let result = simulate(&cfg)?;
        write_run(&out.join(format!("{i}_{}", mode.as_str())), &cfg, &result, started_at)?;
        let r = result.final_record();
        let acc = r.global_test.accuracy;
        let delta = acc - *first_acc.get_or_insert(acc);
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            mode.as_str(),
            result.rounds.len(),
            r.global_val.loss,
            r.global_val.accuracy,
            r.global_test.loss,
            acc,
            r.global_test.f1_macro,
            r.global_test.f1_weighted,
            r.global_test.auroc.map(|a| a.to_string()).unwrap_or_default(),
            r.jfi,
            delta
        ));
    }
    write(&out.join("compare.csv"), &(rows.join("\n") + "\n"))
}

pub fn cmd_plot(csv: &Path, out: &Path) -> Result<(), CliError> {
    let file = fs::File::open(csv).map_err(|e| invalid(format!("{}: {e}", csv.display())))?;
    let rounds = parse_rounds_csv(file, &csv.display().to_string()).map_err(invalid)?;
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    for (name, svg) in plot::charts(&rounds) {
        write(&out.join(name), &svg)?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, set } => cmd_run(&config, &out, &set),
        Command::Compare {
            config,
            modes,
            out,
            set,
        } => cmd_compare(&config, &modes, &out, &set),
        Command::Plot { csv, out } => cmd_plot(&csv, &out),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedmesh: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
