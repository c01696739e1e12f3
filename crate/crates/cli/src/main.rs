//! Command-line front end: resolve a configuration from a file path or a
//! built-in name, apply `--set` overrides, run the experiment, and write
//! the report files next to the configured output prefix.

mod catalog;
mod plot;
mod runner;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use lapdual::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "lapdual", version, about = "duality verification experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment; writes <output>_report.csv and <output>_summary.txt.
    Run {
        /// Configuration file path, or the name of a built-in experiment.
        config: String,
        /// Override one configuration value, e.g. --set sim.seed=7.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also write <output>_plot.svg.
        #[arg(long)]
        plot: bool,
    },
    /// List the built-in experiments.
    List,
    /// Parse and validate a configuration without running it.
    Validate {
        /// Configuration file path, or the name of a built-in experiment.
        config: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}

/// Configuration and contract problems exit 1, numeric or statistical
/// problems exit 2; anything outside the library's taxonomy (I/O, parse)
/// is a configuration problem.
fn exit_code_for(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<lapdual::Error>() {
        Some(lapdual::Error::NumericAccuracy(_)) | Some(lapdual::Error::Stiffness(_)) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(1),
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, set, plot } => cmd_run(&config, &set, plot),
        Command::List => {
            for entry in &catalog::CATALOG {
                println!("{:<24} {}", entry.name, entry.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config, &[])?;
            cfg.validate()?;
            println!("ok: {}", cfg.name);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_run(config: &str, sets: &[String], plot: bool) -> anyhow::Result<ExitCode> {
    let cfg = load_config(config, sets)?;
    let out = runner::execute(&cfg)?;

    let prefix = PathBuf::from(&cfg.output);
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    write_output(&cfg.output, "_report.csv", &out.csv)?;
    write_output(&cfg.output, "_summary.txt", &out.summary)?;
    if plot {
        write_output(&cfg.output, "_plot.svg", &plot::render(&out.plot))?;
    }

    print!("{}", out.summary);
    Ok(if out.passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn write_output(prefix: &str, suffix: &str, content: &str) -> anyhow::Result<()> {
    let path = format!("{prefix}{suffix}");
    fs::write(&path, content).with_context(|| format!("writing {path}"))
}

fn load_config(config: &str, sets: &[String]) -> anyhow::Result<ExperimentConfig> {
    let text = if Path::new(config).is_file() {
        fs::read_to_string(config).with_context(|| format!("reading {config}"))?
    } else if let Some(entry) = catalog::find(config) {
        entry.toml.to_string()
    } else {
        bail!("no configuration file or built-in experiment named {config:?}");
    };
    parse_with_overrides(&text, sets)
}

/// Overrides are applied to the parsed document before typed
/// deserialization, so `--set k=v` behaves exactly like editing the file.
fn parse_with_overrides(text: &str, sets: &[String]) -> anyhow::Result<ExperimentConfig> {
    if sets.is_empty() {
        return toml::from_str(text).context("parsing configuration");
    }
    let mut value: toml::Value = toml::from_str(text).context("parsing configuration")?;
    for raw in sets {
        let (key, literal) = raw
            .split_once('=')
            .with_context(|| format!("override {raw:?} must look like key=value"))?;
        set_path(&mut value, key.trim(), parse_literal(literal.trim()))
            .with_context(|| format!("applying override {raw:?}"))?;
    }
    value.try_into().context("parsing configuration after overrides")
}

/// An override value is any TOML literal; what fails to parse as one is
/// taken as a bare string, so `--set name=probe` needs no inner quotes.
fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut table) => {
            table.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string()))
        }
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> anyhow::Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    anyhow::ensure!(
        !path.is_empty() && segments.iter().all(|s| !s.is_empty()),
        "override key has an empty segment"
    );
    let (last, parents) = segments.split_last().expect("segments checked nonempty");
    let mut cursor = root;
    for seg in parents {
        let table = cursor
            .as_table_mut()
            .with_context(|| format!("{seg}: parent is not a table"))?;
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .with_context(|| format!("{last}: parent is not a table"))?;
    table.insert(last.to_string(), new);
    Ok(())
}
