use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use qosim::config::{self, ConfigError, Override};
use qosim::output::{self, RunError};
use qosim_core::metrics::MetricKind;
use qosim_core::TrafficClass;

/// DiffServ QoS simulator: runs a scenario file or a named preset and writes
/// one result directory per run.
#[derive(Parser, Debug)]
#[command(name = "qosim", version)]
#[command(group(ArgGroup::new("input").args(["scenario", "preset", "list_presets"]).required(true)))]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Named preset or preset member, e.g. pq-baseline or buffer-5kb.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    /// key=value, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    list_presets: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn list_presets() {
    for (name, (description, runs)) in config::describe_presets() {
        println!("{name:<14} {description}");
        if runs.len() > 1 {
            println!("{:<14} runs: {}", "", runs.join(", "));
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.list_presets {
        list_presets();
        return Ok(());
    }
    let mut overrides = cli
        .overrides
        .iter()
        .map(|s| s.parse::<Override>())
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(Override::new("seed", seed as i64));
    }
    if let Some(d) = cli.duration {
        overrides.push(Override::new("duration", d));
    }

    let runs = match (&cli.scenario, &cli.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let r = config::load_scenario(&text, &overrides)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            vec![r]
        }
        (None, Some(name)) => config::load_preset(name, &overrides)?,
        (None, None) => unreachable!("clap requires an input"),
    };

    let reports = output::run_all(&runs, &cli.out)?;
    for r in &reports {
        let video = r.summary.mean(TrafficClass::Video, MetricKind::QueuingDelay);
        println!(
            "{:<14} seed {:<4} video queuing delay {:>9} ms  drops {}  -> {}",
            r.name,
            r.seed,
            video.map_or("-".into(), |v| format!("{:.4}", v * 1e3)),
            TrafficClass::ALL.iter().map(|&c| r.dropped(c)).sum::<u64>(),
            cli.out.join(&r.name).display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("fault: {msg}");
            ExitCode::from(2)
        }
    }
}
