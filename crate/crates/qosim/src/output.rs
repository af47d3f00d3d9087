//! Run directories: `metrics.csv`, `summary.csv`, `drops.csv` and
//! `resolved.toml` per run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;

use qosim_core::metrics::render_csv;
use qosim_core::sim::RunReport;
use qosim_core::Simulation;

use crate::config::Resolved;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DROPS_FILE: &str = "drops.csv";
pub const RESOLVED_FILE: &str = "resolved.toml";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("run `{run}`: {source}")]
    Sim {
        run: String,
        #[source]
        source: qosim_core::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("run names collide: `{0}`")]
    DuplicateRun(String),
}

/// Text of every file in a run directory, in write order.
pub fn render_run(resolved: &Resolved, report: &RunReport) -> [(&'static str, String); 4] {
    [
        (METRICS_FILE, render_csv(&report.series, report.warmup)),
        (SUMMARY_FILE, report.summary.render_csv()),
        (DROPS_FILE, report.drops_csv()),
        (RESOLVED_FILE, resolved.to_toml()),
    ]
}

pub fn write_run(dir: &Path, resolved: &Resolved, report: &RunReport) -> Result<(), RunError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, text) in render_run(resolved, report) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn simulate(resolved: &Resolved) -> Result<RunReport, RunError> {
    let sim_err = |source| RunError::Sim {
        run: resolved.scenario.name.clone(),
        source,
    };
    Simulation::new(&resolved.scenario)
        .and_then(Simulation::run)
        .map_err(sim_err)
}

/// Runs every member, one thread each, and writes `out/<run name>/`.
/// Reports come back in member order.
pub fn run_all(runs: &[Resolved], out: &Path) -> Result<Vec<RunReport>, RunError> {
    let mut names: Vec<&str> = runs.iter().map(|r| r.scenario.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(RunError::DuplicateRun(w[0].into()));
    }
    thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|r| {
                scope.spawn(move || {
                    let report = simulate(r)?;
                    write_run(&out.join(&r.scenario.name), r, &report)?;
                    Ok(report)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}
