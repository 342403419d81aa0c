//! Library side of the `relkin` binary: configuration, experiments and
//! reports.

pub mod config;
pub mod experiments;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use experiments::{run_experiment, Context, RunError, EXPERIMENTS};
use report::{sha256_hex, Check, RunReport};

/// One command-line invocation.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub experiment: String,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub natural_units: bool,
}

pub fn list_experiments() -> String {
    let width = EXPERIMENTS.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    EXPERIMENTS
        .iter()
        .map(|(n, d)| format!("{n:width$}  {d}\n"))
        .collect()
}

/// Runs an experiment and writes `report.json` into the output directory.
///
/// Configuration problems are returned as errors. A numerical routine that
/// fails still produces a report, with `pass = false` and the error among
/// the warnings.
pub fn run(inv: &Invocation) -> Result<(RunReport, PathBuf), RunError> {
    let started = Instant::now();
    if !experiments::is_known(&inv.experiment) {
        return Err(RunError::Config(format!(
            "unknown experiment {:?}; run `relkin list`",
            inv.experiment
        )));
    }
    let text = fs::read(&inv.config)
        .map_err(|e| RunError::Config(format!("reading {}: {e}", inv.config.display())))?;
    let config_hash = sha256_hex(&text);
    let text = String::from_utf8(text)
        .map_err(|_| RunError::Config(format!("{} is not UTF-8", inv.config.display())))?;
    let cfg = config::parse(&text)?;
    if let Some(named) = &cfg.experiment {
        if named != &inv.experiment {
            return Err(RunError::Config(format!(
                "config is for experiment {named:?}, not {:?}",
                inv.experiment
            )));
        }
    }
    let k = cfg.constants(inv.natural_units)?;
    let gauge = cfg.gauge()?;
    let base = inv.config.parent().unwrap_or(Path::new("."));
    let field = config::resolve_field(&cfg.field, &k, &gauge, base)?;
    let out = inv
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("relkin-out"));
    fs::create_dir_all(&out)
        .map_err(|e| RunError::Config(format!("creating {}: {e}", out.display())))?;
    let seed = inv.seed.or(cfg.simulation.as_ref().and_then(|s| s.seed));

    let mut ctx = Context {
        cfg: &cfg,
        k,
        gauge,
        field,
        out: out.clone(),
        seed,
        artifacts: Vec::new(),
        warnings: Vec::new(),
    };
    let checks = match run_experiment(&inv.experiment, &mut ctx) {
        Ok(c) => c,
        Err(RunError::Numeric(msg)) => {
            log::error!("{msg}");
            ctx.warnings.push(msg);
            vec![Check::flag("completed", false)]
        }
        Err(e) => return Err(e),
    };
    let report = RunReport {
        experiment: inv.experiment.clone(),
        pass: !checks.is_empty() && checks.iter().all(|c| c.pass),
        checks,
        warnings: ctx.warnings,
        artifacts: ctx.artifacts,
        seed,
        wall_time: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash,
    };
    let mut bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| RunError::Numeric(format!("serializing report: {e}")))?;
    bytes.push(b'\n');
    let path = out.join("report.json");
    relkin_core::export::write_atomic(&path, &bytes)
        .map_err(|e| RunError::Numeric(format!("writing report: {e}")))?;
    Ok((report, path))
}
