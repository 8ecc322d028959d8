//! Named reproduction runs and sweeps over the optimisation engine, with
//! JSON records and CSV tables as output.

mod config;
mod table;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use dispbell::filter::{apply_filter, FilterParams};
use dispbell::optimize::{
    find_threshold_with, fit_threshold_curve, maximize_violation, robustness_scan, sweep,
    CurveFit, OptimizationProblem, PhotonMeasurement, RobustnessResult, StateFamily, ThresholdOptions,
    ThresholdResult, TRUNCATION_DELTA_TOL,
};
use dispbell::states::w_lossy;

pub use config::{ConfigError, Experiment, RunConfig};
pub use table::{emit_curve, Row, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest elementwise deviation accepted by `filter-check`.
pub const FILTER_CHECK_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Outcome {
    Threshold(Box<ThresholdResult>),
    Robustness(RobustnessResult),
    Table(Table),
    Fit { fit: CurveFit, asymptote: f64, table: Table },
    FilterCheck { max_deviation: f64, limit: f64, table: Table },
}

impl Outcome {
    pub fn table(&self) -> Option<&Table> {
        match self {
            Outcome::Table(t) | Outcome::Fit { table: t, .. } | Outcome::FilterCheck { table: t, .. } => Some(t),
            _ => None,
        }
    }
}

/// Everything needed to judge and repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub version: String,
    pub result: Outcome,
    pub wall_time_s: f64,
    /// Largest threshold change seen when `n_max` grows by 5.
    pub truncation_delta: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] dispbell::Error),
    #[error("{0}")]
    Io(String),
}

fn threshold_options(config: &RunConfig) -> ThresholdOptions {
    ThresholdOptions {
        tol: config.tol,
        ..ThresholdOptions::default()
    }
}

/// Problem for a threshold experiment with `parties` where relevant.
fn problem(config: &RunConfig, parties: usize) -> Result<OptimizationProblem, RunError> {
    let mut p = match config.experiment {
        Experiment::TmssChsh | Experiment::Robustness => {
            let mut p = OptimizationProblem::tmss_chsh();
            if config.flag("free_phase")? {
                p.family = StateFamily::Tmss { phase: None };
            }
            p.symmetric = !config.flag("asymmetric")?;
            if let Some(l) = config.get("max_lambda") {
                p.max_lambda = l;
            }
            p
        }
        Experiment::AtomChsh => OptimizationProblem::atom_chsh(),
        Experiment::AtomI3322 => OptimizationProblem::atom_i3322(),
        Experiment::Wstate | Experiment::FitWstate => OptimizationProblem::wstate(parties, PhotonMeasurement::Displacement)?,
        Experiment::WstatePauli => OptimizationProblem::wstate(parties, PhotonMeasurement::Pauli)?,
        Experiment::WstateAtom => OptimizationProblem::atom_wstate(parties)?,
        Experiment::FilterCheck => unreachable!("filter-check has no optimisation problem"),
    };
    if matches!(config.experiment, Experiment::Wstate | Experiment::WstatePauli | Experiment::FitWstate) {
        p.symmetric = !config.flag("asymmetric")?;
    }
    if let Some(party) = config.get_usize("atom_party")? {
        p.family = StateFamily::AtomPhoton { atom_party: party };
    }
    if let Some(r) = config.get_usize("restarts")? {
        p.restarts = r;
    }
    if let Some(a) = config.get("max_alpha") {
        p.max_alpha = a;
    }
    p.seed = config.seed;
    p.n_max = config.n_max;
    p.validate()?;
    Ok(p)
}

fn bracket(config: &RunConfig) -> (f64, f64) {
    let (lo, hi) = config.experiment.default_bracket();
    (config.get("lo").unwrap_or(lo), config.get("hi").unwrap_or(hi))
}

fn threshold(config: &RunConfig, parties: usize) -> Result<ThresholdResult, RunError> {
    let p = problem(config, parties)?;
    let (lo, hi) = bracket(config);
    Ok(find_threshold_with(&p, lo, hi, &threshold_options(config))?)
}

fn parties_grid(config: &RunConfig) -> Result<Option<Vec<usize>>, RunError> {
    let from = config.get_usize("n_from")?;
    let to = config.get_usize("n_to")?;
    let (from, to) = match (from, to, config.experiment) {
        (None, None, Experiment::FitWstate) => (2, 10),
        (None, None, _) => return Ok(None),
        (Some(a), Some(b), _) => (a, b),
        (Some(a), None, _) => (a, a),
        (None, Some(b), _) => (2, b),
    };
    Ok(Some((from..=to).collect()))
}

fn eta_grid(config: &RunConfig) -> Result<Option<Vec<f64>>, RunError> {
    let Some(step) = config.get("eta_step") else {
        return Ok(None);
    };
    let (lo, hi) = bracket(config);
    let from = config.get("eta_from").unwrap_or(lo);
    let to = config.get("eta_to").unwrap_or(hi);
    if !(step > 0.0) {
        return Err(ConfigError::Invalid { key: "eta_step".into(), reason: "must be positive".into() }.into());
    }
    let count = ((to - from) / step + 1e-9).floor();
    if count < 0.0 {
        return Ok(Some(vec![]));
    }
    // round away the accumulated step error so grid values print cleanly
    let at = |i: usize| ((from + i as f64 * step) * 1e12).round() / 1e12;
    Ok(Some((0..=count as usize).map(at).collect()))
}

const THRESHOLD_COLUMNS: [&str; 6] = ["parties", "threshold", "lower", "upper", "truncation_delta", "converged"];

fn threshold_row(n: usize, r: &ThresholdResult) -> Vec<Option<f64>> {
    vec![
        Some(n as f64),
        Some(r.threshold),
        Some(r.lower),
        Some(r.upper),
        r.truncation_delta,
        Some(if r.converged { 1.0 } else { 0.0 }),
    ]
}

fn threshold_table(config: &RunConfig, grid: &[usize]) -> Table {
    let points = sweep(grid, |&n| threshold(config, n));
    let mut table = Table::new(&THRESHOLD_COLUMNS);
    for p in points {
        match &p.outcome {
            Ok(r) => table.push(threshold_row(p.input, r)),
            Err(e) => table.push_error(vec![Some(p.input as f64)], e.clone()),
        }
    }
    table
}

fn violation_table(config: &RunConfig, grid: &[f64]) -> Result<Table, RunError> {
    let parties = config.get_usize("n")?.unwrap_or(config.experiment.default_parties());
    let p = problem(config, parties)?;
    let names = p.parameter_space().names;
    let mut columns = vec!["eta".to_string(), "violation".to_string()];
    columns.extend(names.iter().cloned());
    let mut table = Table::new(&columns);
    for point in sweep(grid, |&eta| maximize_violation(&p, eta)) {
        match &point.outcome {
            Ok(m) => {
                let mut row = vec![Some(point.input), Some(m.violation)];
                row.extend(m.params.iter().map(|&x| Some(x)));
                table.push(row);
            }
            Err(e) => table.push_error(vec![Some(point.input)], e.clone()),
        }
    }
    Ok(table)
}

fn filter_check(config: &RunConfig) -> Result<(f64, Table), RunError> {
    let t = config.get("t").unwrap_or(1.0 - 1e-6);
    let from = config.get_usize("n_from")?.unwrap_or(2);
    let to = config.get_usize("n_to")?.unwrap_or(3);
    let mut grid = vec![];
    for n in from..=to {
        for eta in [0.2, 0.5, 0.8] {
            for source_eff in [0.5, 0.8, 1.0] {
                for detector_eff in [0.6, 0.9, 1.0] {
                    grid.push((n, eta, source_eff, detector_eff));
                }
            }
        }
    }
    let check = |&(n, eta, source_eff, detector_eff): &(usize, f64, f64, f64)| -> dispbell::Result<(f64, f64)> {
        let params = FilterParams { t, source_eff, detector_eff };
        let modes: Vec<usize> = (0..n).collect();
        let (out, success) = apply_filter(&w_lossy(n, eta)?, &modes, &params)?;
        Ok((out.max_abs_diff(&w_lossy(n, source_eff * detector_eff)?)?, success))
    };
    let mut table = Table::new(&["parties", "eta", "source_eff", "detector_eff", "t", "max_deviation", "success"]);
    let mut worst: f64 = 0.0;
    for p in sweep(&grid, check) {
        let (n, eta, ec, ed) = p.input;
        let key = vec![Some(n as f64), Some(eta), Some(ec), Some(ed), Some(t)];
        match &p.outcome {
            Ok((dev, success)) => {
                worst = worst.max(*dev);
                let mut row = key;
                row.extend([Some(*dev), Some(*success)]);
                table.push(row);
            }
            Err(e) => {
                worst = f64::INFINITY;
                table.push_error(key, e.clone());
            }
        }
    }
    Ok((worst, table))
}

/// Execute the experiment named in `config`.
pub fn run(config: &RunConfig) -> Result<RunRecord, RunError> {
    config.check_keys()?;
    let start = Instant::now();
    let parties = config.get_usize("n")?.unwrap_or(config.experiment.default_parties());

    let result = match config.experiment {
        Experiment::FilterCheck => {
            let (max_deviation, table) = filter_check(config)?;
            Outcome::FilterCheck {
                max_deviation,
                limit: FILTER_CHECK_LIMIT,
                table,
            }
        }
        Experiment::Robustness => {
            let p = problem(config, parties)?;
            let (lo, hi) = bracket(config);
            let perturbation = config.get("perturbation").unwrap_or(0.1);
            Outcome::Robustness(robustness_scan(&p, lo, hi, perturbation, config.tol)?)
        }
        Experiment::FitWstate => {
            let grid = parties_grid(config)?.unwrap_or_default();
            let table = threshold_table(config, &grid);
            let points: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter_map(|r| Some((r.values[0]?, r.values.get(1).copied().flatten()?)))
                .collect();
            let fit = fit_threshold_curve(&points)?;
            Outcome::Fit {
                fit,
                asymptote: fit.asymptote(),
                table,
            }
        }
        _ => {
            if let Some(grid) = eta_grid(config)? {
                Outcome::Table(violation_table(config, &grid)?)
            } else if let Some(grid) = parties_grid(config)? {
                Outcome::Table(threshold_table(config, &grid))
            } else {
                Outcome::Threshold(Box::new(threshold(config, parties)?))
            }
        }
    };

    let (truncation_delta, converged) = assess(&result);
    Ok(RunRecord {
        config: config.clone(),
        version: VERSION.to_string(),
        result,
        wall_time_s: start.elapsed().as_secs_f64(),
        truncation_delta,
        converged,
    })
}

fn assess(result: &Outcome) -> (Option<f64>, bool) {
    let delta_ok = |d: Option<f64>| d.is_none_or(|d| d <= TRUNCATION_DELTA_TOL);
    match result {
        Outcome::Threshold(r) => (r.truncation_delta, r.converged && delta_ok(r.truncation_delta)),
        Outcome::Robustness(_) => (None, true),
        Outcome::FilterCheck { max_deviation, limit, table } => (None, max_deviation <= limit && table.all_ok()),
        Outcome::Table(t) | Outcome::Fit { table: t, .. } => {
            let deltas = t.column("truncation_delta");
            let delta = deltas.iter().flatten().copied().reduce(f64::max);
            let flags = t.column("converged");
            let all_converged = flags.iter().all(|c| c.is_none_or(|c| c == 1.0));
            (delta, t.all_ok() && all_converged && delta_ok(delta))
        }
    }
}

/// Write the record as pretty JSON, to `path` or to stdout.
pub fn write_record(record: &RunRecord, path: Option<&std::path::Path>) -> Result<(), RunError> {
    let json = serde_json::to_string_pretty(record).map_err(|e| RunError::Io(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, json + "\n").map_err(|e| RunError::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}
