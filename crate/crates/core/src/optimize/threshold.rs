//! Multi-start maximisation of the violation and bisection for the critical
//! efficiency.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{Configuration, Coordinate, OptimizationProblem, PhotonMeasurement, StateFamily, VIOLATION_FLOOR};
use super::simplex::{minimize_polished, SimplexOptions};
use crate::error::{Error, Result};

/// Polishing rounds after each simplex run.
const POLISH_ROUNDS: usize = 4;
/// Violations at or below this, just under a threshold, count as absent.
pub const BELOW_THRESHOLD_TOL: f64 = 1e-9;
/// Offsets, in units of the tolerance, probed on both sides of a threshold.
const MONOTONE_OFFSETS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
/// Intermediate efficiencies when following an optimum towards a probe.
const TRACK_STEPS: usize = 6;
/// Extra Fock levels used to test truncation convergence.
pub const TRUNCATION_STEP: usize = 5;
/// Threshold changes above this under the truncation step mark a result
/// as unconverged.
pub const TRUNCATION_DELTA_TOL: f64 = 1e-6;

/// Best violation found at one efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maximum {
    pub eta: f64,
    /// Inequality value minus its local bound.
    pub violation: f64,
    pub params: Vec<f64>,
    pub configuration: Configuration,
    pub evaluations: usize,
    /// Whether the winning simplex run met its tolerances.
    pub converged: bool,
    pub bound_touches: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub eta: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptions {
    /// Final bracket width.
    pub tol: f64,
    /// Probe five points on either side of the result.
    pub check_monotone: bool,
    /// Recheck the bracket with `n_max + 5` Fock levels.
    pub check_truncation: bool,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            tol: 5e-4,
            check_monotone: true,
            check_truncation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Midpoint of the final bracket.
    pub threshold: f64,
    pub lower: f64,
    pub upper: f64,
    /// Optimum at the lowest violating probe.
    pub optimal_params: Vec<f64>,
    pub parameter_names: Vec<String>,
    pub configuration: Configuration,
    pub squeezing_db: Option<f64>,
    /// Bisection probes in the order they were evaluated.
    pub trace: Vec<Probe>,
    /// Extra probes around the threshold, sorted by efficiency.
    pub monotone_checks: Vec<Probe>,
    /// Fock dimension per optical mode the threshold was computed with.
    pub n_max_used: usize,
    /// Threshold change with `n_max + 5` levels.
    pub truncation_delta: Option<f64>,
    pub converged: bool,
    pub notes: Vec<String>,
}

fn default_simplex(dim: usize) -> SimplexOptions {
    SimplexOptions {
        max_evals: 600 * (dim + 1),
        ..SimplexOptions::default()
    }
}

/// Random starting point for restart `index`, reproducible from the seed.
fn random_start(problem: &OptimizationProblem, index: usize) -> Vec<f64> {
    let space = problem.parameter_space();
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    rng.set_stream(index as u64);
    space.sample(&mut rng)
}

/// Best violation over `problem.restarts` random starts.
pub fn maximize_violation(problem: &OptimizationProblem, eta: f64) -> Result<Maximum> {
    maximize_violation_from(problem, eta, &[])
}

/// As [`maximize_violation`], additionally starting from every point in
/// `warm`. Starts run in parallel; the reduction is order-deterministic.
pub fn maximize_violation_from(problem: &OptimizationProblem, eta: f64, warm: &[Vec<f64>]) -> Result<Maximum> {
    problem.validate()?;
    run_starts(problem, eta, warm, problem.restarts)
}

/// Local refinement from `warm` only.
fn refine(problem: &OptimizationProblem, eta: f64, warm: &[Vec<f64>]) -> Result<Maximum> {
    run_starts(problem, eta, warm, 0)
}

/// Follow the optimum found at `from.eta` down to `eta` in small steps,
/// refining at each one.
fn track(problem: &OptimizationProblem, from: &Maximum, eta: f64) -> Result<Maximum> {
    let mut current = from.clone();
    for k in 1..=TRACK_STEPS {
        let target = from.eta + (eta - from.eta) * k as f64 / TRACK_STEPS as f64;
        current = refine(problem, target, &[current.params.clone()])?;
    }
    Ok(current)
}

fn run_starts(problem: &OptimizationProblem, eta: f64, warm: &[Vec<f64>], restarts: usize) -> Result<Maximum> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(crate::error::invalid("eta", eta, "must lie in [0, 1]"));
    }
    let space = problem.parameter_space();
    if let Some(bad) = warm.iter().find(|w| w.len() != space.dim()) {
        return Err(Error::SettingCount {
            expected: space.dim(),
            got: bad.len(),
        });
    }
    let opts = default_simplex(space.dim());
    let objective = |x: &[f64]| -problem.objective(x, eta).unwrap_or(f64::NEG_INFINITY);
    let total = warm.len() + restarts;
    if total == 0 {
        return Err(crate::error::invalid("restarts", 0.0, "need at least one start"));
    }
    let runs: Vec<_> = (0..total)
        .into_par_iter()
        .map(|i| {
            let x0 = if i < warm.len() {
                warm[i].clone()
            } else {
                random_start(problem, i - warm.len())
            };
            let step = if i < warm.len() { opts.initial_step * 0.1 } else { opts.initial_step };
            let local = SimplexOptions { initial_step: step, ..opts };
            minimize_polished(&objective, &x0, &space.lower, &space.upper, &local, POLISH_ROUNDS)
        })
        .collect();
    let evaluations = runs.iter().map(|r| r.evals).sum();
    let mut best = &runs[0];
    for r in &runs[1..] {
        if r.f < best.f {
            best = r;
        }
    }
    let configuration = problem.decode(&best.x)?;
    Ok(Maximum {
        eta,
        violation: -best.f,
        params: best.x.clone(),
        configuration,
        evaluations,
        converged: best.converged,
        bound_touches: space.touching(&best.x),
    })
}

/// Outcome of a bisection on any violation-like function.
struct Bisection {
    lower: f64,
    upper: f64,
    best_upper: Maximum,
    best_lower: Maximum,
    trace: Vec<Probe>,
    notes: Vec<String>,
}

/// Bisection on `decide(maximum)`, positive meaning violated. A probe that
/// shows no violation is re-examined by tracking the optimum down from the
/// current upper end, since a jump in efficiency can leave every start
/// outside the shrinking violating region.
fn bisect(
    problem: &OptimizationProblem,
    lo: f64,
    hi: f64,
    tol: f64,
    decide: impl Fn(&Maximum) -> Result<f64>,
) -> Result<Bisection> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::InvalidBracket {
            lo,
            hi,
            lo_value: f64::NAN,
            hi_value: f64::NAN,
        });
    }
    if !(tol > 0.0) {
        return Err(crate::error::invalid("tol", tol, "must be positive"));
    }
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    let probe = |eta: f64, warm: &[Vec<f64>], upper: Option<&Maximum>| -> Result<(f64, Maximum)> {
        let mut m = maximize_violation_from(problem, eta, warm)?;
        let mut v = decide(&m)?;
        if v <= VIOLATION_FLOOR {
            if let Some(up) = upper {
                let tracked = track(problem, up, eta)?;
                let tv = decide(&tracked)?;
                if tv > v {
                    m = tracked;
                    v = tv;
                }
            }
        }
        Ok((v, m))
    };
    let (v_hi, mut best_upper) = probe(hi, &[], None)?;
    trace.push(Probe { eta: hi, violation: v_hi });
    let (v_lo, mut best_lower) = probe(lo, &[best_upper.params.clone()], Some(&best_upper))?;
    trace.push(Probe { eta: lo, violation: v_lo });
    if !(v_hi > VIOLATION_FLOOR && v_lo <= VIOLATION_FLOOR) {
        return Err(Error::InvalidBracket {
            lo,
            hi,
            lo_value: v_lo,
            hi_value: v_hi,
        });
    }
    let (mut lower, mut upper) = (lo, hi);
    while upper - lower >= tol {
        let mid = 0.5 * (lower + upper);
        let warm = [best_upper.params.clone(), best_lower.params.clone()];
        let (v, m) = probe(mid, &warm, Some(&best_upper))?;
        trace.push(Probe { eta: mid, violation: v });
        if !m.converged {
            notes.push(format!("optimizer hit its evaluation budget at eta = {mid}"));
        }
        if v > VIOLATION_FLOOR {
            upper = mid;
            best_upper = m;
        } else {
            lower = mid;
            best_lower = m;
        }
    }
    Ok(Bisection {
        lower,
        upper,
        best_upper,
        best_lower,
        trace,
        notes,
    })
}

/// Whether the Fock truncation of this problem is exact.
fn exact_truncation(problem: &OptimizationProblem) -> bool {
    !matches!(problem.family, StateFamily::Tmss { .. })
}

/// Critical efficiency by bisection on the maximised violation, with the
/// default checks.
pub fn find_threshold(problem: &OptimizationProblem, lo: f64, hi: f64, tol: f64) -> Result<ThresholdResult> {
    find_threshold_with(
        problem,
        lo,
        hi,
        &ThresholdOptions {
            tol,
            ..ThresholdOptions::default()
        },
    )
}

pub fn find_threshold_with(
    problem: &OptimizationProblem,
    lo: f64,
    hi: f64,
    opts: &ThresholdOptions,
) -> Result<ThresholdResult> {
    problem.validate()?;
    let b = bisect(problem, lo, hi, opts.tol, |m| Ok(m.violation))?;
    let threshold = 0.5 * (b.lower + b.upper);
    let mut notes = b.notes;
    let mut converged = true;
    for touch in &b.best_upper.bound_touches {
        notes.push(format!("optimum touches a bound: {touch}"));
    }

    let mut monotone_checks = Vec::new();
    if opts.check_monotone {
        let mut warm = vec![b.best_upper.params.clone(), b.best_lower.params.clone()];
        for &k in &MONOTONE_OFFSETS {
            let eta = threshold + k * opts.tol;
            if eta > 1.0 {
                break;
            }
            let m = maximize_violation_from(problem, eta, &warm)?;
            monotone_checks.push(Probe { eta, violation: m.violation });
            if m.violation <= VIOLATION_FLOOR {
                converged = false;
                notes.push(format!("no violation at eta = {eta} above the threshold"));
            }
            warm[0] = m.params;
        }
        for &k in &MONOTONE_OFFSETS {
            let eta = threshold - k * opts.tol;
            if eta < 0.0 {
                break;
            }
            let m = maximize_violation_from(problem, eta, &warm)?;
            monotone_checks.push(Probe { eta, violation: m.violation });
            if m.violation > BELOW_THRESHOLD_TOL {
                converged = false;
                notes.push(format!("violation {} at eta = {eta} below the threshold", m.violation));
            }
        }
        monotone_checks.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    }

    let (n_max_used, truncation_delta) = if exact_truncation(problem) {
        (2, Some(0.0))
    } else if opts.check_truncation {
        let delta = truncation_delta(problem, lo, hi, opts, &b.best_lower, &b.best_upper, b.lower, b.upper, threshold)?;
        if delta > TRUNCATION_DELTA_TOL {
            converged = false;
            notes.push(format!("threshold moves by {delta} with {TRUNCATION_STEP} more Fock levels"));
        }
        (problem.n_max, Some(delta))
    } else {
        (problem.n_max, None)
    };

    let configuration = b.best_upper.configuration.clone();
    Ok(ThresholdResult {
        threshold,
        lower: b.lower,
        upper: b.upper,
        optimal_params: b.best_upper.params.clone(),
        parameter_names: problem.parameter_space().names,
        squeezing_db: configuration.squeezing_db(),
        configuration,
        trace: b.trace,
        monotone_checks,
        n_max_used,
        truncation_delta,
        converged,
        notes,
    })
}

/// Threshold change with more Fock levels. When the refined model gives the
/// same verdicts at both ends of the final bracket, bisection would retrace
/// the same path and the change is zero; otherwise bisect again.
#[allow(clippy::too_many_arguments)]
fn truncation_delta(
    problem: &OptimizationProblem,
    lo: f64,
    hi: f64,
    opts: &ThresholdOptions,
    best_lower: &Maximum,
    best_upper: &Maximum,
    lower: f64,
    upper: f64,
    threshold: f64,
) -> Result<f64> {
    let refined = OptimizationProblem {
        n_max: problem.n_max + TRUNCATION_STEP,
        ..problem.clone()
    };
    let warm = [best_upper.params.clone(), best_lower.params.clone()];
    let at_upper = maximize_violation_from(&refined, upper, &warm)?;
    let at_lower = maximize_violation_from(&refined, lower, &warm)?;
    if at_upper.violation > VIOLATION_FLOOR && at_lower.violation <= VIOLATION_FLOOR {
        return Ok(0.0);
    }
    let again = find_threshold_with(
        &refined,
        lo,
        hi,
        &ThresholdOptions {
            check_truncation: false,
            check_monotone: false,
            ..*opts
        },
    )?;
    Ok((again.threshold - threshold).abs())
}

/// Threshold of the lossy W-state under ideal qubit measurements.
pub fn pauli_wstate_threshold(parties: usize, seed: u64, tol: f64) -> Result<ThresholdResult> {
    let mut problem = OptimizationProblem::wstate(parties, PhotonMeasurement::Pauli)?;
    problem.seed = seed;
    find_threshold(&problem, 0.55, 0.99, tol)
}

/// Thresholds before and after perturbing the optimal displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub perturbation: f64,
    pub baseline: f64,
    pub perturbed: f64,
    pub shift: f64,
    pub baseline_trace: Vec<Probe>,
    pub perturbed_trace: Vec<Probe>,
}

/// Threshold shift when every free displacement amplitude of the optimum
/// found at each efficiency is scaled by `1 ± perturbation`, taking the worst
/// sign pattern. With shared settings a shared amplitude moves together for
/// all parties. State parameters keep their optimal values. Baseline and
/// perturbed thresholds use the same bisection so zero perturbation gives
/// zero shift.
pub fn robustness_scan(
    problem: &OptimizationProblem,
    lo: f64,
    hi: f64,
    perturbation: f64,
    tol: f64,
) -> Result<RobustnessResult> {
    if !(0.0..1.0).contains(&perturbation) {
        return Err(crate::error::invalid("perturbation", perturbation, "must lie in [0, 1)"));
    }
    let baseline = bisect(problem, lo, hi, tol, |m| Ok(m.violation))?;
    let space = problem.parameter_space();
    let amplitudes: Vec<usize> = (0..space.dim()).filter(|&i| space.kinds[i] == Coordinate::Amplitude).collect();
    let worst = |m: &Maximum| -> Result<f64> {
        let mut worst = f64::INFINITY;
        for signs in 0..1usize << amplitudes.len() {
            let mut x = m.params.clone();
            for (j, &i) in amplitudes.iter().enumerate() {
                x[i] *= if (signs >> j) & 1 == 1 { 1.0 - perturbation } else { 1.0 + perturbation };
            }
            worst = worst.min(problem.violation(&problem.decode(&x)?, m.eta)?);
        }
        Ok(worst)
    };
    let perturbed = bisect(problem, lo, hi, tol, worst)?;
    let mid = |b: &Bisection| 0.5 * (b.lower + b.upper);
    Ok(RobustnessResult {
        perturbation,
        baseline: mid(&baseline),
        perturbed: mid(&perturbed),
        shift: mid(&perturbed) - mid(&baseline),
        baseline_trace: baseline.trace,
        perturbed_trace: perturbed.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::InequalitySpec;

    #[test]
    fn restarts_are_reproducible() {
        let p = OptimizationProblem::wstate(3, PhotonMeasurement::Displacement).unwrap();
        let a = maximize_violation(&p, 0.9).unwrap();
        let b = maximize_violation(&p, 0.9).unwrap();
        assert_eq!(a, b);
        assert!(a.violation > 0.0);
    }

    #[test]
    fn different_seeds_differ_in_starts() {
        let p = OptimizationProblem::tmss_chsh();
        let q = OptimizationProblem { seed: p.seed + 1, ..p.clone() };
        assert_ne!(random_start(&p, 0), random_start(&q, 0));
        assert_ne!(random_start(&p, 0), random_start(&p, 1));
    }

    #[test]
    fn invalid_brackets_are_reported() {
        let p = OptimizationProblem::atom_chsh();
        let err = find_threshold(&p, 0.6, 0.9, 1e-2).unwrap_err();
        assert!(matches!(err, Error::InvalidBracket { .. }), "{err}");
        assert!(find_threshold(&p, 0.9, 0.6, 1e-2).is_err());
    }

    #[test]
    fn warm_start_dimension_is_checked() {
        let p = OptimizationProblem::atom_chsh();
        assert!(maximize_violation_from(&p, 0.7, &[vec![0.0; 2]]).is_err());
    }

    #[test]
    fn atom_chsh_threshold_is_one_half() {
        let mut p = OptimizationProblem::atom_chsh();
        p.restarts = 8;
        let r = find_threshold(&p, 0.4, 0.8, 2e-3).unwrap();
        assert!((r.threshold - 0.5).abs() < 5e-3, "{r:?}");
        assert!(r.converged, "{:?}", r.notes);
        let etas: Vec<f64> = r.monotone_checks.iter().map(|p| p.eta).collect();
        assert!(etas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_perturbation_gives_zero_shift() {
        let mut p = OptimizationProblem::atom_chsh();
        p.restarts = 4;
        let r = robustness_scan(&p, 0.4, 0.8, 0.0, 1e-2).unwrap();
        assert_eq!(r.shift, 0.0);
        assert_eq!(r.baseline_trace, r.perturbed_trace);
    }

    #[test]
    fn below_bound_means_no_violation() {
        let mut p = OptimizationProblem::new(
            StateFamily::Wstate { parties: 2 },
            InequalitySpec::W3zb { parties: 2 },
            PhotonMeasurement::Pauli,
        )
        .unwrap();
        p.restarts = 8;
        assert!(maximize_violation(&p, 0.7).unwrap().violation <= VIOLATION_FLOOR);
        assert!(maximize_violation(&p, 0.9).unwrap().violation > 0.0);
    }
}
