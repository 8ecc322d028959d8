//! Violation maximisation, threshold bisection, curve fitting and sweeps.
//! Everything here works in `f64`.

mod fit;
mod problem;
mod simplex;
mod sweep;
mod threshold;

pub use fit::{fit_threshold_curve, CurveFit};
pub use sweep::{sweep, SweepPoint};

pub use problem::{
    Configuration, Coordinate, OptimizationProblem, ParameterSpace, PhotonMeasurement, StateFamily, VIOLATION_FLOOR,
};
pub use simplex::{minimize, minimize_polished, SimplexOptions, SimplexResult};
pub use threshold::{
    find_threshold, find_threshold_with, maximize_violation, maximize_violation_from, pauli_wstate_threshold,
    robustness_scan, Maximum, Probe, RobustnessResult, ThresholdOptions, ThresholdResult, BELOW_THRESHOLD_TOL,
    TRUNCATION_DELTA_TOL, TRUNCATION_STEP,
};
