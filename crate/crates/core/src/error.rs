use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mode dimension {0} (each mode needs at least 2 levels)")]
    InvalidModeDimension(usize),

    #[error("mode space mismatch: {left:?} vs {right:?}")]
    SpaceMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("matrix shape {rows}x{cols} does not match total dimension {expected}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("mode index {index} out of range for {modes} modes")]
    InvalidMode { index: usize, modes: usize },

    #[error("expected {expected} measurement settings, got {got}")]
    SettingCount { expected: usize, got: usize },

    #[error("expectation value has imaginary residue {0:e}; operator is not Hermitian")]
    NonHermitianExpectation(f64),

    #[error("state check failed: {0}")]
    InvalidState(String),

    #[error("correlator table for {parties} parties needs {expected} entries, got {got}")]
    IncompleteTable {
        parties: usize,
        expected: usize,
        got: usize,
    },

    #[error("deterministic-strategy enumeration of {strategies} strategies exceeds the cap of {cap}")]
    EnumerationTooLarge { strategies: u128, cap: u128 },

    #[error("conditioning probability {0:e} is numerically zero")]
    ImpossibleConditioning(f64),

    #[error("inequality `{inequality}` is not supported for state family `{family}`")]
    UnsupportedCombination { family: String, inequality: String },

    #[error("invalid bracket: violation {lo_value:e} at eta={lo} and {hi_value:e} at eta={hi}")]
    InvalidBracket {
        lo: f64,
        hi: f64,
        lo_value: f64,
        hi_value: f64,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}
