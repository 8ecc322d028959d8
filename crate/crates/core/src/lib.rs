pub mod bell;
pub mod error;
pub mod filter;
pub mod fock;
pub mod optimize;
pub mod scalar;
pub mod states;

pub use error::{Error, Result};

pub type Operator = fock::TruncatedOperator<f64>;
pub type State = fock::MultiModeState<f64>;
pub type Setting = fock::MeasurementSetting<f64>;
pub type Complex = scalar::Cplx<f64>;
