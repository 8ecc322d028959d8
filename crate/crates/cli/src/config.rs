use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TmssChsh,
    AtomChsh,
    AtomI3322,
    Wstate,
    WstatePauli,
    WstateAtom,
    FilterCheck,
    Robustness,
    FitWstate,
}

const THRESHOLD_KEYS: &[&str] = &["lo", "hi", "restarts", "max_alpha", "eta_step", "eta_from", "eta_to"];
const PARTY_KEYS: &[&str] = &["n", "n_from", "n_to", "asymmetric"];

impl Experiment {
    pub fn all() -> &'static [Experiment] {
        use Experiment::*;
        &[TmssChsh, AtomChsh, AtomI3322, Wstate, WstatePauli, WstateAtom, FilterCheck, Robustness, FitWstate]
    }

    pub fn name(self) -> &'static str {
        use Experiment::*;
        match self {
            TmssChsh => "tmss-chsh",
            AtomChsh => "atom-chsh",
            AtomI3322 => "atom-i3322",
            Wstate => "wstate",
            WstatePauli => "wstate-pauli",
            WstateAtom => "wstate-atom",
            FilterCheck => "filter-check",
            Robustness => "robustness",
            FitWstate => "fit-wstate",
        }
    }

    /// Override keys this experiment understands.
    pub fn keys(self) -> Vec<&'static str> {
        use Experiment::*;
        let mut keys: Vec<&str> = match self {
            FilterCheck => return vec!["t", "n_from", "n_to"],
            TmssChsh => vec!["free_phase", "asymmetric", "max_lambda"],
            Robustness => vec!["free_phase", "asymmetric", "max_lambda", "perturbation"],
            AtomChsh | AtomI3322 => vec!["atom_party"],
            Wstate | WstatePauli | FitWstate => PARTY_KEYS.to_vec(),
            WstateAtom => vec!["n", "n_from", "n_to"],
        };
        keys.extend(THRESHOLD_KEYS);
        keys
    }

    /// Efficiency interval searched by default.
    pub fn default_bracket(self) -> (f64, f64) {
        use Experiment::*;
        match self {
            TmssChsh | Robustness => (0.6, 0.8),
            AtomChsh | AtomI3322 => (0.3, 0.9),
            Wstate | FitWstate => (0.6, 0.99),
            WstatePauli => (0.55, 0.99),
            WstateAtom => (0.3, 0.99),
            FilterCheck => (0.0, 1.0),
        }
    }

    pub fn default_parties(self) -> usize {
        match self {
            Experiment::Wstate | Experiment::WstatePauli => 5,
            Experiment::WstateAtom => 4,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Experiment {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::all()
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| ConfigError::UnknownExperiment {
                name: s.to_string(),
                valid: Experiment::all().iter().map(|e| e.name()).collect::<Vec<_>>().join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown experiment `{name}`; valid: {valid}")]
    UnknownExperiment { name: String, valid: String },
    #[error("override `{key}` is not used by {experiment}; valid: {valid}")]
    UnknownKey {
        key: String,
        experiment: String,
        valid: String,
    },
    #[error("override `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

/// A complete run description. Serialised into every record so the run can
/// be repeated from its own output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub overrides: BTreeMap<String, f64>,
    pub seed: u64,
    pub tol: f64,
    pub n_max: usize,
    pub output_path: Option<PathBuf>,
    pub csv_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            overrides: BTreeMap::new(),
            seed: 2011,
            tol: 5e-4,
            n_max: 20,
            output_path: None,
            csv_path: None,
        }
    }

    /// Parse `key=value` and store it.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError::Invalid {
            key: assignment.to_string(),
            reason: "expected key=value".into(),
        })?;
        let key = key.trim();
        let value: f64 = value.trim().parse().map_err(|_| ConfigError::Invalid {
            key: key.to_string(),
            reason: format!("`{}` is not a number", value.trim()),
        })?;
        if !value.is_finite() {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                reason: "must be finite".into(),
            });
        }
        let previous = self.overrides.insert(key.to_string(), value);
        let checked = self.check_keys();
        if checked.is_err() {
            match previous {
                Some(v) => self.overrides.insert(key.to_string(), v),
                None => self.overrides.remove(key),
            };
        }
        checked
    }

    /// Reject override keys the experiment would ignore.
    pub fn check_keys(&self) -> Result<(), ConfigError> {
        let keys = self.experiment.keys();
        for key in self.overrides.keys() {
            if !keys.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    experiment: self.experiment.name().into(),
                    valid: keys.join(", "),
                });
            }
        }
        if !(self.tol > 0.0 && self.tol < 0.5) {
            return Err(ConfigError::Invalid {
                key: "tol".into(),
                reason: format!("{} is outside (0, 0.5)", self.tol),
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.overrides.get(key).copied()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(Some(v as usize)),
            Some(v) => Err(ConfigError::Invalid {
                key: key.into(),
                reason: format!("{v} is not a non-negative integer"),
            }),
        }
    }

    /// Boolean override given as 0 or 1; absent means false.
    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(false),
            Some(v) if v == 0.0 || v == 1.0 => Ok(v == 1.0),
            Some(v) => Err(ConfigError::Invalid {
                key: key.into(),
                reason: format!("{v} is not 0 or 1"),
            }),
        }
    }
}
