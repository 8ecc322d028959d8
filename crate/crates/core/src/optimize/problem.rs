//! Parametrised Bell scenarios: how a flat parameter vector maps to a state
//! and measurement settings, and how fast the resulting violation can be
//! evaluated.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::bell::{
    atom_w_correlator, cg_value, chsh_value, correlator_table, qubit_block, w3zb_from_values,
    w3zb_value, w_mixture_correlator, CgInequality, InequalitySpec,
};
use crate::error::{Error, Result};
use crate::fock::{coherent_vector, MeasurementSetting, MultiModeState, SparseDensity};
use crate::scalar::Cplx;
use crate::states::{atom_photon, atom_w_lossy, tmss_lossy, tmss_lossy_entries_above, w_lossy, AtomPhotonParams, TmssParams};

type Setting = MeasurementSetting<f64>;
type C = Cplx<f64>;

/// Values below this count as "no violation".
pub const VIOLATION_FLOOR: f64 = 1e-12;

/// Squeezed-state matrix elements bounded by this are dropped before
/// evaluating correlators; their total effect stays far below the floor.
const ENTRY_CUTOFF: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StateFamily {
    /// Lossy two-mode squeezed vacuum. `phase: None` leaves the squeezing
    /// phase free; otherwise it is held at the given value.
    Tmss { phase: Option<f64> },
    /// Atom-photon state; `atom_party` says whether the atom is the first
    /// or second party of the inequality.
    AtomPhoton { atom_party: usize },
    /// Lossy single-photon W-state over `parties` modes.
    Wstate { parties: usize },
    /// Atom entangled with a photon split over `photonic_modes` modes.
    AtomWstate { photonic_modes: usize },
}

/// How the photonic parties measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonMeasurement {
    Displacement,
    /// Ideal qubit projections on the {0, 1} photon subspace.
    Pauli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub family: StateFamily,
    pub inequality: InequalitySpec,
    pub measurement: PhotonMeasurement,
    /// All photonic parties share their settings; for squeezed states the
    /// displacements are also real.
    pub symmetric: bool,
    /// Fock dimension per optical mode for squeezed states.
    pub n_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_alpha: f64,
    pub max_lambda: f64,
}

/// State parameters and per-party settings decoded from a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub lambda: Option<f64>,
    pub phase: Option<f64>,
    pub theta: Option<f64>,
    /// `settings[party][choice]`.
    pub settings: Vec<Vec<Setting>>,
}

impl Configuration {
    /// Every displacement amplitude, party-major.
    pub fn displacements(&self) -> Vec<C> {
        self.settings
            .iter()
            .flatten()
            .filter_map(|s| match s {
                MeasurementSetting::Displacement(a) => Some(*a),
                _ => None,
            })
            .collect()
    }

    /// Copy with displacement magnitudes multiplied by `factors`, in the
    /// order of [`Configuration::displacements`].
    pub fn with_scaled_displacements(&self, factors: &[f64]) -> Self {
        let mut out = self.clone();
        let mut k = 0;
        for s in out.settings.iter_mut().flatten() {
            if let MeasurementSetting::Displacement(a) = s {
                *a *= factors[k];
                k += 1;
            }
        }
        out
    }

    pub fn squeezing_db(&self) -> Option<f64> {
        self.lambda.map(crate::states::squeezing_db)
    }
}

/// Box bounds and a label for every free parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kinds: Vec<Coordinate>,
}

/// How a coordinate is sampled for random starts and reported at bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    /// Sampled uniformly; bound contact is reported.
    Plain,
    /// Squeezing strength. Sampled as `u²` times the bound so starts
    /// favour the small values where optima sit; large values form a flat
    /// plateau that stalls the simplex.
    Magnitude,
    /// Displacement amplitude, possibly signed. Sampled like `Magnitude`.
    Amplitude,
    /// Periodic angle; the bounds are the same point and never reported.
    Angle,
}

impl ParameterSpace {
    fn push(&mut self, name: impl Into<String>, lo: f64, hi: f64) {
        self.push_kind(name, lo, hi, Coordinate::Plain);
    }

    fn push_kind(&mut self, name: impl Into<String>, lo: f64, hi: f64, kind: Coordinate) {
        self.names.push(name.into());
        self.lower.push(lo);
        self.upper.push(hi);
        self.kinds.push(kind);
    }

    /// Random point in the box, drawn per coordinate kind.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                match self.kinds[i] {
                    Coordinate::Magnitude | Coordinate::Amplitude => {
                        let u: f64 = rng.random();
                        let sign = if lo < 0.0 && rng.random_bool(0.5) { -1.0 } else { 1.0 };
                        let r = if lo < 0.0 { hi.min(-lo) } else { hi };
                        (sign * r * u * u).clamp(lo, hi)
                    }
                    _ => rng.random_range(lo..=hi),
                }
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Names of parameters within `1e-9` of either bound.
    pub fn touching(&self, x: &[f64]) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.dim() {
            if self.kinds[i] == Coordinate::Angle {
                continue;
            }
            let w = (self.upper[i] - self.lower[i]) * 1e-9;
            if x[i] - self.lower[i] <= w {
                out.push(format!("{} at lower bound {}", self.names[i], self.lower[i]));
            } else if self.upper[i] - x[i] <= w {
                out.push(format!("{} at upper bound {}", self.names[i], self.upper[i]));
            }
        }
        out
    }
}

fn polar(r: f64, arg: f64) -> Setting {
    MeasurementSetting::Displacement(C::from_polar(r, arg))
}

/// Unit vector `u` with `|u⟩⟨u|` the `+1` projector of the setting.
fn plus_vector(setting: &Setting, dim: usize) -> Result<Vec<C>> {
    match setting {
        MeasurementSetting::Displacement(a) => coherent_vector(*a, dim),
        MeasurementSetting::BlochProjection(n) => {
            if dim != 2 {
                return Err(Error::ShapeMismatch {
                    rows: dim,
                    cols: dim,
                    expected: 2,
                });
            }
            let polar = n[2].clamp(-1.0, 1.0).acos();
            let azimuth = n[1].atan2(n[0]);
            Ok(vec![
                C::new((polar / 2.0).cos(), 0.0),
                C::from_polar((polar / 2.0).sin(), azimuth),
            ])
        }
    }
}

impl OptimizationProblem {
    /// Problem with the default bounds, 32 restarts and `n_max = 20`.
    pub fn new(family: StateFamily, inequality: InequalitySpec, measurement: PhotonMeasurement) -> Result<Self> {
        let p = Self {
            family,
            inequality,
            measurement,
            symmetric: true,
            n_max: 20,
            seed: 2011,
            restarts: 32,
            max_alpha: 2.0,
            max_lambda: 0.5,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn tmss_chsh() -> Self {
        Self::new(StateFamily::Tmss { phase: Some(PI) }, InequalitySpec::Chsh, PhotonMeasurement::Displacement)
            .expect("valid")
    }

    pub fn atom_chsh() -> Self {
        Self::new(StateFamily::AtomPhoton { atom_party: 0 }, InequalitySpec::Chsh, PhotonMeasurement::Displacement)
            .expect("valid")
    }

    pub fn atom_i3322() -> Self {
        Self::new(StateFamily::AtomPhoton { atom_party: 1 }, InequalitySpec::i3322(), PhotonMeasurement::Displacement)
            .expect("valid")
    }

    pub fn wstate(parties: usize, measurement: PhotonMeasurement) -> Result<Self> {
        Self::new(StateFamily::Wstate { parties }, InequalitySpec::W3zb { parties }, measurement)
    }

    /// Atom plus a W-state shared by `parties − 1` photonic modes.
    pub fn atom_wstate(parties: usize) -> Result<Self> {
        if parties < 2 {
            return Err(crate::error::invalid("parties", parties as f64, "need at least 2"));
        }
        Self::new(
            StateFamily::AtomWstate { photonic_modes: parties - 1 },
            InequalitySpec::W3zb { parties },
            PhotonMeasurement::Displacement,
        )
    }

    pub fn parties(&self) -> usize {
        match self.family {
            StateFamily::Tmss { .. } | StateFamily::AtomPhoton { .. } => 2,
            StateFamily::Wstate { parties } => parties,
            StateFamily::AtomWstate { photonic_modes } => photonic_modes + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unsupported = || Error::UnsupportedCombination {
            family: format!("{:?} with {:?} measurements", self.family, self.measurement),
            inequality: self.inequality.name(),
        };
        let linear = matches!(self.inequality, InequalitySpec::Chsh | InequalitySpec::CollinsGisin(_));
        match self.family {
            StateFamily::Tmss { .. } => {
                if !linear || self.measurement != PhotonMeasurement::Displacement {
                    return Err(unsupported());
                }
                if self.n_max < 2 {
                    return Err(Error::InvalidModeDimension(self.n_max));
                }
            }
            StateFamily::AtomPhoton { atom_party } => {
                if !linear || atom_party > 1 {
                    return Err(unsupported());
                }
            }
            StateFamily::Wstate { parties } | StateFamily::AtomWstate { photonic_modes: parties } => {
                let total = self.parties();
                if parties < 1 || total < 2 || self.inequality != (InequalitySpec::W3zb { parties: total }) {
                    return Err(unsupported());
                }
                if matches!(self.family, StateFamily::AtomWstate { .. })
                    && self.measurement != PhotonMeasurement::Displacement
                {
                    return Err(unsupported());
                }
            }
        }
        if let InequalitySpec::CollinsGisin(cg) = &self.inequality {
            if cg.settings_a() != cg.settings_b() {
                return Err(unsupported());
            }
        }
        if !(self.max_alpha > 0.0 && self.max_alpha.is_finite()) {
            return Err(crate::error::invalid("max_alpha", self.max_alpha, "must be positive"));
        }
        if !(self.max_lambda > 0.0 && self.max_lambda < 1.0) {
            return Err(crate::error::invalid("max_lambda", self.max_lambda, "must lie in (0, 1)"));
        }
        if self.restarts == 0 {
            return Err(crate::error::invalid("restarts", 0.0, "need at least one start"));
        }
        Ok(())
    }

    fn settings_per_party(&self) -> usize {
        self.inequality.settings_per_party()
    }

    /// Bounds of the free parameters, in decoding order.
    pub fn parameter_space(&self) -> ParameterSpace {
        let mut s = ParameterSpace {
            names: vec![],
            lower: vec![],
            upper: vec![],
            kinds: vec![],
        };
        let m = self.settings_per_party();
        let amax = self.max_alpha;
        match self.family {
            StateFamily::Tmss { phase } => {
                s.push_kind("lambda", 0.0, self.max_lambda, Coordinate::Magnitude);
                if phase.is_none() {
                    s.push_kind("phase", 0.0, TAU, Coordinate::Angle);
                }
                if self.symmetric {
                    for k in 0..m {
                        s.push_kind(format!("alpha{k}"), -amax, amax, Coordinate::Amplitude);
                    }
                } else {
                    for p in 0..2 {
                        for k in 0..m {
                            s.push_kind(format!("abs_alpha{p}_{k}"), 0.0, amax, Coordinate::Amplitude);
                            s.push_kind(format!("arg_alpha{p}_{k}"), -PI, PI, Coordinate::Angle);
                        }
                    }
                }
            }
            StateFamily::AtomPhoton { .. } => {
                s.push("theta", 0.0, PI / 2.0);
                for k in 0..m {
                    s.push(format!("atom_polar{k}"), 0.0, PI);
                    s.push_kind(format!("atom_azimuth{k}"), -PI, PI, Coordinate::Angle);
                }
                for k in 0..m {
                    s.push_kind(format!("abs_alpha{k}"), 0.0, amax, Coordinate::Amplitude);
                    // one photonic phase is redundant with the atom azimuths
                    if k > 0 {
                        s.push_kind(format!("arg_alpha{k}"), -PI, PI, Coordinate::Angle);
                    }
                }
            }
            StateFamily::Wstate { parties } => self.push_photonic(&mut s, parties),
            StateFamily::AtomWstate { photonic_modes } => {
                s.push("theta", 0.0, PI / 2.0);
                for k in 0..2 {
                    s.push(format!("atom_polar{k}"), 0.0, PI);
                    s.push_kind(format!("atom_azimuth{k}"), -PI, PI, Coordinate::Angle);
                }
                self.push_photonic(&mut s, photonic_modes);
            }
        }
        s
    }

    /// Two settings for each photonic party; the first phase is fixed by
    /// the phase invariance of the states involved.
    fn push_photonic(&self, s: &mut ParameterSpace, parties: usize) {
        let groups = if self.symmetric { 1 } else { parties };
        let amax = self.max_alpha;
        for g in 0..groups {
            for k in 0..2 {
                let first = g == 0 && k == 0;
                match self.measurement {
                    PhotonMeasurement::Displacement => {
                        s.push_kind(format!("abs_alpha{g}_{k}"), 0.0, amax, Coordinate::Amplitude);
                        if !first {
                            s.push_kind(format!("arg_alpha{g}_{k}"), -PI, PI, Coordinate::Angle);
                        }
                    }
                    PhotonMeasurement::Pauli => {
                        s.push(format!("polar{g}_{k}"), 0.0, PI);
                        if !first {
                            s.push_kind(format!("azimuth{g}_{k}"), -PI, PI, Coordinate::Angle);
                        }
                    }
                }
            }
        }
    }

    fn decode_photonic(&self, x: &[f64], i: &mut usize, parties: usize) -> Vec<Vec<Setting>> {
        let groups = if self.symmetric { 1 } else { parties };
        let mut per_group = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut pair = Vec::with_capacity(2);
            for k in 0..2 {
                let first = g == 0 && k == 0;
                let a = x[*i];
                *i += 1;
                let b = if first {
                    0.0
                } else {
                    *i += 1;
                    x[*i - 1]
                };
                pair.push(match self.measurement {
                    PhotonMeasurement::Displacement => polar(a, b),
                    PhotonMeasurement::Pauli => MeasurementSetting::bloch_angles(a, b),
                });
            }
            per_group.push(pair);
        }
        if self.symmetric {
            vec![per_group[0].clone(); parties]
        } else {
            per_group
        }
    }

    /// Map a parameter vector to the state parameters and settings.
    pub fn decode(&self, x: &[f64]) -> Result<Configuration> {
        let space = self.parameter_space();
        if x.len() != space.dim() {
            return Err(Error::SettingCount {
                expected: space.dim(),
                got: x.len(),
            });
        }
        let m = self.settings_per_party();
        let mut i = 0;
        let mut next = || {
            i += 1;
            x[i - 1]
        };
        let config = match self.family {
            StateFamily::Tmss { phase } => {
                let lambda = next();
                let phase = phase.unwrap_or_else(&mut next);
                let settings = if self.symmetric {
                    let one: Vec<Setting> = (0..m).map(|_| polar(next(), 0.0)).collect();
                    vec![one.clone(), one]
                } else {
                    (0..2)
                        .map(|_| (0..m).map(|_| polar(next(), next())).collect())
                        .collect()
                };
                Configuration {
                    lambda: Some(lambda),
                    phase: Some(phase),
                    theta: None,
                    settings,
                }
            }
            StateFamily::AtomPhoton { atom_party } => {
                let theta = next();
                let atom: Vec<Setting> = (0..m).map(|_| MeasurementSetting::bloch_angles(next(), next())).collect();
                let photon: Vec<Setting> = (0..m)
                    .map(|k| {
                        let r = next();
                        polar(r, if k > 0 { next() } else { 0.0 })
                    })
                    .collect();
                let settings = if atom_party == 0 { vec![atom, photon] } else { vec![photon, atom] };
                Configuration {
                    lambda: None,
                    phase: None,
                    theta: Some(theta),
                    settings,
                }
            }
            StateFamily::Wstate { parties } => {
                drop(next);
                let settings = self.decode_photonic(x, &mut i, parties);
                Configuration {
                    lambda: None,
                    phase: None,
                    theta: None,
                    settings,
                }
            }
            StateFamily::AtomWstate { photonic_modes } => {
                let theta = next();
                let atom: Vec<Setting> = (0..2).map(|_| MeasurementSetting::bloch_angles(next(), next())).collect();
                drop(next);
                let mut settings = vec![atom];
                settings.extend(self.decode_photonic(x, &mut i, photonic_modes));
                Configuration {
                    lambda: None,
                    phase: None,
                    theta: Some(theta),
                    settings,
                }
            }
        };
        Ok(config)
    }

    /// Value of the inequality minus its local bound, using sparse or
    /// closed-form evaluation.
    pub fn violation(&self, config: &Configuration, eta: f64) -> Result<f64> {
        let value = match self.family {
            StateFamily::Tmss { .. } => {
                let params = self.tmss_params(config, eta);
                let entries = tmss_lossy_entries_above(&params, ENTRY_CUTOFF)?;
                let rho = SparseDensity::from_entries(crate::fock::ModeSpace::uniform(2, self.n_max)?, &entries)?;
                self.bipartite_value(&rho, config, [0, 1], [self.n_max, self.n_max])?
            }
            StateFamily::AtomPhoton { atom_party } => {
                let st = atom_photon(&AtomPhotonParams {
                    theta: config.theta.unwrap_or(0.0),
                    eta,
                })?;
                let rho = SparseDensity::from_dense(&st);
                // party p lives on mode party_modes[p]; the atom is mode 0
                let modes = if atom_party == 0 { [0, 1] } else { [1, 0] };
                self.bipartite_value(&rho, config, modes, [2, 2])?
            }
            StateFamily::Wstate { .. } => {
                let blocks = self.blocks(config)?;
                let mut values = table_values(blocks.len(), |chosen| Ok(w_mixture_correlator(eta, chosen)), &blocks)?;
                w3zb_from_values(&mut values)
            }
            StateFamily::AtomWstate { .. } => {
                let theta = config.theta.unwrap_or(0.0);
                let blocks = self.blocks(config)?;
                let mut values = table_values(
                    blocks.len(),
                    |chosen| Ok(atom_w_correlator(theta, eta, &chosen[0], &chosen[1..])),
                    &blocks,
                )?;
                w3zb_from_values(&mut values)
            }
        };
        Ok(value - self.inequality.classical_bound())
    }

    /// Same quantity through dense density matrices and full observables.
    pub fn violation_dense(&self, config: &Configuration, eta: f64) -> Result<f64> {
        let state = self.dense_state(config, eta)?;
        let s = &config.settings;
        let value = match &self.inequality {
            InequalitySpec::Chsh => chsh_value(&state, &[s[0][0], s[0][1]], &[s[1][0], s[1][1]])?.abs(),
            InequalitySpec::CollinsGisin(cg) => cg_value(&state, cg, &s[0], &s[1])?,
            InequalitySpec::W3zb { .. } => {
                let pairs: Vec<[Setting; 2]> = s.iter().map(|p| [p[0], p[1]]).collect();
                w3zb_value(&correlator_table(&state, &pairs)?)
            }
        };
        Ok(value - self.inequality.classical_bound())
    }

    /// The state in party order (party `p` on mode `p`).
    pub fn dense_state(&self, config: &Configuration, eta: f64) -> Result<MultiModeState<f64>> {
        match self.family {
            StateFamily::Tmss { .. } => tmss_lossy(&self.tmss_params(config, eta)),
            StateFamily::AtomPhoton { atom_party } => {
                let st = atom_photon(&AtomPhotonParams {
                    theta: config.theta.unwrap_or(0.0),
                    eta,
                })?;
                if atom_party == 0 {
                    Ok(st)
                } else {
                    swap_modes(&st)
                }
            }
            StateFamily::Wstate { parties } => w_lossy(parties, eta),
            StateFamily::AtomWstate { photonic_modes } => atom_w_lossy(config.theta.unwrap_or(0.0), photonic_modes, eta),
        }
    }

    fn tmss_params(&self, config: &Configuration, eta: f64) -> TmssParams<f64> {
        TmssParams {
            lambda: config.lambda.unwrap_or(0.0),
            phi: config.phase.unwrap_or(PI),
            eta,
            n_max: self.n_max,
        }
    }

    fn blocks(&self, config: &Configuration) -> Result<Vec<[[[C; 2]; 2]; 2]>> {
        config
            .settings
            .iter()
            .map(|pair| Ok([qubit_block(&pair[0])?, qubit_block(&pair[1])?]))
            .collect()
    }

    fn bipartite_value(
        &self,
        rho: &SparseDensity<f64>,
        config: &Configuration,
        party_modes: [usize; 2],
        dims: [usize; 2],
    ) -> Result<f64> {
        let vectors: Vec<Vec<Vec<C>>> = (0..2)
            .map(|p| {
                config.settings[p]
                    .iter()
                    .map(|s| plus_vector(s, dims[party_modes[p]]))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        let table = rho.projector_table(party_modes[0], &vectors[0], &vectors[1])?;
        let (pa, pb, pab) = (table.first, table.second, table.joint);
        let tr = rho.trace();
        Ok(match &self.inequality {
            InequalitySpec::Chsh => {
                let e = |i: usize, j: usize| 4.0 * pab[i][j] - 2.0 * pa[i] - 2.0 * pb[j] + tr;
                (e(0, 0) + e(0, 1) + e(1, 0) - e(1, 1)).abs()
            }
            InequalitySpec::CollinsGisin(cg) => cg.evaluate(&pa, &pb, &pab),
            InequalitySpec::W3zb { .. } => unreachable!("validated in OptimizationProblem::validate"),
        })
    }

    /// Violation of a raw parameter vector.
    pub fn objective(&self, x: &[f64], eta: f64) -> Result<f64> {
        self.violation(&self.decode(x)?, eta)
    }

    /// Collins–Gisin table, when the inequality is one.
    pub fn cg(&self) -> Option<&CgInequality> {
        match &self.inequality {
            InequalitySpec::CollinsGisin(cg) => Some(cg),
            _ => None,
        }
    }
}

fn table_values(
    parties: usize,
    corr: impl Fn(&[[[C; 2]; 2]]) -> Result<f64>,
    blocks: &[[[[C; 2]; 2]; 2]],
) -> Result<Vec<f64>> {
    let mut chosen = Vec::with_capacity(parties);
    (0..1usize << parties)
        .map(|mask| {
            chosen.clear();
            chosen.extend((0..parties).map(|k| blocks[k][(mask >> k) & 1]));
            corr(&chosen)
        })
        .collect()
}

fn swap_modes(st: &MultiModeState<f64>) -> Result<MultiModeState<f64>> {
    let dims = st.space().dims();
    let (d0, d1) = (dims[0], dims[1]);
    let space = crate::fock::ModeSpace::new(vec![d1, d0])?;
    let n = d0 * d1;
    let mut m = crate::fock::Matrix::<f64>::zeros((n, n));
    let perm = |i: usize| (i % d1) * d0 + i / d1;
    for r in 0..n {
        for c in 0..n {
            m[[perm(r), perm(c)]] = st.matrix()[[r, c]];
        }
    }
    MultiModeState::with_mode_parties(space, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(p: &OptimizationProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = p.parameter_space();
        (0..s.dim()).map(|i| rng.random_range(s.lower[i]..=s.upper[i])).collect()
    }

    fn check_fast_against_dense(p: &OptimizationProblem, eta: f64, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mut x = random_point(p, &mut rng);
            // keep squeezed-state amplitudes where truncation is harmless
            if let StateFamily::Tmss { .. } = p.family {
                x[0] *= 0.3;
            }
            let c = p.decode(&x).unwrap();
            let fast = p.violation(&c, eta).unwrap();
            let dense = p.violation_dense(&c, eta).unwrap();
            assert_abs_diff_eq!(fast, dense, epsilon = tol);
        }
    }

    #[test]
    fn fast_paths_match_dense() {
        let mut tmss = OptimizationProblem::tmss_chsh();
        tmss.n_max = 8;
        check_fast_against_dense(&tmss, 0.8, 1e-12);
        tmss.symmetric = false;
        tmss.family = StateFamily::Tmss { phase: None };
        check_fast_against_dense(&tmss, 0.7, 1e-12);
        tmss.inequality = InequalitySpec::i3322();
        check_fast_against_dense(&tmss, 0.7, 1e-12);
        check_fast_against_dense(&OptimizationProblem::atom_chsh(), 0.6, 1e-12);
        check_fast_against_dense(&OptimizationProblem::atom_i3322(), 0.6, 1e-12);
        let mut atom_first = OptimizationProblem::atom_i3322();
        atom_first.family = StateFamily::AtomPhoton { atom_party: 0 };
        check_fast_against_dense(&atom_first, 0.45, 1e-12);
        for n in 2..=6 {
            let mut w = OptimizationProblem::wstate(n, PhotonMeasurement::Displacement).unwrap();
            check_fast_against_dense(&w, 0.8, 1e-12);
            w.symmetric = false;
            check_fast_against_dense(&w, 0.8, 1e-12);
            check_fast_against_dense(&OptimizationProblem::wstate(n, PhotonMeasurement::Pauli).unwrap(), 0.8, 1e-12);
        }
        for n in 2..=4 {
            check_fast_against_dense(&OptimizationProblem::atom_wstate(n).unwrap(), 0.55, 1e-12);
        }
    }

    #[test]
    fn plus_vector_is_plus_eigenvector() {
        let s = MeasurementSetting::bloch_angles(1.1, -2.3);
        let u = plus_vector(&s, 2).unwrap();
        let obs = s.observable(2).unwrap().into_matrix();
        for r in 0..2 {
            let want = 2.0 * u[r] * u[0].conj();
            let want1 = 2.0 * u[r] * u[1].conj();
            let e0 = if r == 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!((want - e0 - obs[[r, 0]]).norm(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!((want1 - (1.0 - e0) - obs[[r, 1]]).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let p = OptimizationProblem::tmss_chsh();
        assert!(p.decode(&[0.1, 0.2]).is_err());
        assert_eq!(p.parameter_space().dim(), 3);
    }

    #[test]
    fn unsupported_combinations_are_rejected() {
        assert!(OptimizationProblem::new(
            StateFamily::Tmss { phase: None },
            InequalitySpec::W3zb { parties: 2 },
            PhotonMeasurement::Displacement
        )
        .is_err());
        assert!(OptimizationProblem::new(
            StateFamily::Wstate { parties: 3 },
            InequalitySpec::W3zb { parties: 4 },
            PhotonMeasurement::Displacement
        )
        .is_err());
        assert!(OptimizationProblem::new(
            StateFamily::Tmss { phase: None },
            InequalitySpec::Chsh,
            PhotonMeasurement::Pauli
        )
        .is_err());
    }

    #[test]
    fn scaling_displacements_touches_only_displacements() {
        let p = OptimizationProblem::atom_chsh();
        let c = p.decode(&[0.5, 1.0, 0.2, 2.0, 0.1, 0.3, 0.4, 1.0]).unwrap();
        let d = c.displacements();
        assert_eq!(d.len(), 2);
        let scaled = c.with_scaled_displacements(&[1.1, 0.9]);
        assert_abs_diff_eq!(scaled.displacements()[0].norm(), d[0].norm() * 1.1, epsilon = 1e-15);
        assert_eq!(scaled.settings[0], c.settings[0]);
    }
}
