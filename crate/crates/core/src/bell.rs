//! Bell expressions: CHSH, the Collins–Gisin `I_mm22` family and the
//! nonlinear full-correlator condition of Werner–Wolf–Weinfurter–Żukowski–Brukner,
//! together with deterministic-strategy bounds used to validate them.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{Matrix, MeasurementSetting, MultiModeState};
use crate::scalar::{Cplx, Real};

/// Largest number of deterministic strategies `lhv_bound` will enumerate.
pub const ENUMERATION_CAP: u128 = 1 << 20;

/// Linear two-party inequality in probability form
/// `Σ_i a_i P(A_i) + Σ_j b_j P(B_j) + Σ_ij J_ij P(A_i B_j) ≤ bound`,
/// where `P` is the probability of the `+1` outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgInequality {
    pub name: String,
    pub marginal_a: Vec<i64>,
    pub marginal_b: Vec<i64>,
    pub joint: Vec<Vec<i64>>,
    pub bound: i64,
}

impl CgInequality {
    /// Builds the inequality and checks the declared bound against
    /// exhaustive enumeration of deterministic strategies.
    pub fn new(
        name: impl Into<String>,
        marginal_a: Vec<i64>,
        marginal_b: Vec<i64>,
        joint: Vec<Vec<i64>>,
        bound: i64,
    ) -> Result<Self> {
        let name = name.into();
        if joint.len() != marginal_a.len() || joint.iter().any(|row| row.len() != marginal_b.len()) {
            return Err(Error::InvalidState(format!(
                "{name}: coefficient table shape does not match marginals"
            )));
        }
        let ineq = Self {
            name,
            marginal_a,
            marginal_b,
            joint,
            bound,
        };
        let enumerated = ineq.deterministic_max()?;
        if enumerated != bound {
            return Err(Error::InvalidState(format!(
                "{}: declared bound {bound} but deterministic strategies reach {enumerated}",
                ineq.name
            )));
        }
        Ok(ineq)
    }

    /// `I_mm22` with `m` settings per party:
    /// `J_ij = 1` for `i + j < m`, `−1` for `i + j = m`, `0` beyond;
    /// party A marginals `(−1, 0, …)`, party B marginals `(−(m−1), …, −1, 0)`.
    pub fn imm22(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(invalid("settings", m as f64, "need at least 2"));
        }
        let joint = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| match (i + j).cmp(&(m - 1)) {
                        std::cmp::Ordering::Less | std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Greater if i + j == m => -1,
                        _ => 0,
                    })
                    .collect()
            })
            .collect();
        let mut marginal_a = vec![0; m];
        marginal_a[0] = -1;
        let marginal_b = (0..m).map(|j| -((m - 1 - j) as i64)).collect();
        Self::new(format!("I{m}{m}22"), marginal_a, marginal_b, joint, 0)
    }

    pub fn i3322() -> Self {
        Self::imm22(3).expect("I3322 coefficients are valid")
    }

    /// Same inequality with the `+1` and `−1` outcomes of every setting of
    /// one party swapped (`party` 0 or 1), rewritten in the original
    /// probabilities. The bound is re-derived by enumeration.
    pub fn with_outcomes_swapped(&self, party: usize) -> Result<Self> {
        let (ma, mb) = (self.settings_a(), self.settings_b());
        let mut marginal_a = self.marginal_a.clone();
        let mut marginal_b = self.marginal_b.clone();
        let mut joint = self.joint.clone();
        let mut constant = 0;
        match party {
            0 => {
                // P(A_i = −) = 1 − P(A_i), P(A_i = −, B_j) = P(B_j) − P(A_i B_j)
                for i in 0..ma {
                    constant += self.marginal_a[i];
                    marginal_a[i] = -self.marginal_a[i];
                    for j in 0..mb {
                        marginal_b[j] += self.joint[i][j];
                        joint[i][j] = -self.joint[i][j];
                    }
                }
            }
            1 => {
                for j in 0..mb {
                    constant += self.marginal_b[j];
                    marginal_b[j] = -self.marginal_b[j];
                    for i in 0..ma {
                        marginal_a[i] += self.joint[i][j];
                        joint[i][j] = -self.joint[i][j];
                    }
                }
            }
            _ => return Err(invalid("party", party as f64, "must be 0 or 1")),
        }
        let relabeled = Self {
            name: format!("{} (outcomes of party {party} swapped)", self.name),
            marginal_a,
            marginal_b,
            joint,
            bound: self.bound - constant,
        };
        let bound = relabeled.deterministic_max()?;
        Self::new(relabeled.name, relabeled.marginal_a, relabeled.marginal_b, relabeled.joint, bound)
    }

    /// Parties exchanged.
    pub fn transposed(&self) -> Result<Self> {
        let joint = (0..self.settings_b())
            .map(|j| (0..self.settings_a()).map(|i| self.joint[i][j]).collect())
            .collect();
        Self::new(
            format!("{} (parties exchanged)", self.name),
            self.marginal_b.clone(),
            self.marginal_a.clone(),
            joint,
            self.bound,
        )
    }

    pub fn settings_a(&self) -> usize {
        self.marginal_a.len()
    }

    pub fn settings_b(&self) -> usize {
        self.marginal_b.len()
    }

    /// Exact maximum over deterministic local strategies.
    pub fn deterministic_max(&self) -> Result<i64> {
        let (ma, mb) = (self.settings_a(), self.settings_b());
        let strategies = 1u128 << (ma + mb);
        if strategies > ENUMERATION_CAP {
            return Err(Error::EnumerationTooLarge {
                strategies,
                cap: ENUMERATION_CAP,
            });
        }
        let mut best = i64::MIN;
        for sa in 0..1usize << ma {
            for sb in 0..1usize << mb {
                let a = |i: usize| ((sa >> i) & 1) as i64;
                let b = |j: usize| ((sb >> j) & 1) as i64;
                let mut v = 0;
                for i in 0..ma {
                    v += self.marginal_a[i] * a(i);
                    for j in 0..mb {
                        v += self.joint[i][j] * a(i) * b(j);
                    }
                }
                for j in 0..mb {
                    v += self.marginal_b[j] * b(j);
                }
                best = best.max(v);
            }
        }
        Ok(best)
    }

    /// Value from single-party `+1` probabilities and the joint `(+1,+1)`
    /// probability table.
    pub fn evaluate<T: Real>(&self, pa: &[T], pb: &[T], pab: &[Vec<T>]) -> T {
        let coef = |c: i64| T::of(c as f64);
        let mut v = T::zero();
        for (i, &a) in self.marginal_a.iter().enumerate() {
            v += coef(a) * pa[i];
            for (j, &c) in self.joint[i].iter().enumerate() {
                v += coef(c) * pab[i][j];
            }
        }
        for (j, &b) in self.marginal_b.iter().enumerate() {
            v += coef(b) * pb[j];
        }
        v
    }
}

/// Which Bell expression to test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InequalitySpec {
    /// Correlator form, local bound 2.
    Chsh,
    CollinsGisin(CgInequality),
    /// Nonlinear full-correlator condition for `parties` parties, local bound 1.
    W3zb { parties: usize },
}

impl InequalitySpec {
    pub fn i3322() -> Self {
        Self::CollinsGisin(CgInequality::i3322())
    }

    pub fn imm22(m: usize) -> Result<Self> {
        Ok(Self::CollinsGisin(CgInequality::imm22(m)?))
    }

    pub fn classical_bound(&self) -> f64 {
        match self {
            Self::Chsh => 2.0,
            Self::CollinsGisin(cg) => cg.bound as f64,
            Self::W3zb { .. } => 1.0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Chsh => "CHSH".into(),
            Self::CollinsGisin(cg) => cg.name.clone(),
            Self::W3zb { parties } => format!("W3ZB(N={parties})"),
        }
    }

    /// Measurement settings each party chooses between.
    pub fn settings_per_party(&self) -> usize {
        match self {
            Self::Chsh | Self::W3zb { .. } => 2,
            Self::CollinsGisin(cg) => cg.settings_a().max(cg.settings_b()),
        }
    }
}

/// Maximum of a linear Bell expression over deterministic local strategies.
pub fn lhv_bound(spec: &InequalitySpec) -> Result<f64> {
    match spec {
        InequalitySpec::Chsh => {
            let mut best = i64::MIN;
            for s in 0..16u32 {
                let v = |bit: u32| if (s >> bit) & 1 == 1 { -1 } else { 1 };
                let (a0, a1, b0, b1) = (v(0), v(1), v(2), v(3));
                best = best.max(a0 * b0 + a0 * b1 + a1 * b0 - a1 * b1);
            }
            Ok(best as f64)
        }
        InequalitySpec::CollinsGisin(cg) => Ok(cg.deterministic_max()? as f64),
        InequalitySpec::W3zb { .. } => Err(Error::UnsupportedCombination {
            family: "deterministic enumeration".into(),
            inequality: "nonlinear W3ZB".into(),
        }),
    }
}

fn local_observables<T: Real>(
    state: &MultiModeState<T>,
    settings: &[MeasurementSetting<T>],
) -> Result<Vec<Matrix<T>>> {
    let parties = state.num_parties();
    if settings.len() != parties {
        return Err(Error::SettingCount {
            expected: parties,
            got: settings.len(),
        });
    }
    let mut ops = Vec::with_capacity(parties);
    for (party, setting) in settings.iter().enumerate() {
        let modes = state.modes_of_party(party);
        if modes != [party] {
            return Err(Error::InvalidState(format!(
                "party {party} must hold exactly mode {party}, holds {modes:?}"
            )));
        }
        ops.push(setting.observable(state.space().dims()[party])?.into_matrix());
    }
    Ok(ops)
}

/// Full correlator `Tr[⊗_k A_k ρ]`, one setting per party.
pub fn correlator<T: Real>(state: &MultiModeState<T>, settings: &[MeasurementSetting<T>]) -> Result<T> {
    let ops = local_observables(state, settings)?;
    crate::fock::finish_expectation(state.local_expectation(&ops)?)
}

/// `⟨A0B0⟩ + ⟨A0B1⟩ + ⟨A1B0⟩ − ⟨A1B1⟩` for a bipartite state.
pub fn chsh_value<T: Real>(
    state: &MultiModeState<T>,
    a: &[MeasurementSetting<T>; 2],
    b: &[MeasurementSetting<T>; 2],
) -> Result<T> {
    let e = |i: usize, j: usize| correlator(state, &[a[i], b[j]]);
    Ok(e(0, 0)? + e(0, 1)? + e(1, 0)? - e(1, 1)?)
}

/// Collins–Gisin expression value with `+1`-outcome probabilities.
pub fn cg_value<T: Real>(
    state: &MultiModeState<T>,
    ineq: &CgInequality,
    a: &[MeasurementSetting<T>],
    b: &[MeasurementSetting<T>],
) -> Result<T> {
    if a.len() != ineq.settings_a() || b.len() != ineq.settings_b() {
        return Err(Error::SettingCount {
            expected: ineq.settings_a() + ineq.settings_b(),
            got: a.len() + b.len(),
        });
    }
    let id = |dim: usize| Matrix::<T>::from_diag_elem(dim, Cplx::new(T::one(), T::zero()));
    let dims = state.space().dims().to_vec();
    if dims.len() != 2 || state.num_parties() != 2 {
        return Err(Error::InvalidState("Collins–Gisin expressions need two single-mode parties".into()));
    }
    let obs_a: Vec<Matrix<T>> = a
        .iter()
        .map(|s| s.observable(dims[0]).map(|o| o.into_matrix()))
        .collect::<Result<_>>()?;
    let obs_b: Vec<Matrix<T>> = b
        .iter()
        .map(|s| s.observable(dims[1]).map(|o| o.into_matrix()))
        .collect::<Result<_>>()?;
    let ev = |ops: [Matrix<T>; 2]| -> Result<T> {
        crate::fock::finish_expectation(state.local_expectation(&ops)?)
    };
    let half = T::of(0.5);
    let quarter = T::of(0.25);
    let tr = state.trace();
    let ea: Vec<T> = obs_a
        .iter()
        .map(|o| ev([o.clone(), id(dims[1])]))
        .collect::<Result<_>>()?;
    let eb: Vec<T> = obs_b
        .iter()
        .map(|o| ev([id(dims[0]), o.clone()]))
        .collect::<Result<_>>()?;
    let pa: Vec<T> = ea.iter().map(|&e| half * (tr + e)).collect();
    let pb: Vec<T> = eb.iter().map(|&e| half * (tr + e)).collect();
    let mut pab = vec![vec![T::zero(); obs_b.len()]; obs_a.len()];
    for (i, oa) in obs_a.iter().enumerate() {
        for (j, ob) in obs_b.iter().enumerate() {
            let eab = ev([oa.clone(), ob.clone()])?;
            pab[i][j] = quarter * (tr + ea[i] + eb[j] + eab);
        }
    }
    Ok(ineq.evaluate(&pa, &pb, &pab))
}

/// I3322 value, three settings per party.
pub fn i3322_value<T: Real>(
    state: &MultiModeState<T>,
    a: &[MeasurementSetting<T>; 3],
    b: &[MeasurementSetting<T>; 3],
) -> Result<T> {
    cg_value(state, &CgInequality::i3322(), a, b)
}

/// Full correlators `ξ(s)` indexed by setting bitmask; bit `k` of the index
/// is the setting of party `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorTable<T> {
    parties: usize,
    values: Vec<T>,
}

impl<T: Real> CorrelatorTable<T> {
    pub fn new(parties: usize, values: Vec<T>) -> Result<Self> {
        let expected = 1usize << parties;
        if parties == 0 || values.len() != expected {
            return Err(Error::IncompleteTable {
                parties,
                expected,
                got: values.len(),
            });
        }
        let limit = T::one() + T::of(1e-8);
        if let Some(bad) = values.iter().find(|v| v.abs() > limit) {
            return Err(Error::InvalidState(format!("correlator {bad} outside [-1, 1]")));
        }
        Ok(Self { parties, values })
    }

    pub fn from_fn(parties: usize, f: impl FnMut(usize) -> Result<T>) -> Result<Self> {
        let values = (0..1usize << parties).map(f).collect::<Result<Vec<_>>>()?;
        Self::new(parties, values)
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, settings_mask: usize) -> T {
        self.values[settings_mask]
    }
}

/// In-place Walsh–Hadamard transform (unnormalised).
fn walsh_hadamard<T: Real>(v: &mut [T]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (x, y) = (v[i], v[i + h]);
                v[i] = x + y;
                v[i + h] = x - y;
            }
        }
        h *= 2;
    }
}

/// `ξ̃(r) = 2^{−N} Σ_s (−1)^{r·s} ξ(s)`.
pub fn fourier_coefficients<T: Real>(table: &CorrelatorTable<T>) -> Vec<T> {
    let mut v = table.values.clone();
    walsh_hadamard(&mut v);
    let scale = T::one() / T::from_count(v.len());
    v.iter().map(|&x| x * scale).collect()
}

/// Inverse of [`fourier_coefficients`].
pub fn correlators_from_fourier<T: Real>(coeffs: &[T]) -> Vec<T> {
    let mut v = coeffs.to_vec();
    walsh_hadamard(&mut v);
    v
}

/// `Σ_r |ξ̃(r)|`; local models satisfy `≤ 1`.
pub fn w3zb_value<T: Real>(table: &CorrelatorTable<T>) -> T {
    fourier_coefficients(table).iter().map(|x| x.abs()).sum()
}

/// W3ZB value straight from correlators, skipping table validation.
pub(crate) fn w3zb_from_values<T: Real>(values: &mut [T]) -> T {
    walsh_hadamard(values);
    let scale = T::one() / T::from_count(values.len());
    values.iter().map(|x| x.abs()).sum::<T>() * scale
}

/// Correlator table by dense evaluation, `settings[k]` holding the two
/// settings of party `k`.
pub fn correlator_table<T: Real>(
    state: &MultiModeState<T>,
    settings: &[[MeasurementSetting<T>; 2]],
) -> Result<CorrelatorTable<T>> {
    let parties = settings.len();
    CorrelatorTable::from_fn(parties, |mask| {
        let chosen: Vec<_> = (0..parties).map(|k| settings[k][(mask >> k) & 1]).collect();
        correlator(state, &chosen)
    })
}

/// Generating-function coefficients of `Π_k (m00 + x m10 + y m01 + z m11)`
/// truncated to the monomials needed for single-excitation states.
#[derive(Debug, Clone, Copy)]
struct SingleExcitationSums<T: Real> {
    vac: Cplx<T>,
    up: Cplx<T>,
    down: Cplx<T>,
    hop: Cplx<T>,
    diag: Cplx<T>,
}

impl<T: Real> SingleExcitationSums<T> {
    fn of(ops: &[[[Cplx<T>; 2]; 2]]) -> Self {
        let one = Cplx::new(T::one(), T::zero());
        let mut s = Self {
            vac: one,
            up: Cplx::zero(),
            down: Cplx::zero(),
            hop: Cplx::zero(),
            diag: Cplx::zero(),
        };
        for m in ops {
            let (m00, m01, m10, m11) = (m[0][0], m[0][1], m[1][0], m[1][1]);
            s = Self {
                vac: s.vac * m00,
                up: s.up * m00 + s.vac * m10,
                down: s.down * m00 + s.vac * m01,
                hop: s.hop * m00 + s.up * m01 + s.down * m10,
                diag: s.diag * m00 + s.vac * m11,
            };
        }
        s
    }
}

/// 2×2 block of an observable on the `{|0⟩, |1⟩}` subspace.
pub fn qubit_block<T: Real>(setting: &MeasurementSetting<T>) -> Result<[[Cplx<T>; 2]; 2]> {
    let m = setting.observable(2)?.into_matrix();
    Ok([[m[[0, 0]], m[[0, 1]]], [m[[1, 0]], m[[1, 1]]]])
}

/// Closed-form `Tr[⊗_k A_k ρ_W(η)]` for the lossy W-state, where `ops[k]` is
/// the `{|0⟩,|1⟩}` block of party `k`'s observable.
pub fn w_mixture_correlator<T: Real>(eta: T, ops: &[[[Cplx<T>; 2]; 2]]) -> T {
    let n = T::from_count(ops.len());
    let s = SingleExcitationSums::of(ops);
    let w = (s.diag + s.hop) / n;
    (w * eta + s.vac * (T::one() - eta)).re
}

/// Closed-form correlator for an atom (observable block `atom`) entangled
/// with a lossy W-state on the photonic parties `photons`.
pub fn atom_w_correlator<T: Real>(
    theta: T,
    eta: T,
    atom: &[[Cplx<T>; 2]; 2],
    photons: &[[[Cplx<T>; 2]; 2]],
) -> T {
    let n = T::from_count(photons.len());
    let s = SingleExcitationSums::of(photons);
    let (sn, cs) = theta.sin_cos();
    let d = eta.sqrt() * sn;
    let w = (s.diag + s.hop) / n;
    let cross = (atom[0][1] * s.down + atom[1][0] * s.up) / n.sqrt();
    let val = atom[0][0] * s.vac * (cs * cs)
        + atom[1][1] * w * (d * d)
        + cross * (cs * d)
        + atom[1][1] * s.vac * ((T::one() - eta) * sn * sn);
    val.re
}
