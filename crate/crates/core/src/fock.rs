//! Dense linear algebra on products of truncated Fock spaces.
//!
//! Basis ordering is row-major over modes: mode 0 is the most significant
//! digit of a composite index, matching the Kronecker-product convention used
//! by [`tensor`].

use ndarray::Array2;
use num_traits::{One, Zero};

use crate::error::{invalid, Error, Result};
use crate::scalar::{cplx, real, Cplx, Real};

pub type Matrix<T> = Array2<Cplx<T>>;

/// Hermiticity tolerance for operators and states (elementwise).
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Lowest eigenvalue accepted for a density matrix.
pub const PSD_TOL: f64 = 1e-10;
/// Largest imaginary residue tolerated in an expectation value.
pub const IMAG_TOL: f64 = 1e-10;

/// Tolerance scaled up for low-precision scalars so `f32` checks stay meaningful.
pub(crate) fn tol<T: Real>(target: f64) -> T {
    T::of(target).max(T::epsilon() * T::of(1e3))
}

/// Per-mode truncation dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModeSpace {
    dims: Vec<usize>,
}

impl ModeSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidModeDimension(0));
        }
        if let Some(&bad) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidModeDimension(bad));
        }
        Ok(Self { dims })
    }

    /// `modes` copies of a `dim`-level mode.
    pub fn uniform(modes: usize, dim: usize) -> Result<Self> {
        Self::new(vec![dim; modes])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dim(&self, mode: usize) -> Result<usize> {
        self.dims.get(mode).copied().ok_or(Error::InvalidMode {
            index: mode,
            modes: self.dims.len(),
        })
    }

    /// Distance in the composite index between consecutive levels of `mode`.
    pub fn stride(&self, mode: usize) -> usize {
        self.dims[mode + 1..].iter().product()
    }

    pub fn concat(&self, other: &ModeSpace) -> ModeSpace {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        ModeSpace { dims }
    }

    /// Composite index of a per-mode occupation pattern.
    pub fn index_of(&self, levels: &[usize]) -> usize {
        debug_assert_eq!(levels.len(), self.dims.len());
        levels
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&l, &d)| acc * d + l)
    }

    pub(crate) fn ensure_same(&self, other: &ModeSpace) -> Result<()> {
        if self != other {
            return Err(Error::SpaceMismatch {
                left: self.dims.clone(),
                right: other.dims.clone(),
            });
        }
        Ok(())
    }
}

fn check_shape<T>(space: &ModeSpace, matrix: &Matrix<T>) -> Result<()> {
    let expected = space.total_dim();
    let (rows, cols) = matrix.dim();
    if rows != expected || cols != expected {
        return Err(Error::ShapeMismatch {
            rows,
            cols,
            expected,
        });
    }
    Ok(())
}

/// Largest elementwise deviation `|A_ij - conj(A_ji)|`.
pub fn hermiticity_defect<T: Real>(m: &Matrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn adjoint<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    m.t().mapv(|z| z.conj())
}

pub fn max_abs_diff<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (x, y)| acc.max((*x - *y).norm()))
}

pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Matrix::<T>::zeros((n, m));
    for i in 0..n {
        for l in 0..k {
            let x = a[[i, l]];
            if x.is_zero() {
                continue;
            }
            for j in 0..m {
                out[[i, j]] = out[[i, j]] + x * b[[l, j]];
            }
        }
    }
    out
}

pub fn kron<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Matrix::<T>::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x.is_zero() {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = x * b[[k, l]];
                }
            }
        }
    }
    out
}

pub fn trace<T: Real>(m: &Matrix<T>) -> Cplx<T> {
    m.diag().iter().fold(Cplx::zero(), |acc, z| acc + z)
}

/// `(1 ⊗ op ⊗ 1) · mat` with `op` acting on the digit of period `stride`.
pub(crate) fn apply_left_on_mode<T: Real>(
    mat: &Matrix<T>,
    stride: usize,
    op: &Matrix<T>,
) -> Matrix<T> {
    let d = op.nrows();
    let dim = mat.nrows();
    let cols = mat.ncols();
    let block = d * stride;
    let mut out = Matrix::<T>::zeros((dim, cols));
    for hi in 0..dim / block {
        for lo in 0..stride {
            for a in 0..d {
                let row_out = hi * block + a * stride + lo;
                for b in 0..d {
                    let k = op[[a, b]];
                    if k.is_zero() {
                        continue;
                    }
                    let row_in = hi * block + b * stride + lo;
                    for c in 0..cols {
                        out[[row_out, c]] = out[[row_out, c]] + k * mat[[row_in, c]];
                    }
                }
            }
        }
    }
    out
}

/// `(1 ⊗ op ⊗ 1) · mat · (1 ⊗ op ⊗ 1)†`.
pub(crate) fn conjugate_on_mode<T: Real>(mat: &Matrix<T>, stride: usize, op: &Matrix<T>) -> Matrix<T> {
    let left = apply_left_on_mode(mat, stride, op);
    adjoint(&apply_left_on_mode(&adjoint(&left), stride, op))
}

/// Hermitian positive-definiteness test via Cholesky of `m + shift·1`.
/// Succeeds exactly when every eigenvalue of `m` exceeds `-shift`.
pub fn is_psd_with_shift<T: Real>(m: &Matrix<T>, shift: T) -> bool {
    let n = m.nrows();
    let mut l = Matrix::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]].re + shift;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > T::zero()) {
            return false;
        }
        let ljj = d.sqrt();
        l[[j, j]] = real(ljj);
        for i in j + 1..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / ljj;
        }
    }
    true
}

/// Complex square matrix on a [`ModeSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator<T: Real> {
    space: ModeSpace,
    matrix: Matrix<T>,
}

impl<T: Real> TruncatedOperator<T> {
    pub fn new(space: ModeSpace, matrix: Matrix<T>) -> Result<Self> {
        check_shape(&space, &matrix)?;
        Ok(Self { space, matrix })
    }

    pub fn identity(space: ModeSpace) -> Self {
        let n = space.total_dim();
        Self {
            matrix: Matrix::from_diag_elem(n, Cplx::one()),
            space,
        }
    }

    /// Single-mode operator from a diagonal.
    pub fn diagonal(values: &[T]) -> Result<Self> {
        let space = ModeSpace::new(vec![values.len()])?;
        let mut matrix = Matrix::zeros((values.len(), values.len()));
        for (i, v) in values.iter().enumerate() {
            matrix[[i, i]] = real(*v);
        }
        Ok(Self { space, matrix })
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: adjoint(&self.matrix),
        }
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.space.ensure_same(&other.space)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: matmul(&self.matrix, &other.matrix),
        })
    }

    pub fn hermiticity_defect(&self) -> T {
        hermiticity_defect(&self.matrix)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() <= tol(HERMITIAN_TOL)
    }

    /// Largest elementwise distance from the identity.
    pub fn distance_from_identity(&self) -> T {
        let n = self.matrix.nrows();
        let id = Matrix::<T>::from_diag_elem(n, Cplx::one());
        max_abs_diff(&self.matrix, &id)
    }
}

/// Density operator plus the assignment of modes to parties.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModeState<T: Real> {
    space: ModeSpace,
    matrix: Matrix<T>,
    party_map: Vec<usize>,
    truncation_deficit: T,
}

impl<T: Real> MultiModeState<T> {
    /// `party_map[m]` is the party holding mode `m`; parties are numbered
    /// contiguously from zero.
    pub fn new(space: ModeSpace, matrix: Matrix<T>, party_map: Vec<usize>) -> Result<Self> {
        check_shape(&space, &matrix)?;
        if party_map.len() != space.num_modes() {
            return Err(Error::InvalidState(format!(
                "party map has {} entries for {} modes",
                party_map.len(),
                space.num_modes()
            )));
        }
        let parties = party_map.iter().max().map_or(0, |p| p + 1);
        if (0..parties).any(|p| !party_map.contains(&p)) {
            return Err(Error::InvalidState("party numbering has gaps".into()));
        }
        Ok(Self {
            space,
            matrix,
            party_map,
            truncation_deficit: T::zero(),
        })
    }

    /// One party per mode.
    pub fn with_mode_parties(space: ModeSpace, matrix: Matrix<T>) -> Result<Self> {
        let map = (0..space.num_modes()).collect();
        Self::new(space, matrix, map)
    }

    /// `|ψ⟩⟨ψ|` for the given amplitudes, one party per mode.
    pub fn pure(space: ModeSpace, amplitudes: &[Cplx<T>]) -> Result<Self> {
        let n = space.total_dim();
        if amplitudes.len() != n {
            return Err(Error::ShapeMismatch {
                rows: amplitudes.len(),
                cols: 1,
                expected: n,
            });
        }
        let mut matrix = Matrix::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                matrix[[i, j]] = amplitudes[i] * amplitudes[j].conj();
            }
        }
        Self::with_mode_parties(space, matrix)
    }

    /// All modes in the vacuum.
    pub fn vacuum(space: ModeSpace) -> Self {
        let n = space.total_dim();
        let mut matrix = Matrix::zeros((n, n));
        matrix[[0, 0]] = Cplx::one();
        let map = (0..space.num_modes()).collect();
        Self {
            space,
            matrix,
            party_map: map,
            truncation_deficit: T::zero(),
        }
    }

    pub(crate) fn with_deficit(mut self, deficit: T) -> Self {
        self.truncation_deficit = deficit;
        self
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn party_map(&self) -> &[usize] {
        &self.party_map
    }

    pub fn num_parties(&self) -> usize {
        self.party_map.iter().max().map_or(0, |p| p + 1)
    }

    pub fn modes_of_party(&self, party: usize) -> Vec<usize> {
        (0..self.party_map.len())
            .filter(|&m| self.party_map[m] == party)
            .collect()
    }

    /// Weight missing from the trace because of Fock-space truncation.
    pub fn truncation_deficit(&self) -> T {
        self.truncation_deficit
    }

    pub fn trace(&self) -> T {
        trace(&self.matrix).re
    }

    pub fn purity(&self) -> T {
        let n = self.matrix.nrows();
        let mut acc = T::zero();
        for i in 0..n {
            for j in 0..n {
                acc += (self.matrix[[i, j]] * self.matrix[[j, i]]).re;
            }
        }
        acc
    }

    pub fn element(&self, row: usize, col: usize) -> Cplx<T> {
        self.matrix[[row, col]]
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.space.ensure_same(&other.space)?;
        Ok(max_abs_diff(&self.matrix, &other.matrix))
    }

    /// Hermitian to 1e-12, trace in `[1 - deficit, 1]`, eigenvalues above -1e-10.
    pub fn validate(&self) -> Result<()> {
        let defect = self.hermiticity_defect();
        if defect > tol(HERMITIAN_TOL) {
            return Err(Error::InvalidState(format!(
                "not Hermitian (defect {defect})"
            )));
        }
        let tr = self.trace();
        let slack = tol::<T>(HERMITIAN_TOL);
        if tr > T::one() + slack || tr < T::one() - self.truncation_deficit - slack {
            return Err(Error::InvalidState(format!(
                "trace {tr} outside [1 - {}, 1]",
                self.truncation_deficit
            )));
        }
        if !is_psd_with_shift(&self.matrix, tol(PSD_TOL)) {
            return Err(Error::InvalidState(
                "eigenvalue below -1e-10".to_string(),
            ));
        }
        Ok(())
    }

    pub fn hermiticity_defect(&self) -> T {
        hermiticity_defect(&self.matrix)
    }

    /// `Σ_k K_k ρ K_k†` on one mode; the result is not renormalised.
    pub fn apply_mode_kraus(&self, mode: usize, kraus: &[Matrix<T>]) -> Result<Self> {
        let d = self.space.dim(mode)?;
        if let Some(k) = kraus.iter().find(|k| k.dim() != (d, d)) {
            return Err(Error::ShapeMismatch {
                rows: k.nrows(),
                cols: k.ncols(),
                expected: d,
            });
        }
        let stride = self.space.stride(mode);
        let n = self.matrix.nrows();
        let mut acc = Matrix::<T>::zeros((n, n));
        for k in kraus {
            acc = acc + conjugate_on_mode(&self.matrix, stride, k);
        }
        Ok(Self {
            space: self.space.clone(),
            matrix: acc,
            party_map: self.party_map.clone(),
            truncation_deficit: self.truncation_deficit,
        })
    }

    /// Divide by the trace.
    pub fn renormalized(&self) -> Result<Self> {
        let tr = self.trace();
        if !(tr > T::zero()) {
            return Err(Error::InvalidState(format!("cannot renormalise trace {tr}")));
        }
        let inv = real(T::one() / tr);
        Ok(Self {
            space: self.space.clone(),
            matrix: self.matrix.mapv(|z| z * inv),
            party_map: self.party_map.clone(),
            truncation_deficit: T::zero(),
        })
    }

    /// Same matrix with a different party assignment.
    pub fn regroup(&self, party_map: Vec<usize>) -> Result<Self> {
        Ok(Self::new(self.space.clone(), self.matrix.clone(), party_map)?
            .with_deficit(self.truncation_deficit))
    }

    /// `Tr[(⊗_m A_m) ρ]` for one single-mode operator per mode, without
    /// forming the Kronecker product.
    pub fn local_expectation(&self, ops: &[Matrix<T>]) -> Result<Cplx<T>> {
        if ops.len() != self.space.num_modes() {
            return Err(Error::SettingCount {
                expected: self.space.num_modes(),
                got: ops.len(),
            });
        }
        let mut acc = self.matrix.clone();
        for (mode, op) in ops.iter().enumerate() {
            let d = self.space.dims[mode];
            if op.dim() != (d, d) {
                return Err(Error::ShapeMismatch {
                    rows: op.nrows(),
                    cols: op.ncols(),
                    expected: d,
                });
            }
            acc = apply_left_on_mode(&acc, self.space.stride(mode), op);
        }
        Ok(trace(&acc))
    }
}

/// Density operator stored as its nonzero entries, with per-mode digits
/// precomputed so products of local rank-one projectors evaluate in time
/// linear in the number of entries.
#[derive(Debug, Clone)]
pub struct SparseDensity<T: Real> {
    space: ModeSpace,
    /// Row digits then column digits, `2 · modes` per entry.
    digits: Vec<u32>,
    values: Vec<Cplx<T>>,
    trace: T,
}

/// `+1`-outcome probabilities of a two-party measurement: marginals of each
/// party and the joint table, unnormalised by the state's trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorTable<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub joint: Vec<Vec<T>>,
}

impl<T: Real> SparseDensity<T> {
    pub fn from_entries(space: ModeSpace, entries: &[(usize, usize, Cplx<T>)]) -> Result<Self> {
        let n = space.total_dim();
        let modes = space.num_modes();
        let mut digits = vec![0u32; entries.len() * 2 * modes];
        let mut values = Vec::with_capacity(entries.len());
        let mut trace = T::zero();
        for (e, &(r, c, v)) in entries.iter().enumerate() {
            if r >= n || c >= n {
                return Err(Error::ShapeMismatch {
                    rows: r.max(c) + 1,
                    cols: r.max(c) + 1,
                    expected: n,
                });
            }
            if r == c {
                trace += v.re;
            }
            let slot = &mut digits[e * 2 * modes..(e + 1) * 2 * modes];
            let (mut r, mut c) = (r, c);
            for m in (0..modes).rev() {
                slot[m] = (r % space.dims[m]) as u32;
                slot[modes + m] = (c % space.dims[m]) as u32;
                r /= space.dims[m];
                c /= space.dims[m];
            }
            values.push(v);
        }
        Ok(Self {
            space,
            digits,
            values,
            trace,
        })
    }

    /// Nonzero entries of a dense state.
    pub fn from_dense(state: &MultiModeState<T>) -> Self {
        let entries: Vec<_> = state
            .matrix()
            .indexed_iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|((r, c), v)| (r, c, *v))
            .collect();
        Self::from_entries(state.space().clone(), &entries).expect("indices come from the same space")
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn trace(&self) -> T {
        self.trace
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn check_vector(&self, mode: usize, v: &[Cplx<T>]) -> Result<()> {
        if v.len() != self.space.dims[mode] {
            return Err(Error::ShapeMismatch {
                rows: v.len(),
                cols: 1,
                expected: self.space.dims[mode],
            });
        }
        Ok(())
    }

    /// `Tr[(⊗_m P_m) ρ]` where `P_m = |u_m⟩⟨u_m|` for `Some(u_m)` and the
    /// identity for `None`.
    pub fn projector_expectation(&self, vectors: &[Option<&[Cplx<T>]>]) -> Result<T> {
        let modes = self.space.num_modes();
        if vectors.len() != modes {
            return Err(Error::SettingCount {
                expected: modes,
                got: vectors.len(),
            });
        }
        for (m, v) in vectors.iter().enumerate() {
            if let Some(v) = v {
                self.check_vector(m, v)?;
            }
        }
        let mut acc = Cplx::<T>::zero();
        'entries: for (d, val) in self.digits.chunks_exact(2 * modes).zip(&self.values) {
            let (r, c) = d.split_at(modes);
            // Tr[P ρ] = Σ ρ_rc ⟨c|P|r⟩ with ⟨c|u⟩⟨u|r⟩ per mode
            let mut w = *val;
            for (m, v) in vectors.iter().enumerate() {
                match v {
                    Some(u) => w = w * u[c[m] as usize] * u[r[m] as usize].conj(),
                    None => {
                        if r[m] != c[m] {
                            continue 'entries;
                        }
                    }
                }
            }
            acc = acc + w;
        }
        finish_expectation(acc)
    }

    /// All marginal and joint `+1` probabilities of a two-mode state in one
    /// pass, with `first[i]` measured on `mode_first`.
    pub fn projector_table(
        &self,
        mode_first: usize,
        first: &[Vec<Cplx<T>>],
        second: &[Vec<Cplx<T>>],
    ) -> Result<ProjectorTable<T>> {
        if self.space.num_modes() != 2 || mode_first > 1 {
            return Err(Error::InvalidState("projector tables need a two-mode state".into()));
        }
        let mode_second = 1 - mode_first;
        for u in first {
            self.check_vector(mode_first, u)?;
        }
        for u in second {
            self.check_vector(mode_second, u)?;
        }
        let (na, nb) = (first.len(), second.len());
        let zero = Cplx::<T>::zero();
        let mut pa = vec![zero; na];
        let mut pb = vec![zero; nb];
        let mut pab = vec![zero; na * nb];
        let mut xa = vec![zero; na];
        let mut xb = vec![zero; nb];
        for (d, val) in self.digits.chunks_exact(4).zip(&self.values) {
            let (ra, rb) = (d[mode_first] as usize, d[mode_second] as usize);
            let (ca, cb) = (d[2 + mode_first] as usize, d[2 + mode_second] as usize);
            for (x, u) in xa.iter_mut().zip(first) {
                *x = u[ca] * u[ra].conj();
            }
            for (x, u) in xb.iter_mut().zip(second) {
                *x = u[cb] * u[rb].conj();
            }
            if rb == cb {
                for (p, x) in pa.iter_mut().zip(&xa) {
                    *p = *p + *val * *x;
                }
            }
            if ra == ca {
                for (p, x) in pb.iter_mut().zip(&xb) {
                    *p = *p + *val * *x;
                }
            }
            for (i, x) in xa.iter().enumerate() {
                let vx = *val * *x;
                for (j, y) in xb.iter().enumerate() {
                    pab[i * nb + j] = pab[i * nb + j] + vx * *y;
                }
            }
        }
        let fin = |v: Vec<Cplx<T>>| v.into_iter().map(finish_expectation).collect::<Result<Vec<T>>>();
        let joint = fin(pab)?;
        Ok(ProjectorTable {
            first: fin(pa)?,
            second: fin(pb)?,
            joint: joint.chunks(nb.max(1)).map(|c| c.to_vec()).collect(),
        })
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.space.total_dim();
        let modes = self.space.num_modes();
        let flat = |d: &[u32]| {
            d.iter()
                .zip(&self.space.dims)
                .fold(0usize, |acc, (&x, &dim)| acc * dim + x as usize)
        };
        let mut m = Matrix::<T>::zeros((n, n));
        for (d, v) in self.digits.chunks_exact(2 * modes).zip(&self.values) {
            let (r, c) = d.split_at(modes);
            m[[flat(r), flat(c)]] = *v;
        }
        m
    }
}

/// Measurement choice for one party.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementSetting<T: Real> {
    /// Displace by `α`, then a non-resolving detector; +1 for no click.
    Displacement(Cplx<T>),
    /// Projective qubit measurement along a unit Bloch vector.
    BlochProjection([T; 3]),
}

impl<T: Real> MeasurementSetting<T> {
    pub fn displacement(alpha: Cplx<T>) -> Self {
        Self::Displacement(alpha)
    }

    pub fn bloch(n: [T; 3]) -> Result<Self> {
        check_unit(&n)?;
        Ok(Self::BlochProjection(n))
    }

    /// Unit vector from polar and azimuthal angles.
    pub fn bloch_angles(polar: T, azimuth: T) -> Self {
        let s = polar.sin();
        Self::BlochProjection([s * azimuth.cos(), s * azimuth.sin(), polar.cos()])
    }

    /// Observable acting on a mode of dimension `dim`.
    pub fn observable(&self, dim: usize) -> Result<TruncatedOperator<T>> {
        match self {
            Self::Displacement(alpha) => displacement_measurement(*alpha, dim),
            Self::BlochProjection(n) => {
                if dim != 2 {
                    return Err(Error::ShapeMismatch {
                        rows: dim,
                        cols: dim,
                        expected: 2,
                    });
                }
                bloch_observable(*n)
            }
        }
    }

    /// Same setting with a displacement amplitude scaled by `factor`;
    /// Bloch settings are returned unchanged.
    pub fn scaled(&self, factor: T) -> Self {
        match self {
            Self::Displacement(a) => Self::Displacement(*a * factor),
            other => *other,
        }
    }
}

fn check_unit<T: Real>(n: &[T; 3]) -> Result<()> {
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if norm == T::zero() {
        return Err(invalid("bloch_vector", 0.0, "zero vector"));
    }
    if (norm - T::one()).abs() > tol(HERMITIAN_TOL) {
        return Err(invalid(
            "bloch_vector",
            norm.to_f64().unwrap_or(f64::NAN),
            "norm must be 1",
        ));
    }
    Ok(())
}

fn check_finite<T: Real>(alpha: Cplx<T>) -> Result<()> {
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(invalid("alpha", f64::NAN, "must be finite"));
    }
    Ok(())
}

fn check_nmax(n_max: usize) -> Result<()> {
    if n_max < 2 {
        return Err(Error::InvalidModeDimension(n_max));
    }
    Ok(())
}

/// Fock amplitudes `e^{-|α|²/2} αⁿ/√(n!)` for `n < n_max`.
pub fn coherent_vector<T: Real>(alpha: Cplx<T>, n_max: usize) -> Result<Vec<Cplx<T>>> {
    check_nmax(n_max)?;
    check_finite(alpha)?;
    let r = alpha.norm();
    let mut out = vec![Cplx::zero(); n_max];
    if r == T::zero() {
        out[0] = Cplx::one();
        return Ok(out);
    }
    let half = T::of(0.5);
    let ln_r = r.ln();
    let phase = alpha.arg();
    let lnf = crate::scalar::ln_factorial_table::<T>(n_max);
    for (n, slot) in out.iter_mut().enumerate() {
        let nn = T::from_count(n);
        let mag = (-half * r * r + nn * ln_r - half * lnf[n]).exp();
        *slot = Cplx::from_polar(mag, nn * phase);
    }
    Ok(out)
}

/// `M(α) = 2|α⟩⟨α| − 1` on the first `n_max` Fock levels.
pub fn displacement_measurement<T: Real>(
    alpha: Cplx<T>,
    n_max: usize,
) -> Result<TruncatedOperator<T>> {
    let v = coherent_vector(alpha, n_max)?;
    let two = real(T::of(2.0));
    let mut m = Matrix::<T>::zeros((n_max, n_max));
    for n in 0..n_max {
        for k in 0..n_max {
            m[[n, k]] = two * v[n] * v[k].conj();
        }
        m[[n, n]] = m[[n, n]] - Cplx::one();
    }
    TruncatedOperator::new(ModeSpace::new(vec![n_max])?, m)
}

/// `n·σ` in the ordered basis `{|g⟩, |s⟩}`.
pub fn bloch_observable<T: Real>(n: [T; 3]) -> Result<TruncatedOperator<T>> {
    check_unit(&n)?;
    let [x, y, z] = n;
    let mut m = Matrix::<T>::zeros((2, 2));
    m[[0, 0]] = real(z);
    m[[1, 1]] = real(-z);
    m[[0, 1]] = cplx(x, -y);
    m[[1, 0]] = cplx(x, y);
    TruncatedOperator::new(ModeSpace::new(vec![2])?, m)
}

/// Kronecker product in list order; the mode space is the concatenation.
pub fn tensor<T: Real>(ops: &[TruncatedOperator<T>]) -> Result<TruncatedOperator<T>> {
    let (first, rest) = ops
        .split_first()
        .ok_or_else(|| invalid("ops", 0.0, "need at least one operator"))?;
    let mut space = first.space.clone();
    let mut matrix = first.matrix.clone();
    for op in rest {
        space = space.concat(&op.space);
        matrix = kron(&matrix, &op.matrix);
    }
    TruncatedOperator::new(space, matrix)
}

/// `Tr[op ρ]`; errors when the imaginary part exceeds 1e-10.
pub fn expectation<T: Real>(op: &TruncatedOperator<T>, state: &MultiModeState<T>) -> Result<T> {
    op.space.ensure_same(&state.space)?;
    let n = op.matrix.nrows();
    let mut acc = Cplx::<T>::zero();
    for i in 0..n {
        for j in 0..n {
            acc = acc + op.matrix[[i, j]] * state.matrix[[j, i]];
        }
    }
    finish_expectation(acc)
}

pub(crate) fn finish_expectation<T: Real>(z: Cplx<T>) -> Result<T> {
    if z.im.abs() > tol(IMAG_TOL) {
        return Err(Error::NonHermitianExpectation(
            z.im.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    type C = Cplx<f64>;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    /// Displacement operator built by exponentiating `α a† − α* a` with a
    /// scaled Taylor series in a generous truncation.
    fn displacement_by_exponential(alpha: C, dim: usize) -> Matrix<f64> {
        let mut gen = Matrix::<f64>::zeros((dim, dim));
        for n in 1..dim {
            let s = (n as f64).sqrt();
            gen[[n, n - 1]] = alpha * s;
            gen[[n - 1, n]] = -alpha.conj() * s;
        }
        let squarings = 8;
        let scale = 0.5_f64.powi(squarings);
        let small = gen.mapv(|z| z * scale);
        let mut result = Matrix::<f64>::from_diag_elem(dim, C::one());
        let mut term = result.clone();
        for k in 1..30 {
            term = matmul(&term, &small).mapv(|z| z / k as f64);
            result = result + &term;
        }
        for _ in 0..squarings {
            result = matmul(&result, &result);
        }
        result
    }

    #[test]
    fn mode_space_rejects_small_dims() {
        assert!(ModeSpace::new(vec![2, 1]).is_err());
        assert!(ModeSpace::new(vec![]).is_err());
        let s = ModeSpace::new(vec![3, 2, 4]).unwrap();
        assert_eq!(s.total_dim(), 24);
        assert_eq!(s.stride(0), 8);
        assert_eq!(s.index_of(&[1, 1, 2]), 8 + 4 + 2);
    }

    #[test]
    fn coherent_vacuum() {
        let v = coherent_vector(c(0.0, 0.0), 5).unwrap();
        assert_eq!(v[0], C::one());
        assert!(v[1..].iter().all(|z| z.is_zero()));
    }

    #[test]
    fn coherent_small_alpha_is_normalized() {
        let v = coherent_vector(c(0.1, 0.0), 10).unwrap();
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(n2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coherent_unit_alpha_matches_exponentiated_displacement() {
        let v = coherent_vector(c(1.0, 0.0), 20).unwrap();
        assert_abs_diff_eq!(v[0].re, 0.606_531, epsilon = 1e-6);
        let d = displacement_by_exponential(c(1.0, 0.0), 60);
        for n in 0..20 {
            assert!((d[[n, 0]] - v[n]).norm() < 1e-10, "level {n}");
        }
    }

    #[test]
    fn coherent_rejects_nan_and_tiny_truncation() {
        assert!(coherent_vector(c(f64::NAN, 0.0), 5).is_err());
        assert!(coherent_vector(c(0.1, 0.0), 1).is_err());
    }

    #[test]
    fn coherent_norm_grows_with_truncation() {
        let alpha = c(1.2, -0.4);
        let mut last = 0.0;
        for n in 2..40 {
            let v = coherent_vector(alpha, n).unwrap();
            let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert!(n2 >= last);
            last = n2;
        }
        assert_abs_diff_eq!(last, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn measurement_at_zero_is_vacuum_parity() {
        let m = displacement_measurement(c(0.0, 0.0), 4).unwrap();
        let expected = TruncatedOperator::diagonal(&[1.0, -1.0, -1.0, -1.0]).unwrap();
        assert_eq!(m.matrix(), expected.matrix());
    }

    #[test]
    fn measurement_matches_displaced_vacuum_projector() {
        let alpha = c(0.1, 0.0);
        let m = displacement_measurement(alpha, 15).unwrap();
        assert_abs_diff_eq!(m.matrix()[[0, 0]].re, 2.0 * (-0.01_f64).exp() - 1.0, epsilon = 1e-14);
        let d = displacement_by_exponential(alpha, 50);
        for n in 0..15 {
            for k in 0..15 {
                let mut want = d[[n, 0]] * d[[k, 0]].conj() * 2.0;
                if n == k {
                    want -= 1.0;
                }
                assert!((m.matrix()[[n, k]] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn measurement_squares_to_identity() {
        for &(re, im) in &[(0.3, 0.0), (-0.7, 0.5), (0.0, 1.0), (0.6, -0.8)] {
            let m = displacement_measurement(c(re, im), 25).unwrap();
            assert!(m.is_hermitian());
            let sq = m.compose(&m).unwrap();
            assert!(sq.distance_from_identity() < 1e-8);
        }
    }

    #[test]
    fn bloch_observables() {
        let z = bloch_observable([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(z.matrix(), TruncatedOperator::diagonal(&[1.0, -1.0]).unwrap().matrix());
        let x = bloch_observable([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(x.matrix()[[0, 1]], C::one());
        assert_eq!(x.matrix()[[1, 0]], C::one());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let d = bloch_observable([h, 0.0, h]).unwrap();
        let m = d.matrix();
        // eigenvalues of a traceless Hermitian 2x2 are ±sqrt(-det)
        let det = (m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]]).re;
        assert_abs_diff_eq!((-det).sqrt(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!((m[[0, 0]] + m[[1, 1]]).re, 0.0, epsilon = 1e-14);
        assert!(bloch_observable([0.0, 0.0, 0.0]).is_err());
        assert!(bloch_observable([0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn tensor_identity_and_signs() {
        let id2 = TruncatedOperator::<f64>::identity(ModeSpace::new(vec![2]).unwrap());
        let t = tensor(&[id2.clone(), id2]).unwrap();
        assert_eq!(t.matrix(), TruncatedOperator::identity(ModeSpace::new(vec![4]).unwrap()).matrix());
        assert_eq!(t.space().dims(), &[2, 2]);
        let z = TruncatedOperator::diagonal(&[1.0, -1.0]).unwrap();
        let zz = tensor(&[z.clone(), z]).unwrap();
        let want = TruncatedOperator::diagonal(&[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(zz.matrix(), want.matrix());
        assert!(tensor::<f64>(&[]).is_err());
    }

    #[test]
    fn expectation_basics() {
        let space = ModeSpace::new(vec![6]).unwrap();
        let vac = MultiModeState::<f64>::vacuum(space.clone());
        let id = TruncatedOperator::identity(space);
        assert_abs_diff_eq!(expectation(&id, &vac).unwrap(), 1.0);
        let m0 = displacement_measurement(c(0.0, 0.0), 6).unwrap();
        assert_abs_diff_eq!(expectation(&m0, &vac).unwrap(), 1.0);
        let alpha = c(0.4, 0.3);
        let m = displacement_measurement(alpha, 6).unwrap();
        let want = 2.0 * (-alpha.norm_sqr()).exp() - 1.0;
        assert_abs_diff_eq!(expectation(&m, &vac).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn expectation_rejects_mismatch_and_non_hermitian() {
        let vac = MultiModeState::<f64>::vacuum(ModeSpace::new(vec![3]).unwrap());
        let m = displacement_measurement(c(0.2, 0.0), 4).unwrap();
        assert!(matches!(expectation(&m, &vac), Err(Error::SpaceMismatch { .. })));
        let mut raw = Matrix::<f64>::zeros((3, 3));
        raw[[0, 0]] = c(0.0, 1.0);
        let op = TruncatedOperator::new(ModeSpace::new(vec![3]).unwrap(), raw).unwrap();
        assert!(matches!(expectation(&op, &vac), Err(Error::NonHermitianExpectation(_))));
    }

    #[test]
    fn local_expectation_matches_tensor_route() {
        let space = ModeSpace::new(vec![3, 2]).unwrap();
        let amps: Vec<C> = (0..6).map(|k| c(0.1 * k as f64 + 0.2, 0.05 * k as f64)).collect();
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps: Vec<C> = amps.iter().map(|z| z / norm).collect();
        let st = MultiModeState::pure(space, &amps).unwrap();
        let a = displacement_measurement(c(0.3, -0.2), 3).unwrap();
        let b = bloch_observable([0.6, 0.0, 0.8]).unwrap();
        let dense = expectation(&tensor(&[a.clone(), b.clone()]).unwrap(), &st).unwrap();
        let local = st
            .local_expectation(&[a.matrix().clone(), b.matrix().clone()])
            .unwrap();
        assert_abs_diff_eq!(dense, local.re, epsilon = 1e-14);
    }

    #[test]
    fn psd_check_detects_negative_eigenvalue() {
        let good = TruncatedOperator::diagonal(&[0.5, 0.5, 0.0]).unwrap();
        assert!(is_psd_with_shift(good.matrix(), 1e-10));
        let bad = TruncatedOperator::diagonal(&[0.5, 0.6, -1e-6]).unwrap();
        assert!(!is_psd_with_shift(bad.matrix(), 1e-10));
    }

    #[test]
    fn f32_measurement_is_hermitian() {
        let m = displacement_measurement(Cplx::<f32>::new(0.3, 0.1), 8).unwrap();
        assert!(m.is_hermitian());
    }

    fn small_op(dim: usize, seed: &[f64]) -> TruncatedOperator<f64> {
        let mut m = Matrix::<f64>::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                let k = (i * dim + j) % seed.len();
                m[[i, j]] = c(seed[k], seed[(k + 1) % seed.len()] * 0.5);
            }
        }
        TruncatedOperator::new(ModeSpace::new(vec![dim]).unwrap(), m).unwrap()
    }

    fn hermitian_part(op: &TruncatedOperator<f64>) -> TruncatedOperator<f64> {
        let m = op.matrix();
        let h = (m + &adjoint(m)).mapv(|z| z * 0.5);
        TruncatedOperator::new(op.space().clone(), h).unwrap()
    }

    #[test]
    fn sparse_density_matches_dense_evaluation() {
        let space = ModeSpace::new(vec![3, 4]).unwrap();
        let amps: Vec<C> = (0..12).map(|k| c((k as f64 * 0.7).sin(), (k as f64 * 1.3).cos() * 0.5)).collect();
        let pure = MultiModeState::pure(space.clone(), &amps).unwrap();
        let mixed = pure.apply_mode_kraus(1, &crate::states::loss_kraus(0.6, 4).unwrap()).unwrap();
        let sparse = SparseDensity::from_dense(&mixed);
        assert_abs_diff_eq!(max_abs_diff(&sparse.to_dense(), mixed.matrix()), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sparse.trace(), mixed.trace(), epsilon = 1e-12);

        let first = [coherent_vector(c(0.4, -0.2), 3).unwrap(), coherent_vector(c(-0.1, 0.3), 3).unwrap()];
        let second = [coherent_vector(c(0.2, 0.5), 4).unwrap()];
        let table = sparse.projector_table(0, &first, &second).unwrap();
        let proj = |u: &[C]| Matrix::from_shape_fn((u.len(), u.len()), |(i, j)| u[i] * u[j].conj());
        let id = |d: usize| Matrix::<f64>::eye(d);
        for (i, u) in first.iter().enumerate() {
            let dense = mixed.local_expectation(&[proj(u), id(4)]).unwrap().re;
            assert_abs_diff_eq!(table.first[i], dense, epsilon = 1e-12);
            assert_abs_diff_eq!(sparse.projector_expectation(&[Some(u), None]).unwrap(), dense, epsilon = 1e-12);
            for (j, v) in second.iter().enumerate() {
                let dense = mixed.local_expectation(&[proj(u), proj(v)]).unwrap().re;
                assert_abs_diff_eq!(table.joint[i][j], dense, epsilon = 1e-12);
                assert_abs_diff_eq!(sparse.projector_expectation(&[Some(u), Some(v)]).unwrap(), dense, epsilon = 1e-12);
            }
        }
        let dense = mixed.local_expectation(&[id(3), proj(&second[0])]).unwrap().re;
        assert_abs_diff_eq!(table.second[0], dense, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn measurement_is_hermitian_and_involutive(re in -1.0..1.0_f64, im in -1.0..1.0_f64) {
            prop_assume!(re * re + im * im <= 1.0);
            let m = displacement_measurement(c(re, im), 25).unwrap();
            prop_assert!(m.hermiticity_defect() <= 1e-12);
            let sq = m.compose(&m).unwrap();
            prop_assert!(sq.distance_from_identity() < 1e-8);
        }

        #[test]
        fn tensor_of_hermitians_is_hermitian(seed in proptest::collection::vec(-1.0..1.0_f64, 5)) {
            let a = hermitian_part(&small_op(2, &seed));
            let b = hermitian_part(&small_op(3, &seed[1..]));
            prop_assert!(tensor(&[a, b]).unwrap().is_hermitian());
        }

        #[test]
        fn tensor_is_associative(ints in proptest::collection::vec(-9i32..9, 6)) {
            // integer entries keep every product exact
            let seed: Vec<f64> = ints.iter().map(|&k| k as f64).collect();
            let a = small_op(2, &seed);
            let b = small_op(2, &seed[2..]);
            let c3 = small_op(3, &seed[3..]);
            let left = tensor(&[tensor(&[a.clone(), b.clone()]).unwrap(), c3.clone()]).unwrap();
            let right = tensor(&[a, tensor(&[b, c3]).unwrap()]).unwrap();
            prop_assert_eq!(left.matrix(), right.matrix());
            prop_assert_eq!(left.space().total_dim(), right.space().total_dim());
        }

        #[test]
        fn displacement_expectation_is_bounded(
            lam in 0.0..0.6_f64, re in -1.5..1.5_f64, im in -1.5..1.5_f64,
        ) {
            let dim = 12;
            let norm = (0..dim).map(|n| lam.powi(2 * n as i32)).sum::<f64>().sqrt();
            let amps: Vec<C> = (0..dim).map(|n| c(lam.powi(n as i32) / norm, 0.0)).collect();
            let st = MultiModeState::pure(ModeSpace::new(vec![dim]).unwrap(), &amps).unwrap();
            let m = displacement_measurement(c(re, im), dim).unwrap();
            let v = expectation(&m, &st).unwrap();
            prop_assert!((-1.0 - 1e-8..=1.0 + 1e-8).contains(&v));
        }
    }
}
