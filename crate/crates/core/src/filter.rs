//! Heralded single-photon amplifier used as a local filter on 0/1-photon
//! modes. The four Kraus operators are applied as given, with `t` the
//! beam-splitter transmissivity of the amplifier.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{is_psd_with_shift, Matrix, ModeSpace, MultiModeState, TruncatedOperator};
use crate::scalar::{real, Cplx, Real};
use crate::states::{atom_photon, AtomPhotonParams};

/// Success probabilities below this are treated as impossible conditioning.
pub const MIN_SUCCESS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams<T> {
    /// Transmissivity of the amplifier's beam splitter, in `(0, 1)`.
    pub t: T,
    /// Efficiency of the amplifier's own single-photon source, in `(0, 1]`.
    pub source_eff: T,
    /// Detector efficiency, in `(0, 1]`.
    pub detector_eff: T,
}

impl<T: Real> FilterParams<T> {
    pub fn validate(&self) -> Result<()> {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        if !(self.t > T::zero() && self.t < T::one()) {
            return Err(invalid("t", f(self.t), "must lie in (0, 1)"));
        }
        if !(self.source_eff > T::zero() && self.source_eff <= T::one()) {
            return Err(invalid("source_eff", f(self.source_eff), "must lie in (0, 1]"));
        }
        if !(self.detector_eff > T::zero() && self.detector_eff <= T::one()) {
            return Err(invalid("detector_eff", f(self.detector_eff), "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Magnitudes of the Kraus matrix elements: `(k1, k2, k3)` for the
    /// `|0⟩⟨1|` operators, then the vacuum and one-photon diagonal of the
    /// fourth.
    fn amplitudes(&self) -> ([T; 3], T, T) {
        let half = T::of(0.5);
        let Self { t, source_eff: ec, detector_eff: ed } = *self;
        let one = T::one();
        let k1 = (half * ed * (one - ec * ed)).sqrt();
        let k2 = (half * (one - t) * ec * ed * ed).sqrt();
        let k3 = (half * (one - t) * ec * ed * (one - ed)).sqrt();
        let vac = (half * (one - t) * ec * ed).sqrt();
        let single = (half * t * ec * ed * ed).sqrt();
        ([k1, k2, k3], vac, single)
    }

    /// Probability that the filter succeeds on the vacuum.
    pub fn vacuum_success(&self) -> T {
        let (_, vac, _) = self.amplitudes();
        vac * vac
    }

    /// Probability that the filter succeeds on a single photon.
    pub fn single_photon_success(&self) -> T {
        let (k, _, single) = self.amplitudes();
        k.iter().map(|x| *x * *x).sum::<T>() + single * single
    }

    /// Efficiency of `w_lossy(N, η)` after every mode has been filtered.
    pub fn filtered_efficiency(&self, eta: T) -> T {
        let (k, vac, single) = self.amplitudes();
        let dropped: T = k.iter().map(|x| *x * *x).sum();
        let kept = eta * single * single;
        kept / ((T::one() - eta) * vac * vac + eta * dropped + kept)
    }
}

/// The four 2×2 Kraus operators of the successful filter.
pub fn filter_kraus<T: Real>(params: &FilterParams<T>) -> Result<[TruncatedOperator<T>; 4]> {
    params.validate()?;
    let ([k1, k2, k3], vac, single) = params.amplitudes();
    let space = ModeSpace::new(vec![2])?;
    let lower = |amp: T| {
        let mut m = Matrix::<T>::zeros((2, 2));
        m[[0, 1]] = real(amp);
        TruncatedOperator::new(space.clone(), m)
    };
    let mut k4 = Matrix::<T>::zeros((2, 2));
    k4[[0, 0]] = real(-vac);
    k4[[1, 1]] = real(single);
    Ok([
        lower(k1)?,
        lower(-k2)?,
        lower(-k3)?,
        TruncatedOperator::new(space.clone(), k4)?,
    ])
}

/// `Σ K_i† K_i`, which must lie below the identity.
pub fn filter_effect<T: Real>(params: &FilterParams<T>) -> Result<Matrix<T>> {
    let ks = filter_kraus(params)?;
    let mut acc = Matrix::<T>::zeros((2, 2));
    for k in &ks {
        acc = acc + k.adjoint().compose(k)?.into_matrix();
    }
    Ok(acc)
}

/// Whether `0 ≤ Σ K_i† K_i ≤ 1` as an operator inequality.
pub fn is_trace_nonincreasing<T: Real>(params: &FilterParams<T>) -> Result<bool> {
    let effect = filter_effect(params)?;
    let eye = Matrix::<T>::from_diag_elem(2, real(T::one()));
    let slack = T::of(1e-12);
    Ok(is_psd_with_shift(&effect, slack) && is_psd_with_shift(&(&eye - &effect), slack))
}

/// Filter every listed mode and renormalise; returns the heralded state and
/// the overall success probability.
pub fn apply_filter<T: Real>(
    state: &MultiModeState<T>,
    modes: &[usize],
    params: &FilterParams<T>,
) -> Result<(MultiModeState<T>, T)> {
    let kraus: Vec<Matrix<T>> = filter_kraus(params)?.into_iter().map(|k| k.into_matrix()).collect();
    let mut out = state.clone();
    for &mode in modes {
        let dim = state.space().dim(mode)?;
        if dim != 2 {
            return Err(Error::ShapeMismatch {
                rows: dim,
                cols: dim,
                expected: 2,
            });
        }
        out = out.apply_mode_kraus(mode, &kraus)?;
    }
    let success = out.trace();
    if !(success.to_f64().unwrap_or(0.0) >= MIN_SUCCESS) {
        return Err(Error::ImpossibleConditioning(success.to_f64().unwrap_or(0.0)));
    }
    Ok((out.renormalized()?, success))
}

/// Heralding rate when `n` parties must all succeed.
pub fn filtered_rate<T: Real>(success: T, n: usize) -> T {
    success.powi(n as i32)
}

/// How far the filtered atom-photon state is from an unfiltered
/// atom-photon state with efficiency `η_c′η_d`, after choosing the best
/// mixing angle. `eta` is the efficiency of the photon before filtering.
pub fn atom_filter_check<T: Real>(theta: T, eta: T, params: &FilterParams<T>) -> Result<T> {
    let input = atom_photon(&AtomPhotonParams { theta, eta })?;
    let (filtered, _) = apply_filter(&input, &[1], params)?;
    let target_eta = params.source_eff * params.detector_eff;
    let distance = |angle: T| -> T {
        atom_photon(&AtomPhotonParams { theta: angle, eta: target_eta })
            .and_then(|s| s.max_abs_diff(&filtered))
            .unwrap_or_else(|_| T::infinity())
    };
    // the vacuum branch picks up a sign, so the angle ranges over (−π/2, π/2]
    let half_pi = T::FRAC_PI_2();
    let steps = 720;
    let step = T::PI() / T::from_count(steps);
    let (mut best_x, mut best_f) = (-half_pi, distance(-half_pi));
    for i in 1..=steps {
        let x = -half_pi + step * T::from_count(i);
        let f = distance(x);
        if f < best_f {
            best_x = x;
            best_f = f;
        }
    }
    let (_, f) = golden_section(distance, best_x - step, best_x + step, T::of(1e-14));
    Ok(f.min(best_f))
}

fn golden_section<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, tol: T) -> (T, T) {
    let ratio = T::of(0.618_033_988_749_894_8);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo < tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 { (x1, f1) } else { (x2, f2) }
}

/// Distance from the vacuum/W mixture form: the filtered state projected onto
/// `span{|vac⟩⟨vac|, |W⟩⟨W|}` and the largest leftover element.
pub fn mixture_residual<T: Real>(state: &MultiModeState<T>) -> Result<(T, T)> {
    let n = state.space().num_modes();
    if state.space().dims().iter().any(|&d| d != 2) {
        return Err(Error::InvalidState("vacuum/W form needs dimension-2 modes".into()));
    }
    let w = crate::states::w_lossy::<T>(n, T::one())?;
    let rho = state.matrix();
    let mut overlap = Cplx::<T>::zero();
    for i in 0..rho.nrows() {
        for j in 0..rho.ncols() {
            overlap = overlap + w.matrix()[[j, i]] * rho[[i, j]];
        }
    }
    let eta = overlap.re;
    let fit = crate::states::w_lossy(n, eta.max(T::zero()).min(T::one()))?;
    Ok((eta, fit.max_abs_diff(state)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::w_lossy;
    use approx::assert_abs_diff_eq;

    fn params(t: f64, ec: f64, ed: f64) -> FilterParams<f64> {
        FilterParams { t, source_eff: ec, detector_eff: ed }
    }

    fn grid(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64 / (n as f64 + 1.0)).collect()
    }

    #[test]
    fn effect_eigenvalues_match_closed_form() {
        for &t in &grid(10) {
            for &ec in &grid(10) {
                for &ed in &grid(10) {
                    let p = params(t, ec, ed);
                    let e = filter_effect(&p).unwrap();
                    assert_abs_diff_eq!(e[[0, 1]].norm(), 0.0);
                    assert_abs_diff_eq!(e[[0, 0]].re, (1.0 - t) * ec * ed / 2.0, epsilon = 1e-15);
                    let one = ed / 2.0 * (1.0 + (1.0 - t) * ec * (1.0 - ed));
                    assert_abs_diff_eq!(e[[1, 1]].re, one, epsilon = 1e-15);
                    assert!((0.0..=1.0).contains(&e[[0, 0]].re) && (0.0..=1.0).contains(&e[[1, 1]].re));
                    assert!(is_trace_nonincreasing(&p).unwrap());
                }
            }
        }
    }

    #[test]
    fn parameter_ranges_are_enforced() {
        assert!(filter_kraus(&params(0.0, 0.5, 0.5)).is_err());
        assert!(filter_kraus(&params(1.0, 0.5, 0.5)).is_err());
        assert!(filter_kraus(&params(0.5, 0.0, 0.5)).is_err());
        assert!(filter_kraus(&params(0.5, 0.5, 1.1)).is_err());
    }

    #[test]
    fn near_unit_transmissivity_limit() {
        let p = params(1.0 - 1e-12, 1.0, 1.0);
        let k = filter_kraus(&p).unwrap();
        assert!(k[0].matrix()[[0, 1]].norm() < 1e-6);
        assert!(k[1].matrix()[[0, 1]].norm() < 1e-6);
        assert!(k[3].matrix()[[0, 0]].norm() < 1e-6);
        assert_abs_diff_eq!(k[3].matrix()[[1, 1]].re, 0.5_f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn vanishing_detector_efficiency_kills_everything() {
        let p = params(0.4, 0.7, 1e-30);
        for k in filter_kraus(&p).unwrap() {
            assert!(k.matrix().iter().all(|z| z.norm() < 1e-14));
        }
    }

    #[test]
    fn vacuum_success_probability() {
        let p = params(0.3, 0.8, 0.9);
        let vac = MultiModeState::<f64>::vacuum(ModeSpace::new(vec![2]).unwrap());
        let (out, success) = apply_filter(&vac, &[0], &p).unwrap();
        assert_abs_diff_eq!(success, 0.7 * 0.8 * 0.9 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.max_abs_diff(&vac).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn filtering_keeps_vacuum_w_form() {
        for n in 2..=5 {
            for &t in &[0.1, 0.5, 0.9, 1.0 - 1e-6] {
                for &eta in &[0.2, 0.6, 0.95] {
                    let p = params(t, 0.8, 0.7);
                    let modes: Vec<usize> = (0..n).collect();
                    let (out, success) = apply_filter(&w_lossy(n, eta).unwrap(), &modes, &p).unwrap();
                    let (fitted, residual) = mixture_residual(&out).unwrap();
                    assert!(residual < 1e-12, "n={n} t={t} residual={residual}");
                    assert_abs_diff_eq!(fitted, p.filtered_efficiency(eta), epsilon = 1e-12);
                    // success = a^{2(N−1)} [(1−η)a² + η·(single-photon success)]
                    let a2 = p.vacuum_success();
                    let expect = a2.powi(n as i32 - 1) * ((1.0 - eta) * a2 + eta * p.single_photon_success());
                    assert_abs_diff_eq!(success, expect, epsilon = 1e-12 * expect.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn near_unit_transmissivity_substitutes_loss() {
        for n in 2..=3 {
            for &eta in &[0.2, 0.5, 0.8] {
                for &ec in &[0.5, 0.8, 1.0] {
                    for &ed in &[0.6, 0.9, 1.0] {
                        let p = params(1.0 - 1e-6, ec, ed);
                        let modes: Vec<usize> = (0..n).collect();
                        let (out, _) = apply_filter(&w_lossy(n, eta).unwrap(), &modes, &p).unwrap();
                        let target = w_lossy(n, ec * ed).unwrap();
                        assert!(out.max_abs_diff(&target).unwrap() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn success_is_multiplicative_over_product_modes() {
        let p = params(0.35, 0.9, 0.8);
        let single = atom_photon(&AtomPhotonParams { theta: 0.0, eta: 1.0 }).unwrap();
        let (_, one) = apply_filter(&single, &[1], &p).unwrap();
        let two_vac = MultiModeState::<f64>::vacuum(ModeSpace::uniform(2, 2).unwrap());
        let (_, both) = apply_filter(&two_vac, &[0, 1], &p).unwrap();
        assert_abs_diff_eq!(both, one * one, epsilon = 1e-15);
        assert_abs_diff_eq!(filtered_rate(one, 2), both, epsilon = 1e-15);
        assert!(one > 0.0 && one <= 1.0);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(filtered_rate(1.0, 7), 1.0);
        assert_eq!(filtered_rate(0.5, 2), 0.25);
        let p = params(0.5, 0.9, 0.9);
        let (_, s) = apply_filter(&w_lossy(3, 0.5).unwrap(), &[0], &p).unwrap();
        assert_abs_diff_eq!(filtered_rate(s, 3), s * s * s);
    }

    #[test]
    fn oversized_modes_are_rejected() {
        let st = MultiModeState::<f64>::vacuum(ModeSpace::new(vec![3]).unwrap());
        assert!(apply_filter(&st, &[0], &params(0.5, 0.5, 0.5)).is_err());
    }

    #[test]
    fn tiny_success_is_an_error() {
        let p = params(1.0 - 1e-15, 1e-20, 1e-20);
        let st = MultiModeState::<f64>::vacuum(ModeSpace::uniform(8, 2).unwrap());
        let modes: Vec<usize> = (0..8).collect();
        assert!(matches!(apply_filter(&st, &modes, &p), Err(Error::ImpossibleConditioning(_))));
    }

    #[test]
    fn atom_filter_residuals() {
        let p = params(1.0 - 1e-6, 0.8, 0.9);
        assert!(atom_filter_check(0.0, 0.5, &p).unwrap() < 1e-15);
        assert!(atom_filter_check(0.1, 0.3, &p).unwrap() < 1e-3);
        // upstream efficiency already equal to the filter's own
        assert!(atom_filter_check(0.7, 0.72, &p).unwrap() < 1e-4);
    }
}
