//! Constructors for the states whose nonlocality is tested: two-mode squeezed
//! vacuum with and without loss, single-photon W-states, atom-photon states,
//! and the photon-loss channel that serves as their oracle.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{Matrix, ModeSpace, MultiModeState};
use crate::scalar::{ln_binomial, powu, real, Cplx, Real};

fn check_efficiency<T: Real>(eta: T) -> Result<()> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(invalid("eta", eta.to_f64().unwrap_or(f64::NAN), "must lie in [0, 1]"));
    }
    Ok(())
}

fn check_parties(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid("parties", n as f64, "need at least 2"));
    }
    Ok(())
}

/// Two-mode squeezed vacuum with symmetric loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmssParams<T> {
    /// Squeezing magnitude `λ = tanh r`, in `[0, 1)`.
    pub lambda: T,
    /// Squeezing phase in radians.
    pub phi: T,
    /// Combined coupling × transmission × detection efficiency.
    pub eta: T,
    /// Fock levels kept per mode.
    pub n_max: usize,
}

impl<T: Real> TmssParams<T> {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        check_efficiency(self.eta)?;
        if self.n_max < 2 {
            return Err(Error::InvalidModeDimension(self.n_max));
        }
        Ok(())
    }

    pub fn squeezing_db(&self) -> T {
        squeezing_db(self.lambda)
    }
}

fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if !(lambda >= T::zero() && lambda < T::one()) {
        return Err(invalid("lambda", lambda.to_f64().unwrap_or(f64::NAN), "must lie in [0, 1)"));
    }
    Ok(())
}

/// Squeezing in dB, `-10 log10(e^{-2r})` with `λ = tanh r`.
pub fn squeezing_db<T: Real>(lambda: T) -> T {
    let r = lambda.atanh();
    T::of(20.0) * r / T::LN_10()
}

/// Atom-photon state parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomPhotonParams<T> {
    /// Excitation angle; `cos θ` weights the unexcited branch.
    pub theta: T,
    /// Optical efficiency seen by the photon.
    pub eta: T,
}

/// Pure two-mode squeezed vacuum `√(1−λ²) Σ λⁿ e^{iφn} |n,n⟩`, truncated.
pub fn tmss_pure<T: Real>(lambda: T, phi: T, n_max: usize) -> Result<MultiModeState<T>> {
    check_lambda(lambda)?;
    let space = ModeSpace::uniform(2, n_max)?;
    let norm = (T::one() - lambda * lambda).sqrt();
    let mut amps = vec![Cplx::<T>::zero(); n_max * n_max];
    for n in 0..n_max {
        let nn = T::from_count(n);
        amps[n * n_max + n] = Cplx::from_polar(norm * powu(lambda, n), phi * nn);
    }
    Ok(MultiModeState::pure(space, &amps)?.with_deficit(powu(lambda, 2 * n_max)))
}

/// Nonzero entries `(row, col, value)` of the lossy two-mode squeezed state.
///
/// Loss conserves the photon-number difference between the modes, so an
/// element `|p,q⟩⟨p',q'|` is nonzero only when `p − q = p' − q'`. Each such
/// element collects the terms `n = p + k`, `n' = p' + k`, `k' = k + p − q` of
/// the double sum over lost photons.
pub fn tmss_lossy_entries<T: Real>(params: &TmssParams<T>) -> Result<Vec<(usize, usize, Cplx<T>)>> {
    tmss_lossy_entries_above(params, T::zero())
}

/// As [`tmss_lossy_entries`], skipping the blocks `|p,·⟩⟨p',·|` whose entries
/// are all bounded in magnitude by `λ^{p+p'} < cutoff`.
pub fn tmss_lossy_entries_above<T: Real>(
    params: &TmssParams<T>,
    cutoff: T,
) -> Result<Vec<(usize, usize, Cplx<T>)>> {
    params.validate()?;
    let d = params.n_max;
    let TmssParams { lambda, phi, eta, .. } = *params;
    let loss = T::one() - eta;
    let pow_lambda: Vec<T> = (0..2 * d).map(|j| powu(lambda, j)).collect();
    let half = T::of(0.5);
    let sqrt_binom: Vec<Vec<T>> = (0..d)
        .map(|n| (0..=n).map(|k| (half * ln_binomial::<T>(n, k)).exp()).collect())
        .collect();
    // λ^n η^{n−k} (1−η)^k √C(n,k): one factor of the two-sided Kraus weight
    let weight: Vec<Vec<T>> = (0..d)
        .map(|n| {
            (0..=n)
                .map(|k| pow_lambda[n] * powu(eta, n - k) * powu(loss, k) * sqrt_binom[n][k])
                .collect()
        })
        .collect();
    let prefactor = T::one() - lambda * lambda;

    // e^{iφ(p − p')} indexed by p − p' + d − 1
    let phases: Vec<Cplx<T>> = (0..2 * d - 1)
        .map(|j| Cplx::from_polar(T::one(), phi * (T::from_count(j) - T::from_count(d - 1))))
        .collect();
    let mut out = Vec::new();
    for p in 0..d {
        for q in 0..d {
            for pp in 0..d {
                if pow_lambda[p + pp] < cutoff {
                    continue;
                }
                // q' is fixed by number-difference conservation
                let qq = pp as isize - p as isize + q as isize;
                if qq < 0 || qq >= d as isize {
                    continue;
                }
                let qq = qq as usize;
                let k_min = q.saturating_sub(p);
                let k_top = d - p.max(pp);
                let mut acc = T::zero();
                for k in k_min..k_top {
                    let kp = k + p - q;
                    let n = p + k;
                    let np = pp + k;
                    if n >= d || np >= d || kp > n.min(np) {
                        continue;
                    }
                    acc += weight[n][k] * weight[np][kp] * sqrt_binom[n][kp] * sqrt_binom[np][k];
                }
                if acc == T::zero() {
                    continue;
                }
                out.push((p * d + q, pp * d + qq, phases[d - 1 + p - pp] * (prefactor * acc)));
            }
        }
    }
    Ok(out)
}

/// Lossy two-mode squeezed vacuum as a dense density matrix.
pub fn tmss_lossy<T: Real>(params: &TmssParams<T>) -> Result<MultiModeState<T>> {
    let entries = tmss_lossy_entries(params)?;
    let space = ModeSpace::uniform(2, params.n_max)?;
    let n = space.total_dim();
    let mut m = Matrix::<T>::zeros((n, n));
    for (r, c, v) in entries {
        m[[r, c]] = v;
    }
    Ok(MultiModeState::with_mode_parties(space, m)?
        .with_deficit(powu(params.lambda, 2 * params.n_max)))
}

fn w_amplitudes<T: Real>(modes: usize) -> Vec<Cplx<T>> {
    let amp = real(T::one() / T::from_count(modes).sqrt());
    let mut amps = vec![Cplx::<T>::zero(); 1 << modes];
    for j in 0..modes {
        amps[1 << (modes - 1 - j)] = amp;
    }
    amps
}

/// Single photon shared equally among `n` dimension-2 modes.
pub fn w_state<T: Real>(n: usize) -> Result<MultiModeState<T>> {
    check_parties(n)?;
    MultiModeState::pure(ModeSpace::uniform(n, 2)?, &w_amplitudes(n))
}

/// `η |W_N⟩⟨W_N| + (1 − η) |vac⟩⟨vac|`.
pub fn w_lossy<T: Real>(n: usize, eta: T) -> Result<MultiModeState<T>> {
    check_parties(n)?;
    check_efficiency(eta)?;
    let w = w_state::<T>(n)?;
    let mut m = w.matrix().mapv(|z| z * eta);
    m[[0, 0]] = m[[0, 0]] + real(T::one() - eta);
    MultiModeState::with_mode_parties(w.space().clone(), m)
}

/// Atom (mode 0, basis `{|g⟩,|s⟩}`) and photon (mode 1, Fock `{0,1}`).
///
/// The photon has passed through loss `η`, so the excited branch keeps weight
/// `η sin²θ` on `|s,1⟩` and sheds `(1 − η) sin²θ` incoherently onto `|s,0⟩`.
pub fn atom_photon<T: Real>(params: &AtomPhotonParams<T>) -> Result<MultiModeState<T>> {
    atom_w_lossy(params.theta, 1, params.eta)
}

/// Atom entangled with a photon split evenly over `photonic_modes` modes:
/// `cos θ |g, vac⟩ + sin θ |s, W⟩` with loss `η` on every photonic mode.
/// With one photonic mode this is [`atom_photon`].
pub fn atom_w_lossy<T: Real>(theta: T, photonic_modes: usize, eta: T) -> Result<MultiModeState<T>> {
    check_efficiency(eta)?;
    if photonic_modes == 0 {
        return Err(invalid("photonic_modes", 0.0, "need at least 1"));
    }
    let modes = photonic_modes + 1;
    let space = ModeSpace::uniform(modes, 2)?;
    let dim = space.total_dim();
    let half = 1 << photonic_modes;
    let (s, c) = theta.sin_cos();
    let excited = eta.sqrt() * s / T::from_count(photonic_modes).sqrt();
    let mut psi = vec![Cplx::<T>::zero(); dim];
    psi[0] = real(c);
    for j in 0..photonic_modes {
        psi[half + (1 << (photonic_modes - 1 - j))] = real(excited);
    }
    let mut m = Matrix::<T>::zeros((dim, dim));
    for i in 0..dim {
        for k in 0..dim {
            m[[i, k]] = psi[i] * psi[k].conj();
        }
    }
    m[[half, half]] = m[[half, half]] + real((T::one() - eta) * s * s);
    MultiModeState::with_mode_parties(space, m)
}

/// Photon-loss Kraus operators `⟨n−k|E_k|n⟩ = √(C(n,k) η^{n−k} (1−η)^k)`.
pub fn loss_kraus<T: Real>(eta: T, dim: usize) -> Result<Vec<Matrix<T>>> {
    check_efficiency(eta)?;
    let loss = T::one() - eta;
    Ok((0..dim)
        .map(|k| {
            let mut e = Matrix::<T>::zeros((dim, dim));
            for n in k..dim {
                let w = ln_binomial::<T>(n, k).exp() * powu(eta, n - k) * powu(loss, k);
                e[[n - k, n]] = real(w.sqrt());
            }
            e
        })
        .collect())
}

/// Apply photon loss with efficiency `η` to one mode.
pub fn loss_channel<T: Real>(state: &MultiModeState<T>, eta: T, mode: usize) -> Result<MultiModeState<T>> {
    let dim = state.space().dim(mode)?;
    let kraus = loss_kraus(eta, dim)?;
    state.apply_mode_kraus(mode, &kraus)
}

/// Vacuum on `modes` dimension-2 modes.
pub fn vacuum_qubits<T: Real>(modes: usize) -> Result<MultiModeState<T>> {
    Ok(MultiModeState::vacuum(ModeSpace::uniform(modes, 2)?))
}
