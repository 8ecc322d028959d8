//! Least-squares fit of thresholds against party number to `a / (b - 1/N)`.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
    /// Root-mean-square residual of the fitted thresholds.
    pub rms: f64,
}

impl CurveFit {
    pub fn predict(&self, parties: f64) -> f64 {
        self.a / (self.b - 1.0 / parties)
    }

    /// Large-N limit `a / b`.
    pub fn asymptote(&self) -> f64 {
        self.a / self.b
    }
}

/// Optimal `a` for fixed `b` and the resulting sum of squared residuals.
fn profile(points: &[(f64, f64)], b: f64) -> (f64, f64) {
    let (mut gy, mut gg) = (0.0, 0.0);
    for &(n, y) in points {
        let g = 1.0 / (b - 1.0 / n);
        gy += g * y;
        gg += g * g;
    }
    let a = gy / gg;
    let sse = points.iter().map(|&(n, y)| (y - a / (b - 1.0 / n)).powi(2)).sum();
    (a, sse)
}

/// Fit `eta(N) = a / (b - 1/N)` to `(N, eta)` points. The model is linear in
/// `a`, so only `b` is searched: a log-spaced scan locates the basin and a
/// golden-section search polishes it.
pub fn fit_threshold_curve(points: &[(f64, f64)]) -> Result<CurveFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(n, y)| !(n.is_finite() && y.is_finite() && n > 0.0)) {
        return Err(Error::DegenerateFit("points must be finite with N > 0".into()));
    }
    let mut xs: Vec<f64> = points.iter().map(|&(n, _)| 1.0 / n).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("all points share the same N".into()));
    }

    // b must exceed every 1/N for the model to stay finite on the data
    let x_max = xs[xs.len() - 1];
    let lo = x_max + 1e-9;
    let scan = 2000;
    let span = 1e4_f64;
    let at = |i: usize| lo + (span.powf(i as f64 / scan as f64) - 1.0);
    let best = (0..=scan)
        .min_by(|&i, &j| profile(points, at(i)).1.total_cmp(&profile(points, at(j)).1))
        .unwrap_or(0);
    let (mut left, mut right) = (at(best.saturating_sub(1)), at((best + 1).min(scan)));

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = right - phi * (right - left);
    let mut d = left + phi * (right - left);
    let (mut fc, mut fd) = (profile(points, c).1, profile(points, d).1);
    for _ in 0..200 {
        if (right - left).abs() <= 1e-14 * (1.0 + right.abs()) {
            break;
        }
        if fc < fd {
            right = d;
            d = c;
            fd = fc;
            c = right - phi * (right - left);
            fc = profile(points, c).1;
        } else {
            left = c;
            c = d;
            fc = fd;
            d = left + phi * (right - left);
            fd = profile(points, d).1;
        }
    }
    let b = 0.5 * (left + right);
    let (a, sse) = profile(points, b);
    if !(a.is_finite() && sse.is_finite()) {
        return Err(Error::DegenerateFit("non-finite fit".into()));
    }
    Ok(CurveFit {
        a,
        b,
        rms: (sse / points.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn model_points(a: f64, b: f64, ns: impl Iterator<Item = usize>) -> Vec<(f64, f64)> {
        ns.map(|n| (n as f64, a / (b - 1.0 / n as f64))).collect()
    }

    #[test]
    fn recovers_pauli_closed_form() {
        let fit = fit_threshold_curve(&model_points(2.0, 3.0, 2..=10)).unwrap();
        assert_abs_diff_eq!(fit.a, 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(fit.b, 3.0, epsilon = 1e-7);
        assert!(fit.rms < 1e-10, "rms {}", fit.rms);
        assert_abs_diff_eq!(fit.asymptote(), 2.0 / 3.0, epsilon = 1e-7);
    }

    #[test]
    fn too_few_points_is_degenerate() {
        assert!(matches!(fit_threshold_curve(&[(2.0, 0.8), (3.0, 0.75)]), Err(Error::DegenerateFit(_))));
        assert!(matches!(
            fit_threshold_curve(&[(2.0, 0.8), (2.0, 0.81), (2.0, 0.79)]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_threshold_curve(&[(2.0, 0.8), (3.0, f64::NAN), (4.0, 0.7)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn noisy_points_fit_close_to_model() {
        let mut pts = model_points(1.841, 2.696, 2..=10);
        for (i, p) in pts.iter_mut().enumerate() {
            p.1 += if i % 2 == 0 { 2e-4 } else { -2e-4 };
        }
        let fit = fit_threshold_curve(&pts).unwrap();
        assert_abs_diff_eq!(fit.a, 1.841, epsilon = 0.02);
        assert_abs_diff_eq!(fit.b, 2.696, epsilon = 0.03);
        assert!(fit.rms < 3e-4);
    }

    proptest! {
        #[test]
        fn recovers_random_models(a in 0.5f64..3.0, extra in 0.2f64..3.0) {
            let b = 0.5 + extra;
            let fit = fit_threshold_curve(&model_points(a, b, 2..=10)).unwrap();
            prop_assert!((fit.a - a).abs() < 1e-6 * (1.0 + a));
            prop_assert!((fit.b - b).abs() < 1e-6 * (1.0 + b));
        }
    }
}
