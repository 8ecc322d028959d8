//! Box-constrained Nelder–Mead. Trial points are clamped onto the box, which
//! keeps every evaluation feasible without penalty terms.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop once every vertex lies within this distance of the best one,
    /// measured in units of the box width per coordinate.
    pub x_tol: f64,
    /// ... and the objective spread is below this absolute value.
    pub f_tol: f64,
    pub max_evals: usize,
    /// Initial edge length as a fraction of the box width.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-10,
            f_tol: 1e-16,
            max_evals: 20_000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Minimise `f` over the box `[lo, hi]` starting from `x0`.
pub fn minimize(
    f: &impl Fn(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(f64::MIN_POSITIVE)).collect();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    let mut start = x0.to_vec();
    clamp_into(&mut start, lo, hi);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(start.clone());
    for i in 0..n {
        let mut p = start.clone();
        let step = opts.initial_step * width[i];
        // step away from the nearer wall so the vertex stays distinct
        p[i] = if p[i] + step <= hi[i] { p[i] + step } else { p[i] - step };
        clamp_into(&mut p, lo, hi);
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals.get() < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let f_spread = vals[n] - vals[0];
        let x_spread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).zip(&width).map(|((a, b), w)| (a - b).abs() / w))
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tol && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        if x_spread <= opts.x_tol * 1e-3 {
            // collapsed simplex on a plateau
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect();
            clamp_into(&mut p, lo, hi);
            p
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(gamma);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        let best = pts[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = best.iter().zip(&pts[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            clamp_into(&mut p, lo, hi);
            vals[i] = eval(&p);
            pts[i] = p;
        }
    }

    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        evals: evals.get(),
        converged,
    }
}

/// Repeated Nelder–Mead from the incumbent with a shrinking initial simplex,
/// until a restart no longer improves the objective.
pub fn minimize_polished(
    f: &impl Fn(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &SimplexOptions,
    rounds: usize,
) -> SimplexResult {
    let mut best = minimize(f, x0, lo, hi, opts);
    let mut step = opts.initial_step;
    for _ in 0..rounds {
        step *= 0.1;
        let local = SimplexOptions { initial_step: step, ..*opts };
        let next = minimize(f, &best.x, lo, hi, &local);
        let evals = best.evals + next.evals;
        if next.f < best.f {
            best = SimplexResult { evals, ..next };
        } else {
            best.evals = evals;
            best.converged &= next.converged;
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let r = minimize_polished(&rosenbrock, &[-1.2, 1.0], &[-3.0, -3.0], &[3.0, 3.0], &SimplexOptions::default(), 3);
        assert!(r.converged);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn respects_box_and_finds_corner() {
        let f = |x: &[f64]| x[0] + 2.0 * x[1] + x[2].powi(2);
        let r = minimize(&f, &[0.5, 0.5, 0.5], &[0.0, -1.0, -1.0], &[1.0, 1.0, 1.0], &SimplexOptions::default());
        assert_abs_diff_eq!(r.x[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.x[1], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.x[2], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn start_outside_box_is_clamped() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2);
        let r = minimize(&f, &[5.0], &[0.0], &[1.0], &SimplexOptions::default());
        assert_abs_diff_eq!(r.x[0], 0.3, epsilon = 1e-8);
    }

    #[test]
    fn nan_is_treated_as_worst() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) };
        let r = minimize(&f, &[0.1], &[-1.0], &[1.0], &SimplexOptions::default());
        assert_abs_diff_eq!(r.x[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn evaluation_budget_is_respected() {
        let opts = SimplexOptions { max_evals: 50, ..Default::default() };
        let r = minimize(&rosenbrock, &[-1.2, 1.0], &[-3.0, -3.0], &[3.0, 3.0], &opts);
        assert!(!r.converged);
        assert!(r.evals <= 50 + 3);
    }
}
