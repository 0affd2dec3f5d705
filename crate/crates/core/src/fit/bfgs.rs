//! Dense BFGS with a strong-Wolfe line search.
//!
//! The inverse Hessian approximation starts at the identity. The first trial
//! step is scaled to unit length; later ones reuse the last decrease in the
//! objective. A line search that cannot produce a decrease ends the run with
//! the best point found so far.

use super::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFiniteStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, p: &[f64]) -> Vec<f64> {
    x.iter().zip(p).map(|(a, b)| a + alpha * b).collect()
}

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
}

struct LineSearch<'a, F, G> {
    objective: &'a F,
    gradient: &'a G,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    dphi0: f64,
    config: &'a FitConfig,
}

impl<F, G> LineSearch<'_, F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn phi(&self, alpha: f64) -> f64 {
        (self.objective)(&axpy(self.x, alpha, self.p))
    }

    fn grad(&self, alpha: f64) -> Vec<f64> {
        (self.gradient)(&axpy(self.x, alpha, self.p))
    }

    fn armijo(&self, alpha: f64, f: f64) -> bool {
        f <= self.f0 + self.config.armijo_c1 * alpha * self.dphi0
    }

    fn curvature(&self, dphi: f64) -> bool {
        dphi.abs() <= -self.config.wolfe_c2 * self.dphi0
    }

    fn search(&self, alpha_init: f64) -> Option<Trial> {
        let max_steps = self.config.max_line_search_steps;
        let (mut a_prev, mut f_prev, mut dphi_prev) = (0.0, self.f0, self.dphi0);
        let mut alpha = alpha_init;
        let mut steps = 0;
        while steps < max_steps {
            steps += 1;
            let f = self.phi(alpha);
            if !f.is_finite() {
                // Step into a domain violation: pull back toward the last
                // good point.
                alpha = a_prev + self.config.backtrack_factor * (alpha - a_prev);
                continue;
            }
            if !self.armijo(alpha, f) || (a_prev > 0.0 && f >= f_prev) {
                return self.zoom((a_prev, f_prev, dphi_prev), (alpha, f), max_steps - steps);
            }
            let g = self.grad(alpha);
            let dphi = dot(&g, self.p);
            if !dphi.is_finite() {
                return self.zoom((a_prev, f_prev, dphi_prev), (alpha, f), max_steps - steps);
            }
            if self.curvature(dphi) {
                return Some(Trial { alpha, f, g });
            }
            if dphi >= 0.0 {
                return self.zoom((alpha, f, dphi), (a_prev, f_prev), max_steps - steps)
                    .or(Some(Trial { alpha, f, g }));
            }
            a_prev = alpha;
            f_prev = f;
            dphi_prev = dphi;
            alpha *= 2.0;
        }
        None
    }

    // Bracket [lo, hi] where lo satisfies Armijo and has the lower value.
    fn zoom(&self, lo: (f64, f64, f64), hi: (f64, f64), budget: usize) -> Option<Trial> {
        let (mut a_lo, mut f_lo, mut d_lo) = lo;
        let (mut a_hi, mut f_hi) = hi;
        let mut best: Option<Trial> = None;
        for _ in 0..budget.max(1) {
            let width = a_hi - a_lo;
            if width.abs() <= f64::EPSILON * a_lo.abs().max(1e-300) {
                break;
            }
            // Quadratic through (a_lo, f_lo, d_lo) and (a_hi, f_hi),
            // safeguarded into the inner 80% of the bracket.
            let denom = 2.0 * (f_hi - f_lo - d_lo * width);
            let mut a = a_lo - d_lo * width * width / denom;
            let (lo_b, hi_b) = (a_lo.min(a_hi), a_lo.max(a_hi));
            let margin = 0.1 * width.abs();
            if !a.is_finite() || a < lo_b + margin || a > hi_b - margin {
                a = a_lo + self.config.backtrack_factor * width;
            }
            let f = self.phi(a);
            if !f.is_finite() || !self.armijo(a, f) || f >= f_lo {
                a_hi = a;
                f_hi = if f.is_finite() { f } else { f64::INFINITY };
                continue;
            }
            let g = self.grad(a);
            let dphi = dot(&g, self.p);
            if !dphi.is_finite() {
                a_hi = a;
                f_hi = f64::INFINITY;
                continue;
            }
            if self.curvature(dphi) {
                return Some(Trial { alpha: a, f, g });
            }
            if dphi * width >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
            }
            best = Some(Trial { alpha: a, f, g: g.clone() });
            a_lo = a;
            f_lo = f;
            d_lo = dphi;
        }
        // Curvature never satisfied; settle for the best sufficient decrease.
        if best.is_none() && a_lo > 0.0 && f_lo < self.f0 {
            let g = self.grad(a_lo);
            if g.iter().all(|v| v.is_finite()) {
                return Some(Trial { alpha: a_lo, f: f_lo, g });
            }
        }
        best
    }
}

/// Minimize `objective` from `x0` with BFGS.
///
/// The returned objective value never exceeds the one at `x0`. A non-finite
/// objective or gradient at `x0` returns `x0` unconverged.
pub fn minimize_bfgs<F, G>(objective: F, gradient: G, x0: &[f64], config: &FitConfig) -> BfgsOutcome
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = objective(&x);
    let fail_start = |f: f64| BfgsOutcome {
        x: x0.to_vec(),
        f,
        iterations: 0,
        converged: false,
        termination: Termination::NonFiniteStart,
    };
    if !f.is_finite() {
        return fail_start(f);
    }
    let mut g = gradient(&x);
    if g.len() != n || g.iter().any(|v| !v.is_finite()) {
        return fail_start(f);
    }

    let mut h = identity(n);
    let mut f_prev: Option<f64> = None;
    let mut iterations = 0;
    let termination = loop {
        if norm_inf(&g) <= config.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        let mut p = mat_vec(&h, &g).into_iter().map(|v| -v).collect::<Vec<_>>();
        let mut dphi0 = dot(&g, &p);
        if !(dphi0 < 0.0) {
            // Lost positive definiteness: restart from steepest descent.
            h = identity(n);
            p = g.iter().map(|v| -v).collect();
            dphi0 = -dot(&g, &g);
        }
        let alpha_init = match f_prev {
            Some(fp) => (1.01 * 2.0 * (f - fp) / dphi0).min(1.0),
            None => (1.01 / dot(&g, &g).sqrt()).min(1.0),
        };
        let alpha_init = if alpha_init > 0.0 && alpha_init.is_finite() {
            alpha_init
        } else {
            1.0
        };
        let ls = LineSearch {
            objective: &objective,
            gradient: &gradient,
            x: &x,
            p: &p,
            f0: f,
            dphi0,
            config,
        };
        let Some(trial) = ls.search(alpha_init) else {
            break Termination::LineSearchFailed;
        };
        iterations += 1;
        let s: Vec<f64> = p.iter().map(|v| trial.alpha * v).collect();
        let x_new = axpy(&x, 1.0, &s);
        if x_new == x {
            break Termination::LineSearchFailed;
        }
        let y: Vec<f64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        update_inverse_hessian(&mut h, &s, &y);
        f_prev = Some(f);
        x = x_new;
        f = trial.f;
        g = trial.g;
    };

    BfgsOutcome {
        x,
        f,
        iterations,
        converged: termination == Termination::GradientTolerance,
        termination,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T, skipped when the
// curvature condition y^T s > 0 fails.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let ys = dot(y, s);
    if !(ys > 0.0) || !ys.is_finite() {
        return;
    }
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let a = (ys + yhy) / (ys * ys);
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += a * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / ys;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_quadratic() {
        let cfg = FitConfig::default();
        let out = minimize_bfgs(|x| (x[0] - 3.0).powi(2), |x| vec![2.0 * (x[0] - 3.0)], &[0.0], &cfg);
        assert!(out.converged);
        assert!((out.x[0] - 3.0).abs() <= 1e-8, "{:?}", out);
        assert!(out.iterations <= 5, "{} iterations", out.iterations);
    }

    #[test]
    fn rosenbrock() {
        let cfg = FitConfig::default();
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let g = |x: &[f64]| {
            vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        };
        let out = minimize_bfgs(f, g, &[-1.2, 1.0], &cfg);
        assert!((out.x[0] - 1.0).abs() <= 1e-5 && (out.x[1] - 1.0).abs() <= 1e-5, "{out:?}");
    }

    #[test]
    fn stationary_start() {
        let cfg = FitConfig::default();
        let out = minimize_bfgs(|x| x[0] * x[0], |x| vec![2.0 * x[0]], &[0.0], &cfg);
        assert!(out.converged);
        assert_eq!(out.x, vec![0.0]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn non_finite_start() {
        let cfg = FitConfig::default();
        let out = minimize_bfgs(|x| x[0].ln(), |x| vec![1.0 / x[0]], &[-1.0], &cfg);
        assert!(!out.converged);
        assert_eq!(out.termination, Termination::NonFiniteStart);
        assert_eq!(out.x, vec![-1.0]);
    }

    #[test]
    fn never_worse_than_start_on_hostile_objective() {
        let cfg = FitConfig::default();
        // Minimum sits on a domain boundary; steps past it are NaN.
        let f = |x: &[f64]| x[0].sqrt() + 1e-3 * x[1].powi(2);
        let g = |x: &[f64]| vec![0.5 / x[0].sqrt(), 2e-3 * x[1]];
        let x0 = [4.0, 3.0];
        let out = minimize_bfgs(f, g, &x0, &cfg);
        assert!(out.f <= f(&x0));
        assert!(out.f.is_finite());
    }
}
