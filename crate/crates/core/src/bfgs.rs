//! Small dense BFGS minimizer with central-difference gradients.

use nalgebra::{SMatrix, SVector};

/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
/// Weak Wolfe curvature constant.
const WOLFE_C2: f64 = 0.9;
const MAX_LINE_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsConfig {
    /// Central-difference step.
    pub grad_eps: f64,
    /// Stop once the gradient norm falls below this.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Upper bound on the length of a single line-search step.
    pub max_step: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            grad_eps: 1e-6,
            tol_grad: 1e-8,
            max_iters: 100,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient norm below `tol_grad`.
    Gradient,
    /// No descent step could be found along the quasi-Newton direction or the
    /// steepest-descent fallback; the iterate is at the resolution limit of the
    /// finite-difference gradient (typically a kink of a non-smooth objective).
    Stalled,
    /// `max_iters` exhausted with the gradient still above tolerance.
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum<const N: usize> {
    pub x: SVector<f64, N>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl<const N: usize> Minimum<N> {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

pub fn central_gradient<F, const N: usize>(f: &F, x: &SVector<f64, N>, eps: f64) -> SVector<f64, N>
where
    F: Fn(&SVector<f64, N>) -> f64,
{
    let mut g = SVector::<f64, N>::zeros();
    let mut probe = *x;
    for i in 0..N {
        let xi = x[i];
        probe[i] = xi + eps;
        let up = f(&probe);
        probe[i] = xi - eps;
        let down = f(&probe);
        probe[i] = xi;
        g[i] = (up - down) / (2.0 * eps);
    }
    g
}

struct Step<const N: usize> {
    x: SVector<f64, N>,
    f: f64,
    g: SVector<f64, N>,
}

/// Bracketing search for a step satisfying the weak Wolfe conditions: halve
/// after an Armijo failure, double while the curvature condition fails and no
/// upper bound is known, never beyond `cfg.max_step`. Falls back to the last
/// Armijo point if the bracket collapses or the step bound is reached.
fn wolfe_search<F, const N: usize>(
    f: &F,
    x: &SVector<f64, N>,
    fx: f64,
    d: &SVector<f64, N>,
    slope: f64,
    cfg: &BfgsConfig,
    evaluations: &mut usize,
) -> Option<Step<N>>
where
    F: Fn(&SVector<f64, N>) -> f64,
{
    let alpha_max = cfg.max_step / d.norm();
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut alpha = alpha_max.min(1.0);
    let mut best: Option<Step<N>> = None;
    for _ in 0..MAX_LINE_STEPS {
        let trial = x + d * alpha;
        let ft = f(&trial);
        *evaluations += 1;
        // strict decrease, so steps lost to rounding count as failures
        if !(ft <= fx + ARMIJO_C1 * alpha * slope && ft < fx) {
            hi = alpha;
        } else {
            let gt = central_gradient(f, &trial, cfg.grad_eps);
            *evaluations += 2 * N;
            let step = Step { x: trial, f: ft, g: gt };
            if gt.dot(d) >= WOLFE_C2 * slope {
                return Some(step);
            }
            lo = alpha;
            best = Some(step);
            if lo >= alpha_max {
                break;
            }
        }
        alpha = if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            (2.0 * lo).min(alpha_max)
        };
    }
    best
}

pub fn minimize<F, const N: usize>(f: F, x0: SVector<f64, N>, cfg: &BfgsConfig) -> Minimum<N>
where
    F: Fn(&SVector<f64, N>) -> f64,
{
    let mut evaluations = 0usize;
    let eval = |x: &SVector<f64, N>, count: &mut usize| {
        *count += 1;
        f(x)
    };

    let mut x = x0;
    let mut fx = eval(&x, &mut evaluations);
    let mut g = central_gradient(&f, &x, cfg.grad_eps);
    evaluations += 2 * N;
    let mut h = SMatrix::<f64, N, N>::identity();
    let mut h_is_identity = true;
    let mut scaled = false;

    for iter in 0..cfg.max_iters {
        let gnorm = g.norm();
        if gnorm < cfg.tol_grad {
            return Minimum {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter,
                evaluations,
                termination: Termination::Gradient,
            };
        }

        let mut d = -(h * g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = SMatrix::identity();
            h_is_identity = true;
            d = -g;
            slope = -gnorm * gnorm;
        }

        // weak Wolfe search; on failure retry once along -g before giving up
        let accepted = loop {
            let found = wolfe_search(&f, &x, fx, &d, slope, cfg, &mut evaluations);
            if found.is_some() || h_is_identity {
                break found;
            }
            h = SMatrix::identity();
            h_is_identity = true;
            d = -g;
            slope = -gnorm * gnorm;
        };

        let Some(Step {
            x: x_new,
            f: f_new,
            g: g_new,
        }) = accepted
        else {
            return Minimum {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter + 1,
                evaluations,
                termination: Termination::Stalled,
            };
        };

        let s = x_new - x;
        let y = g_new - g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                // Shanno-Phua scaling of the initial inverse Hessian
                h = SMatrix::identity() * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = h * y;
            let yhy = y.dot(&hy);
            h += (s * s.transpose()) * (rho * rho * yhy + rho) - (hy * s.transpose() + s * hy.transpose()) * rho;
            h_is_identity = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let gnorm = g.norm();
    Minimum {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations: cfg.max_iters,
        evaluations,
        termination: if gnorm < cfg.tol_grad {
            Termination::Gradient
        } else {
            Termination::MaxIterations
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    #[test]
    fn rosenbrock() {
        let f = |x: &Vector2<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = BfgsConfig {
            max_iters: 500,
            tol_grad: 1e-7,
            ..Default::default()
        };
        let m = minimize(f, Vector2::new(-1.2, 1.0), &cfg);
        assert!(m.converged(), "{m:?}");
        assert!((m.x - Vector2::new(1.0, 1.0)).norm() < 1e-5, "{m:?}");
    }

    #[test]
    fn quadratic_converges_quickly() {
        let a = Vector3::new(1.0, 10.0, 100.0);
        let f = |x: &Vector3<f64>| (0..3).map(|i| a[i] * (x[i] - i as f64).powi(2)).sum::<f64>();
        let m = minimize(f, Vector3::zeros(), &BfgsConfig::default());
        assert_eq!(m.termination, Termination::Gradient);
        assert!((m.x - Vector3::new(0.0, 1.0, 2.0)).norm() < 1e-8);
        assert!(m.iterations < 30);
    }

    #[test]
    fn starts_at_minimum() {
        let f = |x: &Vector2<f64>| x.norm_squared();
        let m = minimize(f, Vector2::zeros(), &BfgsConfig::default());
        assert_eq!(m.iterations, 0);
        assert_eq!(m.x, Vector2::zeros());
    }

    #[test]
    fn nonsmooth_kink_terminates() {
        // |x0 - 1| + 0.01 (x1 - 2)²: the minimizer sits on a kink
        let f = |x: &Vector2<f64>| (x[0] - 1.0).abs() + 0.01 * (x[1] - 2.0).powi(2);
        let m = minimize(f, Vector2::new(-3.0, 0.0), &BfgsConfig::default());
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{m:?}");
        assert!((m.x[1] - 2.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn max_iterations_reported() {
        let f = |x: &Vector2<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = BfgsConfig {
            max_iters: 3,
            ..Default::default()
        };
        let m = minimize(f, Vector2::new(-1.2, 1.0), &cfg);
        assert_eq!(m.termination, Termination::MaxIterations);
        assert!(!m.converged());
    }

    #[test]
    fn steps_respect_max_step() {
        let f = |x: &Vector2<f64>| (x[0] - 10.0).powi(2) + (x[1] + 4.0).powi(2);
        let cfg = BfgsConfig {
            max_step: 0.5,
            max_iters: 200,
            ..Default::default()
        };
        let m = minimize(f, Vector2::zeros(), &cfg);
        assert_eq!(m.termination, Termination::Gradient);
        assert!((m.x - Vector2::new(10.0, -4.0)).norm() < 1e-7);
        // at least |x*| / max_step iterations are needed
        assert!(m.iterations >= 22, "{m:?}");
    }

    #[test]
    fn gradient_of_quadratic() {
        let f = |x: &Vector2<f64>| 3.0 * x[0] * x[0] + x[0] * x[1];
        let g = central_gradient(&f, &Vector2::new(1.0, 2.0), 1e-6);
        assert!((g - Vector2::new(8.0, 1.0)).norm() < 1e-8);
    }
}
