//! Per-step choice of angular velocity that makes the constraint force vanish
//! while keeping the orientation close to the unconstrained one.
//!
//! For a candidate angular velocity `w` the next orientation is
//! `R_opt(w) = exp_map(w, dt) · R_prev` and the loss is
//!
//! ```text
//! L(w) = |f_con(w)|₂ + |R_nominal - R_opt(w)|_F
//! ```
//!
//! where `f_con(w)` is the blade constraint force evaluated at `R_opt(w)` with
//! angular velocity `w`. Both terms carry configurable weights (1 by default).
//!
//! The loss is not convex. When the velocity is small the only way to cancel
//! the force is to turn the blade axis away from the acceleration, which can
//! take a large rotation that a local search from the nominal angular
//! velocity never reaches. When the warm-started search leaves a force above
//! `fcon_tol`, the optimizer restarts from the smallest rotation of the
//! nominal orientation that puts the blade axis perpendicular to the
//! acceleration and keeps the better of the two.
//!
//! `ċ = w × c` inside `f_con` is a rate, so it only describes the step for
//! small `w · dt`. Each line-search step is therefore limited to
//! `max_rotation_step` radians of rotation, which keeps the search away from
//! far-off minima that only exist because of that linearization.

use thiserror::Error;

use crate::bfgs::{self, BfgsConfig, Termination};
use crate::constraint::{blade_constraint_force, ConstraintSpec};
use crate::so3::{exp_map, log_map, RotationMatrix, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub grad_eps: f64,
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Start from the nominal angular velocity instead of zero.
    pub warm_start: bool,
    /// Restart from the nominal orientation turned so that the blade axis is
    /// perpendicular to the unconstrained acceleration when the first run
    /// ends with `|f_con| > fcon_tol`.
    pub aligned_start: bool,
    /// m/s².
    pub fcon_tol: f64,
    /// Largest rotation (rad) a single line-search step may add.
    pub max_rotation_step: f64,
    pub force_weight: f64,
    pub rotation_weight: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_eps: 1e-6,
            tol_grad: 1e-8,
            max_iters: 100,
            warm_start: true,
            aligned_start: true,
            fcon_tol: 1e-6,
            max_rotation_step: 0.1,
            force_weight: 1.0,
            rotation_weight: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        let bad = |what: &str| Err(OptError::InvalidConfig(what.to_string()));
        if !(self.grad_eps > 0.0) {
            return bad("grad_eps must be positive");
        }
        if !(self.tol_grad > 0.0) {
            return bad("tol_grad must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.fcon_tol >= 0.0) {
            return bad("fcon_tol must be non-negative");
        }
        if !(self.max_rotation_step > 0.0) {
            return bad("max_rotation_step must be positive");
        }
        if !(self.force_weight >= 0.0 && self.rotation_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }

    fn bfgs(&self, dt: f64) -> BfgsConfig {
        BfgsConfig {
            grad_eps: self.grad_eps,
            tol_grad: self.tol_grad,
            max_iters: self.max_iters,
            max_step: self.max_rotation_step / dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptStepResult {
    pub w_opt: Vec3,
    pub r_opt: RotationMatrix,
    pub loss: f64,
    pub f_con_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("orientation optimizer did not converge after {} iterations (gradient norm {grad_norm:.3e}, loss {:.3e})", result.iterations, result.loss)]
    NotConverged { result: Box<OptStepResult>, grad_norm: f64 },
}

/// Everything the loss depends on besides `w`.
#[derive(Debug, Clone, Copy)]
pub struct OrientationProblem<'a> {
    pub spec: &'a ConstraintSpec,
    pub r_nominal: RotationMatrix,
    pub r_prev: RotationMatrix,
    pub p_dot: Vec3,
    pub p_ddot_unc: Vec3,
    pub dt: f64,
}

/// The two loss terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub f_con_norm: f64,
    pub rotation_distance: f64,
}

impl OrientationProblem<'_> {
    pub fn candidate(&self, w: &Vec3) -> RotationMatrix {
        exp_map(w, self.dt).compose(&self.r_prev)
    }

    pub fn terms(&self, w: &Vec3) -> LossTerms {
        let r_opt = self.candidate(w);
        let force = blade_constraint_force(self.spec, &r_opt, w, &self.p_dot, &self.p_ddot_unc);
        LossTerms {
            f_con_norm: force.f_con.norm(),
            rotation_distance: (self.r_nominal.matrix() - r_opt.matrix()).norm(),
        }
    }

    pub fn weighted_loss(&self, w: &Vec3, force_weight: f64, rotation_weight: f64) -> f64 {
        let t = self.terms(w);
        force_weight * t.f_con_norm + rotation_weight * t.rotation_distance
    }

    /// Unit-weight loss.
    pub fn loss(&self, w: &Vec3) -> f64 {
        self.weighted_loss(w, 1.0, 1.0)
    }

    /// Central-difference gradient of the weighted loss, as used by the optimizer.
    pub fn gradient(&self, w: &Vec3, cfg: &OptimizerConfig) -> Vec3 {
        let f = |w: &Vec3| self.weighted_loss(w, cfg.force_weight, cfg.rotation_weight);
        bfgs::central_gradient(&f, w, cfg.grad_eps)
    }

    /// Minimizes the loss with BFGS starting from `w_warm` (or zero when
    /// warm starting is disabled). A `NotConverged` error still carries the
    /// best iterate.
    pub fn optimize(&self, cfg: &OptimizerConfig, w_warm: &Vec3) -> Result<OptStepResult, OptError> {
        cfg.validate()?;
        let start = if cfg.warm_start { *w_warm } else { Vec3::zeros() };
        let mut best = self.optimize_from(cfg, start);
        if cfg.aligned_start && best.0.f_con_norm > cfg.fcon_tol {
            if let Some(aligned) = self.aligned_start() {
                let other = self.optimize_from(cfg, aligned);
                let iterations = best.0.iterations + other.0.iterations;
                let better = match (&best, &other) {
                    ((_, None), (_, Some(_))) => false,
                    ((_, Some(_)), (_, None)) => true,
                    ((a, _), (b, _)) => b.loss < a.loss,
                };
                if better {
                    best = other;
                }
                best.0.iterations = iterations;
            }
        }
        match best {
            (result, None) => Ok(result),
            (result, Some(grad_norm)) => Err(OptError::NotConverged {
                result: Box::new(result),
                grad_norm,
            }),
        }
    }

    /// One BFGS run; the second element is the final gradient norm when the
    /// run hit the iteration limit.
    fn optimize_from(&self, cfg: &OptimizerConfig, start: Vec3) -> (OptStepResult, Option<f64>) {
        let f = |w: &Vec3| self.weighted_loss(w, cfg.force_weight, cfg.rotation_weight);
        let min = bfgs::minimize(f, start, &cfg.bfgs(self.dt));
        let terms = self.terms(&min.x);
        let result = OptStepResult {
            w_opt: min.x,
            r_opt: self.candidate(&min.x),
            loss: min.value,
            f_con_norm: terms.f_con_norm,
            iterations: min.iterations,
            termination: min.termination,
        };
        (result, (!min.converged()).then_some(min.grad_norm))
    }

    /// Angular velocity that reaches `Q · R_nominal`, where `Q` is the smallest
    /// rotation taking the nominal blade axis into the plane perpendicular to
    /// the unconstrained acceleration. `None` when the acceleration vanishes,
    /// the axis already lies in that plane, or the axis is parallel to it.
    pub fn aligned_start(&self) -> Option<Vec3> {
        let accel = self.p_ddot_unc.norm();
        if !(accel > 0.0) {
            return None;
        }
        let n = self.p_ddot_unc / accel;
        let c = self.spec.world_axis(&self.r_nominal).normalize();
        let target = c - n * c.dot(&n);
        if target.norm() < 1e-9 {
            return None;
        }
        let target = target.normalize();
        let axis = c.cross(&target);
        let angle = axis.norm().atan2(c.dot(&target));
        if angle < 1e-12 {
            return None;
        }
        let q = exp_map(&(axis / axis.norm()), angle);
        let r_start = q.compose(&self.r_nominal);
        let phi = log_map(&r_start.compose(&self.r_prev.transpose())).ok()?;
        Some(phi / self.dt)
    }
}

/// Unit-weight loss for a single candidate `w`.
pub fn loss(
    spec: &ConstraintSpec,
    r_nominal: &RotationMatrix,
    r_prev: &RotationMatrix,
    w: &Vec3,
    p_dot: &Vec3,
    p_ddot_unc: &Vec3,
    dt: f64,
) -> f64 {
    OrientationProblem {
        spec,
        r_nominal: *r_nominal,
        r_prev: *r_prev,
        p_dot: *p_dot,
        p_ddot_unc: *p_ddot_unc,
        dt,
    }
    .loss(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::log_map;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng, scale: f64) -> RotationMatrix {
        let w = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        exp_map(&w, scale)
    }

    #[test]
    fn zero_loss_when_consistent() {
        let spec = ConstraintSpec::default();
        let r_prev = RotationMatrix::from_euler_xyz(0.0, 0.7, 0.3);
        let w = Vec3::new(0.0, 0.0, 0.4);
        let dt = 0.01;
        let r_nominal = exp_map(&w, dt).compose(&r_prev);
        // velocity along the blade x axis, acceleration without lateral part
        // and no coupling through ċ because ṗ = 0
        let accel = r_nominal.rotate(&Vec3::new(1.0, 0.0, -2.0));
        let value = loss(&spec, &r_nominal, &r_prev, &w, &Vec3::zeros(), &accel, dt);
        assert!(value < 1e-14, "{value}");
    }

    #[test]
    fn warm_start_at_optimum_returns_immediately() {
        let spec = ConstraintSpec::default();
        let r_prev = RotationMatrix::identity();
        let w = Vec3::new(0.1, -0.2, 0.3);
        let dt = 0.01;
        let problem = OrientationProblem {
            spec: &spec,
            r_nominal: exp_map(&w, dt),
            r_prev,
            p_dot: Vec3::zeros(),
            p_ddot_unc: Vec3::zeros(),
            dt,
        };
        let out = problem.optimize(&OptimizerConfig::default(), &w).unwrap();
        assert!(out.iterations <= 2, "{out:?}");
        assert!((out.w_opt - w).norm() < 1e-12);
    }

    #[test]
    fn frobenius_only_minimizer_is_log_ratio() {
        let spec = ConstraintSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 0.01;
        for _ in 0..10 {
            let r_prev = random_rotation(&mut rng, 2.0);
            let r_nominal = random_rotation(&mut rng, 0.02).compose(&r_prev);
            let problem = OrientationProblem {
                spec: &spec,
                r_nominal,
                r_prev,
                p_dot: Vec3::zeros(),
                p_ddot_unc: Vec3::zeros(),
                dt,
            };
            let expected = log_map(&r_nominal.compose(&r_prev.transpose())).unwrap() / dt;
            let warm = expected + Vec3::new(0.5, -0.3, 0.2);
            let out = problem.optimize(&OptimizerConfig::default(), &warm).unwrap();
            assert!((out.w_opt - expected).norm() < 1e-6, "{out:?} vs {expected}");
        }
    }

    #[test]
    fn optimizer_never_worsens_warm_start() {
        let spec = ConstraintSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = OptimizerConfig::default();
        for _ in 0..25 {
            let r_prev = random_rotation(&mut rng, 2.0);
            let w_warm = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let problem = OrientationProblem {
                spec: &spec,
                r_nominal: exp_map(&w_warm, 0.001).compose(&r_prev),
                r_prev,
                p_dot: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
                p_ddot_unc: Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0),
                dt: 0.001,
            };
            let before = problem.loss(&w_warm);
            let out = match problem.optimize(&cfg, &w_warm) {
                Ok(out) => out,
                Err(OptError::NotConverged { result, .. }) => *result,
                Err(e) => panic!("{e}"),
            };
            assert!(out.loss <= before, "{} > {}", out.loss, before);
        }
    }

    #[test]
    fn grid_search_agrees_with_optimizer() {
        let spec = ConstraintSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r_prev = random_rotation(&mut rng, 1.0);
        let dt = 0.05;
        let w_nom = Vec3::new(0.3, -0.4, 0.8);
        let lateral = spec.world_axis(&r_prev);
        let forward = r_prev.rotate(&Vec3::x());
        let problem = OrientationProblem {
            spec: &spec,
            r_nominal: exp_map(&w_nom, dt).compose(&r_prev),
            r_prev,
            p_dot: forward * 0.4,
            p_ddot_unc: lateral * 0.05 + forward * 0.3,
            dt,
        };
        let out = problem.optimize(&OptimizerConfig::default(), &w_nom).unwrap();

        let step = 0.2;
        let mut best = (f64::INFINITY, Vec3::zeros());
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let w = w_nom + Vec3::new(i as f64, j as f64, k as f64) * step;
                    let l = problem.loss(&w);
                    if l < best.0 {
                        best = (l, w);
                    }
                }
            }
        }
        assert!(out.loss <= best.0 + 1e-12, "{} vs grid {}", out.loss, best.0);
        assert!(
            (out.w_opt - best.1).norm() <= step * 3f64.sqrt(),
            "{:?} vs {:?}",
            out.w_opt,
            best.1
        );
    }

    #[test]
    fn reorients_when_starting_at_rest() {
        // ṗ = 0: only turning the blade axis away from p̈ removes the force
        let spec = ConstraintSpec::default();
        let r_prev = RotationMatrix::from_euler_xyz(0.0, std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2);
        let dt = 0.001;
        let problem = OrientationProblem {
            spec: &spec,
            r_nominal: r_prev,
            r_prev,
            p_dot: Vec3::zeros(),
            p_ddot_unc: Vec3::new(20.0, -1.0, 0.0),
            dt,
        };
        let local = OptimizerConfig {
            aligned_start: false,
            ..Default::default()
        };
        let stuck = problem.optimize(&local, &Vec3::zeros()).unwrap();
        assert!(stuck.f_con_norm > 19.0, "{stuck:?}");

        let out = problem.optimize(&OptimizerConfig::default(), &Vec3::zeros()).unwrap();
        assert!(out.f_con_norm < 1e-8, "{out:?}");
        assert!(out.loss < stuck.loss);
        let c = spec.world_axis(&out.r_opt);
        assert!(c.dot(&problem.p_ddot_unc).abs() < 1e-8);
    }

    #[test]
    fn aligned_start_is_perpendicular_to_acceleration() {
        let spec = ConstraintSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let r_prev = random_rotation(&mut rng, 2.0);
            let r_nominal = random_rotation(&mut rng, 0.3).compose(&r_prev);
            let accel = Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let problem = OrientationProblem {
                spec: &spec,
                r_nominal,
                r_prev,
                p_dot: Vec3::zeros(),
                p_ddot_unc: accel,
                dt: 0.01,
            };
            let w = problem.aligned_start().unwrap();
            let c = spec.world_axis(&problem.candidate(&w));
            assert!(c.dot(&accel).abs() < 1e-9 * accel.norm());
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.grad_eps = 0.0;
        assert!(cfg.validate().is_err());
        cfg = OptimizerConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
