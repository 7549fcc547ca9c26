//! Position and orientation DMPs and the coupled rollout integrator.
//!
//! Position follows `τ p̈ = α_x(β_x(p_g - p) - τ ṗ) + f_p(s)`, orientation
//! follows `τ ẇ = α_x(β_x log(R_g Rᵀ) - τ w) + f_q(s)` with `Ṙ = [w]× R`.
//! Integration is semi-implicit Euler: velocities first, then positions and
//! orientations from the updated velocities.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::canonical::{CanonicalSystem, ForcingTerm};
use crate::constraint::{blade_constraint_force, project_initial_velocity, violation, ConstraintSpec};
use crate::orient_opt::{OptError, OptimizerConfig, OrientationProblem};
use crate::so3::{exp_map, log_map, orthonormalize, RotationMatrix, So3Error, Vec3};
use crate::trajectory::{PoseSample, PoseTrajectory, TrajectoryError};

/// Rotations are projected back onto SO(3) after this many steps.
pub const REORTHONORMALIZE_EVERY: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid rollout parameters: {0}")]
    InvalidRollout(String),
    #[error(transparent)]
    So3(#[from] So3Error),
    #[error(transparent)]
    Optimizer(#[from] OptError),
    #[error("rollout failed at step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<DmpError>,
    },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl DmpError {
    /// The innermost error, skipping step-index wrappers.
    pub fn root(&self) -> &DmpError {
        match self {
            DmpError::Step { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Attractor gains and time constants shared by all six DOFs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmpGains {
    pub tau: f64,
    pub alpha_x: f64,
    pub beta_x: f64,
    pub alpha_s: f64,
}

impl Default for DmpGains {
    fn default() -> Self {
        Self {
            tau: 1.0,
            alpha_x: 25.0,
            beta_x: 6.25,
            alpha_s: 1.0,
        }
    }
}

impl DmpGains {
    pub fn validate(&self) -> Result<(), DmpError> {
        for (name, v) in [
            ("tau", self.tau),
            ("alpha_x", self.alpha_x),
            ("beta_x", self.beta_x),
            ("alpha_s", self.alpha_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DmpError::InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn canonical(&self) -> CanonicalSystem {
        CanonicalSystem::new(self.tau, self.alpha_s)
    }
}

/// A trained pose primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct DmpModel {
    pub gains: DmpGains,
    /// Sample interval of the training demonstration.
    pub dt: f64,
    /// Duration of the training demonstration.
    pub duration: f64,
    pub position: [ForcingTerm; 3],
    pub orientation: [ForcingTerm; 3],
    pub p0: Vec3,
    pub p_dot0: Vec3,
    pub r0: RotationMatrix,
    pub w0: Vec3,
    pub p_goal: Vec3,
    pub r_goal: RotationMatrix,
}

impl DmpModel {
    pub fn validate(&self) -> Result<(), DmpError> {
        self.gains.validate()?;
        if !(self.dt > 0.0 && self.duration > 0.0) {
            return Err(DmpError::InvalidModel("dt and duration must be positive".into()));
        }
        let n = self.position[0].len();
        if n < 2 {
            return Err(DmpError::InvalidModel(format!(
                "need at least 2 basis functions, got {n}"
            )));
        }
        if self.position.iter().chain(&self.orientation).any(|f| f.len() != n) {
            return Err(DmpError::InvalidModel(
                "all forcing terms must share one basis size".into(),
            ));
        }
        Ok(())
    }

    pub fn n_basis(&self) -> usize {
        self.position[0].len()
    }

    pub fn canonical(&self) -> CanonicalSystem {
        self.gains.canonical()
    }

    pub fn position_forcing(&self, s: f64) -> Vec3 {
        Vec3::new(
            self.position[0].eval(s),
            self.position[1].eval(s),
            self.position[2].eval(s),
        )
    }

    pub fn orientation_forcing(&self, s: f64) -> Vec3 {
        Vec3::new(
            self.orientation[0].eval(s),
            self.orientation[1].eval(s),
            self.orientation[2].eval(s),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RolloutMode {
    /// Plain DMP.
    Nominal,
    /// DMP plus the Udwadia-Kalaba constraint force.
    Constrained,
    /// Constrained DMP whose angular velocity is re-optimized every step.
    Optimized,
}

impl RolloutMode {
    pub const ALL: [RolloutMode; 3] = [Self::Nominal, Self::Constrained, Self::Optimized];

    pub fn is_constrained(self) -> bool {
        !matches!(self, Self::Nominal)
    }
}

impl fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nominal => "nominal",
            Self::Constrained => "constrained",
            Self::Optimized => "optimized",
        })
    }
}

impl FromStr for RolloutMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "constrained" => Ok(Self::Constrained),
            "optimized" => Ok(Self::Optimized),
            other => Err(format!(
                "unknown rollout mode '{other}' (expected nominal, constrained or optimized)"
            )),
        }
    }
}

/// Instantaneous integration state.
///
/// `r`/`w` is the orientation actually executed. `r_nominal`/`w_nominal` is the
/// unconstrained orientation DMP integrated alongside; the two coincide except
/// in [`RolloutMode::Optimized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutState {
    pub t: f64,
    pub s: f64,
    pub p: Vec3,
    pub p_dot: Vec3,
    pub r: RotationMatrix,
    pub w: Vec3,
    pub r_nominal: RotationMatrix,
    pub w_nominal: Vec3,
}

impl RolloutState {
    pub fn initial(model: &DmpModel) -> Self {
        Self {
            t: 0.0,
            s: 1.0,
            p: model.p0,
            p_dot: model.p_dot0,
            r: model.r0,
            w: model.w0,
            r_nominal: model.r0,
            w_nominal: model.w0,
        }
    }
}

/// Per-sample diagnostics recorded by [`Integrator::step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    /// `cᵀ ṗ` at the state the step started from.
    pub violation: f64,
    /// Norm of the constraint force applied during the step.
    pub fcon_norm: f64,
    pub opt_iters: usize,
    /// Optimizer loss at its solution (zero outside optimized mode).
    pub loss: f64,
    /// Lateral velocity removed by the post-step projection.
    pub correction: f64,
}

/// Unconstrained position acceleration `(α_x(β_x(p_g - p) - τ ṗ) + f_p(s)) / τ`.
pub fn position_accel(model: &DmpModel, st: &RolloutState) -> Vec3 {
    let g = &model.gains;
    (g.alpha_x * (g.beta_x * (model.p_goal - st.p) - g.tau * st.p_dot) + model.position_forcing(st.s)) / g.tau
}

/// Angular acceleration `(α_x(β_x log(R_g Rᵀ) - τ w) + f_q(s)) / τ`.
pub fn orientation_rate(model: &DmpModel, r: &RotationMatrix, w: &Vec3, s: f64) -> Result<Vec3, So3Error> {
    let g = &model.gains;
    let err = log_map(&model.r_goal.compose(&r.transpose()))?;
    Ok((g.alpha_x * (g.beta_x * err - g.tau * w) + model.orientation_forcing(s)) / g.tau)
}

/// Steps a model forward in one of the three modes.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    pub model: &'a DmpModel,
    pub mode: RolloutMode,
    pub spec: ConstraintSpec,
    pub dt: f64,
    pub optimizer: OptimizerConfig,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a DmpModel, mode: RolloutMode, spec: ConstraintSpec, dt: f64) -> Self {
        Self {
            model,
            mode,
            spec,
            dt,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn with_optimizer(mut self, cfg: OptimizerConfig) -> Self {
        self.optimizer = cfg;
        self
    }

    /// Advances `st` by one step. `index` is the step number, used for the
    /// periodic re-orthonormalization.
    pub fn step(&self, st: &RolloutState, index: usize) -> Result<(RolloutState, StepDiagnostics), DmpError> {
        let dt = self.dt;
        let mut diag = StepDiagnostics {
            violation: violation(&self.spec, &st.r, &st.p_dot),
            ..Default::default()
        };

        let w_dot_nom = orientation_rate(self.model, &st.r_nominal, &st.w_nominal, st.s)?;
        let w_nominal = st.w_nominal + w_dot_nom * dt;
        let mut r_nominal = exp_map(&w_nominal, dt).compose(&st.r_nominal);

        let p_ddot = position_accel(self.model, st);
        let (mut r, w, f_con) = match self.mode {
            RolloutMode::Nominal => (r_nominal, w_nominal, Vec3::zeros()),
            RolloutMode::Constrained => {
                let force = blade_constraint_force(&self.spec, &st.r, &st.w, &st.p_dot, &p_ddot);
                (r_nominal, w_nominal, force.f_con)
            }
            RolloutMode::Optimized => {
                let problem = OrientationProblem {
                    spec: &self.spec,
                    r_nominal,
                    r_prev: st.r,
                    p_dot: st.p_dot,
                    p_ddot_unc: p_ddot,
                    dt,
                };
                let opt = problem.optimize(&self.optimizer, &w_nominal)?;
                diag.opt_iters = opt.iterations;
                diag.loss = opt.loss;
                let force = blade_constraint_force(&self.spec, &opt.r_opt, &opt.w_opt, &st.p_dot, &p_ddot);
                (opt.r_opt, opt.w_opt, force.f_con)
            }
        };
        diag.fcon_norm = f_con.norm();

        let mut p_dot = st.p_dot + (p_ddot + f_con) * dt;
        if self.mode.is_constrained() {
            // velocity-level drift control
            let c = self.spec.world_axis(&r);
            let lateral = c.dot(&p_dot) / c.norm_squared();
            p_dot -= c * lateral;
            diag.correction = lateral.abs();
        }
        let p = st.p + p_dot * dt;

        if (index + 1).is_multiple_of(REORTHONORMALIZE_EVERY) {
            r_nominal = orthonormalize(r_nominal.matrix());
            r = if self.mode == RolloutMode::Optimized {
                orthonormalize(r.matrix())
            } else {
                r_nominal
            };
        }

        let next = RolloutState {
            t: (index + 1) as f64 * dt,
            s: self.model.canonical().step(st.s, dt),
            p,
            p_dot,
            r,
            w,
            r_nominal,
            w_nominal,
        };
        Ok((next, diag))
    }

    /// Initial state, with the start velocity projected onto the permitted
    /// plane in constrained modes. Also returns the lateral speed removed.
    pub fn initial_state(&self) -> (RolloutState, f64) {
        let mut st = RolloutState::initial(self.model);
        let before = violation(&self.spec, &st.r, &st.p_dot);
        if self.mode.is_constrained() {
            st.p_dot = project_initial_velocity(&self.spec, &st.r, &st.p_dot);
        }
        (st, before)
    }

    /// Integrates for `duration`, producing `⌈duration/dt⌉ + 1` samples.
    pub fn rollout(&self, duration: f64) -> Result<Rollout, DmpError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DmpError::InvalidRollout(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(DmpError::InvalidRollout(format!(
                "duration must be positive, got {duration}"
            )));
        }
        self.model.validate()?;
        let steps = sample_steps(duration, self.dt);
        let (mut st, initial_violation) = self.initial_state();
        let mut states = Vec::with_capacity(steps + 1);
        let mut diagnostics = Vec::with_capacity(steps + 1);
        // one extra step past the end so the final sample gets diagnostics too
        for index in 0..=steps {
            let (next, diag) = self.step(&st, index).map_err(|e| DmpError::Step {
                index,
                source: Box::new(e),
            })?;
            states.push(st);
            diagnostics.push(diag);
            st = next;
        }
        Ok(Rollout {
            states,
            diagnostics,
            initial_violation,
        })
    }
}

/// Number of integration steps covering `duration`.
pub fn sample_steps(duration: f64, dt: f64) -> usize {
    // tolerate representation error in duration/dt, e.g. 1.0/0.001
    ((duration / dt) * (1.0 - 1e-12)).ceil() as usize
}

/// Convenience wrapper around [`Integrator::step`] with default optimizer settings.
pub fn step(
    model: &DmpModel,
    st: &RolloutState,
    mode: RolloutMode,
    spec: &ConstraintSpec,
    dt: f64,
) -> Result<(RolloutState, StepDiagnostics), DmpError> {
    Integrator::new(model, mode, *spec, dt).step(st, 0)
}

/// Convenience wrapper around [`Integrator::rollout`] with default optimizer settings.
pub fn rollout(
    model: &DmpModel,
    mode: RolloutMode,
    spec: &ConstraintSpec,
    dt: f64,
    duration: f64,
) -> Result<Rollout, DmpError> {
    Integrator::new(model, mode, *spec, dt).rollout(duration)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<RolloutState>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// `cᵀ ṗ₀` before the initial projection.
    pub initial_violation: f64,
}

impl Rollout {
    pub fn trajectory(&self) -> Result<PoseTrajectory, TrajectoryError> {
        PoseTrajectory::new(
            self.states
                .iter()
                .map(|s| PoseSample { t: s.t, p: s.p, r: s.r })
                .collect(),
        )
    }

    pub fn max_abs_violation(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max(d.violation.abs()))
    }

    pub fn max_fcon_norm(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max(d.fcon_norm))
    }

    pub fn max_loss(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max(d.loss))
    }

    pub fn final_state(&self) -> &RolloutState {
        self.states.last().expect("rollouts have at least one sample")
    }
}
