//! Demonstration handling: synthetic demo generation, sensor-to-blade
//! transforms, filtering, differentiation and DMP training.

pub mod filter;
pub mod io;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use thiserror::Error;

use crate::canonical::{FitError, ForcingTerm, RbfBasis};
use crate::constraint::{project_initial_velocity, violation, ConstraintSpec};
use crate::dmp::{sample_steps, DmpError, DmpGains, DmpModel};
use crate::so3::{exp_map, log_map, RotationMatrix, So3Error, Vec3};
use crate::trajectory::{PoseSample, PoseTrajectory, TrajectoryError};
use filter::{butterworth_lowpass, default_padlen, FilterError};

/// Order of the demonstration low-pass filter.
pub const FILTER_ORDER: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    So3(#[from] So3Error),
    #[error("fitting the {dof} forcing term failed: {source}")]
    Fit {
        dof: &'static str,
        #[source]
        source: FitError,
    },
    #[error(transparent)]
    Dmp(#[from] DmpError),
}

const DOF_NAMES: [&str; 6] = ["x", "y", "z", "wx", "wy", "wz"];

/// Rigid transform `T = [R t; 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: RotationMatrix,
    pub t: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            r: RotationMatrix::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn new(r: RotationMatrix, t: Vec3) -> Self {
        Self { r, t }
    }

    /// Pure translation given in centimeters.
    pub fn from_offset_cm(x: f64, y: f64, z: f64) -> Self {
        Self::new(RotationMatrix::identity(), Vec3::new(x, y, z) * 0.01)
    }

    /// The scalpel blade relative to the tracking sensor: 5.2 cm along x and
    /// 1.3 cm along z, no rotation.
    pub fn sensor_to_blade() -> Self {
        Self::from_offset_cm(5.2, 0.0, 1.3)
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &RigidTransform) -> Self {
        Self {
            r: self.r.compose(&rhs.r),
            t: self.t + self.r.rotate(&rhs.t),
        }
    }
}

/// Right-composes every pose with `x`: `T_wb(t) = T_ws(t) · x`.
pub fn apply_rigid_transform(traj: &PoseTrajectory, x: &RigidTransform) -> PoseTrajectory {
    traj.map_samples(|_, s| PoseSample {
        t: s.t,
        p: s.p + s.r.rotate(&x.t),
        r: s.r.compose(&x.r),
    })
}

/// Heading of the synthetic demo, `atan2(x, y)`. At the origin the ratio is
/// undefined; the curve approaches it along +x (x ~ t², y ~ t³), so the limit
/// value π/2 is used there.
fn demo_yaw(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        FRAC_PI_2
    } else {
        x.atan2(y)
    }
}

/// Curved planar cut: `x = sin²(πt)`, `y = sin³(πt/2)`, `z = 0`, with
/// extrinsic xyz Euler angles roll 0, pitch π/4, yaw `atan2(x, y)`.
pub fn gen_numerical_demo(dt: f64, duration: f64) -> PoseTrajectory {
    assert!(dt > 0.0 && duration > 0.0, "dt and duration must be positive");
    let n = sample_steps(duration, dt) + 1;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let x = (PI * t).sin().powi(2);
            let y = (0.5 * PI * t).sin().powi(3);
            PoseSample {
                t,
                p: Vec3::new(x, y, 0.0),
                r: RotationMatrix::from_euler_xyz(0.0, FRAC_PI_4, demo_yaw(x, y)),
            }
        })
        .collect();
    PoseTrajectory::new(samples).expect("generated timestamps are uniform")
}

/// First derivative by central differences, second-order one-sided stencils
/// at the ends.
pub fn differentiate(xs: &[Vec3], dt: f64) -> Vec<Vec3> {
    let n = xs.len();
    match n {
        0 => Vec::new(),
        1 => vec![Vec3::zeros()],
        2 => vec![(xs[1] - xs[0]) / dt; 2],
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    (xs[1] * 4.0 - xs[0] * 3.0 - xs[2]) / (2.0 * dt)
                } else if k == n - 1 {
                    (xs[n - 1] * 3.0 - xs[n - 2] * 4.0 + xs[n - 3]) / (2.0 * dt)
                } else {
                    (xs[k + 1] - xs[k - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// Second derivative by the central three-point stencil, second-order
/// one-sided four-point stencils at the ends.
pub fn second_derivative(xs: &[Vec3], dt: f64) -> Vec<Vec3> {
    let n = xs.len();
    let dt2 = dt * dt;
    if n < 4 {
        let d = differentiate(&differentiate(xs, dt), dt);
        return d;
    }
    (0..n)
        .map(|k| {
            if k == 0 {
                (xs[0] * 2.0 - xs[1] * 5.0 + xs[2] * 4.0 - xs[3]) / dt2
            } else if k == n - 1 {
                (xs[n - 1] * 2.0 - xs[n - 2] * 5.0 + xs[n - 3] * 4.0 - xs[n - 4]) / dt2
            } else {
                (xs[k + 1] - xs[k] * 2.0 + xs[k - 1]) / dt2
            }
        })
        .collect()
}

/// World-frame angular velocity per sample, `log(R_{k+1} R_kᵀ) / dt`; the last
/// sample repeats the final increment.
pub fn angular_velocities(rotations: &[RotationMatrix], dt: f64) -> Result<Vec<Vec3>, So3Error> {
    let mut w = Vec::with_capacity(rotations.len());
    for pair in rotations.windows(2) {
        w.push(log_map(&pair[1].compose(&pair[0].transpose()))? / dt);
    }
    let last = w.last().copied().unwrap_or_else(Vec3::zeros);
    w.push(last);
    Ok(w)
}

/// Zero-phase low-pass of positions and of successive rotation increments.
pub fn lowpass_filter(traj: &PoseTrajectory, cutoff: f64) -> Result<PoseTrajectory, PipelineError> {
    let fs = traj.sample_rate();
    let filt = butterworth_lowpass(FILTER_ORDER, cutoff, fs)?;
    let padlen = default_padlen(fs, cutoff);
    let filter_series = |series: Vec<Vec3>| -> Vec<Vec3> {
        let axes: Vec<Vec<f64>> = (0..3)
            .map(|a| filt.filtfilt(&series.iter().map(|v| v[a]).collect::<Vec<_>>(), padlen))
            .collect();
        (0..series.len())
            .map(|k| Vec3::new(axes[0][k], axes[1][k], axes[2][k]))
            .collect()
    };

    let positions = filter_series(traj.positions().collect());
    let rotations: Vec<RotationMatrix> = traj.rotations().collect();
    let increments = rotations
        .windows(2)
        .map(|p| log_map(&p[1].compose(&p[0].transpose())))
        .collect::<Result<Vec<_>, _>>()?;
    let increments = filter_series(increments);

    let mut r = rotations[0];
    Ok(traj.map_samples(|k, s| {
        if k > 0 {
            r = exp_map(&increments[k - 1], 1.0).compose(&r);
        }
        PoseSample {
            t: s.t,
            p: positions[k],
            r,
        }
    }))
}

/// Output of [`preprocess`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub trajectory: PoseTrajectory,
    /// Initial velocity projected onto the permitted plane.
    pub p_dot0: Vec3,
    /// Lateral speed `cᵀ ṗ₀` before projection.
    pub initial_violation: f64,
}

/// Sensor-to-blade transform, optional low-pass filtering, rebasing to the
/// origin and initial-velocity projection.
///
/// Rebasing happens after filtering so the output starts exactly at the
/// origin; the filter has unit DC gain, so the order does not otherwise matter.
pub fn preprocess(
    traj: &PoseTrajectory,
    x: &RigidTransform,
    cutoff: Option<f64>,
    spec: &ConstraintSpec,
) -> Result<Preprocessed, PipelineError> {
    let blade = apply_rigid_transform(traj, x);
    let filtered = match cutoff {
        Some(fc) => lowpass_filter(&blade, fc)?,
        None => blade,
    };
    let origin = filtered.first().p;
    let rebased = filtered.map_samples(|_, s| PoseSample { p: s.p - origin, ..*s });

    let positions: Vec<Vec3> = rebased.positions().collect();
    let v0 = differentiate(&positions, rebased.dt())[0];
    let r0 = rebased.first().r;
    Ok(Preprocessed {
        p_dot0: project_initial_velocity(spec, &r0, &v0),
        initial_violation: violation(spec, &r0, &v0),
        trajectory: rebased,
    })
}

/// Training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub n_basis: usize,
    pub gains: DmpGains,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_basis: 100,
            gains: DmpGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: DmpModel,
    /// RMS forcing reconstruction error per DOF (x, y, z, wx, wy, wz).
    pub forcing_rmse: [f64; 6],
}

/// Fits position and orientation forcing terms to `traj`. The start velocity
/// defaults to the finite-difference estimate at the first sample; pass
/// `p_dot0` to override it (e.g. with the projected velocity from
/// [`preprocess`]).
pub fn train(traj: &PoseTrajectory, cfg: &TrainConfig, p_dot0: Option<Vec3>) -> Result<TrainedModel, PipelineError> {
    let g = cfg.gains;
    g.validate()?;
    let dt = traj.dt();
    let n = traj.len();
    let canonical = g.canonical();
    let phase = canonical.phase_samples(n, dt);
    let fit_err = |dof: usize| {
        move |source| PipelineError::Fit {
            dof: DOF_NAMES[dof],
            source,
        }
    };
    let basis = RbfBasis::time_spaced(cfg.n_basis, &canonical, traj.duration()).map_err(fit_err(0))?;

    let p: Vec<Vec3> = traj.positions().collect();
    let v = differentiate(&p, dt);
    let a = second_derivative(&p, dt);
    let p_goal = traj.last().p;
    let pos_targets: Vec<Vec3> = (0..n)
        .map(|k| a[k] * g.tau - (g.beta_x * (p_goal - p[k]) - v[k] * g.tau) * g.alpha_x)
        .collect();

    let r: Vec<RotationMatrix> = traj.rotations().collect();
    let w = angular_velocities(&r, dt)?;
    let w_dot = differentiate(&w, dt);
    let r_goal = traj.last().r;
    let mut rot_targets = Vec::with_capacity(n);
    for k in 0..n {
        let err = log_map(&r_goal.compose(&r[k].transpose()))?;
        rot_targets.push(w_dot[k] * g.tau - (err * g.beta_x - w[k] * g.tau) * g.alpha_x);
    }

    let mut forcing_rmse = [0.0; 6];
    let mut fit_axis = |dof: usize, series: &[Vec3], axis: usize| -> Result<ForcingTerm, PipelineError> {
        let targets: Vec<(f64, f64)> = phase.iter().zip(series).map(|(s, f)| (*s, f[axis])).collect();
        let fit = ForcingTerm::fit(basis.clone(), &targets).map_err(fit_err(dof))?;
        forcing_rmse[dof] = fit.rmse;
        Ok(fit.forcing)
    };
    let position = [
        fit_axis(0, &pos_targets, 0)?,
        fit_axis(1, &pos_targets, 1)?,
        fit_axis(2, &pos_targets, 2)?,
    ];
    let orientation = [
        fit_axis(3, &rot_targets, 0)?,
        fit_axis(4, &rot_targets, 1)?,
        fit_axis(5, &rot_targets, 2)?,
    ];

    let model = DmpModel {
        gains: g,
        dt,
        duration: traj.duration(),
        position,
        orientation,
        p0: p[0],
        p_dot0: p_dot0.unwrap_or(v[0]),
        r0: r[0],
        w0: w[0],
        p_goal,
        r_goal,
    };
    model.validate()?;
    Ok(TrainedModel { model, forcing_rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmp::{rollout, RolloutMode};
    use crate::trajectory::position_rmse;
    use approx::assert_relative_eq;

    #[test]
    fn demo_closed_forms() {
        let demo = gen_numerical_demo(0.001, 1.0);
        assert_eq!(demo.len(), 1001);
        assert_eq!(demo.first().p, Vec3::zeros());
        let mid = demo.samples()[500];
        assert_relative_eq!(mid.p.x, 1.0, epsilon = 1e-15);
        assert_relative_eq!(mid.p.y, 0.3535533905932737, epsilon = 1e-15);
        for s in demo.samples() {
            assert_eq!(s.p.z, 0.0);
            let (roll, pitch, yaw) = s.r.to_euler_xyz();
            assert!(roll.abs() < 1e-14);
            assert_relative_eq!(pitch, FRAC_PI_4, epsilon = 1e-14);
            assert_relative_eq!(yaw, demo_yaw(s.p.x, s.p.y), epsilon = 1e-14);
        }
        assert_eq!(gen_numerical_demo(0.01, 1.0).len(), 101);
    }

    #[test]
    fn demo_yaw_is_continuous_at_start() {
        let demo = gen_numerical_demo(0.001, 1.0);
        let yaw = |k: usize| demo.samples()[k].r.to_euler_xyz().2;
        assert_eq!(yaw(0), FRAC_PI_2);
        assert!((yaw(1) - yaw(0)).abs() < 1e-3);
    }

    #[test]
    fn rigid_transform_examples() {
        let demo = gen_numerical_demo(0.01, 1.0);
        let same = apply_rigid_transform(&demo, &RigidTransform::identity());
        assert_eq!(same, demo);

        let sensor = PoseTrajectory::new(vec![
            PoseSample {
                t: 0.0,
                p: Vec3::zeros(),
                r: RotationMatrix::identity(),
            },
            PoseSample {
                t: 1.0,
                p: Vec3::zeros(),
                r: RotationMatrix::identity(),
            },
        ])
        .unwrap();
        let blade = apply_rigid_transform(&sensor, &RigidTransform::sensor_to_blade());
        assert_relative_eq!(blade.first().p, Vec3::new(0.052, 0.0, 0.013), epsilon = 1e-16);
    }

    #[test]
    fn rigid_transform_composition() {
        let demo = gen_numerical_demo(0.05, 1.0);
        let a = RigidTransform::new(
            RotationMatrix::from_euler_xyz(0.3, -0.2, 1.0),
            Vec3::new(0.1, 0.2, -0.3),
        );
        let b = RigidTransform::new(
            RotationMatrix::from_euler_xyz(-1.0, 0.4, 0.1),
            Vec3::new(-0.05, 0.0, 0.02),
        );
        let twice = apply_rigid_transform(&apply_rigid_transform(&demo, &a), &b);
        let once = apply_rigid_transform(&demo, &a.compose(&b));
        for (x, y) in twice.samples().iter().zip(once.samples()) {
            assert!((x.p - y.p).norm() < 1e-12);
            assert!((x.r.matrix() - y.r.matrix()).norm() < 1e-12);
            assert!(x.r.orthogonality_error() < 1e-12);
        }
    }

    #[test]
    fn derivatives_are_exact_for_quadratics() {
        let dt = 0.01;
        let xs: Vec<Vec3> = (0..20)
            .map(|k| {
                let t = k as f64 * dt;
                Vec3::new(t * t, 3.0 * t - 1.0, 0.5 * t * t - t)
            })
            .collect();
        let v = differentiate(&xs, dt);
        let a = second_derivative(&xs, dt);
        for k in 0..20 {
            let t = k as f64 * dt;
            assert!((v[k] - Vec3::new(2.0 * t, 3.0, t - 1.0)).norm() < 1e-10);
            assert!((a[k] - Vec3::new(2.0, 0.0, 1.0)).norm() < 1e-7);
        }
    }

    #[test]
    fn filter_leaves_constant_pose_alone() {
        let r = RotationMatrix::from_euler_xyz(0.2, 0.3, -0.4);
        let traj = PoseTrajectory::new(
            (0..240)
                .map(|k| PoseSample {
                    t: k as f64 / 120.0,
                    p: Vec3::new(0.1, -0.2, 0.3),
                    r,
                })
                .collect(),
        )
        .unwrap();
        let out = lowpass_filter(&traj, 4.8).unwrap();
        for s in out.samples() {
            assert!((s.p - Vec3::new(0.1, -0.2, 0.3)).norm() < 1e-12);
            assert!((s.r.matrix() - r.matrix()).norm() < 1e-12);
        }
        assert!(matches!(
            lowpass_filter(&traj, 60.0),
            Err(PipelineError::Filter(FilterError::NyquistViolation { .. }))
        ));
    }

    #[test]
    fn preprocess_examples() {
        let spec = ConstraintSpec::default();
        let demo = gen_numerical_demo(0.001, 1.0);
        let shifted = demo.map_samples(|_, s| PoseSample {
            p: s.p + Vec3::new(1.0, 2.0, 3.0),
            ..*s
        });
        let out = preprocess(&shifted, &RigidTransform::identity(), None, &spec).unwrap();
        assert_eq!(out.trajectory.first().p, Vec3::zeros());

        let filtered = preprocess(&demo, &RigidTransform::identity(), Some(4.8), &spec).unwrap();
        let max_change = demo
            .positions()
            .zip(filtered.trajectory.positions())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_change < 1e-3, "{max_change}");

        // straight line along world y with identity orientation: purely lateral
        let lateral = PoseTrajectory::new(
            (0..100)
                .map(|k| PoseSample {
                    t: k as f64 * 0.01,
                    p: Vec3::new(0.3 * k as f64 * 0.01, 0.5 * k as f64 * 0.01, 0.0),
                    r: RotationMatrix::identity(),
                })
                .collect(),
        )
        .unwrap();
        let out = preprocess(&lateral, &RigidTransform::identity(), None, &spec).unwrap();
        assert_relative_eq!(out.initial_violation, 0.5, epsilon = 1e-9);
        assert!(violation(&spec, &out.trajectory.first().r, &out.p_dot0).abs() < 1e-12);
        assert_relative_eq!(out.p_dot0, Vec3::new(0.3, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn constant_trajectory_trains_to_zero() {
        let r = RotationMatrix::from_euler_xyz(0.1, 0.2, 0.3);
        let traj = PoseTrajectory::new(
            (0..200)
                .map(|k| PoseSample {
                    t: k as f64 * 0.005,
                    p: Vec3::new(0.4, 0.0, -0.1),
                    r,
                })
                .collect(),
        )
        .unwrap();
        let trained = train(
            &traj,
            &TrainConfig {
                n_basis: 20,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        for f in trained.model.position.iter().chain(&trained.model.orientation) {
            assert!(f.weights.iter().all(|w| w.abs() < 1e-9));
        }
        let out = rollout(
            &trained.model,
            RolloutMode::Nominal,
            &ConstraintSpec::default(),
            0.005,
            1.0,
        )
        .unwrap();
        for st in &out.states {
            assert!((st.p - Vec3::new(0.4, 0.0, -0.1)).norm() < 1e-12);
        }
    }

    #[test]
    fn more_bases_fit_better() {
        let demo = gen_numerical_demo(0.001, 1.0);
        let spec = ConstraintSpec::default();
        let rmse = |n_basis| {
            let m = train(
                &demo,
                &TrainConfig {
                    n_basis,
                    ..Default::default()
                },
                None,
            )
            .unwrap()
            .model;
            let out = rollout(&m, RolloutMode::Nominal, &spec, 0.001, 1.0).unwrap();
            position_rmse(&out.trajectory().unwrap(), &demo).norm()
        };
        assert!(rmse(100) <= rmse(10));
    }

    #[test]
    fn too_few_bases_rejected() {
        let demo = gen_numerical_demo(0.01, 1.0);
        let err = train(
            &demo,
            &TrainConfig {
                n_basis: 1,
                ..Default::default()
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Fit {
                source: FitError::TooFewBases(1),
                ..
            }
        ));
    }
}
