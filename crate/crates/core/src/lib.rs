//! Dynamic movement primitives for end-effector poses with a non-holonomic
//! "no lateral motion" coupling term.
//!
//! A pose is encoded by a position DMP and an orientation DMP on SO(3). The
//! constraint `cᵀ ṗ = 0`, `c = R ŷ_b`, is enforced at run time by a
//! Udwadia-Kalaba constraint force, and the orientation can be re-optimized
//! per step so that this force vanishes and the demonstrated path is kept.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bfgs;
pub mod canonical;
pub mod constraint;
pub mod dmp;
pub mod orient_opt;
pub mod pipeline;
pub mod so3;
pub mod trajectory;

pub use canonical::{CanonicalSystem, FitError, ForcingTerm, RbfBasis};
pub use constraint::{
    blade_constraint_force, project_initial_velocity, uk_force, violation, ConstraintError, ConstraintSpec,
    GeneralConstraint,
};
pub use dmp::{rollout, DmpError, DmpGains, DmpModel, Integrator, Rollout, RolloutMode, RolloutState, StepDiagnostics};
pub use orient_opt::{OptError, OptStepResult, OptimizerConfig, OrientationProblem};
pub use pipeline::{
    apply_rigid_transform, gen_numerical_demo, lowpass_filter, preprocess, train, PipelineError, Preprocessed,
    RigidTransform, TrainConfig, TrainedModel,
};
pub use so3::{exp_map, hat, log_map, Mat3, RotationMatrix, So3Error, Vec3};
pub use trajectory::{euler_rmse, position_rmse, PoseSample, PoseTrajectory, TrajectoryError};
