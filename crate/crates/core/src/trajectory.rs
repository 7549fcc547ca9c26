//! Uniformly sampled pose time series.

use thiserror::Error;

use crate::so3::{RotationMatrix, Vec3};

/// Allowed deviation of a timestamp from the uniform grid.
pub const TIMESTAMP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("a trajectory needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("timestamps must increase uniformly (sample {index} is off the grid by {offset:.3e} s)")]
    NonUniform { index: usize, offset: f64 },
    #[error("sample {index} has non-finite entries")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub p: Vec3,
    pub r: RotationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    sample_rate: f64,
    samples: Vec<PoseSample>,
}

impl PoseTrajectory {
    /// Checks sample count and timestamp uniformity; the sample rate is derived
    /// from the first and last timestamps.
    pub fn new(samples: Vec<PoseSample>) -> Result<Self, TrajectoryError> {
        let n = samples.len();
        if n < 2 {
            return Err(TrajectoryError::TooShort(n));
        }
        if let Some(index) = samples
            .iter()
            .position(|s| !(s.t.is_finite() && s.p.iter().all(|x| x.is_finite())))
        {
            return Err(TrajectoryError::NonFinite { index });
        }
        let t0 = samples[0].t;
        let dt = (samples[n - 1].t - t0) / (n - 1) as f64;
        if !(dt > 0.0) {
            return Err(TrajectoryError::NonUniform {
                index: n - 1,
                offset: dt,
            });
        }
        for (index, s) in samples.iter().enumerate() {
            let offset = s.t - (t0 + index as f64 * dt);
            if offset.abs() > TIMESTAMP_TOL {
                return Err(TrajectoryError::NonUniform { index, offset });
            }
        }
        Ok(Self {
            sample_rate: 1.0 / dt,
            samples,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> &PoseSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &PoseSample {
        &self.samples[self.samples.len() - 1]
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.samples.iter().map(|s| s.p)
    }

    pub fn rotations(&self) -> impl Iterator<Item = RotationMatrix> + '_ {
        self.samples.iter().map(|s| s.r)
    }

    /// Rebuilds the trajectory with per-sample modifications, keeping timestamps.
    pub fn map_samples(&self, mut f: impl FnMut(usize, &PoseSample) -> PoseSample) -> Self {
        let samples = self.samples.iter().enumerate().map(|(i, s)| f(i, s)).collect();
        Self {
            sample_rate: self.sample_rate,
            samples,
        }
    }
}

/// Per-axis position RMSE between two trajectories of equal length.
pub fn position_rmse(a: &PoseTrajectory, b: &PoseTrajectory) -> Vec3 {
    assert_eq!(a.len(), b.len(), "trajectories must have the same length");
    let mut acc = Vec3::zeros();
    for (x, y) in a.positions().zip(b.positions()) {
        acc += (x - y).component_mul(&(x - y));
    }
    (acc / a.len() as f64).map(f64::sqrt)
}

/// Per-angle RMSE of extrinsic xyz Euler angles (roll, pitch, yaw), with angle
/// differences wrapped to (-π, π].
pub fn euler_rmse(a: &PoseTrajectory, b: &PoseTrajectory) -> Vec3 {
    assert_eq!(a.len(), b.len(), "trajectories must have the same length");
    let mut acc = Vec3::zeros();
    for (x, y) in a.rotations().zip(b.rotations()) {
        let (r0, p0, y0) = x.to_euler_xyz();
        let (r1, p1, y1) = y.to_euler_xyz();
        let d = Vec3::new(wrap_angle(r0 - r1), wrap_angle(p0 - p1), wrap_angle(y0 - y1));
        acc += d.component_mul(&d);
    }
    (acc / a.len() as f64).map(f64::sqrt)
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}
