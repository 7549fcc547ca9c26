//! Shared fixtures for the criterion benchmarks.

use nalgebra::{DMatrix, DVector};
use nhdmp::{gen_numerical_demo, train, DmpModel, GeneralConstraint, TrainConfig};

/// Model trained on the numerical demonstration with default settings.
pub fn demo_model(dt: f64) -> DmpModel {
    let demo = gen_numerical_demo(dt, 1.0);
    train(&demo, &TrainConfig::default(), None)
        .expect("the demonstration trains")
        .model
}

/// A well-conditioned `m × n` constraint with a deterministic fill.
pub fn constraint(m: usize, n: usize) -> GeneralConstraint {
    let a = DMatrix::from_fn(m, n, |i, j| {
        ((i * n + j) as f64 * 0.7).sin() + if i == j { 2.0 } else { 0.0 }
    });
    let b = DVector::from_fn(m, |i, _| i as f64 - 0.5);
    GeneralConstraint::new(a, b).expect("valid constraint")
}
