//! Phase variable (the DMP clock) and the radial-basis forcing term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum activation accepted for a basis during fitting.
pub const MIN_BASIS_ACTIVATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("forcing term needs at least 2 basis functions, got {0}")]
    TooFewBases(usize),
    #[error("need at least {needed} samples to fit {needed} bases, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("phase samples must be strictly decreasing (violated at sample {index})")]
    PhaseNotDecreasing { index: usize },
    #[error("basis {index} is never activated by the training phase (activation {activation:.3e})")]
    DegenerateBasis { index: usize, activation: f64 },
    #[error("invalid basis layout: {0}")]
    InvalidLayout(String),
}

/// Linear phase decay `τ ṡ = -α_s s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSystem {
    pub tau: f64,
    pub alpha_s: f64,
}

impl CanonicalSystem {
    pub fn new(tau: f64, alpha_s: f64) -> Self {
        Self { tau, alpha_s }
    }

    /// One implicit-Euler step. The decay is linear, so the step is closed form
    /// and stays in `(0, s)` for every `dt > 0`.
    pub fn step(&self, s: f64, dt: f64) -> f64 {
        s / (1.0 + dt * self.alpha_s / self.tau)
    }

    /// Phase values seen by a rollout that starts at `s = 1` and takes `n - 1`
    /// steps of `dt`.
    pub fn phase_samples(&self, n: usize, dt: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut s = 1.0;
        for _ in 0..n {
            out.push(s);
            s = self.step(s, dt);
        }
        out
    }

    /// Exact phase at time `t`.
    pub fn phase_at(&self, t: f64) -> f64 {
        (-self.alpha_s * t / self.tau).exp()
    }
}

/// Gaussian basis functions `ψ_i(s) = exp(-h_i (s - c_i)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfBasis {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl RbfBasis {
    /// Centers equally spaced in time over `duration`, mapped through the exact
    /// phase decay. Widths are `1/Δc²` to the next center; the last basis reuses
    /// its neighbour's width.
    pub fn time_spaced(n: usize, canonical: &CanonicalSystem, duration: f64) -> Result<Self, FitError> {
        if n < 2 {
            return Err(FitError::TooFewBases(n));
        }
        if !(duration > 0.0) {
            return Err(FitError::InvalidLayout(format!(
                "duration must be positive, got {duration}"
            )));
        }
        let centers: Vec<f64> = (0..n)
            .map(|i| canonical.phase_at(i as f64 / (n - 1) as f64 * duration))
            .collect();
        let mut widths: Vec<f64> = centers.windows(2).map(|c| 1.0 / (c[1] - c[0]).powi(2)).collect();
        widths.push(widths[n - 2]);
        Self::new(centers, widths)
    }

    pub fn new(centers: Vec<f64>, widths: Vec<f64>) -> Result<Self, FitError> {
        if centers.len() < 2 {
            return Err(FitError::TooFewBases(centers.len()));
        }
        if centers.len() != widths.len() {
            return Err(FitError::InvalidLayout(format!(
                "{} centers but {} widths",
                centers.len(),
                widths.len()
            )));
        }
        if centers.windows(2).any(|c| !(c[1] < c[0])) {
            return Err(FitError::InvalidLayout("centers must be strictly decreasing".into()));
        }
        if widths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(FitError::InvalidLayout("widths must be positive".into()));
        }
        Ok(Self { centers, widths })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn activations(&self, s: f64) -> impl Iterator<Item = f64> + '_ {
        self.centers
            .iter()
            .zip(&self.widths)
            .map(move |(c, h)| (-h * (s - c) * (s - c)).exp())
    }

    /// Activations divided by the largest one, so that a normalized weighted
    /// average stays defined far from every center.
    pub fn relative_activations(&self, s: f64) -> impl Iterator<Item = f64> + '_ {
        let exponent = move |(c, h): (&f64, &f64)| h * (s - c) * (s - c);
        let min = self
            .centers
            .iter()
            .zip(&self.widths)
            .map(exponent)
            .fold(f64::INFINITY, f64::min);
        self.centers
            .iter()
            .zip(&self.widths)
            .map(move |ch| (min - exponent(ch)).exp())
    }
}

/// `f(s) = s · Σ ψ_i(s) θ_i / Σ ψ_i(s)`, one scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    #[serde(flatten)]
    pub basis: RbfBasis,
    pub weights: Vec<f64>,
}

/// A fitted forcing term and its RMS reconstruction error on the training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingFit {
    pub forcing: ForcingTerm,
    pub rmse: f64,
}

impl ForcingTerm {
    pub fn new(basis: RbfBasis, weights: Vec<f64>) -> Result<Self, FitError> {
        if weights.len() != basis.len() {
            return Err(FitError::InvalidLayout(format!(
                "{} weights for {} bases",
                weights.len(),
                basis.len()
            )));
        }
        Ok(Self { basis, weights })
    }

    pub fn zero(basis: RbfBasis) -> Self {
        let weights = vec![0.0; basis.len()];
        Self { basis, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn eval(&self, s: f64) -> f64 {
        let (num, den) = self
            .basis
            .relative_activations(s)
            .zip(&self.weights)
            .fold((0.0, 0.0), |(num, den), (psi, theta)| (num + psi * theta, den + psi));
        s * num / den
    }

    /// Locally weighted regression, one independent weighted fit per basis:
    /// `θ_i = Σ ψ_i(s) s f / Σ ψ_i(s) s²`.
    pub fn fit(basis: RbfBasis, targets: &[(f64, f64)]) -> Result<ForcingFit, FitError> {
        let n = basis.len();
        if n < 2 {
            return Err(FitError::TooFewBases(n));
        }
        if targets.len() < n {
            return Err(FitError::TooFewSamples {
                needed: n,
                got: targets.len(),
            });
        }
        if let Some(index) = targets.windows(2).position(|w| !(w[1].0 < w[0].0)) {
            return Err(FitError::PhaseNotDecreasing { index: index + 1 });
        }
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for &(s, f) in targets {
            for (i, psi) in basis.activations(s).enumerate() {
                num[i] += psi * s * f;
                den[i] += psi * s * s;
            }
        }
        if let Some(index) = den.iter().position(|d| *d < MIN_BASIS_ACTIVATION) {
            return Err(FitError::DegenerateBasis {
                index,
                activation: den[index],
            });
        }
        let weights = num.iter().zip(&den).map(|(a, b)| a / b).collect();
        let forcing = ForcingTerm { basis, weights };
        let sq: f64 = targets.iter().map(|&(s, f)| (forcing.eval(s) - f).powi(2)).sum();
        let rmse = (sq / targets.len() as f64).sqrt();
        Ok(ForcingFit { forcing, rmse })
    }
}
