//! Butterworth low-pass design (bilinear transform) and zero-phase filtering.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("cutoff {cutoff} Hz must be below the Nyquist frequency {nyquist} Hz")]
    NyquistViolation { cutoff: f64, nyquist: f64 },
    #[error("invalid filter parameters: {0}")]
    InvalidParameters(String),
}

/// Rational transfer function `B(z)/A(z)` with `a[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

/// Digital Butterworth low-pass of the given order. The analog prototype is
/// pre-warped so the -3 dB point lands exactly on `cutoff`.
pub fn butterworth_lowpass(order: usize, cutoff: f64, sample_rate: f64) -> Result<IirFilter, FilterError> {
    if order == 0 {
        return Err(FilterError::InvalidParameters("order must be at least 1".into()));
    }
    if !(sample_rate > 0.0 && cutoff > 0.0) {
        return Err(FilterError::InvalidParameters(format!(
            "cutoff ({cutoff}) and sample rate ({sample_rate}) must be positive"
        )));
    }
    let nyquist = 0.5 * sample_rate;
    if cutoff >= nyquist {
        return Err(FilterError::NyquistViolation { cutoff, nyquist });
    }

    let fs2 = 2.0 * sample_rate;
    let warped = fs2 * (std::f64::consts::PI * cutoff / sample_rate).tan();
    let n = order as f64;
    let poles: Vec<Complex<f64>> = (1..=order)
        .map(|k| {
            let angle = std::f64::consts::PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n);
            let analog = Complex::new(angle.cos(), angle.sin()) * warped;
            (Complex::new(fs2, 0.0) + analog) / (Complex::new(fs2, 0.0) - analog)
        })
        .collect();

    let a: Vec<f64> = poly_from_roots(&poles).iter().map(|c| c.re).collect();
    // all zeros sit at z = -1
    let zeros = vec![Complex::new(-1.0, 0.0); order];
    let b_monic: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| c.re).collect();
    let gain = a.iter().sum::<f64>() / b_monic.iter().sum::<f64>();
    let b = b_monic.iter().map(|c| c * gain).collect();
    Ok(IirFilter { b, a })
}

/// Coefficients of `Π (x - r_i)`, highest power first.
fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs
}

impl IirFilter {
    pub fn order(&self) -> usize {
        self.a.len().max(self.b.len()) - 1
    }

    /// `B(1)/A(1)`.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II filtering with initial state `zi`.
    pub fn lfilter(&self, x: &[f64], zi: &[f64]) -> Vec<f64> {
        let order = self.order();
        let mut z = zi.to_vec();
        z.resize(order, 0.0);
        let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        x.iter()
            .map(|&xn| {
                let yn = coef(&self.b, 0) * xn + z.first().copied().unwrap_or(0.0);
                for i in 0..order {
                    let carry = if i + 1 < order { z[i + 1] } else { 0.0 };
                    z[i] = coef(&self.b, i + 1) * xn + carry - coef(&self.a, i + 1) * yn;
                }
                yn
            })
            .collect()
    }

    /// Filter state for a unit step already at steady state; scaling it by the
    /// first input sample removes the start-up transient.
    pub fn steady_state(&self) -> Vec<f64> {
        let order = self.order();
        if order == 0 {
            return Vec::new();
        }
        let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        // (I - Cᵀ) zi = b[1:] - a[1:] b[0], C the companion matrix of a
        let mut m = DMatrix::<f64>::identity(order, order);
        for i in 0..order {
            m[(i, 0)] += coef(&self.a, i + 1);
            if i + 1 < order {
                m[(i, i + 1)] -= 1.0;
            }
        }
        let rhs = DVector::from_fn(order, |i, _| {
            coef(&self.b, i + 1) - coef(&self.a, i + 1) * coef(&self.b, 0)
        });
        let zi = m.lu().solve(&rhs).expect("stable filters have a unique steady state");
        zi.iter().copied().collect()
    }

    /// Forward-backward filtering with mirror (even) extension of `padlen`
    /// samples at each end. `padlen` is clamped to `x.len() - 1`.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| x[n - 1 - i]));

        let zi = self.steady_state();
        let scaled = |v: f64| zi.iter().map(|z| z * v).collect::<Vec<_>>();
        let mut y = self.lfilter(&ext, &scaled(ext[0]));
        y.reverse();
        let mut y = self.lfilter(&y, &scaled(y[0]));
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Mirror-padding length: about six cutoff periods, enough for the
/// forward-backward transient to die out.
pub fn default_padlen(sample_rate: f64, cutoff: f64) -> usize {
    (6.0 * sample_rate / cutoff).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // scipy.signal.butter(3, 4.8, fs=120)
    const SCIPY_B: [f64; 4] = [
        0.00156701035058827,
        0.00470103105176481,
        0.00470103105176481,
        0.00156701035058827,
    ];
    const SCIPY_A: [f64; 4] = [1.0, -2.4986083446911773, 2.1152541270031584, -0.6041096995072747];

    fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len() + q.len() - 1];
        for (i, a) in p.iter().enumerate() {
            for (j, b) in q.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    }

    fn poly_pow(p: &[f64], k: usize) -> Vec<f64> {
        (0..k).fold(vec![1.0], |acc, _| poly_mul(&acc, p))
    }

    /// Substitutes s = (1/K)(1 - z⁻¹)/(1 + z⁻¹), K = tan(π fc / fs), into the
    /// normalized third-order prototype 1/(s³ + 2s² + 2s + 1) and clears
    /// denominators.
    fn third_order_bilinear(cutoff: f64, fs: f64) -> (Vec<f64>, Vec<f64>) {
        let k = (std::f64::consts::PI * cutoff / fs).tan();
        let minus = [1.0, -1.0];
        let plus = [1.0, 1.0];
        let term = |i: usize, c: f64| {
            poly_mul(&poly_pow(&minus, i), &poly_pow(&plus, 3 - i))
                .into_iter()
                .map(move |x| x * c * k.powi(3 - i as i32))
        };
        let mut a = [0.0; 4];
        for (i, c) in [(3, 1.0), (2, 2.0), (1, 2.0), (0, 1.0)] {
            for (slot, v) in a.iter_mut().zip(term(i, c)) {
                *slot += v;
            }
        }
        let b: Vec<f64> = poly_pow(&plus, 3).iter().map(|x| x * k.powi(3)).collect();
        let a0 = a[0];
        (b.iter().map(|x| x / a0).collect(), a.iter().map(|x| x / a0).collect())
    }

    #[test]
    fn matches_independent_bilinear_design() {
        let f = butterworth_lowpass(3, 4.8, 120.0).unwrap();
        let (b, a) = third_order_bilinear(4.8, 120.0);
        for i in 0..4 {
            assert!((f.b[i] - b[i]).abs() < 1e-9, "b[{i}]");
            assert!((f.a[i] - a[i]).abs() < 1e-9, "a[{i}]");
            assert!((f.b[i] - SCIPY_B[i]).abs() < 1e-12, "b[{i}] vs scipy");
            assert!((f.a[i] - SCIPY_A[i]).abs() < 1e-12, "a[{i}] vs scipy");
        }
        assert!((f.dc_gain() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_power_at_cutoff() {
        let fs = 120.0;
        let f = butterworth_lowpass(3, 4.8, fs).unwrap();
        let z = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * 4.8 / fs);
        let eval = |c: &[f64]| {
            c.iter()
                .enumerate()
                .fold(Complex::new(0.0, 0.0), |acc, (i, v)| acc + z.powi(-(i as i32)) * v)
        };
        let mag = (eval(&f.b) / eval(&f.a)).norm();
        assert!((mag - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nyquist_rejected() {
        assert!(matches!(
            butterworth_lowpass(3, 60.0, 120.0),
            Err(FilterError::NyquistViolation { .. })
        ));
        assert!(butterworth_lowpass(0, 4.8, 120.0).is_err());
    }

    #[test]
    fn steady_state_matches_scipy() {
        let f = butterworth_lowpass(3, 4.8, 120.0).unwrap();
        // scipy.signal.lfilter_zi
        let expected = [0.9984329896493837, -1.504876386093488, 0.6056767098578459];
        for (z, e) in f.steady_state().iter().zip(expected) {
            assert!((z - e).abs() < 1e-12);
        }
    }

    #[test]
    fn filtfilt_matches_scipy_even_padding() {
        let f = butterworth_lowpass(3, 4.8, 120.0).unwrap();
        let x: Vec<f64> = (0..40).map(|k| (0.3 * k as f64).sin() + 0.1 * k as f64).collect();
        let y = f.filtfilt(&x, 39);
        // scipy.signal.filtfilt(b, a, x, padtype='even', padlen=39)
        let expected = [
            (0, 1.0342409749235149),
            (5, 0.9953973834073994),
            (17, 1.386730117814425),
            (39, 2.9401538869456414),
        ];
        for (i, e) in expected {
            assert!((y[i] - e).abs() < 1e-10, "y[{i}] = {} vs {e}", y[i]);
        }
    }

    #[test]
    fn constant_and_zero_inputs() {
        let f = butterworth_lowpass(3, 4.8, 120.0).unwrap();
        let c = vec![2.5; 200];
        for v in f.filtfilt(&c, 150) {
            assert!((v - 2.5).abs() < 1e-12);
        }
        assert!(f.filtfilt(&[0.0; 50], 49).iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn filtfilt_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 60),
            y in prop::collection::vec(-1.0f64..1.0, 60),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = butterworth_lowpass(3, 4.8, 120.0).unwrap();
            let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = f.filtfilt(&mixed, 59);
            let fx = f.filtfilt(&x, 59);
            let fy = f.filtfilt(&y, 59);
            for i in 0..60 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
            }
        }
    }
}
