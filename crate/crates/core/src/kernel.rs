//! Squared-exponential ARD covariance.
//!
//! `k(a, b) = σ_f² · exp(-½ Σ_j (a_j - b_j)² / ℓ_j²)`

use serde::{Deserialize, Serialize};

use crate::error::{DlgpError, Result};

/// Kernel and noise parameters for one output target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl Hyperparameters {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let hp = Self { signal_variance, lengthscales, noise_variance };
        hp.validate()?;
        Ok(hp)
    }

    /// Same lengthscale along every one of `dim` input dimensions.
    pub fn isotropic(signal_variance: f64, lengthscale: f64, noise_variance: f64, dim: usize) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim], noise_variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(DlgpError::InvalidHyperparameters(format!(
                "signal_variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(DlgpError::InvalidHyperparameters("lengthscales must not be empty".into()));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(DlgpError::InvalidHyperparameters(format!("lengthscales must be positive, got {l}")));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(DlgpError::InvalidHyperparameters(format!(
                "noise_variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(DlgpError::DimensionMismatch { expected: self.dim(), got })
        }
    }
}

/// Covariance of two inputs. Both slices must have length `hp.dim()`.
///
/// The squared scaled distance is accumulated over `(a_j - b_j)²`, so swapping
/// the arguments yields the identical bit pattern.
#[inline]
pub fn kernel_eval_unchecked(a: &[f64], b: &[f64], hp: &Hyperparameters) -> f64 {
    let mut r2 = 0.0;
    for ((ai, bi), l) in a.iter().zip(b).zip(&hp.lengthscales) {
        let z = (ai - bi) / l;
        r2 += z * z;
    }
    hp.signal_variance * (-0.5 * r2).exp()
}

pub fn kernel_eval(a: &[f64], b: &[f64], hp: &Hyperparameters) -> Result<f64> {
    hp.check_dim(a.len())?;
    hp.check_dim(b.len())?;
    Ok(kernel_eval_unchecked(a, b, hp))
}

/// Kernel vector `k(X, x)` for row-major `xs` holding `xs.len() / d` rows.
pub fn kernel_vector(xs: &[f64], x: &[f64], hp: &Hyperparameters) -> Result<Vec<f64>> {
    hp.check_dim(x.len())?;
    let d = hp.dim();
    if xs.len() % d != 0 {
        return Err(DlgpError::DimensionMismatch { expected: d, got: xs.len() % d });
    }
    Ok(xs.chunks_exact(d).map(|row| kernel_eval_unchecked(row, x, hp)).collect())
}

/// Dense row-major `n×n` kernel matrix of the rows of `xs`.
pub fn kernel_matrix(xs: &[f64], hp: &Hyperparameters) -> Result<Vec<f64>> {
    let d = hp.dim();
    if xs.len() % d != 0 {
        return Err(DlgpError::DimensionMismatch { expected: d, got: xs.len() % d });
    }
    let n = xs.len() / d;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let xi = &xs[i * d..(i + 1) * d];
        k[i * n + i] = hp.signal_variance;
        for j in 0..i {
            let v = kernel_eval_unchecked(xi, &xs[j * d..(j + 1) * d], hp);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(sf2: f64, ls: &[f64]) -> Hyperparameters {
        Hyperparameters::new(sf2, ls.to_vec(), 0.1).unwrap()
    }

    #[test]
    fn identity_case() {
        assert_eq!(kernel_eval(&[0.0, 0.0], &[0.0, 0.0], &hp(1.0, &[1.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_values() {
        let v = kernel_eval(&[1.0], &[0.0], &hp(1.0, &[1.0])).unwrap();
        assert!((v - 0.6065306597126334).abs() < 1e-15);
        let v = kernel_eval(&[2.0, 0.0], &[0.0, 0.0], &hp(3.0, &[2.0, 1.0])).unwrap();
        assert!((v - 3.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 1.8195919791379).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            kernel_eval(&[0.0], &[0.0, 1.0], &hp(1.0, &[1.0])),
            Err(DlgpError::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(kernel_vector(&[0.0, 1.0], &[0.0, 1.0], &hp(1.0, &[1.0])).is_err());
    }

    #[test]
    fn vector_cases() {
        let h = hp(1.0, &[1.0]);
        assert_eq!(kernel_vector(&[0.0], &[0.0], &h).unwrap(), vec![1.0]);
        assert_eq!(kernel_vector(&[0.0, 1.0], &[0.0], &h).unwrap(), vec![1.0, (-0.5f64).exp()]);
        assert!(kernel_vector(&[], &[0.0], &h).unwrap().is_empty());
    }

    #[test]
    fn matrix_cases() {
        let h = hp(2.5, &[1.0]);
        assert_eq!(kernel_matrix(&[0.0], &h).unwrap(), vec![2.5]);
        assert_eq!(kernel_matrix(&[0.0, 0.0], &h).unwrap(), vec![2.5; 4]);
        let h = hp(1.0, &[1.0]);
        let e = (-0.5f64).exp();
        assert_eq!(kernel_matrix(&[0.0, 1.0], &h).unwrap(), vec![1.0, e, e, 1.0]);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Hyperparameters::new(0.0, vec![1.0], 0.0).is_err());
        assert!(Hyperparameters::new(1.0, vec![1.0, -1.0], 0.0).is_err());
        assert!(Hyperparameters::new(1.0, vec![1.0], -1e-3).is_err());
        assert!(Hyperparameters::new(1.0, vec![], 0.0).is_err());
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0..5.0f64, d)
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in point(3), b in point(3), sf2 in 0.1..10.0f64) {
            let h = hp(sf2, &[0.7, 1.3, 2.0]);
            let ab = kernel_eval(&a, &b, &h).unwrap();
            let ba = kernel_eval(&b, &a, &h).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab <= sf2);
            prop_assert!(ab >= 0.0);
            if a != b && ab > 0.0 {
                prop_assert!(ab < sf2 || (ab - sf2).abs() < 1e-15 * sf2);
            }
        }

        #[test]
        fn stationary(a in point(3), b in point(3), c in point(3)) {
            let h = hp(1.0, &[0.7, 1.3, 2.0]);
            let shift = |p: &[f64]| p.iter().zip(&c).map(|(x, y)| x + y).collect::<Vec<_>>();
            let k0 = kernel_eval(&a, &b, &h).unwrap();
            let k1 = kernel_eval(&shift(&a), &shift(&b), &h).unwrap();
            prop_assert!((k0 - k1).abs() <= 1e-12 * k0.max(1e-300) + 1e-300);
        }

        #[test]
        fn matrix_diagonal_and_symmetry(xs in prop::collection::vec(-3.0..3.0f64, 0..24)) {
            let h = hp(1.7, &[1.0, 0.5]);
            let xs = &xs[..xs.len() / 2 * 2];
            let k = kernel_matrix(xs, &h).unwrap();
            let n = xs.len() / 2;
            for i in 0..n {
                prop_assert_eq!(k[i * n + i], 1.7);
                for j in 0..n {
                    prop_assert_eq!(k[i * n + j], k[j * n + i]);
                }
            }
        }
    }
}
