//! Dense exact GP regression on nalgebra, used as the reference for the tree
//! and as a small-scale baseline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{DlgpError, Result};
use crate::exec::{self, Execution};
use crate::kernel::{kernel_eval_unchecked, Hyperparameters};
use crate::local_gp::{JITTER_MAX, JITTER_START};

#[derive(Debug, Clone)]
pub struct ExactGp {
    hp: Hyperparameters,
    inputs: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter_used: f64,
}

impl ExactGp {
    /// Batch fit on row-major `inputs`, escalating diagonal jitter from
    /// `1e-10·σ_f²` to `1e-4·σ_f²` if the factorization fails.
    pub fn fit(inputs: &[f64], targets: &[f64], hp: &Hyperparameters) -> Result<Self> {
        hp.validate()?;
        let d = hp.dim();
        let n = targets.len();
        if n == 0 {
            return Err(DlgpError::EmptyTrainingSet);
        }
        if inputs.len() != n * d {
            return Err(DlgpError::DimensionMismatch { expected: n * d, got: inputs.len() });
        }
        let row = |i: usize| &inputs[i * d..(i + 1) * d];
        let k = DMatrix::from_fn(n, n, |i, j| kernel_eval_unchecked(row(i), row(j), hp));
        let mut jitter = 0.0;
        loop {
            let a = &k + DMatrix::identity(n, n) * (hp.noise_variance + jitter);
            if let Some(chol) = Cholesky::new(a) {
                let alpha = chol.solve(&DVector::from_column_slice(targets));
                return Ok(Self { hp: hp.clone(), inputs: inputs.to_vec(), chol, alpha, jitter_used: jitter });
            }
            jitter = if jitter == 0.0 { JITTER_START * hp.signal_variance } else { jitter * 10.0 };
            if jitter > JITTER_MAX * hp.signal_variance * (1.0 + 1e-9) {
                return Err(DlgpError::NotPositiveDefinite { jitter: jitter / 10.0 });
            }
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Posterior mean and variance at one input.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let d = self.hp.dim();
        let kx = DVector::from_iterator(
            self.len(),
            self.inputs.chunks_exact(d).map(|xi| kernel_eval_unchecked(xi, x, &self.hp)),
        );
        let mean = kx.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("cholesky factor has a positive diagonal");
        (mean, (self.hp.signal_variance - v.norm_squared()).max(0.0))
    }

    /// Predictions for each row of row-major `queries`.
    pub fn predict_batch(&self, queries: &[f64], exec: Execution) -> Result<Vec<(f64, f64)>> {
        let d = self.hp.dim();
        if queries.len() % d != 0 {
            return Err(DlgpError::DimensionMismatch { expected: d, got: queries.len() % d });
        }
        Ok(exec::map_chunks(exec, queries, d, |x| self.predict(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_gp::LocalModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (xs, ys)
    }

    #[test]
    fn agrees_with_local_model() {
        let hp = Hyperparameters::new(1.5, vec![0.5, 0.9, 1.2], 0.02).unwrap();
        let (xs, ys) = random_data(1, 80, 3);
        let gp = ExactGp::fit(&xs, &ys, &hp).unwrap();
        let lm = LocalModel::fit(&xs, &ys, &hp).unwrap();
        let l = gp.factor();
        let dense = lm.factor_dense();
        for i in 0..80 {
            for j in 0..80 {
                assert!((l[(i, j)] - dense[i * 80 + j]).abs() < 1e-10);
            }
        }
        for (a, b) in gp.alpha().iter().zip(lm.alpha()) {
            assert!((a - b).abs() < 1e-9);
        }
        let (qs, _) = random_data(2, 20, 3);
        let batch = gp.predict_batch(&qs, Execution::Sequential).unwrap();
        for (q, (m, v)) in qs.chunks_exact(3).zip(&batch) {
            let (m2, v2) = lm.predict(&hp, q);
            assert!((m - m2).abs() < 1e-10 && (v - v2).abs() < 1e-10);
        }
        assert_eq!(batch, gp.predict_batch(&qs, Execution::Parallel).unwrap());
    }

    #[test]
    fn large_fit_reconstructs() {
        let hp = Hyperparameters::isotropic(1.0, 0.8, 0.01, 5).unwrap();
        let (xs, ys) = random_data(3, 1000, 5);
        let gp = ExactGp::fit(&xs, &ys, &hp).unwrap();
        let l = gp.factor();
        let llt = &l * l.transpose();
        let mut err: f64 = 0.0;
        for i in 0..1000 {
            for j in 0..1000 {
                let mut k = kernel_eval_unchecked(&xs[i * 5..i * 5 + 5], &xs[j * 5..j * 5 + 5], &hp);
                if i == j {
                    k += hp.noise_variance + gp.jitter_used();
                }
                err = err.max((llt[(i, j)] - k).abs());
            }
        }
        assert!(err < 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn zero_targets_and_interpolation() {
        let hp = Hyperparameters::isotropic(1.0, 1.0, 0.0, 1).unwrap();
        let xs = [0.0, 0.7, 1.9, 3.1];
        let gp = ExactGp::fit(&xs, &[0.0; 4], &hp).unwrap();
        assert!(gp.alpha().iter().all(|a| *a == 0.0));
        let ys = [1.0, -0.5, 0.25, 2.0];
        let gp = ExactGp::fit(&xs, &ys, &hp).unwrap();
        for (m, y) in gp.predict_batch(&xs, Execution::Sequential).unwrap().iter().zip(&ys) {
            assert!((m.0 - y).abs() < 1e-7);
        }
        let (m, v) = gp.predict(&[50.0]);
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let hp = Hyperparameters::isotropic(1.0, 1.0, 0.0, 2).unwrap();
        assert_eq!(ExactGp::fit(&[], &[], &hp).unwrap_err(), DlgpError::EmptyTrainingSet);
        assert!(ExactGp::fit(&[0.0], &[1.0], &hp).is_err());
        let gp = ExactGp::fit(&[0.0, 0.0, 0.0, 0.0], &[1.0, 1.0], &hp).unwrap();
        assert!(gp.jitter_used() > 0.0);
    }
}
