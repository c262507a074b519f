//! Exact GP over a small training set, kept as a Cholesky factor that grows by
//! one row per inserted point.
//!
//! The factor `L` of `K(X, X) + (σ_n² + jitter)·I` is stored packed: row `i`
//! occupies `chol[i(i+1)/2 ..= i(i+1)/2 + i]`. Appending a training point appends
//! one row, so a batch fit is the same sequence of row appends and produces the
//! same bits as building the model incrementally.

use serde::{Deserialize, Serialize};

use crate::error::{DlgpError, Result};
use crate::kernel::{kernel_eval_unchecked, Hyperparameters};

/// Smallest non-zero diagonal jitter, relative to the signal variance.
pub const JITTER_START: f64 = 1e-10;
/// Largest diagonal jitter, relative to the signal variance.
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter_used: f64,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Jitter levels tried after `current`, in increasing order.
fn jitter_ladder(current: f64, signal_variance: f64) -> impl Iterator<Item = f64> {
    let start = JITTER_START * signal_variance;
    let max = JITTER_MAX * signal_variance * (1.0 + 1e-9);
    let first = if current <= 0.0 { start } else { current * 10.0 };
    std::iter::successors(Some(first), |j| Some(j * 10.0)).take_while(move |j| *j <= max)
}

impl LocalModel {
    /// Empty model with storage reserved for `capacity` points.
    fn with_capacity(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            inputs: Vec::with_capacity(capacity * dim),
            targets: Vec::with_capacity(capacity),
            chol: Vec::with_capacity(row_start(capacity)),
            alpha: Vec::with_capacity(capacity),
            jitter_used: 0.0,
        }
    }

    /// Full Cholesky fit of row-major `inputs` (`targets.len()` rows).
    pub fn fit(inputs: &[f64], targets: &[f64], hp: &Hyperparameters) -> Result<Self> {
        Self::fit_with_capacity(inputs, targets, hp, targets.len())
    }

    /// As [`LocalModel::fit`], reserving room for `capacity` points so later
    /// insertions do not reallocate.
    pub fn fit_with_capacity(
        inputs: &[f64],
        targets: &[f64],
        hp: &Hyperparameters,
        capacity: usize,
    ) -> Result<Self> {
        let d = hp.dim();
        let n = targets.len();
        if n == 0 {
            return Err(DlgpError::EmptyTrainingSet);
        }
        if inputs.len() != n * d {
            return Err(DlgpError::DimensionMismatch { expected: n * d, got: inputs.len() });
        }
        if let Some(v) = inputs.iter().chain(targets).find(|v| !v.is_finite()) {
            return Err(DlgpError::InvalidArgument(format!("non-finite training value {v}")));
        }
        let mut model = Self::with_capacity(d, capacity.max(n));
        model.inputs.extend_from_slice(inputs);
        model.targets.extend_from_slice(targets);
        model.refactor(hp, 0.0)?;
        Ok(model)
    }

    /// Rebuilds the factor from the stored data, starting at `jitter` and
    /// escalating on failure.
    fn refactor(&mut self, hp: &Hyperparameters, jitter: f64) -> Result<()> {
        let levels = std::iter::once(jitter).chain(jitter_ladder(jitter, hp.signal_variance));
        let mut last = jitter;
        for level in levels {
            last = level;
            self.chol.clear();
            self.jitter_used = level;
            if (0..self.targets.len()).all(|i| self.append_factor_row(hp, i)) {
                self.solve_alpha();
                return Ok(());
            }
        }
        self.chol.clear();
        self.alpha.clear();
        Err(DlgpError::NotPositiveDefinite { jitter: last })
    }

    /// Appends row `i` of the factor for the stored input `i`. Returns `false`
    /// (leaving `chol` truncated to `i` rows) if the pivot is not positive.
    fn append_factor_row(&mut self, hp: &Hyperparameters, i: usize) -> bool {
        let d = self.dim;
        let x = &self.inputs[i * d..(i + 1) * d];
        let base = row_start(i);
        // l = L⁻¹ k(X, x) by forward substitution against the first i rows.
        for j in 0..i {
            let b = kernel_eval_unchecked(&self.inputs[j * d..(j + 1) * d], x, hp);
            let rj = row_start(j);
            let mut s = b;
            for k in 0..j {
                s -= self.chol[rj + k] * self.chol[base + k];
            }
            self.chol.push(s / self.chol[rj + j]);
        }
        let c = hp.signal_variance + hp.noise_variance + self.jitter_used;
        let sq: f64 = self.chol[base..base + i].iter().map(|v| v * v).sum();
        let pivot = c - sq;
        if !(pivot > f64::EPSILON * c * (i as f64 + 1.0)) || !pivot.is_finite() {
            self.chol.truncate(base);
            return false;
        }
        self.chol.push(pivot.sqrt());
        true
    }

    /// α = L⁻ᵀ L⁻¹ y by two triangular solves.
    fn solve_alpha(&mut self) {
        self.alpha.clear();
        self.alpha.extend_from_slice(&self.targets);
        forward_solve_in_place(&self.chol, &mut self.alpha);
        backward_solve_in_place(&self.chol, &mut self.alpha);
    }

    /// Adds one training point in O(n²). If the new pivot is not positive the
    /// factor is rebuilt with escalated jitter.
    pub fn insert(&mut self, hp: &Hyperparameters, x: &[f64], y: f64) -> Result<()> {
        hp.check_dim(x.len())?;
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(DlgpError::InvalidArgument("non-finite training value".into()));
        }
        let i = self.targets.len();
        self.inputs.extend_from_slice(x);
        self.targets.push(y);
        if self.append_factor_row(hp, i) {
            self.solve_alpha();
            Ok(())
        } else {
            let previous = self.jitter_used;
            let result = match jitter_ladder(previous, hp.signal_variance).next() {
                Some(j) => self.refactor(hp, j),
                None => Err(DlgpError::NotPositiveDefinite { jitter: previous }),
            };
            if result.is_err() {
                // leave the model as it was before the call
                self.inputs.truncate(i * self.dim);
                self.targets.truncate(i);
                self.refactor(hp, previous)?;
            }
            result
        }
    }

    /// Posterior mean `k(x, X)·α`.
    pub fn predict_mean(&self, hp: &Hyperparameters, x: &[f64]) -> f64 {
        let d = self.dim;
        self.inputs
            .chunks_exact(d)
            .zip(&self.alpha)
            .map(|(xi, a)| kernel_eval_unchecked(xi, x, hp) * a)
            .sum()
    }

    /// Posterior mean and variance at `x`. The variance is clamped at zero.
    pub fn predict(&self, hp: &Hyperparameters, x: &[f64]) -> (f64, f64) {
        let d = self.dim;
        let mut v: Vec<f64> = self.inputs.chunks_exact(d).map(|xi| kernel_eval_unchecked(xi, x, hp)).collect();
        let mean: f64 = v.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        forward_solve_in_place(&self.chol, &mut v);
        let var = hp.signal_variance - v.iter().map(|e| e * e).sum::<f64>();
        (mean, var.max(0.0))
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major training inputs.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Total diagonal jitter included in the factor.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Packed lower-triangular factor.
    pub fn packed_factor(&self) -> &[f64] {
        &self.chol
    }

    /// Factor expanded to a dense row-major `n×n` matrix.
    pub fn factor_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let r = row_start(i);
            l[i * n..i * n + i + 1].copy_from_slice(&self.chol[r..r + i + 1]);
        }
        l
    }

    /// Checks internal consistency of sizes after deserialization.
    pub(crate) fn check_shape(&self) -> Result<()> {
        let n = self.targets.len();
        let ok = n > 0
            && self.inputs.len() == n * self.dim
            && self.chol.len() == row_start(n)
            && self.alpha.len() == n;
        if ok {
            Ok(())
        } else {
            Err(DlgpError::InvalidArgument("inconsistent local model storage".into()))
        }
    }
}

/// Solves `L·z = b` in place for packed lower-triangular `L`.
pub(crate) fn forward_solve_in_place(chol: &[f64], b: &mut [f64]) {
    for i in 0..b.len() {
        let r = row_start(i);
        let row = &chol[r..r + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(l, z)| l * z).sum();
        b[i] = (b[i] - s) / chol[r + i];
    }
}

/// Solves `Lᵀ·x = b` in place for packed lower-triangular `L`.
pub(crate) fn backward_solve_in_place(chol: &[f64], b: &mut [f64]) {
    for i in (0..b.len()).rev() {
        let r = row_start(i);
        let xi = b[i] / chol[r + i];
        b[i] = xi;
        for (bk, l) in b[..i].iter_mut().zip(&chol[r..r + i]) {
            *bk -= l * xi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp1(sf2: f64, l: f64, sn2: f64) -> Hyperparameters {
        Hyperparameters::new(sf2, vec![l], sn2).unwrap()
    }

    /// Unpacked textbook Cholesky used as a rebuild oracle.
    fn dense_cholesky(a: &[f64], n: usize) -> Vec<f64> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut s = a[j * n + j];
            for k in 0..j {
                s -= l[j * n + k] * l[j * n + k];
            }
            l[j * n + j] = s.sqrt();
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / l[j * n + j];
            }
        }
        l
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn reconstruction_error(m: &LocalModel, hp: &Hyperparameters) -> f64 {
        let n = m.len();
        let l = m.factor_dense();
        let mut k = kernel_matrix(m.inputs(), hp).unwrap();
        for i in 0..n {
            k[i * n + i] += hp.noise_variance + m.jitter_used();
        }
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|t| l[i * n + t] * l[j * n + t]).sum();
                err = err.max((s - k[i * n + j]).abs());
            }
        }
        err
    }

    #[test]
    fn one_point_fit() {
        let hp = hp1(1.0, 1.0, 1.0);
        let m = LocalModel::fit(&[0.0], &[2.0], &hp).unwrap();
        assert!((m.packed_factor()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((m.alpha()[0] - 1.0).abs() < 1e-15);
        let (mean, var) = m.predict(&hp, &[0.0]);
        assert!((mean - 1.0).abs() < 1e-15);
        assert!((var - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_targets_give_zero_alpha() {
        let hp = hp1(2.0, 0.3, 0.1);
        let m = LocalModel::fit(&[0.0, 0.4, 1.0], &[0.0; 3], &hp).unwrap();
        assert!(m.alpha().iter().all(|a| *a == 0.0));
        let mut m = LocalModel::fit(&[0.0], &[0.0], &hp).unwrap();
        m.insert(&hp, &[0.5], 0.0).unwrap();
        assert!(m.alpha().iter().all(|a| *a == 0.0));
    }

    #[test]
    fn decoupled_points() {
        let hp = hp1(1.0, 0.1, 0.5);
        let m = LocalModel::fit(&[0.0, 5.0], &[3.0, -1.5], &hp).unwrap();
        let l = m.factor_dense();
        assert!((l[0] - 1.5f64.sqrt()).abs() < 1e-12);
        assert!(l[2].abs() < 1e-10);
        assert!((l[3] - 1.5f64.sqrt()).abs() < 1e-12);
        assert!((m.alpha()[0] - 2.0).abs() < 1e-12);
        assert!((m.alpha()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_two_by_two_insert() {
        let hp = hp1(1.0, 1.0, 1.0);
        let mut m = LocalModel::fit(&[0.0], &[2.0], &hp).unwrap();
        m.insert(&hp, &[0.0], 2.0).unwrap();
        let l = m.factor_dense();
        let expected = [2f64.sqrt(), 0.0, 1.0 / 2f64.sqrt(), 1.5f64.sqrt()];
        assert!(max_abs_diff(&l, &expected) < 1e-15);
        // [[2,1],[1,2]] α = [2,2] → α = [2/3, 2/3]
        assert!(max_abs_diff(m.alpha(), &[2.0 / 3.0, 2.0 / 3.0]) < 1e-15);
    }

    #[test]
    fn sequential_inserts_match_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let hp = Hyperparameters::new(1.3, vec![0.8, 1.1, 0.9, 1.5, 2.0], 0.05).unwrap();
        let xs: Vec<f64> = (0..200 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = LocalModel::fit(&xs[..d], &ys[..1], &hp).unwrap();
        for i in 1..200 {
            m.insert(&hp, &xs[i * d..(i + 1) * d], ys[i]).unwrap();
        }
        assert_eq!(m.jitter_used(), 0.0);

        let n = 200;
        let mut k = kernel_matrix(&xs, &hp).unwrap();
        for i in 0..n {
            k[i * n + i] += hp.noise_variance;
        }
        let l = dense_cholesky(&k, n);
        assert!(max_abs_diff(&m.factor_dense(), &l) < 1e-9);

        let batch = LocalModel::fit(&xs, &ys, &hp).unwrap();
        assert!(max_abs_diff(m.packed_factor(), batch.packed_factor()) < 1e-9);
        assert!(max_abs_diff(m.alpha(), batch.alpha()) < 1e-9);
        assert!(reconstruction_error(&m, &hp) < 1e-8);

        // L Lᵀ α = y
        let mut z = m.alpha().to_vec();
        let lt = m.factor_dense();
        let mut w = vec![0.0; n];
        for i in 0..n {
            w[i] = (i..n).map(|t| lt[t * n + i] * z[t]).sum();
        }
        for i in 0..n {
            z[i] = (0..=i).map(|t| lt[i * n + t] * w[t]).sum();
        }
        assert!(max_abs_diff(&z, &ys) < 1e-8);
    }

    #[test]
    fn prior_recovery_far_away() {
        let hp = hp1(2.0, 0.5, 0.01);
        let m = LocalModel::fit(&[0.0, 0.2, 0.4], &[1.0, -2.0, 0.5], &hp).unwrap();
        let (mean, var) = m.predict(&hp, &[10.0]);
        assert!(mean.abs() < 1e-6 * 2.0);
        assert!((var - 2.0).abs() < 1e-6 * 2.0);
    }

    #[test]
    fn interpolates_without_noise() {
        let hp = hp1(1.0, 1.0, 0.0);
        let xs = [0.0, 1.5, 3.0, 4.2];
        let ys = [0.3, -1.0, 2.0, 0.7];
        let m = LocalModel::fit(&xs, &ys, &hp).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(&hp, &[*x]).0 - y).abs() < 1e-8);
            assert!((m.predict_mean(&hp, &[*x]) - y).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicates_without_noise_use_jitter() {
        let hp = hp1(1.0, 1.0, 0.0);
        let m = LocalModel::fit(&[0.0, 0.0], &[1.0, 1.0], &hp).unwrap();
        assert!(m.jitter_used() > 0.0);
        assert!(m.jitter_used() <= JITTER_MAX);
        assert!(reconstruction_error(&m, &hp) < 1e-8);

        let mut m = LocalModel::fit(&[0.0], &[1.0], &hp).unwrap();
        assert_eq!(m.jitter_used(), 0.0);
        m.insert(&hp, &[0.0], 1.0).unwrap();
        assert!(m.jitter_used() > 0.0);
        assert!(reconstruction_error(&m, &hp) < 1e-8);
        m.insert(&hp, &[0.3], 0.2).unwrap();
        assert!(reconstruction_error(&m, &hp) < 1e-8);
    }

    #[test]
    fn rejects_invalid_training_data() {
        let hp = hp1(1.0, 1.0, 0.0);
        assert!(LocalModel::fit(&[f64::NAN], &[1.0], &hp).is_err());
        assert_eq!(LocalModel::fit(&[], &[], &hp).unwrap_err(), DlgpError::EmptyTrainingSet);
    }

    #[test]
    fn variance_never_increases_with_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hp = Hyperparameters::new(1.0, vec![0.5, 0.5], 0.01).unwrap();
        let tests: Vec<[f64; 2]> = (0..50).map(|_| [rng.random(), rng.random()]).collect();
        let mut m = LocalModel::fit(&[0.5, 0.5], &[0.0], &hp).unwrap();
        let mut prev: Vec<f64> = tests.iter().map(|t| m.predict(&hp, t).1).collect();
        for _ in 0..60 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            m.insert(&hp, &x, rng.random()).unwrap();
            for (t, p) in tests.iter().zip(prev.iter_mut()) {
                let v = m.predict(&hp, t).1;
                assert!(v <= *p + 1e-10);
                assert!(v > 0.0 && v <= 1.0);
                *p = v;
            }
        }
    }
}
