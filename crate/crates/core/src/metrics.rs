//! Accuracy metrics, their streaming variants, and timing smoothing.

use std::collections::VecDeque;

use crate::error::{DlgpError, Result};
use crate::tree::Counters;

/// Width of the timing moving-average filter.
pub const TIMING_WINDOW: usize = 1000;

/// Mean squared error normalized by the population variance of `targets`.
pub fn nmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(DlgpError::DimensionMismatch { expected: targets.len(), got: predictions.len() });
    }
    if targets.len() < 2 {
        return Err(DlgpError::InvalidArgument("nMSE needs at least two targets".into()));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(DlgpError::DegenerateTargets);
    }
    let mse = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    Ok(mse / var)
}

/// Negative log density of `y` under `N(mean, variance + noise_variance)`.
pub fn gaussian_nll(y: f64, mean: f64, variance: f64, noise_variance: f64) -> Result<f64> {
    let total = variance + noise_variance;
    if !(total > 0.0) || !total.is_finite() {
        return Err(DlgpError::InvalidArgument(format!("predictive variance must be positive, got {total}")));
    }
    let r = y - mean;
    Ok(0.5 * (2.0 * std::f64::consts::PI * total).ln() + r * r / (2.0 * total))
}

/// Fraction of divided points that lay inside the overlap band, or `None`
/// before the first division.
pub fn overlap_ratio(counters: &Counters, capacity: usize) -> Option<f64> {
    (counters.division_count > 0)
        .then(|| counters.overlap_point_count as f64 / (counters.division_count as f64 * capacity as f64))
}

/// Welford running mean and population variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then_some(self.mean)
    }

    pub fn population_variance(&self) -> Option<f64> {
        (self.count > 0).then(|| self.m2 / self.count as f64)
    }
}

/// Mean over the last `window` values pushed.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage {
    window: usize,
    values: VecDeque<f64>,
    sum: f64,
    pushes: u64,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "moving average window must be positive");
        Self { window, values: VecDeque::with_capacity(window), sum: 0.0, pushes: 0 }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.window {
            let old = self.values.pop_front().unwrap_or(0.0);
            self.sum -= old;
        }
        self.values.push_back(v);
        self.sum += v;
        self.pushes += 1;
        // resum once per window so the running sum does not drift
        if self.pushes % self.window as u64 == 0 {
            self.sum = self.values.iter().sum();
        }
    }

    pub fn value(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.sum / self.values.len() as f64)
    }
}

/// Cumulative online metrics for one prediction-then-update stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    targets: RunningMoments,
    sq_err_sum: f64,
    nll_sum: f64,
    update_time: MovingAverage,
    predict_time: MovingAverage,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        Self {
            targets: RunningMoments::default(),
            sq_err_sum: 0.0,
            nll_sum: 0.0,
            update_time: MovingAverage::new(TIMING_WINDOW),
            predict_time: MovingAverage::new(TIMING_WINDOW),
        }
    }
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores one prediction of `y` and records the timings (seconds) of the
    /// prediction and of the update that followed it.
    pub fn online_update(
        &mut self,
        y: f64,
        mean: f64,
        variance: f64,
        noise_variance: f64,
        update_time: f64,
        predict_time: f64,
    ) -> Result<()> {
        let nll = gaussian_nll(y, mean, variance, noise_variance)?;
        self.targets.push(y);
        self.sq_err_sum += (y - mean) * (y - mean);
        self.nll_sum += nll;
        self.update_time.push(update_time);
        self.predict_time.push(predict_time);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.targets.count()
    }

    /// Cumulative MSE over the streaming population variance of the targets,
    /// or `None` while that variance is zero.
    pub fn online_nmse(&self) -> Option<f64> {
        let var = self.targets.population_variance()?;
        (var > 0.0).then(|| self.sq_err_sum / self.count() as f64 / var)
    }

    pub fn mean_nll(&self) -> Option<f64> {
        (self.count() > 0).then(|| self.nll_sum / self.count() as f64)
    }

    /// Moving average of the last [`TIMING_WINDOW`] update times.
    pub fn smoothed_update_time(&self) -> Option<f64> {
        self.update_time.value()
    }

    /// Moving average of the last [`TIMING_WINDOW`] prediction times.
    pub fn smoothed_predict_time(&self) -> Option<f64> {
        self.predict_time.value()
    }
}
