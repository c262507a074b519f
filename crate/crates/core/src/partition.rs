//! Axis-aligned division rules and the saturating-linear assignment probability.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DlgpError, Result};

/// How the nominal hyperplane position is chosen along the split dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivisionStrategy {
    /// Lower median of the coordinates.
    Median,
    /// Arithmetic mean of the coordinates.
    #[default]
    Mean,
    /// Midpoint between the smallest and largest coordinate.
    Midrange,
}

impl fmt::Display for DivisionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Median => "median",
            Self::Mean => "mean",
            Self::Midrange => "midrange",
        })
    }
}

impl FromStr for DivisionStrategy {
    type Err = DlgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Self::Median),
            "mean" => Ok(Self::Mean),
            "midrange" => Ok(Self::Midrange),
            other => Err(DlgpError::InvalidArgument(format!("unknown division strategy {other:?}"))),
        }
    }
}

/// One internal node's split: dimension, hyperplane position and overlap width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivisionRule {
    pub split_dim: usize,
    pub position: f64,
    pub overlap: f64,
}

impl DivisionRule {
    /// Computes the rule for row-major `inputs` of dimension `dim`.
    ///
    /// The split dimension has the largest coordinate range (lowest index on
    /// ties) and the overlap is `theta` times that range.
    pub fn compute(inputs: &[f64], dim: usize, theta: f64, strategy: DivisionStrategy) -> Result<Self> {
        if dim == 0 || inputs.is_empty() || inputs.len() % dim != 0 {
            return Err(DlgpError::InvalidArgument("division needs at least one point".into()));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(DlgpError::InvalidArgument(format!("overlap ratio must be non-negative, got {theta}")));
        }
        let mut lo = inputs[..dim].to_vec();
        let mut hi = lo.clone();
        for row in inputs.chunks_exact(dim).skip(1) {
            for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(row) {
                *l = l.min(*v);
                *h = h.max(*v);
            }
        }
        let mut split_dim = 0;
        let mut width = hi[0] - lo[0];
        for j in 1..dim {
            let w = hi[j] - lo[j];
            if w > width {
                width = w;
                split_dim = j;
            }
        }
        let coords = inputs.chunks_exact(dim).map(|row| row[split_dim]);
        let position = match strategy {
            DivisionStrategy::Mean => {
                let n = inputs.len() / dim;
                (coords.sum::<f64>() / n as f64).clamp(lo[split_dim], hi[split_dim])
            }
            DivisionStrategy::Median => {
                let mut v: Vec<f64> = coords.collect();
                let k = (v.len() - 1) / 2;
                *v.select_nth_unstable_by(k, f64::total_cmp).1
            }
            DivisionStrategy::Midrange => 0.5 * (lo[split_dim] + hi[split_dim]),
        };
        Ok(Self { split_dim, position, overlap: theta * width })
    }

    /// Probability of routing `x` to the high-coordinate child.
    ///
    /// Exactly 0 below `position - overlap/2`, exactly 1 above
    /// `position + overlap/2`, linear in between. With zero overlap the value
    /// is 0.5 on the hyperplane itself.
    #[inline]
    pub fn probability(&self, x: &[f64]) -> f64 {
        let v = x[self.split_dim];
        let half = 0.5 * self.overlap;
        if v < self.position - half {
            0.0
        } else if v > self.position + half {
            1.0
        } else if self.overlap > 0.0 {
            ((v - self.position) / self.overlap + 0.5).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    /// Whether `x` lies in the closed overlap band. Always false for a zero-width band.
    #[inline]
    pub fn in_overlap(&self, x: &[f64]) -> bool {
        let v = x[self.split_dim];
        let half = 0.5 * self.overlap;
        self.overlap > 0.0 && v >= self.position - half && v <= self.position + half
    }
}
