//! Streaming Gaussian process regression with a tree of local exact GPs.
//!
//! Training points are routed down a binary tree by random draws from soft,
//! axis-aligned split probabilities. Each leaf holds an exact GP over at most
//! `capacity` points, updated by Cholesky row appends; a full leaf is divided
//! in two. Predictions mix the leaf posteriors weighted by the probability of
//! reaching each leaf, visiting only leaves with non-zero weight.
//!
//! ```
//! use dlgp::{DlgpTree, Hyperparameters, TreeConfig};
//!
//! let hp = Hyperparameters::isotropic(1.0, 0.3, 0.01, 1).unwrap();
//! let mut tree = DlgpTree::new(hp, TreeConfig::default(), 7).unwrap();
//! for k in 0..500 {
//!     let x = k as f64 / 500.0;
//!     tree.update(&[x], (6.0 * x).sin()).unwrap();
//! }
//! let p = tree.predict(&[0.25]).unwrap();
//! assert!((p.mean - 1.5f64.sin()).abs() < 0.05);
//! ```

pub mod baseline;
pub mod dataio;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod local_gp;
pub mod metrics;
pub mod partition;
pub mod scenario;
pub mod tree;
pub mod verify;

pub use baseline::ExactGp;
pub use dataio::{load_config, load_csv, Dataset, ExperimentConfig};
pub use error::{DlgpError, Result};
pub use exec::Execution;
pub use kernel::Hyperparameters;
pub use local_gp::LocalModel;
pub use partition::{DivisionRule, DivisionStrategy};
pub use tree::{Counters, DlgpTree, MultiTargetDlgp, PredictiveDistribution, TreeConfig};
