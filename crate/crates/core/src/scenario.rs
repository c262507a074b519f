//! Benchmark protocols: checkpointed batch evaluation and online
//! predict-then-update streaming, both producing [`ReportRow`]s.

use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::dataio::{DataError, Dataset, ExperimentConfig};
use crate::error::DlgpError;
use crate::exec::{self, Execution};
use crate::metrics::{self, MetricAccumulator};
use crate::tree::DlgpTree;

/// Fixed header of the report CSV.
pub const REPORT_HEADER: &str =
    "n,target,nmse,nll,t_update_mean_s,t_predict_mean_s,leaf_count,division_count,overlap_ratio,active_leaves_mean";

/// Rows are emitted every this many samples in the online scenario.
pub const STREAM_REPORT_INTERVAL: usize = 1000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] DlgpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Mismatch(String),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Training samples seen.
    pub n: usize,
    pub target: usize,
    pub nmse: Option<f64>,
    pub nll: Option<f64>,
    pub t_update_mean_s: Option<f64>,
    pub t_predict_mean_s: Option<f64>,
    pub leaf_count: u64,
    pub division_count: u64,
    pub overlap_ratio: Option<f64>,
    pub active_leaves_mean: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ReportRow {
    /// CSV line matching [`REPORT_HEADER`]; missing values are empty fields.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.target,
            opt(self.nmse),
            opt(self.nll),
            opt(self.t_update_mean_s),
            opt(self.t_predict_mean_s),
            self.leaf_count,
            self.division_count,
            opt(self.overlap_ratio),
            opt(self.active_leaves_mean),
        )
    }
}

pub fn write_report<W: Write>(rows: &[ReportRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row.to_csv_line())?;
    }
    w.flush()
}

/// Options that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScenarioOptions {
    /// Runs the independent per-target trees on the thread pool.
    pub targets: Execution,
}

/// `checkpoints` uniformly spaced sample counts in `1..=n`, ending at `n`.
pub fn checkpoint_counts(n: usize, checkpoints: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=checkpoints).map(|k| (k * n).div_ceil(checkpoints)).filter(|c| *c > 0).collect();
    out.dedup();
    out
}

fn check_dims(data: &Dataset, cfg: &ExperimentConfig, what: &str) -> Result<(), ScenarioError> {
    if data.input_dim() != cfg.input_dim || data.target_dim() != cfg.target_dim() {
        return Err(ScenarioError::Mismatch(format!(
            "{what} has {}+{} columns, config expects {}+{}",
            data.input_dim(),
            data.target_dim(),
            cfg.input_dim,
            cfg.target_dim()
        )));
    }
    Ok(())
}

fn build_trees(cfg: &ExperimentConfig) -> Result<Vec<TargetState>, ScenarioError> {
    cfg.validate()?;
    cfg.hyperparameters
        .iter()
        .enumerate()
        .map(|(t, hp)| {
            let tree = DlgpTree::with_stream(hp.clone(), cfg.tree_config(), cfg.seed, t as u64)?;
            Ok(TargetState {
                target: t,
                tree,
                update_secs: 0.0,
                updates: 0,
                acc: MetricAccumulator::new(),
                active_sum: 0,
            })
        })
        .collect()
}

struct TargetState {
    target: usize,
    tree: DlgpTree,
    update_secs: f64,
    updates: u64,
    acc: MetricAccumulator,
    active_sum: u64,
}

impl TargetState {
    fn timed_update(&mut self, x: &[f64], y: f64) -> Result<f64, DlgpError> {
        let start = Instant::now();
        self.tree.update(x, y)?;
        let secs = start.elapsed().as_secs_f64();
        self.update_secs += secs;
        self.updates += 1;
        Ok(secs)
    }
}

/// Streams `train` into one tree per target and evaluates the full `test`
/// set at each checkpoint. Prediction timing covers the mixture mean only.
pub fn run_checkpoint_scenario(
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    opts: ScenarioOptions,
) -> Result<Vec<ReportRow>, ScenarioError> {
    check_dims(train, cfg, "training data")?;
    check_dims(test, cfg, "test data")?;
    let mut states = build_trees(cfg)?;
    let mut rows = Vec::new();
    let mut next = 0;
    for n in checkpoint_counts(train.len(), cfg.checkpoints) {
        exec::try_for_each_mut(opts.targets, &mut states, |t, s| {
            s.update_secs = 0.0;
            s.updates = 0;
            (next..n).try_for_each(|i| s.timed_update(train.input(i), train.target(i)[t]).map(|_| ()))
        })?;
        next = n;
        let evaluated = exec::map(opts.targets, &states, |s| evaluate(s, test, n));
        for row in evaluated {
            rows.push(row?);
        }
    }
    Ok(rows)
}

fn evaluate(state: &TargetState, test: &Dataset, n: usize) -> Result<ReportRow, DlgpError> {
    let tree = &state.tree;
    let t_index = state.target;
    let noise = tree.hyperparameters().noise_variance;
    let m = test.len();
    let mut means = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    let mut predict_secs = 0.0;
    let mut nll_sum = 0.0;
    let mut active = 0usize;
    for i in 0..m {
        let x = test.input(i);
        let y = test.target(i)[t_index];
        let start = Instant::now();
        let mean = tree.predict_mean(x)?;
        predict_secs += start.elapsed().as_secs_f64();
        let full = tree.predict(x)?;
        nll_sum += metrics::gaussian_nll(y, full.mean, full.variance, noise)?;
        active += tree.active_leaf_count(x)?;
        means.push(mean);
        targets.push(y);
    }
    let c = tree.counters();
    let per_test = |v: f64| (m > 0).then(|| v / m as f64);
    Ok(ReportRow {
        n,
        target: t_index,
        nmse: metrics::nmse(&means, &targets).ok(),
        nll: per_test(nll_sum),
        t_update_mean_s: (state.updates > 0).then(|| state.update_secs / state.updates as f64),
        t_predict_mean_s: per_test(predict_secs),
        leaf_count: c.leaf_count,
        division_count: c.division_count,
        overlap_ratio: metrics::overlap_ratio(&c, tree.config().capacity),
        active_leaves_mean: per_test(active as f64),
    })
}


/// Online protocol: for every sample, predict its target (mean and variance),
/// score the prediction, then update the tree with it. Rows are emitted every
/// [`STREAM_REPORT_INTERVAL`] samples and after the last one; timings are
/// moving averages over the last 1000 calls.
pub fn run_online_scenario(
    stream: &Dataset,
    cfg: &ExperimentConfig,
    opts: ScenarioOptions,
) -> Result<Vec<ReportRow>, ScenarioError> {
    check_dims(stream, cfg, "stream data")?;
    let mut states = build_trees(cfg)?;
    let mut rows = Vec::new();
    let n = stream.len();
    let mut start = 0;
    while start < n {
        let end = (start + STREAM_REPORT_INTERVAL).min(n);
        exec::try_for_each_mut(opts.targets, &mut states, |t, s| {
            (start..end).try_for_each(|i| online_step(s, stream.input(i), stream.target(i)[t]))
        })?;
        for s in &states {
            let c = s.tree.counters();
            let seen = s.acc.count();
            rows.push(ReportRow {
                n: end,
                target: s.target,
                nmse: s.acc.online_nmse(),
                nll: s.acc.mean_nll(),
                t_update_mean_s: s.acc.smoothed_update_time(),
                t_predict_mean_s: s.acc.smoothed_predict_time(),
                leaf_count: c.leaf_count,
                division_count: c.division_count,
                overlap_ratio: metrics::overlap_ratio(&c, s.tree.config().capacity),
                active_leaves_mean: (seen > 0).then(|| s.active_sum as f64 / seen as f64),
            });
        }
        start = end;
    }
    Ok(rows)
}

fn online_step(s: &mut TargetState, x: &[f64], y: f64) -> Result<(), DlgpError> {
    let start = Instant::now();
    let pred = s.tree.predict_or_prior(x)?;
    let predict_secs = start.elapsed().as_secs_f64();
    if !s.tree.is_empty() {
        s.active_sum += s.tree.active_leaf_count(x)? as u64;
    }
    let update_secs = s.timed_update(x, y)?;
    let noise = s.tree.hyperparameters().noise_variance;
    s.acc.online_update(y, pred.mean, pred.variance, noise, update_secs, predict_secs)
}

/// Predictions made by the online protocol, in stream order, for one target.
/// Used to inspect the protocol without timing.
pub fn online_predictions(
    stream: &Dataset,
    cfg: &ExperimentConfig,
    target: usize,
) -> Result<Vec<crate::tree::PredictiveDistribution>, ScenarioError> {
    check_dims(stream, cfg, "stream data")?;
    cfg.validate()?;
    let hp = cfg
        .hyperparameters
        .get(target)
        .ok_or_else(|| ScenarioError::Mismatch(format!("no target {target}")))?;
    let mut tree = DlgpTree::with_stream(hp.clone(), cfg.tree_config(), cfg.seed, target as u64)?;
    let mut out = Vec::with_capacity(stream.len());
    for i in 0..stream.len() {
        out.push(tree.predict_or_prior(stream.input(i))?);
        tree.update(stream.input(i), stream.target(i)[target])?;
    }
    Ok(out)
}
