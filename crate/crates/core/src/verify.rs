//! Self-checks run by `dlgp verify`: the model against its dense and unpruned
//! references on seeded random problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::ExactGp;
use crate::kernel::{kernel_eval, Hyperparameters};
use crate::local_gp::LocalModel;
use crate::partition::DivisionStrategy;
use crate::tree::{DlgpTree, PredictiveDistribution, TreeConfig};
use crate::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(scale)
}

fn grown_tree(seed: u64, points: usize, capacity: usize, theta: f64) -> DlgpTree {
    let hp = Hyperparameters::isotropic(1.0, 0.25, 0.01, 2).expect("valid hyperparameters");
    let cfg = TreeConfig { capacity, theta, strategy: DivisionStrategy::Mean };
    let mut tree = DlgpTree::new(hp, cfg, seed).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..points {
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let y = (2.0 * std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).cos();
        tree.update(&x, y).expect("update");
    }
    tree
}

fn kernel_values() -> CheckOutcome {
    let hp = Hyperparameters::new(3.0, vec![2.0, 1.0], 0.0).expect("valid");
    let v = kernel_eval(&[2.0, 0.0], &[0.0, 0.0], &hp).expect("dims");
    let expected = 3.0 * (-0.5f64).exp();
    CheckOutcome::new("kernel closed form", (v - expected).abs() < 1e-15, format!("k = {v}"))
}

fn rank_one_equivalence(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let d = 5;
    let n = 200;
    let mut worst: f64 = 0.0;
    for hp in [
        Hyperparameters::isotropic(1.0, 1.0, 0.1, d),
        Hyperparameters::new(2.0, vec![0.5, 0.8, 1.0, 1.5, 3.0], 0.01),
        Hyperparameters::isotropic(0.5, 2.0, 0.05, d),
    ] {
        let hp = hp.expect("valid");
        let xs: Vec<f64> = uniform(rng, n * d).iter().map(|v| 4.0 * v - 2.0).collect();
        let ys = uniform(rng, n);
        let mut m = LocalModel::fit(&xs[..d], &ys[..1], &hp).expect("fit");
        for i in 1..n {
            m.insert(&hp, &xs[i * d..(i + 1) * d], ys[i]).expect("insert");
        }
        let gp = ExactGp::fit(&xs, &ys, &hp).expect("fit");
        let l = gp.factor();
        let dense = m.factor_dense();
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((l[(i, j)] - dense[i * n + j]).abs());
            }
        }
        for (a, b) in m.alpha().iter().zip(gp.alpha()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckOutcome::new("rank-one insertion matches batch fit", worst < 1e-9, format!("max abs diff {worst:.3e}"))
}

fn pre_division_equivalence(rng: &mut ChaCha8Rng, datasets: usize) -> CheckOutcome {
    let capacity = 100;
    let mut worst: f64 = 0.0;
    for k in 0..datasets {
        let d = [1, 2, 5][k % 3];
        let n = rng.random_range(1..=capacity);
        let hp = Hyperparameters::isotropic(1.0 + rng.random::<f64>(), 0.3 + rng.random::<f64>(), 0.05, d).expect("valid");
        let cfg = TreeConfig { capacity, ..TreeConfig::default() };
        let mut tree = DlgpTree::new(hp.clone(), cfg, k as u64).expect("config");
        let xs = uniform(rng, n * d);
        let ys: Vec<f64> = uniform(rng, n).iter().map(|v| 2.0 * v - 1.0).collect();
        for i in 0..n {
            tree.update(&xs[i * d..(i + 1) * d], ys[i]).expect("update");
        }
        let gp = ExactGp::fit(&xs, &ys, &hp).expect("fit");
        let y_scale = ys.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
        for _ in 0..100 {
            let q = uniform(rng, d);
            let p = tree.predict(&q).expect("predict");
            let (m, v) = gp.predict(&q);
            worst = worst.max(rel_err(p.mean, m, y_scale)).max(rel_err(p.variance, v, hp.signal_variance));
        }
    }
    CheckOutcome::new(
        "undivided tree matches dense exact GP",
        worst < 1e-8,
        format!("{datasets} datasets, max relative error {worst:.3e}"),
    )
}

fn normalization_and_pruning(rng: &mut ChaCha8Rng, points: usize) -> Vec<CheckOutcome> {
    let tree = grown_tree(11, points, 50, 0.05);
    let mut norm: f64 = 0.0;
    let mut prune: f64 = 0.0;
    let mut algebra: f64 = 0.0;
    let mut negative = false;
    for _ in 0..1000 {
        let x = uniform(rng, 2);
        let total: f64 = tree.leaf_probabilities(&x).expect("probabilities").iter().map(|(_, p)| p).sum();
        norm = norm.max((total - 1.0).abs());
        let a = tree.predict(&x).expect("predict");
        let b = tree.predict_full(&x).expect("predict");
        prune = prune.max((a.mean - b.mean).abs()).max((a.variance - b.variance).abs());
        let parts = tree.mixture_components(&x, Execution::Sequential).expect("components");
        let mix = PredictiveDistribution::from_mixture(&parts);
        let spread: f64 = parts
            .iter()
            .map(|c| c.probability * (c.variance + (c.mean - mix.mean) * (c.mean - mix.mean)))
            .sum();
        algebra = algebra.max((mix.variance - spread).abs());
        negative |= mix.variance < 0.0;
    }
    let leaves = tree.counters().leaf_count;
    vec![
        CheckOutcome::new("leaf probabilities sum to one", norm < 1e-12, format!("{leaves} leaves, max dev {norm:.3e}")),
        CheckOutcome::new("pruned prediction equals full mixture", prune < 1e-12, format!("max diff {prune:.3e}")),
        CheckOutcome::new(
            "mixture variance equals spread form",
            algebra < 1e-10 && !negative,
            format!("max diff {algebra:.3e}"),
        ),
    ]
}

fn determinism() -> CheckOutcome {
    let a = grown_tree(5, 2000, 40, 0.05);
    let b = grown_tree(5, 2000, 40, 0.05);
    let mut buf = Vec::new();
    let resumed = a.save_snapshot(&mut buf).and_then(|_| DlgpTree::load_snapshot(buf.as_slice()));
    let ok = a == b && resumed.as_ref().is_ok_and(|r| *r == a);
    CheckOutcome::new("seeded runs and snapshots are identical", ok, format!("{} bytes snapshot", buf.len()))
}

/// Runs every check. `quick` shrinks the problem sizes.
pub fn run_checks(quick: bool) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = vec![kernel_values(), rank_one_equivalence(&mut rng)];
    out.push(pre_division_equivalence(&mut rng, if quick { 12 } else { 50 }));
    out.extend(normalization_and_pruning(&mut rng, if quick { 2000 } else { 6000 }));
    out.push(determinism());
    out
}
