//! Acceptance checks. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `LLP_ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.
//! The Adult check reads `LLP_ADULT_CSV`, falling back to `data/adult.csv`
//! at the workspace root, and is skipped when neither exists.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::{enumerate_marginals, max_abs_diff, random_tree, rng};
use llp_core::bagging::{self, BagStructure};
use llp_core::bp::{self, BpConfig};
use llp_core::data::{self, DataSplit, FeatureMatrix, LabeledDataset};
use llp_core::gibbs::{self, GibbsParams, IsingModel, NodeField};
use llp_core::knn::{self, KernelSpec, MaternNu, Metric};
use llp_core::metrics;
use llp_core::mlp::{self, MlpModel, Objective, Pooling, TrainConfig, TrainingBag, ValidationSet};
use llp_core::pipeline::{self, PipelineConfig};
use rand::seq::SliceRandom;
use rand::Rng;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Self { verdict, detail }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Skip,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// 1-2: BP accuracy

fn tree_bp_is_exact() -> Outcome {
    let mut r = rng(1);
    let cfg = BpConfig {
        max_rounds: 200,
        tolerance: 1e-14,
        ..BpConfig::default()
    };
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let m = r.gen_range(1..=15);
        let model = random_tree(m, 3.0, &mut r);
        let (marg, _) = bp::sum_product(&model, &cfg).unwrap();
        worst = worst.max(max_abs_diff(&marg.probs, &enumerate_marginals(&model)));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        worst <= 1e-9 && secs < 10.0,
        format!("200 trees, max |error| {worst:.2e} (<= 1e-9), {secs:.2} s (< 10 s)"),
    )
}

fn weak_loopy_bp_is_accurate() -> Outcome {
    let mut r = rng(2);
    let cfg = BpConfig {
        max_rounds: 1000,
        tolerance: 1e-12,
        ..BpConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut loops = 0;
    for _ in 0..100 {
        let m = r.gen_range(3..=12);
        let h: Vec<f64> = (0..m).map(|_| r.gen_range(-0.5..=0.5)).collect();
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if r.gen_bool(0.4) {
                    pairs.push((i, j, r.gen_range(-0.1..=0.1)));
                }
            }
        }
        if pairs.len() >= m {
            loops += 1;
        }
        let model = IsingModel::new(h, pairs).unwrap();
        let (marg, _) = bp::sum_product(&model, &cfg).unwrap();
        worst = worst.max(max_abs_diff(&marg.probs, &enumerate_marginals(&model)));
    }
    Outcome::check(
        worst <= 1e-3,
        format!("100 models ({loops} with cycles), max |error| {worst:.2e} (<= 1e-3)"),
    )
}

// ---------------------------------------------------------------------------
// 3: energy expansion

fn matern() -> KernelSpec {
    KernelSpec::Matern {
        nu: MaternNu::ThreeHalves,
        length_scale: 1.0,
    }
}

fn energy_offset_is_constant() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = r.gen_range(4..=14);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let graph = knn::build_graph(&x, 1, f64::INFINITY, Metric::Euclidean).unwrap();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut r);
        let mut bags = Vec::new();
        let mut rest = &order[..];
        while rest.len() >= 4 {
            let size = r.gen_range(3..=4);
            bags.push(rest[..size].to_vec());
            rest = &rest[size..];
        }
        let counts: Vec<f64> = bags
            .iter()
            .map(|b| r.gen_range(0..=b.len()) as f64)
            .collect();
        let params = GibbsParams {
            lambda_b: r.gen_range(0.01..3.0),
            lambda_s: r.gen_range(0.01..3.0),
            kernel: matern(),
            node_field: NodeField::Symmetric,
        };
        let model = gibbs::build_ising(&graph, &bags, &counts, &params).unwrap();
        let mut offset = None;
        for y in common::all_labellings(m) {
            let d = gibbs::constraint_energy(&graph, &bags, &counts, &params, &y).unwrap()
                - model.energy(&y).unwrap();
            let c = *offset.get_or_insert(d);
            worst = worst.max((d - c).abs());
        }
    }
    Outcome::check(
        worst <= 1e-9,
        format!("50 instances, max offset spread {worst:.2e} (<= 1e-9)"),
    )
}

// ---------------------------------------------------------------------------
// 4: 1-NN structure

fn is_forest(m: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..m).collect();
    let mut seen = HashSet::new();
    for (i, j) in edges {
        if !seen.insert((i.min(j), i.max(j))) {
            continue;
        }
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

fn one_nn_graphs_are_forests() -> Outcome {
    let mut r = rng(4);
    let mut bad = 0;
    for t in 0..1000 {
        let m = r.gen_range(2..=200);
        let d = r.gen_range(1..=8);
        // every other set sits on an integer grid, where ties are common
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if t % 2 == 0 {
                            r.gen_range(-1.0..1.0)
                        } else {
                            f64::from(r.gen_range(-2i32..=2))
                        }
                    })
                    .collect()
            })
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let g = knn::build_graph(&x, 1, f64::INFINITY, Metric::Euclidean).unwrap();
        if !is_forest(m, g.edges().map(|(i, j, _)| (i, j))) {
            bad += 1;
        }
    }
    Outcome::check(
        bad == 0,
        format!("1000 point sets, {bad} graphs with a cycle"),
    )
}

// ---------------------------------------------------------------------------
// 5: gradients

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Central differences against `analytic`, entrywise at two step sizes,
/// keeping the closer one: a step that straddles a ReLU kink is meaningless,
/// while a wrong analytic gradient disagrees at every step size.
fn numeric_grad(model: &MlpModel, analytic: &[f64], f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let mut probe = model.clone();
    (0..model.params().len())
        .map(|p| {
            let orig = probe.params()[p];
            let mut central = |eps: f64| {
                probe.params_mut()[p] = orig + eps;
                let up = f(&probe);
                probe.params_mut()[p] = orig - eps;
                let down = f(&probe);
                probe.params_mut()[p] = orig;
                (up - down) / (2.0 * eps)
            };
            let (a, b) = (central(1e-6), central(1e-7));
            if (a - analytic[p]).abs() <= (b - analytic[p]).abs() {
                a
            } else {
                b
            }
        })
        .collect()
}

fn gradients_match_finite_differences() -> Outcome {
    let mut r = rng(5);
    let (mut worst_agg, mut worst_dllp): (f64, f64) = (0.0, 0.0);
    for t in 0..50u64 {
        let d = r.gen_range(2..=5);
        let depth = r.gen_range(2..=4);
        let mut dims = vec![d];
        dims.extend((0..depth).map(|_| r.gen_range(3..=7)));
        dims.push(1);
        let mut model = MlpModel::new(&dims, r.gen_range(2..=4), t).unwrap();
        model.pooling = [Pooling::Mean, Pooling::Sum, Pooling::Max][t as usize % 3];
        // fresh biases are exactly zero, which parks dead units on the ReLU
        // kink where central differences are meaningless
        model
            .params_mut()
            .iter_mut()
            .for_each(|p| *p += r.gen_range(-0.1..0.1));

        let n = r.gen_range(1..=8);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(-1.5..1.5)).collect())
            .collect();
        let inputs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0u8..=1))).collect();
        let proportion = r.gen_range(0.0..=1.0);
        let lambda_a = r.gen_range(0.0..5.0);

        let (_, g) =
            mlp::aggregate_loss_grad(&model, &inputs, &labels, proportion, lambda_a).unwrap();
        let fd = numeric_grad(&model, &g, |m| {
            mlp::aggregate_loss(m, &inputs, &labels, proportion, lambda_a).unwrap()
        });
        worst_agg = worst_agg.max(relative_error(&g, &fd));

        let (_, g) = mlp::dllp_loss_grad(&model, &inputs, proportion).unwrap();
        let fd = numeric_grad(&model, &g, |m| mlp::dllp_loss(m, &inputs, proportion).unwrap());
        worst_dllp = worst_dllp.max(relative_error(&g, &fd));
    }
    Outcome::check(
        worst_agg < 1e-4 && worst_dllp < 1e-4,
        format!("50 models, max relative error aggregate {worst_agg:.2e}, DLLP {worst_dllp:.2e} (< 1e-4)"),
    )
}

// ---------------------------------------------------------------------------
// 6-7: synthetic end-to-end

/// The bag weight shrinks with bag size so that the bag cliques stay in the
/// regime where damped BP converges; a fixed 0.1 oscillates at bag 128.
fn synthetic_config(seed: u64, bag_size: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        iterations: 1,
        hidden_dims: vec![64, 32],
        pool_hidden: 32,
        seed,
        ..PipelineConfig::default()
    };
    cfg.base.k = 5;
    cfg.base.metric = Metric::Euclidean;
    cfg.base.delta_d = f64::INFINITY;
    cfg.base.lambda_b = 2.0 / bag_size as f64;
    cfg.base.train.learning_rate = 3e-3;
    cfg.base.train.batch_size = 256;
    cfg.base.train.seed = seed;
    cfg
}

struct Synthetic {
    ds: LabeledDataset,
    split: DataSplit,
    bags: BagStructure,
}

fn synthetic(bag_size: usize, seed: u64) -> Synthetic {
    let ds = data::make_synthetic(4000, 2, 6.0, seed).unwrap();
    let split = data::split(ds.len(), (0.8, 0.1, 0.1), seed).unwrap();
    let bags =
        bagging::generate_bags(&split.train, bag_size, ds.labels().unwrap(), seed + 1).unwrap();
    Synthetic { ds, split, bags }
}

/// The same network trained on true instance labels.
fn supervised_oracle(s: &Synthetic, cfg: &PipelineConfig) -> f64 {
    let labels = s.ds.labels().unwrap();
    let x = s.ds.features.standardized();
    let bags: Vec<TrainingBag> = s
        .split
        .train
        .chunks(32)
        .map(|c| TrainingBag {
            members: c.to_vec(),
            targets: c.iter().map(|&i| f64::from(labels[i])).collect(),
            weights: None,
            proportion: 0.0,
        })
        .collect();
    let val_labels: Vec<u8> = s.split.validation.iter().map(|&i| labels[i]).collect();
    let validation = ValidationSet {
        features: &x,
        rows: &s.split.validation,
        labels: &val_labels,
    };
    let mut dims = vec![2];
    dims.extend(&cfg.hidden_dims);
    dims.push(1);
    let mut net = MlpModel::new(&dims, cfg.pool_hidden, cfg.seed).unwrap();
    mlp::train(
        &mut net,
        &x,
        &bags,
        &validation,
        &cfg.base.train,
        Objective::Instance,
    )
    .unwrap();
    let test_labels: Vec<u8> = s.split.test.iter().map(|&i| labels[i]).collect();
    metrics::auroc(&net.score_rows(&x, &s.split.test).unwrap(), &test_labels).unwrap()
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let s = synthetic(32, 6);
    let cfg = synthetic_config(6, 32);
    let out = pipeline::run(&s.ds, &s.split, &s.bags, &cfg).unwrap();
    let ours = out.reports[0].test_auroc.unwrap();
    let oracle = supervised_oracle(&s, &cfg);
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        ours >= 0.95 && oracle >= 0.99 && secs < 300.0,
        format!("bag 32: test AUROC {ours:.4} (>= 0.95), supervised {oracle:.4} (>= 0.99), {secs:.1} s (< 300 s)"),
    )
}

fn beats_dllp_at_large_bags() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in [11, 12, 13] {
        let s = synthetic(128, seed);
        let cfg = synthetic_config(seed, 128);
        let ours = pipeline::run(&s.ds, &s.split, &s.bags, &cfg)
            .unwrap()
            .reports[0]
            .test_auroc
            .unwrap();
        let (_, _, base) = pipeline::run_dllp(&s.ds, &s.split, &s.bags, &cfg).unwrap();
        let dllp = base.test_auroc.unwrap();
        ok &= ours >= dllp - 0.01;
        parts.push(format!("seed {seed}: {ours:.4} vs {dllp:.4}"));
    }
    Outcome::check(
        ok,
        format!(
            "bag 128, ours vs DLLP (>= DLLP - 0.01): {}",
            parts.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 8: Adult

fn adult_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("LLP_ADULT_CSV") {
        return Some(PathBuf::from(p));
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/adult.csv");
    p.exists().then_some(p)
}

fn adult_config(lambda_b: f64, lambda_s: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        iterations: 1,
        // a narrower network than the library default so it trains on one core
        hidden_dims: vec![128, 64, 32, 16],
        pool_hidden: 32,
        seed: 0,
        ..PipelineConfig::default()
    };
    let s = &mut cfg.base;
    s.k = 1;
    s.delta_d = 1.0;
    s.metric = Metric::Cosine;
    s.kernel = matern();
    s.lambda_b = lambda_b;
    s.lambda_s = lambda_s;
    s.bp = BpConfig {
        max_rounds: 100,
        damping: 0.5,
        tolerance: 1e-8,
    };
    s.tau = 0.03;
    s.train = TrainConfig {
        learning_rate: 3.3e-4,
        weight_decay: 2.5e-4,
        lambda_a: 1e-4,
        batch_size: 512,
        max_epochs: 100,
        patience: 20,
        seed: 0,
    };
    cfg
}

fn adult() -> Outcome {
    let Some(path) = adult_path() else {
        return Outcome::skip("Adult CSV not found (set LLP_ADULT_CSV)");
    };
    let ds = data::load_csv(&path, Some("income")).unwrap();
    let labels = ds.labels().unwrap().to_vec();
    let split = data::split(ds.len(), (0.81, 0.09, 0.10), 0).unwrap();

    // bag 8: quality of the BP marginals themselves
    let start = Instant::now();
    let bags8 = bagging::generate_bags(&split.train, 8, &labels, 1).unwrap();
    let cfg8 = adult_config(0.4427, 1e-4);
    let model = pipeline::initial_model(&ds, &split, &bags8, &cfg8).unwrap();
    let (marg, diag) = bp::sum_product(&model, &cfg8.base.bp).unwrap();
    let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    let pseudo = 100.0 * metrics::auroc(&marg.probs, &train_labels).unwrap();
    let ok8 = (pseudo - 86.34).abs() <= 2.0;
    let t8 = start.elapsed().as_secs_f64();

    // bag 512: test AUROC of the trained network
    let start = Instant::now();
    let bags512 = bagging::generate_bags(&split.train, 512, &labels, 1).unwrap();
    let cfg512 = adult_config(0.0796, 0.003);
    let report = pipeline::run(&ds, &split, &bags512, &cfg512)
        .unwrap()
        .reports
        .remove(0);
    let test = 100.0 * report.test_auroc.unwrap();
    let ok512 = (test - 84.97).abs() <= 1.5;
    let t512 = start.elapsed().as_secs_f64();

    Outcome::check(
        ok8 && ok512,
        format!(
            "bag 512 test AUROC {test:.2} (84.97 +- 1.5, {}; BP {} rounds, converged {}, {t512:.0} s); \
             bag 8 pseudo-label AUROC {pseudo:.2} (86.34 +- 2, {}; BP {} rounds, converged {}, {t8:.0} s)",
            if ok512 { "ok" } else { "miss" },
            report.bp.rounds_run,
            report.bp.converged,
            if ok8 { "ok" } else { "miss" },
            diag.rounds_run,
            diag.converged,
        ),
    )
}

// ---------------------------------------------------------------------------
// 9: label noise

fn dp_noise_is_calibrated() -> Outcome {
    // one bag of 8 at proportion 1/2, so clipping never triggers
    let bs = BagStructure {
        bags: vec![(0..8).collect()],
        counts: vec![4],
        bag_size: 8,
    };
    let (eps, delta) = (20.0, 1e-5);
    let tau = bagging::gaussian_noise_std(8, eps, delta).unwrap();
    let draws: Vec<f64> = (0..100_000u64)
        .map(|s| {
            bagging::add_label_dp_noise(&bs, eps, delta, s)
                .unwrap()
                .proportions[0]
                - 0.5
        })
        .collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let rel = (sd / tau - 1.0).abs();
    let tau512 = bagging::gaussian_noise_std(512, eps, delta).unwrap();
    let scaled = tau512 == tau / 64.0;
    Outcome::check(
        rel < 0.02 && scaled,
        format!(
            "empirical std off by {:.2}% (< 2%), tau(512) == tau(8)/64: {scaled}",
            100.0 * rel
        ),
    )
}

// ---------------------------------------------------------------------------
// 10: scaling

struct Scaled {
    model: IsingModel,
    pairs_expected: usize,
}

fn scaled_model(m: usize) -> Scaled {
    let ds = data::make_synthetic(m, 2, 3.0, 10).unwrap();
    let labels = ds.labels().unwrap();
    let all: Vec<usize> = (0..m).collect();
    let bags = bagging::generate_bags(&all, 32, labels, 10).unwrap();
    let graph = knn::build_graph(&ds.features, 3, f64::INFINITY, Metric::Euclidean).unwrap();
    let params = GibbsParams {
        lambda_b: 0.1,
        lambda_s: 0.05,
        kernel: matern(),
        node_field: NodeField::Symmetric,
    };
    let model = gibbs::build_ising(&graph, &bags.bags, &bags.counts_f64(), &params).unwrap();

    // |kNN pairs| + sum of C(B, 2) - |kNN pairs inside one bag|
    let mut bag_of = vec![usize::MAX; m];
    for (b, bag) in bags.bags.iter().enumerate() {
        bag.iter().for_each(|&i| bag_of[i] = b);
    }
    let knn_pairs: HashSet<(usize, usize)> = graph
        .edges()
        .map(|(i, j, _)| (i.min(j), i.max(j)))
        .collect();
    let shared = knn_pairs
        .iter()
        .filter(|&&(i, j)| bag_of[i] != usize::MAX && bag_of[i] == bag_of[j])
        .count();
    let within: usize = bags.bags.iter().map(|b| b.len() * (b.len() - 1) / 2).sum();
    Scaled {
        model,
        pairs_expected: knn_pairs.len() + within - shared,
    }
}

fn bp_scales_linearly() -> Outcome {
    let cfg = BpConfig {
        max_rounds: 50,
        damping: 0.5,
        tolerance: 0.0,
    };
    let time = |model: &IsingModel| {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                let (_, diag) = bp::sum_product(model, &cfg).unwrap();
                assert_eq!(diag.rounds_run, 50);
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let small = scaled_model(5000);
    let large = scaled_model(10_000);
    let (ts, tl) = (time(&small.model), time(&large.model));
    let ratio = tl / ts;
    let counts_ok = [&small, &large]
        .iter()
        .all(|s| s.model.couplings().len() == s.pairs_expected);
    Outcome::check(
        ratio <= 2.5 && counts_ok,
        format!(
            "m 5000 -> 10000: BP {ts:.3} s -> {tl:.3} s, ratio {ratio:.2} (<= 2.5); pairs {} / {} match the union count: {counts_ok}",
            small.model.couplings().len(),
            large.model.couplings().len(),
        ),
    )
}

// ---------------------------------------------------------------------------
// 11: linear stability

fn spectral_norms() -> Outcome {
    let path = IsingModel::new(vec![0.0; 3], vec![(0, 1, 0.5), (1, 2, -0.5)]).unwrap();
    let triangle =
        IsingModel::new(vec![0.0; 3], vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
    let np = bp::linearized_stability(&path, 500).unwrap().spectral_norm;
    let nt = bp::linearized_stability(&triangle, 500)
        .unwrap()
        .spectral_norm;

    let ds = data::make_synthetic(5000, 2, 3.0, 11).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let bags = bagging::generate_bags(&all, 512, ds.labels().unwrap(), 11).unwrap();
    let graph = knn::build_graph(&ds.features, 1, f64::INFINITY, Metric::Euclidean).unwrap();
    let params = GibbsParams {
        lambda_b: 0.0796,
        lambda_s: 0.003,
        kernel: matern(),
        node_field: NodeField::Symmetric,
    };
    let model = gibbs::build_ising(&graph, &bags.bags, &bags.counts_f64(), &params).unwrap();
    let big = bp::linearized_stability(&model, 500).unwrap();
    let ok = (np - 1.0).abs() <= 1e-6
        && (nt - 1.0).abs() <= 1e-6
        && big.spectral_norm.is_finite()
        && big.beta_threshold > 0.0;
    Outcome::check(
        ok,
        format!(
            "path {np:.9}, triangle {nt:.9} (1 +- 1e-6); 5k model with bags of 512: norm {:.3}, beta {:.3e} ({} iterations)",
            big.spectral_norm, big.beta_threshold, big.iterations
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("tree BP exactness", tree_bp_is_exact),
        ("weakly coupled loopy BP", weak_loopy_bp_is_accurate),
        ("energy expansion offset", energy_offset_is_constant),
        ("1-NN graph is a forest", one_nn_graphs_are_forests),
        ("loss gradients", gradients_match_finite_differences),
        ("synthetic end to end", synthetic_end_to_end),
        ("synthetic vs DLLP at bag 128", beats_dllp_at_large_bags),
        ("Adult", adult),
        ("label-noise calibration", dp_noise_is_calibrated),
        ("BP scaling and pair count", bp_scales_linearly),
        ("edge-incidence spectral norm", spectral_norms),
    ];
    let only: Option<Vec<usize>> = std::env::var("LLP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());

    let mut failed = 0;
    for (n, (name, check)) in (1..).zip(criteria) {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!(
            "{tag} [{n:>2}] {name}: {} [{:.1} s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
