mod common;

use llp_core::bagging::{self, CountMode};
use llp_core::bp::MarginalVector;
use llp_core::config;
use llp_core::data::{self, FeatureMatrix, LabeledDataset};
use llp_core::gibbs::IsingModel;
use llp_core::metrics;
use llp_core::pipeline::PipelineConfig;
use llp_core::pseudo::{self, ThresholdMode};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn raising_tau_never_creates_positives(
        probs in prop::collection::vec(0.0f64..=1.0, 1..50),
        t1 in 0.001f64..0.999,
        t2 in 0.001f64..0.999,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = pseudo::threshold(&probs, lo, ThresholdMode::Hard).unwrap();
        let b = pseudo::threshold(&probs, hi, ThresholdMode::Hard).unwrap();
        for (x, y) in a.hard.iter().zip(&b.hard) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn weights_depend_only_on_distance_to_tau(probs in prop::collection::vec(0.0f64..=1.0, 1..30), tau in 0.01f64..0.99) {
        let w = pseudo::threshold(&probs, tau, ThresholdMode::SoftWeighted).unwrap();
        let weights = w.weights.unwrap();
        for (p, wt) in probs.iter().zip(&weights) {
            prop_assert!((wt - (p - tau).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn auroc_matches_pair_counting(
        scores in prop::collection::vec(0u8..5, 2..40),
        labels in prop::collection::vec(0u8..=1, 2..40),
    ) {
        let n = scores.len().min(labels.len());
        let (s, y) = (&scores[..n], &labels[..n]);
        prop_assume!(y.contains(&0) && y.contains(&1));
        let sf: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    num += if sf[i] > sf[j] { 1.0 } else if sf[i] == sf[j] { 0.5 } else { 0.0 };
                }
            }
        }
        prop_assert!((metrics::auroc(&sf, y).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn splits_partition_the_rows(m in 3usize..500, seed in any::<u64>()) {
        let s = data::split(m, (0.6, 0.2, 0.2), seed).unwrap();
        s.validate(m).unwrap();
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), m);
    }

    #[test]
    fn bags_are_disjoint_with_exact_counts(m in 10usize..300, b in 2usize..10, seed in any::<u64>()) {
        let labels: Vec<u8> = (0..m).map(|i| u8::from((i * 7) % 3 == 0)).collect();
        let train: Vec<usize> = (0..m).collect();
        prop_assume!(m >= b);
        let bs = bagging::generate_bags(&train, b, &labels, seed).unwrap();
        bs.validate().unwrap();
        prop_assert_eq!(bs.len(), m / b);
        for (bag, &c) in bs.bags.iter().zip(&bs.counts) {
            prop_assert_eq!(bag.len(), b);
            prop_assert_eq!(bag.iter().map(|&i| usize::from(labels[i])).sum::<usize>(), c);
        }
    }
}

#[test]
fn dp_noise_has_the_calibrated_spread() {
    // one bag of 8 sitting at proportion 1/2, so clipping never triggers
    let bs = bagging::BagStructure {
        bags: vec![(0..8).collect()],
        counts: vec![4],
        bag_size: 8,
    };
    let (eps, delta) = (20.0, 1e-5);
    let tau = bagging::gaussian_noise_std(8, eps, delta).unwrap();
    let want = (1.0 / 8.0) * (2.0 * (1.25f64 / delta).ln()).sqrt() / eps;
    assert!((tau - want).abs() < 1e-15);
    let draws: Vec<f64> = (0..100_000u64)
        .map(|s| {
            bagging::add_label_dp_noise(&bs, eps, delta, s)
                .unwrap()
                .proportions[0]
                - 0.5
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let sd =
        (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
    assert!((sd / tau - 1.0).abs() < 0.02, "empirical {sd} vs {tau}");
    let t512 = bagging::gaussian_noise_std(512, eps, delta).unwrap();
    assert_eq!(t512, tau / 64.0);
}

#[test]
fn noisy_counts_follow_the_mode() {
    let bs = bagging::BagStructure {
        bags: vec![(0..4).collect()],
        counts: vec![1],
        bag_size: 4,
    };
    let noisy = bagging::NoisyBagLabels {
        proportions: vec![0.3],
        epsilon: 1.0,
        delta: 1e-5,
        tau_noise: 0.1,
    };
    assert_eq!(noisy.counts(&bs, CountMode::Rounded), vec![1.0]);
    assert!((noisy.counts(&bs, CountMode::Real)[0] - 1.2).abs() < 1e-12);
}

#[test]
fn dataset_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut r = common::rng(1);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..3).map(|_| r.gen_range(-5.0..5.0)).collect())
        .collect();
    let labels: Vec<u8> = (0..20).map(|i| u8::from(i % 4 == 0)).collect();
    let ds = LabeledDataset::new(
        FeatureMatrix::from_rows(&rows).unwrap(),
        Some(labels.clone()),
    )
    .unwrap();
    data::write_csv(&ds, &path).unwrap();
    let back = data::load_csv(&path, Some("y")).unwrap();
    assert_eq!(back.features.values(), ds.features.values());
    assert_eq!(back.labels.as_deref(), Some(&labels[..]));
}

#[test]
fn malformed_csv_names_the_cell() {
    let text = "a,b,y\n1,2,0\n3,oops,1\n";
    let err = data::read_csv(text.as_bytes(), Some("y")).unwrap_err();
    assert_eq!(err.kind(), "parse");
    let msg = err.to_string();
    assert!(msg.contains("row 2") && msg.contains('b'), "{msg}");
}

#[test]
fn bag_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (bp, cp) = (dir.path().join("bags.csv"), dir.path().join("counts.csv"));
    let bags = vec![vec![4, 1, 7], vec![0, 2], vec![9]];
    let counts = vec![2.0, 0.0, 1.0];
    bagging::write_bag_files(&bags, &counts, &bp, &cp).unwrap();
    let (b2, c2) = bagging::read_bag_files(&bp, &cp).unwrap();
    assert_eq!(b2, bags);
    assert_eq!(c2, counts);
}

#[test]
fn overlapping_bag_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (bp, cp) = (dir.path().join("bags.csv"), dir.path().join("counts.csv"));
    std::fs::write(&bp, "instance_index,bag_id\n0,0\n1,0\n1,1\n").unwrap();
    std::fs::write(&cp, "bag_id,count\n0,1\n1,0\n").unwrap();
    let err = bagging::read_bag_files(&bp, &cp).unwrap_err();
    assert_eq!(err.kind(), "overlapping_bags");
}

#[test]
fn model_and_marginal_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (np, pp) = (dir.path().join("nodes.csv"), dir.path().join("pairs.csv"));
    let model = IsingModel::new(
        vec![0.1 + 0.2, -1.5, 2.0],
        vec![(0, 2, -0.7), (1, 2, 1e-17)],
    )
    .unwrap();
    model.write_csv(&np, &pp).unwrap();
    let back = IsingModel::read_csv(&np, &pp).unwrap();
    assert_eq!(back.node_potentials(), model.node_potentials());
    assert_eq!(back.couplings(), model.couplings());

    let mp = dir.path().join("m.csv");
    MarginalVector {
        probs: vec![0.25, 0.5],
    }
    .write_csv_with_ids(Some(&[10, 3]), &mp)
    .unwrap();
    let text = std::fs::read_to_string(&mp).unwrap();
    assert_eq!(
        text.lines().collect::<Vec<_>>(),
        ["instance_index,p1", "10,0.25", "3,0.5"]
    );
}

#[test]
fn config_files_set_base_and_per_iteration_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    std::fs::write(
        &path,
        "# adult, bag 512\niterations = 3\nlambda_b = 0.0796\nlambda_s=0.003  # similarity weight\n\
         delta_d = inf\nhidden_dims = 32,16\niter1.lambda_a = 0.5\niter2.k = 7\n",
    )
    .unwrap();
    let cfg = config::load_file(&path).unwrap();
    assert_eq!(cfg.iterations, 3);
    assert_eq!(cfg.hidden_dims, vec![32, 16]);
    assert_eq!(cfg.stage(0).lambda_b, 0.0796);
    assert_eq!(cfg.stage(1).lambda_s, 0.003);
    assert!(cfg.stage(0).delta_d.is_infinite());
    assert_eq!(cfg.stage(1).train.lambda_a, 0.5);
    assert_eq!(
        cfg.stage(0).train.lambda_a,
        PipelineConfig::default().base.train.lambda_a
    );
    assert_eq!(cfg.stage(2).k, 7);
    assert_eq!(cfg.stage(1).k, PipelineConfig::default().base.k);

    let json = serde_json::to_string(&cfg).unwrap();
    let back: PipelineConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_errors_are_reported() {
    assert!(config::parse_pairs("k 5").is_err());
    let mut cfg = PipelineConfig::default();
    assert!(cfg.set("no_such_key", "1").is_err());
    assert!(cfg.set("k", "five").is_err());
    assert!(cfg.set("metric", "manhattan").is_err());
}
