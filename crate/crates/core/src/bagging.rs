//! Random disjoint bags, bag label counts, and Gaussian-mechanism noise on
//! bag proportions.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlpError, Result};
use crate::rng;

/// Disjoint bags of global instance indices with their positive counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagStructure {
    pub bags: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
    pub bag_size: usize,
}

impl BagStructure {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.bags
            .iter()
            .zip(&self.counts)
            .map(|(b, &c)| c as f64 / b.len() as f64)
            .collect()
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Errors on a repeated instance or a count above its bag size.
    pub fn validate(&self) -> Result<()> {
        if self.bags.len() != self.counts.len() {
            return Err(LlpError::DimensionMismatch {
                expected: self.bags.len(),
                got: self.counts.len(),
            });
        }
        check_disjoint(&self.bags)?;
        for (b, &c) in self.bags.iter().zip(&self.counts) {
            if c > b.len() {
                return Err(invalid(format!(
                    "bag count {c} exceeds bag size {}",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    /// Instances of `train` that landed in no bag.
    pub fn unbagged(&self, train: &[usize]) -> Vec<usize> {
        let bagged: std::collections::HashSet<usize> =
            self.bags.iter().flatten().copied().collect();
        train
            .iter()
            .copied()
            .filter(|i| !bagged.contains(i))
            .collect()
    }
}

pub(crate) fn check_disjoint(bags: &[Vec<usize>]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &i in bags.iter().flatten() {
        if !seen.insert(i) {
            return Err(LlpError::OverlappingBags(i));
        }
    }
    Ok(())
}

/// Shuffles `train_indices` and cuts `floor(n / bag_size)` bags of exactly
/// `bag_size`; the remainder is left unbagged. `labels` is indexed by global
/// instance index.
pub fn generate_bags(
    train_indices: &[usize],
    bag_size: usize,
    labels: &[u8],
    seed: u64,
) -> Result<BagStructure> {
    if bag_size < 2 {
        return Err(invalid(format!("bag size must be >= 2, got {bag_size}")));
    }
    if train_indices.len() < bag_size {
        return Err(invalid(format!(
            "bag size {bag_size} exceeds training set size {}",
            train_indices.len()
        )));
    }
    let mut order = train_indices.to_vec();
    order.shuffle(&mut rng::seeded(seed));
    let n_bags = order.len() / bag_size;
    let mut bags = Vec::with_capacity(n_bags);
    let mut counts = Vec::with_capacity(n_bags);
    for chunk in order.chunks_exact(bag_size) {
        let mut count = 0usize;
        for &i in chunk {
            let y = *labels.get(i).ok_or_else(|| {
                invalid(format!(
                    "instance {i} has no label ({} labels)",
                    labels.len()
                ))
            })?;
            count += usize::from(y);
        }
        bags.push(chunk.to_vec());
        counts.push(count);
    }
    let bs = BagStructure {
        bags,
        counts,
        bag_size,
    };
    check_disjoint(&bs.bags)?;
    Ok(bs)
}

/// How noisy proportions feed the bag-constraint potentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// `round(proportion * |S|)`
    #[default]
    Rounded,
    /// `proportion * |S|` kept real-valued
    Real,
}

/// Bag proportions after the Gaussian mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyBagLabels {
    pub proportions: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub tau_noise: f64,
}

impl NoisyBagLabels {
    /// Counts to use in place of exact bag counts.
    pub fn counts(&self, bags: &BagStructure, mode: CountMode) -> Vec<f64> {
        self.proportions
            .iter()
            .zip(&bags.bags)
            .map(|(p, b)| {
                let c = p * b.len() as f64;
                match mode {
                    CountMode::Rounded => c.round(),
                    CountMode::Real => c,
                }
            })
            .collect()
    }
}

/// Noise standard deviation `(1/B) * sqrt(2 ln(1.25/delta)) / epsilon`.
pub fn gaussian_noise_std(bag_size: usize, epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || epsilon.is_nan() {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    if bag_size == 0 {
        return Err(invalid("bag size must be positive"));
    }
    let sensitivity = 1.0 / bag_size as f64;
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Adds `N(0, tau^2)` to each exact proportion and clips to `[0, 1]`.
pub fn add_label_dp_noise(
    bs: &BagStructure,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> Result<NoisyBagLabels> {
    let tau = gaussian_noise_std(bs.bag_size, epsilon, delta)?;
    let normal = Normal::new(0.0, tau).map_err(|e| invalid(e.to_string()))?;
    let mut rng = rng::seeded(seed);
    let proportions = bs
        .proportions()
        .into_iter()
        .map(|p| (p + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Ok(NoisyBagLabels {
        proportions,
        epsilon,
        delta,
        tau_noise: tau,
    })
}

/// Writes `instance_index,bag_id` and `bag_id,count` files.
pub fn write_bag_files(
    bags: &[Vec<usize>],
    counts: &[f64],
    bags_path: impl AsRef<Path>,
    counts_path: impl AsRef<Path>,
) -> Result<()> {
    let path = bags_path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
    w.write_record(["instance_index", "bag_id"])?;
    for (b, members) in bags.iter().enumerate() {
        for &i in members {
            w.write_record([i.to_string(), b.to_string()])?;
        }
    }
    w.flush().map_err(|e| LlpError::io(path, e))?;

    let path = counts_path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
    w.write_record(["bag_id", "count"])?;
    for (b, c) in counts.iter().enumerate() {
        w.write_record([b.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| LlpError::io(path, e))?;
    Ok(())
}

/// Inverse of [`write_bag_files`]. Bag ids must be `0..n` with a count for each.
pub fn read_bag_files(
    bags_path: impl AsRef<Path>,
    counts_path: impl AsRef<Path>,
) -> Result<(Vec<Vec<usize>>, Vec<f64>)> {
    let path = bags_path.as_ref();
    let mut rdr = csv::Reader::from_reader(File::open(path).map_err(|e| LlpError::io(path, e))?);
    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, rec) in rdr.deserialize::<(usize, usize)>().enumerate() {
        let (i, b) = rec.map_err(|e| LlpError::Parse {
            row: r + 1,
            column: "instance_index,bag_id".into(),
            message: e.to_string(),
        })?;
        grouped.entry(b).or_default().push(i);
    }
    let path = counts_path.as_ref();
    let mut rdr = csv::Reader::from_reader(File::open(path).map_err(|e| LlpError::io(path, e))?);
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for (r, rec) in rdr.deserialize::<(usize, f64)>().enumerate() {
        let (b, c) = rec.map_err(|e| LlpError::Parse {
            row: r + 1,
            column: "bag_id,count".into(),
            message: e.to_string(),
        })?;
        counts.insert(b, c);
    }
    let n = grouped.len();
    if grouped.keys().copied().ne(0..n) || counts.keys().copied().ne(0..n) {
        return Err(invalid(
            "bag ids must be 0..n and match between bag and count files",
        ));
    }
    let bags: Vec<Vec<usize>> = grouped.into_values().collect();
    check_disjoint(&bags)?;
    Ok((bags, counts.into_values().collect()))
}
