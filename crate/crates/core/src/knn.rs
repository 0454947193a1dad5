//! Distances, similarity kernels, and the exact thresholded kNN graph.

use std::fs::File;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{invalid, LlpError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = LlpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(invalid(format!("unknown metric '{other}'"))),
        }
    }
}

/// Four independent partial sums; a single serial chain is latency-bound
/// and dominates brute-force search time.
#[inline]
fn reduce4(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| f(x, y))
        .sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f(x[l], y[l]);
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    reduce4(a, b, |x, y| x * y)
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    reduce4(a, b, |x, y| (x - y) * (x - y))
}

/// `1 - a.b / (|a| |b|)` for cosine, clamped to `[0, 2]`; plain L2 otherwise.
pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LlpError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(sq_euclidean(a, b).sqrt()),
        Metric::Cosine => {
            let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
            if na == 0.0 {
                return Err(LlpError::ZeroVector(0));
            }
            if nb == 0.0 {
                return Err(LlpError::ZeroVector(1));
            }
            Ok(cosine_from_parts(dot(a, b), na, nb))
        }
    }
}

#[inline]
fn cosine_from_parts(ab: f64, na: f64, nb: f64) -> f64 {
    (1.0 - ab / (na * nb)).clamp(0.0, 2.0)
}

/// Matérn smoothness restricted to the half-integer closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf { gamma: f64 },
    Matern { nu: MaternNu, length_scale: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Matern {
            nu: MaternNu::ThreeHalves,
            length_scale: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(invalid(format!("RBF gamma must be > 0, got {gamma}")))
            }
            KernelSpec::Matern { length_scale, .. }
                if !(length_scale > 0.0 && length_scale.is_finite()) =>
            {
                Err(invalid(format!(
                    "Matern length scale must be > 0, got {length_scale}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value at distance `dist`; equals 1 at 0 and is non-increasing.
    pub fn eval(&self, dist: f64) -> f64 {
        let d = dist.max(0.0);
        match *self {
            KernelSpec::Rbf { gamma } => (-gamma * d * d).exp(),
            KernelSpec::Matern { nu, length_scale } => {
                let r = d / length_scale;
                match nu {
                    MaternNu::Half => (-r).exp(),
                    MaternNu::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternNu::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
                    }
                }
            }
        }
    }
}

/// Directed kNN lists: `neighbors[i]` holds at most `k` other indices within
/// `delta_d` of `i`, nearest first, ties broken by lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
    pub k: usize,
    pub delta_d: f64,
}

impl NeighborGraph {
    pub fn empty(m: usize, k: usize, delta_d: f64) -> Self {
        Self {
            neighbors: vec![Vec::new(); m],
            distances: vec![Vec::new(); m],
            k,
            delta_d,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// `(src, dst, distance)` for every directed entry.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors
            .iter()
            .zip(&self.distances)
            .enumerate()
            .flat_map(|(i, (ns, ds))| ns.iter().zip(ds).map(move |(&j, &d)| (i, j, d)))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    pub fn write_csv(&self, kernel: &KernelSpec, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w =
            csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
        w.write_record(["src_index", "dst_index", "distance", "kernel_value"])?;
        for (i, j, d) in self.edges() {
            w.write_record([
                i.to_string(),
                j.to_string(),
                d.to_string(),
                kernel.eval(d).to_string(),
            ])?;
        }
        w.flush().map_err(|e| LlpError::io(path, e))?;
        Ok(())
    }
}

/// Exact brute-force kNN graph, parallel over query points.
pub fn build_graph(
    features: &FeatureMatrix,
    k: usize,
    delta_d: f64,
    metric: Metric,
) -> Result<NeighborGraph> {
    build_graph_impl(features, k, delta_d, metric, false)
}

/// As [`build_graph`], but under the cosine metric all-zero rows are left
/// isolated instead of rejected. Post-ReLU embeddings can contain such rows.
pub fn build_graph_isolating_zero_rows(
    features: &FeatureMatrix,
    k: usize,
    delta_d: f64,
    metric: Metric,
) -> Result<NeighborGraph> {
    build_graph_impl(features, k, delta_d, metric, true)
}

fn build_graph_impl(
    features: &FeatureMatrix,
    k: usize,
    delta_d: f64,
    metric: Metric,
    isolate_zero_rows: bool,
) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if !(delta_d > 0.0) {
        return Err(invalid(format!("delta_d must be > 0, got {delta_d}")));
    }
    let m = features.rows();
    let norms: Vec<f64> = match metric {
        Metric::Cosine => {
            let norms: Vec<f64> = features.iter_rows().map(|r| dot(r, r).sqrt()).collect();
            if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                if !isolate_zero_rows {
                    return Err(LlpError::ZeroVector(i));
                }
            }
            norms
        }
        Metric::Euclidean => Vec::new(),
    };

    let lists: Vec<(Vec<usize>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            if metric == Metric::Cosine && norms[i] == 0.0 {
                return (Vec::new(), Vec::new());
            }
            // best k so far, ascending by (distance, index); j only grows, so an
            // equal distance never displaces an earlier index
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for j in 0..m {
                if j == i {
                    continue;
                }
                let xj = features.row(j);
                let d = match metric {
                    Metric::Euclidean => sq_euclidean(xi, xj).sqrt(),
                    Metric::Cosine if norms[j] == 0.0 => continue,
                    Metric::Cosine => cosine_from_parts(dot(xi, xj), norms[i], norms[j]),
                };
                if d > delta_d || (best.len() == k && d >= best[k - 1].0) {
                    continue;
                }
                let at = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(at, (d, j));
                best.truncate(k);
            }
            best.into_iter().map(|(d, j)| (j, d)).unzip()
        })
        .collect();

    let (neighbors, distances) = lists.into_iter().unzip();
    Ok(NeighborGraph {
        neighbors,
        distances,
        k,
        delta_d,
    })
}

/// Keeps each directed entry independently with probability `fraction`.
pub fn subsample_constraints(g: &NeighborGraph, fraction: f64, seed: u64) -> Result<NeighborGraph> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid(format!(
            "fraction must be in [0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(g.clone());
    }
    let mut rng = rng::seeded(seed);
    let mut out = NeighborGraph::empty(g.num_nodes(), g.k, g.delta_d);
    for (i, (ns, ds)) in g.neighbors.iter().zip(&g.distances).enumerate() {
        for (&j, &d) in ns.iter().zip(ds) {
            if rng.gen::<f64>() < fraction {
                out.neighbors[i].push(j);
                out.distances[i].push(d);
            }
        }
    }
    Ok(out)
}
