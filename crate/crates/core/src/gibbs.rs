//! Ising model assembly from bag-count penalties and kNN similarity penalties.
//!
//! The constraint energy over labels `y in {0,1}^m` is
//!
//! ```text
//! E1(y) = -lb * sum_S (sum_{j in S} y_j - c_S)^2
//!         -ls * sum_i sum_{j in N(i)} k(x_i, x_j) (y_i - y_j)^2
//! ```
//!
//! Expanding with `y^2 = y` gives the Ising form
//! `E2(y) = sum_i h_i y_i + sum_{i<j} J_ij y_i y_j` up to a constant, with
//!
//! ```text
//! h_i  = lb (2 c_S - 1) - ls * sum_j k_ij (1[j in N(i)] + 1[i in N(j)])
//! J_ij = 2 ls k_ij (1[j in N(i)] + 1[i in N(j)]) - 2 lb 1[i, j share a bag]
//! ```
//!
//! The kNN term of `h_i` collects both directions of every edge touching `i`.
//! [`NodeField::OutNeighbors`] keeps only the out-neighbour sum, which matches
//! the exact expansion only when the graph is symmetric.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bagging::check_disjoint;
use crate::error::{invalid, LlpError, Result};
use crate::knn::{KernelSpec, NeighborGraph};

/// One pairwise coupling, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Pairwise binary model `P(y) ∝ exp(sum h_i y_i + sum_{i<j} J_ij y_i y_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    node_potentials: Vec<f64>,
    couplings: Vec<Coupling>,
    /// `(lambda_b, lambda_s)` when built from constraints; `None` for
    /// hand-built models.
    pub weights: Option<(f64, f64)>,
}

impl IsingModel {
    /// Builds a model from explicit potentials. Pairs may be given in either
    /// orientation but each unordered pair at most once.
    pub fn new(node_potentials: Vec<f64>, pairs: Vec<(usize, usize, f64)>) -> Result<Self> {
        let m = node_potentials.len();
        if let Some(i) = node_potentials.iter().position(|h| !h.is_finite()) {
            return Err(invalid(format!("non-finite node potential at {i}")));
        }
        let mut couplings = Vec::with_capacity(pairs.len());
        for (a, b, value) in pairs {
            if a == b {
                return Err(invalid(format!("self coupling at {a}")));
            }
            if a >= m || b >= m {
                return Err(invalid(format!("coupling ({a}, {b}) out of range {m}")));
            }
            if !value.is_finite() {
                return Err(invalid(format!("non-finite coupling ({a}, {b})")));
            }
            couplings.push(Coupling {
                i: a.min(b),
                j: a.max(b),
                value,
            });
        }
        couplings.sort_by_key(|c| (c.i, c.j));
        if let Some(w) = couplings
            .windows(2)
            .find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j))
        {
            return Err(invalid(format!(
                "duplicate coupling ({}, {})",
                w[0].i, w[0].j
            )));
        }
        Ok(Self {
            node_potentials,
            couplings,
            weights: None,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.node_potentials.len()
    }

    pub fn node_potentials(&self) -> &[f64] {
        &self.node_potentials
    }

    /// Sorted by `(i, j)`.
    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn coupling(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.couplings
            .binary_search_by_key(&key, |c| (c.i, c.j))
            .ok()
            .map(|p| self.couplings[p].value)
    }

    /// `sum h_i y_i + sum_{i<j} J_ij y_i y_j`, the log of the unnormalised
    /// probability of `y`.
    pub fn energy(&self, y: &[u8]) -> Result<f64> {
        if y.len() != self.num_vars() {
            return Err(LlpError::DimensionMismatch {
                expected: self.num_vars(),
                got: y.len(),
            });
        }
        let node: f64 = self
            .node_potentials
            .iter()
            .zip(y)
            .filter(|(_, &v)| v != 0)
            .map(|(h, _)| h)
            .sum();
        let pair: f64 = self
            .couplings
            .iter()
            .filter(|c| y[c.i] != 0 && y[c.j] != 0)
            .map(|c| c.value)
            .sum();
        Ok(node + pair)
    }

    pub fn write_csv(
        &self,
        nodes_path: impl AsRef<Path>,
        pairs_path: impl AsRef<Path>,
    ) -> Result<()> {
        let path = nodes_path.as_ref();
        let mut w =
            csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
        w.write_record(["index", "h"])?;
        for (i, h) in self.node_potentials.iter().enumerate() {
            w.write_record([i.to_string(), h.to_string()])?;
        }
        w.flush().map_err(|e| LlpError::io(path, e))?;

        let path = pairs_path.as_ref();
        let mut w =
            csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
        w.write_record(["i", "j", "J"])?;
        for c in &self.couplings {
            w.write_record([c.i.to_string(), c.j.to_string(), c.value.to_string()])?;
        }
        w.flush().map_err(|e| LlpError::io(path, e))?;
        Ok(())
    }

    /// Reads the `index,h` / `i,j,J` pair written by [`IsingModel::write_csv`].
    pub fn read_csv(nodes_path: impl AsRef<Path>, pairs_path: impl AsRef<Path>) -> Result<Self> {
        let path = nodes_path.as_ref();
        let mut rdr =
            csv::Reader::from_reader(File::open(path).map_err(|e| LlpError::io(path, e))?);
        let mut nodes: Vec<(usize, f64)> = Vec::new();
        for (r, rec) in rdr.deserialize::<(usize, f64)>().enumerate() {
            nodes.push(rec.map_err(|e| LlpError::Parse {
                row: r + 1,
                column: "index,h".into(),
                message: e.to_string(),
            })?);
        }
        nodes.sort_by_key(|n| n.0);
        if nodes.iter().map(|n| n.0).ne(0..nodes.len()) {
            return Err(invalid("node indices must be exactly 0..m"));
        }
        let path = pairs_path.as_ref();
        let mut rdr =
            csv::Reader::from_reader(File::open(path).map_err(|e| LlpError::io(path, e))?);
        let mut pairs = Vec::new();
        for (r, rec) in rdr.deserialize::<(usize, usize, f64)>().enumerate() {
            pairs.push(rec.map_err(|e| LlpError::Parse {
                row: r + 1,
                column: "i,j,J".into(),
                message: e.to_string(),
            })?);
        }
        Self::new(nodes.into_iter().map(|n| n.1).collect(), pairs)
    }
}

/// Which kNN terms enter the node field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeField {
    /// Both directions of each kNN edge touching the node; exact expansion.
    #[default]
    Symmetric,
    /// Only the node's own out-neighbour list.
    OutNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsParams {
    pub lambda_b: f64,
    pub lambda_s: f64,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub node_field: NodeField,
}

impl GibbsParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda_b >= 0.0 && self.lambda_b.is_finite()) {
            return Err(invalid(format!(
                "lambda_b must be >= 0, got {}",
                self.lambda_b
            )));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(invalid(format!(
                "lambda_s must be >= 0, got {}",
                self.lambda_s
            )));
        }
        self.kernel.validate()
    }
}

fn check_bags(m: usize, bags: &[Vec<usize>], counts: &[f64]) -> Result<()> {
    if bags.len() != counts.len() {
        return Err(LlpError::DimensionMismatch {
            expected: bags.len(),
            got: counts.len(),
        });
    }
    if let Some(&i) = bags.iter().flatten().find(|&&i| i >= m) {
        return Err(invalid(format!("bag member {i} out of range {m}")));
    }
    check_disjoint(bags)
}

/// Node and pairwise potentials over the graph's nodes. Bag members index
/// graph rows; `counts[s]` is the (possibly real-valued) positive count of
/// bag `s`. Unbagged nodes keep only their kNN terms.
pub fn build_ising(
    graph: &NeighborGraph,
    bags: &[Vec<usize>],
    counts: &[f64],
    params: &GibbsParams,
) -> Result<IsingModel> {
    params.validate()?;
    let m = graph.num_nodes();
    check_bags(m, bags, counts)?;
    let (lb, ls) = (params.lambda_b, params.lambda_s);

    let mut h = vec![0.0; m];
    for (bag, &c) in bags.iter().zip(counts) {
        for &i in bag {
            h[i] += lb * (2.0 * c - 1.0);
        }
    }

    let mut pair: HashMap<(usize, usize), f64> = HashMap::new();
    if ls > 0.0 {
        for (i, j, d) in graph.edges() {
            let kv = params.kernel.eval(d);
            h[i] -= ls * kv;
            if params.node_field == NodeField::Symmetric {
                h[j] -= ls * kv;
            }
            *pair.entry((i.min(j), i.max(j))).or_insert(0.0) += 2.0 * ls * kv;
        }
    } else {
        // the pairs still exist structurally, with zero weight
        for (i, j, _) in graph.edges() {
            pair.entry((i.min(j), i.max(j))).or_insert(0.0);
        }
    }
    for bag in bags {
        for (a, &i) in bag.iter().enumerate() {
            for &j in &bag[a + 1..] {
                *pair.entry((i.min(j), i.max(j))).or_insert(0.0) -= 2.0 * lb;
            }
        }
    }

    let mut couplings: Vec<Coupling> = pair
        .into_iter()
        .map(|((i, j), value)| Coupling { i, j, value })
        .collect();
    couplings.sort_by_key(|c| (c.i, c.j));
    Ok(IsingModel {
        node_potentials: h,
        couplings,
        weights: Some((lb, ls)),
    })
}

/// The constraint energy before expansion (see module docs). For any two
/// label vectors it differs from [`IsingModel::energy`] of the
/// [`NodeField::Symmetric`] model by the same constant.
pub fn constraint_energy(
    graph: &NeighborGraph,
    bags: &[Vec<usize>],
    counts: &[f64],
    params: &GibbsParams,
    y: &[u8],
) -> Result<f64> {
    let m = graph.num_nodes();
    if y.len() != m {
        return Err(LlpError::DimensionMismatch {
            expected: m,
            got: y.len(),
        });
    }
    check_bags(m, bags, counts)?;
    let bag_term: f64 = bags
        .iter()
        .zip(counts)
        .map(|(bag, &c)| {
            let s: f64 = bag.iter().map(|&i| f64::from(y[i])).sum();
            (s - c) * (s - c)
        })
        .sum();
    let knn_term: f64 = graph
        .edges()
        .map(|(i, j, d)| {
            let diff = f64::from(y[i]) - f64::from(y[j]);
            params.kernel.eval(d) * diff * diff
        })
        .sum();
    Ok(-params.lambda_b * bag_term - params.lambda_s * knn_term)
}

/// Distinct unordered pairs the builder stores:
/// merged kNN pairs + within-bag pairs - pairs counted in both.
pub fn expected_pair_count(graph: &NeighborGraph, bags: &[Vec<usize>]) -> usize {
    let mut bag_of = vec![usize::MAX; graph.num_nodes()];
    for (b, bag) in bags.iter().enumerate() {
        for &i in bag {
            bag_of[i] = b;
        }
    }
    let knn_pairs: std::collections::HashSet<(usize, usize)> = graph
        .edges()
        .map(|(i, j, _)| (i.min(j), i.max(j)))
        .collect();
    let both = knn_pairs
        .iter()
        .filter(|&&(i, j)| bag_of[i] != usize::MAX && bag_of[i] == bag_of[j])
        .count();
    let bag_pairs: usize = bags
        .iter()
        .map(|b| b.len() * (b.len().saturating_sub(1)) / 2)
        .sum();
    knn_pairs.len() + bag_pairs - both
}
