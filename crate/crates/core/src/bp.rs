//! Belief propagation on [`IsingModel`]s.
//!
//! Variables are binary, so a normalised message `m(0), m(1)` is carried as
//! its log-ratio `l = log m(1) - log m(0)`; the two-entry log message is
//! recovered as `(-softplus(l), l - softplus(l))`. With cavity field
//! `c = h_j + sum_{k in N(j), k != i} l_{k->j}` the sum-product update is
//!
//! ```text
//! l_{j->i} = softplus(J_ij + c) - softplus(c)
//! ```
//!
//! and max-product replaces softplus by `max(0, .)`. Each node's own field
//! enters its belief once, `b_i = h_i + sum_j l_{j->i}`, so the fixed point
//! is exact on trees. Rounds are synchronous: all round-`t` messages are
//! computed from round `t-1`.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlpError, Result};
use crate::gibbs::IsingModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_rounds: usize,
    /// Weight of the previous message, in `[0, 1)`.
    pub damping: f64,
    /// Stop once the max change of any log message falls below this.
    /// Zero runs exactly `max_rounds` rounds.
    pub tolerance: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_rounds: 100,
            damping: 0.0,
            tolerance: 1e-8,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(invalid("BP needs at least one round"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid(format!(
                "damping must be in [0, 1), got {}",
                self.damping
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid(format!(
                "tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpDiagnostics {
    pub rounds_run: usize,
    pub max_message_delta: Vec<f64>,
    pub converged: bool,
}

/// `probs[i] = P(y_i = 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalVector {
    pub probs: Vec<f64>,
}

impl MarginalVector {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_with_ids(None, path)
    }

    /// `instance_index,p1`, with `ids[i]` as the instance index if given.
    pub fn write_csv_with_ids(&self, ids: Option<&[usize]>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w =
            csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
        w.write_record(["instance_index", "p1"])?;
        for (i, p) in self.probs.iter().enumerate() {
            let id = ids.map_or(i, |ids| ids[i]);
            w.write_record([id.to_string(), p.to_string()])?;
        }
        w.flush().map_err(|e| LlpError::io(path, e))?;
        Ok(())
    }
}

/// Adjacency over nonzero couplings in CSR form. Slot `s` in node `p`'s row
/// holds the message from `nbr[s]` to `p`; `rev[s]` is the slot of the
/// opposite message `p -> nbr[s]`.
///
/// Internally nodes are renumbered in breadth-first order so that tightly
/// connected groups (bags) occupy contiguous rows; `order[p]` is the model
/// variable stored at row `p`. Public methods take model variable indices.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    offsets: Vec<usize>,
    nbr: Vec<usize>,
    coupling: Vec<f64>,
    rev: Vec<usize>,
    field: Vec<f64>,
    order: Vec<usize>,
    position: Vec<usize>,
}

/// Breadth-first visiting order over a CSR adjacency, components started
/// from their lowest index.
fn bfs_order(offsets: &[usize], nbr: &[usize]) -> Vec<usize> {
    let m = offsets.len() - 1;
    let mut seen = vec![false; m];
    let mut order = Vec::with_capacity(m);
    for root in 0..m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut head = order.len();
        order.push(root);
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &v in &nbr[offsets[u]..offsets[u + 1]] {
                if !seen[v] {
                    seen[v] = true;
                    order.push(v);
                }
            }
        }
    }
    order
}

fn csr_offsets(deg: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(deg.len() + 1);
    offsets.push(0);
    for d in deg {
        offsets.push(offsets.last().unwrap() + d);
    }
    offsets
}

impl FactorGraph {
    pub fn new(model: &IsingModel) -> Self {
        let m = model.num_vars();
        let edges: Vec<_> = model
            .couplings()
            .iter()
            .filter(|c| c.value != 0.0)
            .collect();
        let mut deg = vec![0usize; m];
        for c in &edges {
            deg[c.i] += 1;
            deg[c.j] += 1;
        }
        let offsets = csr_offsets(&deg);

        let order = {
            let mut nbr = vec![0; *offsets.last().unwrap()];
            let mut fill = offsets[..m].to_vec();
            for c in &edges {
                nbr[fill[c.i]] = c.j;
                nbr[fill[c.j]] = c.i;
                fill[c.i] += 1;
                fill[c.j] += 1;
            }
            bfs_order(&offsets, &nbr)
        };
        let mut position = vec![0; m];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }

        let new_deg: Vec<usize> = order.iter().map(|&v| deg[v]).collect();
        let offsets = csr_offsets(&new_deg);
        let slots = *offsets.last().unwrap();
        let mut nbr = vec![0; slots];
        let mut coupling = vec![0.0; slots];
        let mut fill = offsets[..m].to_vec();
        for c in &edges {
            let (pi, pj) = (position[c.i], position[c.j]);
            nbr[fill[pi]] = pj;
            coupling[fill[pi]] = c.value;
            nbr[fill[pj]] = pi;
            coupling[fill[pj]] = c.value;
            fill[pi] += 1;
            fill[pj] += 1;
        }
        // neighbours in ascending row order; the reverse slot is then a
        // binary search away
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for p in 0..m {
            let r = offsets[p]..offsets[p + 1];
            scratch.clear();
            scratch.extend(
                nbr[r.clone()]
                    .iter()
                    .copied()
                    .zip(coupling[r.clone()].iter().copied()),
            );
            scratch.sort_unstable_by_key(|&(q, _)| q);
            for (k, (q, v)) in r.zip(&scratch) {
                nbr[k] = *q;
                coupling[k] = *v;
            }
        }
        let rev: Vec<usize> = (0..m)
            .into_par_iter()
            .flat_map_iter(|p| {
                let (offsets, nbr) = (&offsets, &nbr);
                (offsets[p]..offsets[p + 1]).map(move |s| {
                    let q = nbr[s];
                    let row = &nbr[offsets[q]..offsets[q + 1]];
                    offsets[q] + row.binary_search(&p).expect("adjacency is symmetric")
                })
            })
            .collect();
        let field = order.iter().map(|&v| model.node_potentials()[v]).collect();
        Self {
            offsets,
            nbr,
            coupling,
            rev,
            field,
            order,
            position,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.field.len()
    }

    /// Number of directed messages, `2|E|`.
    pub fn num_slots(&self) -> usize {
        self.nbr.len()
    }

    /// Number of nonzero couplings of model variable `i`.
    pub fn degree(&self, i: usize) -> usize {
        let p = self.position[i];
        self.offsets[p + 1] - self.offsets[p]
    }

    /// Values indexed by row, rearranged into model variable order.
    fn to_model_order<T: Copy + Default>(&self, by_row: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); by_row.len()];
        for (p, &v) in self.order.iter().enumerate() {
            out[v] = by_row[p];
        }
        out
    }

    fn slots(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    #[cfg(test)]
    fn node_of_slot(&self) -> Vec<usize> {
        let mut owner = vec![0; self.num_slots()];
        for i in 0..self.num_vars() {
            owner[self.slots(i)].iter_mut().for_each(|o| *o = i);
        }
        owner
    }
}

/// Message log-ratios, one per directed edge slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub log_ratio: Vec<f64>,
}

impl MessageState {
    /// `(log m(0), log m(1))`, normalised so the exponentials sum to one.
    pub fn log_message(&self, slot: usize) -> [f64; 2] {
        let l = self.log_ratio[slot];
        let sp = softplus(l);
        [-sp, l - sp]
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
enum Semiring {
    SumProduct,
    MaxProduct,
}

impl Semiring {
    #[inline]
    fn update(self, coupling: f64, cavity: f64) -> f64 {
        match self {
            Semiring::SumProduct => softplus(coupling + cavity) - softplus(cavity),
            Semiring::MaxProduct => (coupling + cavity).max(0.0) - cavity.max(0.0),
        }
    }
}

/// Largest change over both entries of the normalised log messages
/// `(-softplus(l), l - softplus(l))`, given the softplus values.
#[inline]
fn log_message_delta(old: f64, sp_old: f64, new: f64, sp_new: f64) -> f64 {
    let d0 = (sp_new - sp_old).abs();
    let d1 = ((new - sp_new) - (old - sp_old)).abs();
    d0.max(d1)
}

fn propagate(
    graph: &FactorGraph,
    cfg: &BpConfig,
    semiring: Semiring,
) -> (MessageState, BpDiagnostics) {
    let n = graph.num_slots();
    let mut prev = vec![0.0; n];
    let mut next = vec![0.0; n];
    // softplus of each message, kept alongside so the delta costs one
    // evaluation per slot instead of two
    let mut sp_prev = vec![std::f64::consts::LN_2; n];
    let mut sp_next = vec![0.0; n];
    let mut totals = vec![0.0; graph.num_vars()];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_rounds {
        totals.par_iter_mut().enumerate().for_each(|(j, t)| {
            *t = graph.field[j] + prev[graph.slots(j)].iter().sum::<f64>();
        });
        // slot s carries nbr[s] -> owner[s]; its sender's cavity excludes the
        // reverse message owner[s] -> nbr[s]
        let delta = next
            .par_iter_mut()
            .zip(sp_next.par_iter_mut())
            .enumerate()
            .map(|(s, (out, sp_out))| {
                let j = graph.nbr[s];
                let cavity = totals[j] - prev[graph.rev[s]];
                let fresh = semiring.update(graph.coupling[s], cavity);
                let damped = if cfg.damping > 0.0 {
                    (1.0 - cfg.damping) * fresh + cfg.damping * prev[s]
                } else {
                    fresh
                };
                *out = damped;
                *sp_out = softplus(damped);
                log_message_delta(prev[s], sp_prev[s], damped, *sp_out)
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut prev, &mut next);
        std::mem::swap(&mut sp_prev, &mut sp_next);
        trace.push(delta);
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
    }
    (
        MessageState { log_ratio: prev },
        BpDiagnostics {
            rounds_run: trace.len(),
            max_message_delta: trace,
            converged,
        },
    )
}

fn beliefs(graph: &FactorGraph, state: &MessageState) -> Vec<f64> {
    let by_row: Vec<f64> = (0..graph.num_vars())
        .map(|p| graph.field[p] + state.log_ratio[graph.slots(p)].iter().sum::<f64>())
        .collect();
    graph.to_model_order(&by_row)
}

/// Sum-product BP; returns `P(y_i = 1)` for every variable.
pub fn sum_product(model: &IsingModel, cfg: &BpConfig) -> Result<(MarginalVector, BpDiagnostics)> {
    cfg.validate()?;
    let graph = FactorGraph::new(model);
    let (state, diag) = propagate(&graph, cfg, Semiring::SumProduct);
    let probs = beliefs(&graph, &state).into_iter().map(sigmoid).collect();
    Ok((MarginalVector { probs }, diag))
}

/// Sum-product BP also returning the final message state.
pub fn sum_product_messages(
    model: &IsingModel,
    cfg: &BpConfig,
) -> Result<(FactorGraph, MessageState, BpDiagnostics)> {
    cfg.validate()?;
    let graph = FactorGraph::new(model);
    let (state, diag) = propagate(&graph, cfg, Semiring::SumProduct);
    Ok((graph, state, diag))
}

/// Max-product BP; per-node argmax of the max-marginal, ties to 0.
pub fn max_product(model: &IsingModel, cfg: &BpConfig) -> Result<(Vec<u8>, BpDiagnostics)> {
    cfg.validate()?;
    let graph = FactorGraph::new(model);
    let (state, diag) = propagate(&graph, cfg, Semiring::MaxProduct);
    let labels = beliefs(&graph, &state)
        .into_iter()
        .map(|b| u8::from(b > 0.0))
        .collect();
    Ok((labels, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub value: f64,
    pub holds: bool,
}

/// `max_i (|N(i)| - 1) max_{j in N(i)} tanh|J_ij|`, a sufficient condition
/// for BP to be a contraction when below one.
pub fn mooij_contraction_check(model: &IsingModel) -> ContractionCheck {
    let graph = FactorGraph::new(model);
    let value = (0..graph.num_vars())
        .map(|p| {
            let deg = graph.slots(p).len();
            if deg == 0 {
                return 0.0;
            }
            let strongest = graph.coupling[graph.slots(p)]
                .iter()
                .map(|j| j.abs().tanh())
                .fold(0.0, f64::max);
            (deg - 1) as f64 * strongest
        })
        .fold(0.0, f64::max);
    ContractionCheck {
        value,
        holds: value < 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearStability {
    pub spectral_norm: f64,
    /// `atanh(1 / ||H||)`, infinite when `||H|| <= 1`.
    #[serde(with = "crate::config::extended_float")]
    pub beta_threshold: f64,
    pub iterations: usize,
}

/// Oriented-edge operator of linearised BP on the 0/1 adjacency of nonzero
/// couplings. Row `i<-j` has a one in every column `j<-k`, `k in N(j) \ {i}`.
/// Applied implicitly; index `s` is the CSR slot of `i<-j`.
pub struct EdgeIncidence<'a> {
    graph: &'a FactorGraph,
}

impl<'a> EdgeIncidence<'a> {
    pub fn new(graph: &'a FactorGraph) -> Self {
        Self { graph }
    }

    pub fn dim(&self) -> usize {
        self.graph.num_slots()
    }

    /// `(Hx)_{i<-j} = sum_{k in N(j)} x_{j<-k} - x_{j<-i}`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = self.graph;
        let sums: Vec<f64> = (0..g.num_vars())
            .map(|j| x[g.slots(j)].iter().sum())
            .collect();
        out.par_iter_mut().enumerate().for_each(|(s, o)| {
            *o = sums[g.nbr[s]] - x[g.rev[s]];
        });
    }

    /// `(H^T y)_{j<-k} = sum_{i in N(j)} y_{i<-j} - y_{k<-j}`
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        let g = self.graph;
        // y_{i<-j} lives at slot rev[t] for t in j's row
        let mut rows = Vec::with_capacity(g.num_vars());
        let mut rest = out;
        for j in 0..g.num_vars() {
            let (row, tail) = rest.split_at_mut(g.slots(j).len());
            rows.push((j, row));
            rest = tail;
        }
        rows.into_par_iter().for_each(|(j, row)| {
            let slots = g.slots(j);
            let sum: f64 = slots.clone().map(|t| y[g.rev[t]]).sum();
            for (o, t) in row.iter_mut().zip(slots) {
                *o = sum - y[g.rev[t]];
            }
        });
    }
}

/// Spectral norm of the edge-incidence operator by power iteration on
/// `H^T H`, and the inverse-temperature threshold `atanh(1/||H||)`.
pub fn linearized_stability(model: &IsingModel, power_iters: usize) -> Result<LinearStability> {
    let graph = FactorGraph::new(model);
    if graph.num_slots() == 0 {
        return Err(invalid(
            "linearized stability needs at least one nonzero coupling",
        ));
    }
    if power_iters == 0 {
        return Err(invalid("power_iters must be >= 1"));
    }
    let op = EdgeIncidence::new(&graph);
    let n = op.dim();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut hv = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut sigma = 0.0;
    let mut iterations = 0;
    for it in 0..power_iters {
        iterations = it + 1;
        op.apply(&v, &mut hv);
        let norm_hv = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let prev = sigma;
        sigma = norm_hv;
        if norm_hv == 0.0 {
            break;
        }
        op.apply_transpose(&hv, &mut w);
        let norm_w = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_w == 0.0 {
            break;
        }
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / norm_w);
        if it > 0 && (sigma - prev).abs() <= 1e-12 * sigma.max(1.0) {
            break;
        }
    }
    let beta_threshold = if sigma <= 1.0 {
        f64::INFINITY
    } else {
        (1.0 / sigma).atanh()
    };
    Ok(LinearStability {
        spectral_norm: sigma,
        beta_threshold,
        iterations,
    })
}
