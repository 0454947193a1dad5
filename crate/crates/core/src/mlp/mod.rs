//! Dense network with an instance head and a pooled bag head.
//!
//! The trunk maps `a_0 = x` through `L` affine layers, ReLU on hidden layers
//! and a sigmoid on the scalar output `f_L(x)`. The bag head pools the trunk
//! activation at `pool_layer` (default `L-2`) over the members of a bag and
//! applies `sigmoid(V2 relu(V1 pooled + b1) + b2)`.
//!
//! All parameters live in one flat vector so the optimiser and the
//! finite-difference checks can treat them uniformly.

mod loss;
mod train;

use std::fs::File;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::sigmoid;
use crate::data::FeatureMatrix;
use crate::error::{invalid, LlpError, Result};
use crate::rng;

pub use loss::{
    aggregate_loss, aggregate_loss_grad, bag_loss_and_grad, cross_entropy, cross_entropy_logit,
    dllp_loss, dllp_loss_grad, BagExample, Objective, PROB_CLAMP,
};
pub use train::{
    train, Adam, EarlyStopping, EpochRecord, StopDecision, TrainConfig, TrainLog, TrainingBag,
    ValidationSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = LlpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            "max" => Ok(Pooling::Max),
            other => Err(invalid(format!("unknown pooling '{other}'"))),
        }
    }
}

/// Offsets of one affine layer inside the flat parameter vector; the weight
/// block is `n_out x n_in`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Affine {
    w: usize,
    b: usize,
    n_out: usize,
    n_in: usize,
}

impl Affine {
    fn forward(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.w..self.w + self.n_out * self.n_in];
        let b = &params[self.b..self.b + self.n_out];
        for (row, bias) in w.chunks_exact(self.n_in).zip(b) {
            out.push(bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>());
        }
    }

    /// Accumulates parameter gradients for upstream `delta`; writes the
    /// input gradient into `d_input` when given.
    fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        delta: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut Vec<f64>>,
    ) {
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let gw = &mut grad[self.w + o * self.n_in..self.w + (o + 1) * self.n_in];
            gw.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
            grad[self.b + o] += d;
        }
        if let Some(d_in) = d_input {
            d_in.clear();
            d_in.resize(self.n_in, 0.0);
            let w = &params[self.w..self.w + self.n_out * self.n_in];
            for (row, &d) in w.chunks_exact(self.n_in).zip(delta) {
                if d == 0.0 {
                    continue;
                }
                d_in.iter_mut().zip(row).for_each(|(g, a)| *g += d * a);
            }
        }
    }
}

/// Serialised form: dimensions plus the flat row-major parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub pool_hidden: usize,
    pub embedding_layer: usize,
    pub pool_layer: usize,
    pub pooling: Pooling,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    pool_hidden: usize,
    embedding_layer: usize,
    pool_layer: usize,
    pub pooling: Pooling,
    params: Vec<f64>,
    trunk: Vec<Affine>,
    head: [Affine; 2],
}

/// Per-instance forward record: `acts[l]` is `a_l` for `l < L`.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
    pub logit: f64,
    pub score: f64,
}

/// Bag-head forward record.
#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
    pub score: f64,
}

fn layout(
    layer_dims: &[usize],
    pool_dim: usize,
    pool_hidden: usize,
) -> (Vec<Affine>, [Affine; 2], usize) {
    let mut off = 0;
    let mut make = |n_in: usize, n_out: usize| {
        let a = Affine {
            w: off,
            b: off + n_in * n_out,
            n_out,
            n_in,
        };
        off += n_in * n_out + n_out;
        a
    };
    let trunk: Vec<Affine> = layer_dims.windows(2).map(|w| make(w[0], w[1])).collect();
    let head = [make(pool_dim, pool_hidden), make(pool_hidden, 1)];
    (trunk, head, off)
}

impl MlpModel {
    /// `layer_dims = [d, d_1, ..., d_{L-1}, 1]`. The embedding and pooling
    /// taps default to the output of hidden layer `L-2` (the input when the
    /// network is shallower). He-uniform weights, zero biases.
    pub fn new(layer_dims: &[usize], pool_hidden: usize, seed: u64) -> Result<Self> {
        let n_layers = layer_dims.len().saturating_sub(1);
        let tap = n_layers.saturating_sub(2);
        Self::with_taps(layer_dims, pool_hidden, tap, tap, seed)
    }

    pub fn with_taps(
        layer_dims: &[usize],
        pool_hidden: usize,
        embedding_layer: usize,
        pool_layer: usize,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(invalid("need at least input and output dimensions"));
        }
        if layer_dims.contains(&0) || pool_hidden == 0 {
            return Err(invalid("layer widths must be positive"));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(invalid("output layer must have width 1"));
        }
        let n_layers = layer_dims.len() - 1;
        if embedding_layer >= n_layers || pool_layer >= n_layers {
            return Err(invalid(format!(
                "taps must index a_0..a_{}, got embedding {embedding_layer}, pool {pool_layer}",
                n_layers - 1
            )));
        }
        let (trunk, head, n_params) = layout(layer_dims, layer_dims[pool_layer], pool_hidden);
        let mut params = vec![0.0; n_params];
        let mut rng = rng::seeded(seed);
        for a in trunk.iter().chain(head.iter()) {
            let bound = (6.0 / a.n_in as f64).sqrt();
            for w in &mut params[a.w..a.w + a.n_in * a.n_out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            pool_hidden,
            embedding_layer,
            pool_layer,
            pooling: Pooling::Mean,
            params,
            trunk,
            head,
        })
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        let mut model = Self::with_taps(
            &c.layer_dims,
            c.pool_hidden,
            c.embedding_layer,
            c.pool_layer,
            0,
        )?;
        if c.params.len() != model.params.len() {
            return Err(LlpError::DimensionMismatch {
                expected: model.params.len(),
                got: c.params.len(),
            });
        }
        model.params = c.params;
        model.pooling = c.pooling;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layer_dims: self.layer_dims.clone(),
            pool_hidden: self.pool_hidden,
            embedding_layer: self.embedding_layer,
            pool_layer: self.pool_layer,
            pooling: self.pooling,
            params: self.params.clone(),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| LlpError::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), &self.checkpoint())?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| LlpError::io(path, e))?;
        Self::from_checkpoint(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.trunk.len()
    }

    pub fn embedding_layer(&self) -> usize {
        self.embedding_layer
    }

    pub fn embedding_dim(&self) -> usize {
        self.layer_dims[self.embedding_layer]
    }

    pub fn pool_layer(&self) -> usize {
        self.pool_layer
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter range of the instance trunk (everything but the bag head).
    pub fn trunk_param_count(&self) -> usize {
        self.head[0].w
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(LlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.trunk.len());
        acts.push(x.to_vec());
        let mut z = Vec::new();
        for (l, layer) in self.trunk.iter().enumerate() {
            layer.forward(&self.params, acts.last().unwrap(), &mut z);
            if l + 1 < self.trunk.len() {
                acts.push(z.iter().map(|v| v.max(0.0)).collect());
            }
        }
        Trace {
            acts,
            logit: z[0],
            score: sigmoid(z[0]),
        }
    }

    /// `(f_L(x), embedding at the tap layer)`.
    pub fn forward_instance(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let mut t = self.trace(x);
        Ok((t.score, std::mem::take(&mut t.acts[self.embedding_layer])))
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x).score)
    }

    pub fn score_rows(&self, features: &FeatureMatrix, rows: &[usize]) -> Result<Vec<f64>> {
        if features.cols() != self.input_dim() {
            return Err(LlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.cols(),
            });
        }
        Ok(rows
            .par_iter()
            .map(|&i| self.trace(features.row(i)).score)
            .collect())
    }

    /// Embeds every row of `features` at the tap layer.
    pub fn embed_all(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.cols() != self.input_dim() {
            return Err(LlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.cols(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..features.rows())
            .into_par_iter()
            .map(|i| {
                let mut t = self.trace(features.row(i));
                std::mem::take(&mut t.acts[self.embedding_layer])
            })
            .collect();
        FeatureMatrix::new(
            features.rows(),
            self.embedding_dim(),
            rows.into_iter().flatten().collect(),
        )
    }

    pub(crate) fn pool(&self, members: &[&[f64]]) -> Vec<f64> {
        let dim = members[0].len();
        match self.pooling {
            Pooling::Mean | Pooling::Sum => {
                let mut acc = vec![0.0; dim];
                for v in members {
                    acc.iter_mut().zip(*v).for_each(|(a, x)| *a += x);
                }
                if self.pooling == Pooling::Mean {
                    let n = members.len() as f64;
                    acc.iter_mut().for_each(|a| *a /= n);
                }
                acc
            }
            Pooling::Max => (0..dim)
                .map(|k| {
                    members
                        .iter()
                        .map(|v| v[k])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect(),
        }
    }

    pub(crate) fn head_forward(&self, pooled: Vec<f64>) -> HeadTrace {
        let mut z1 = Vec::new();
        self.head[0].forward(&self.params, &pooled, &mut z1);
        let hidden: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let mut z2 = Vec::new();
        self.head[1].forward(&self.params, &hidden, &mut z2);
        HeadTrace {
            pooled,
            hidden,
            logit: z2[0],
            score: sigmoid(z2[0]),
        }
    }

    /// Bag-head output `g_L(S)` for the given member inputs.
    pub fn forward_bag(&self, bag_inputs: &[&[f64]]) -> Result<f64> {
        if bag_inputs.is_empty() {
            return Err(invalid("empty bag"));
        }
        let mut taps = Vec::with_capacity(bag_inputs.len());
        for x in bag_inputs {
            self.check_input(x)?;
            let mut t = self.trace(x);
            taps.push(std::mem::take(&mut t.acts[self.pool_layer]));
        }
        let refs: Vec<&[f64]> = taps.iter().map(Vec::as_slice).collect();
        Ok(self.head_forward(self.pool(&refs)).score)
    }

    /// Backpropagates an output-logit gradient through the trunk. `extra`
    /// is added to the gradient arriving at the pooling tap activation.
    pub(crate) fn backward_trunk(
        &self,
        trace: &Trace,
        d_logit: f64,
        extra: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let mut delta = vec![d_logit];
        let mut d_in = Vec::new();
        for l in (0..self.trunk.len()).rev() {
            let input = &trace.acts[l];
            let need_input_grad = l > 0;
            self.trunk[l].backward(
                &self.params,
                input,
                &delta,
                grad,
                need_input_grad.then_some(&mut d_in),
            );
            if !need_input_grad {
                break;
            }
            if l == self.pool_layer {
                if let Some(e) = extra {
                    d_in.iter_mut().zip(e).for_each(|(g, x)| *g += x);
                }
            }
            // relu'(z) via the stored post-activation
            for (g, a) in d_in.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut d_in);
        }
    }

    /// Backpropagates a bag-logit gradient through the head; returns the
    /// gradient with respect to the pooled vector.
    pub(crate) fn backward_head(&self, ht: &HeadTrace, d_logit: f64, grad: &mut [f64]) -> Vec<f64> {
        let mut d_hidden = Vec::new();
        self.head[1].backward(
            &self.params,
            &ht.hidden,
            &[d_logit],
            grad,
            Some(&mut d_hidden),
        );
        for (g, a) in d_hidden.iter_mut().zip(&ht.hidden) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d_pooled = Vec::new();
        self.head[0].backward(
            &self.params,
            &ht.pooled,
            &d_hidden,
            grad,
            Some(&mut d_pooled),
        );
        d_pooled
    }
}
