//! Bag-level objectives and their gradients.

use serde::{Deserialize, Serialize};

use super::{MlpModel, Pooling};
use crate::bp::softplus;
use crate::error::{invalid, LlpError, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of prediction `p` against a target in `[0, 1]`.
pub fn cross_entropy(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Binary cross-entropy of `sigmoid(logit)` against a target in `[0, 1]`,
/// evaluated as `softplus(z) - target * z`. Unlike going through the
/// probability, this keeps full precision when the sigmoid saturates, and
/// its derivative in `z` is exactly `sigmoid(z) - target`.
pub fn cross_entropy_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Instance CE on targets plus `lambda_a` times the bag-head CE against
    /// the bag proportion.
    Aggregate { lambda_a: f64 },
    /// CE between the mean instance score and the bag proportion.
    Dllp,
    /// Instance CE only; the bag head is never evaluated.
    Instance,
}

/// One bag as seen by a loss: member inputs, per-member targets and
/// weights, and the bag's positive proportion.
#[derive(Debug, Clone)]
pub struct BagExample<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub targets: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub proportion: f64,
}

impl BagExample<'_> {
    fn check(&self, model: &MlpModel) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(invalid("empty bag"));
        }
        if self.targets.len() != self.inputs.len() {
            return Err(LlpError::DimensionMismatch {
                expected: self.inputs.len(),
                got: self.targets.len(),
            });
        }
        if let Some(w) = self.weights {
            if w.len() != self.inputs.len() {
                return Err(LlpError::DimensionMismatch {
                    expected: self.inputs.len(),
                    got: w.len(),
                });
            }
        }
        if let Some(x) = self.inputs.iter().find(|x| x.len() != model.input_dim()) {
            return Err(LlpError::DimensionMismatch {
                expected: model.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Loss of one bag; adds its parameter gradient into `grad` when given.
pub fn bag_loss_and_grad(
    model: &MlpModel,
    bag: &BagExample<'_>,
    objective: Objective,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    bag.check(model)?;
    let traces: Vec<_> = bag.inputs.iter().map(|x| model.trace(x)).collect();
    let n = traces.len() as f64;

    match objective {
        Objective::Instance | Objective::Aggregate { .. } => {
            let weight = |i: usize| bag.weights.map_or(1.0, |w| w[i]);
            let mut loss: f64 = traces
                .iter()
                .enumerate()
                .map(|(i, t)| weight(i) * cross_entropy_logit(t.logit, bag.targets[i]))
                .sum();

            let lambda_a = match objective {
                Objective::Aggregate { lambda_a } if lambda_a != 0.0 => lambda_a,
                _ => 0.0,
            };
            // gradient reaching each member's pooling tap from the bag head
            let mut tap_grads: Option<Vec<Vec<f64>>> = None;
            if lambda_a != 0.0 {
                let taps: Vec<&[f64]> = traces
                    .iter()
                    .map(|t| t.acts[model.pool_layer()].as_slice())
                    .collect();
                let ht = model.head_forward(model.pool(&taps));
                loss += lambda_a * cross_entropy_logit(ht.logit, bag.proportion);
                if let Some(g) = grad.as_deref_mut() {
                    let d_pooled =
                        model.backward_head(&ht, lambda_a * (ht.score - bag.proportion), g);
                    tap_grads = Some(distribute(model.pooling, &taps, &ht.pooled, &d_pooled, n));
                }
            }
            if let Some(g) = grad {
                for (i, t) in traces.iter().enumerate() {
                    let d_logit = weight(i) * (t.score - bag.targets[i]);
                    let extra = tap_grads.as_ref().map(|tg| tg[i].as_slice());
                    model.backward_trunk(t, d_logit, extra, g);
                }
            }
            Ok(loss)
        }
        Objective::Dllp => {
            let mean = traces.iter().map(|t| t.score).sum::<f64>() / n;
            let loss = cross_entropy(mean, bag.proportion);
            if let Some(g) = grad {
                let pm = mean.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let d_mean = (pm - bag.proportion) / (pm * (1.0 - pm));
                for t in &traces {
                    let d_logit = d_mean * t.score * (1.0 - t.score) / n;
                    model.backward_trunk(t, d_logit, None, g);
                }
            }
            Ok(loss)
        }
    }
}

/// Splits the pooled-vector gradient back onto the members' tap activations.
fn distribute(
    pooling: Pooling,
    taps: &[&[f64]],
    pooled: &[f64],
    d_pooled: &[f64],
    n: f64,
) -> Vec<Vec<f64>> {
    match pooling {
        Pooling::Mean => vec![d_pooled.iter().map(|g| g / n).collect(); taps.len()],
        Pooling::Sum => vec![d_pooled.to_vec(); taps.len()],
        Pooling::Max => {
            let mut out = vec![vec![0.0; d_pooled.len()]; taps.len()];
            for (k, (&g, &mx)) in d_pooled.iter().zip(pooled).enumerate() {
                // first member attaining the max takes the gradient
                if let Some(i) = taps.iter().position(|t| t[k] == mx) {
                    out[i][k] = g;
                }
            }
            out
        }
    }
}

/// `sum_i CE(f_L(x_i), y_i) + lambda_a * CE(g_L(S), y(S)/|S|)`.
pub fn aggregate_loss(
    model: &MlpModel,
    inputs: &[&[f64]],
    labels: &[f64],
    proportion: f64,
    lambda_a: f64,
) -> Result<f64> {
    let bag = BagExample {
        inputs: inputs.to_vec(),
        targets: labels,
        weights: None,
        proportion,
    };
    bag_loss_and_grad(model, &bag, Objective::Aggregate { lambda_a }, None)
}

pub fn aggregate_loss_grad(
    model: &MlpModel,
    inputs: &[&[f64]],
    labels: &[f64],
    proportion: f64,
    lambda_a: f64,
) -> Result<(f64, Vec<f64>)> {
    let bag = BagExample {
        inputs: inputs.to_vec(),
        targets: labels,
        weights: None,
        proportion,
    };
    let mut grad = vec![0.0; model.params().len()];
    let loss = bag_loss_and_grad(
        model,
        &bag,
        Objective::Aggregate { lambda_a },
        Some(&mut grad),
    )?;
    Ok((loss, grad))
}

/// `CE(mean_i f_L(x_i), y(S)/|S|)`.
pub fn dllp_loss(model: &MlpModel, inputs: &[&[f64]], proportion: f64) -> Result<f64> {
    let zeros = vec![0.0; inputs.len()];
    let bag = BagExample {
        inputs: inputs.to_vec(),
        targets: &zeros,
        weights: None,
        proportion,
    };
    bag_loss_and_grad(model, &bag, Objective::Dllp, None)
}

pub fn dllp_loss_grad(
    model: &MlpModel,
    inputs: &[&[f64]],
    proportion: f64,
) -> Result<(f64, Vec<f64>)> {
    let zeros = vec![0.0; inputs.len()];
    let bag = BagExample {
        inputs: inputs.to_vec(),
        targets: &zeros,
        weights: None,
        proportion,
    };
    let mut grad = vec![0.0; model.params().len()];
    let loss = bag_loss_and_grad(model, &bag, Objective::Dllp, Some(&mut grad))?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_score_instance_loss() {
        let mut m = MlpModel::new(&[2, 3, 1], 2, 0).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let loss = aggregate_loss(&m, &[&[1.0, 2.0]], &[1.0], 1.0, 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_ignores_bag_head() {
        let mut m = MlpModel::new(&[2, 4, 3, 1], 3, 5).unwrap();
        let xs: [&[f64]; 2] = [&[0.1, 0.2], &[-1.0, 0.5]];
        let a = aggregate_loss(&m, &xs, &[1.0, 0.0], 0.5, 0.0).unwrap();
        let head_start = m.trunk_param_count();
        m.params_mut()[head_start..]
            .iter_mut()
            .for_each(|p| *p = 3.0);
        let b = aggregate_loss(&m, &xs, &[1.0, 0.0], 0.5, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dllp_minimum_is_entropy() {
        // zero model scores 0.5 everywhere
        let mut m = MlpModel::new(&[1, 2, 1], 2, 0).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let loss = dllp_loss(&m, &[&[1.0], &[2.0]], 0.5).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        // push the output bias far negative: scores -> 0, proportion 0;
        // the probability clamp bounds the loss below by about PROB_CLAMP
        let out = m.trunk_param_count() - 1;
        m.params_mut()[out] = -40.0;
        assert!(dllp_loss(&m, &[&[1.0], &[2.0]], 0.0).unwrap() < 2.0 * PROB_CLAMP);
    }

    #[test]
    fn label_length_checked() {
        let m = MlpModel::new(&[2, 3, 1], 2, 0).unwrap();
        assert!(aggregate_loss(&m, &[&[1.0, 2.0]], &[1.0, 0.0], 0.5, 1.0).is_err());
        assert!(dllp_loss(&m, &[], 0.5).is_err());
    }
}
