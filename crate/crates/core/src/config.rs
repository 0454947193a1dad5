//! Flat `key = value` configuration files for [`PipelineConfig`].
//!
//! ```text
//! # comment
//! iterations = 2
//! k = 5
//! lambda_b = 0.1
//! hidden_dims = 64,32
//! iter1.lambda_a = 0.5    # override for iteration 1 only (0-based)
//! ```
//!
//! Unprefixed stage keys apply to every iteration; `iter<r>.` keys override
//! them for iteration `r`. Command-line flags use the same key names.

use std::path::Path;
use std::str::FromStr;

use crate::bagging::CountMode;
use crate::error::{invalid, LlpError, Result};
use crate::gibbs::NodeField;
use crate::knn::{KernelSpec, MaternNu};
use crate::mlp::Pooling;
use crate::pipeline::{NoiseConfig, PipelineConfig, StageConfig};

/// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("config line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load_file(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| LlpError::io(path, e))?;
    let mut cfg = PipelineConfig::default();
    for (k, v) in parse_pairs(&text)? {
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| invalid(format!("{key}: cannot parse '{v}'")))
}

fn float(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => num(key, v),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn matern_nu(v: &str) -> Result<MaternNu> {
    match v {
        "0.5" | "1/2" => Ok(MaternNu::Half),
        "1.5" | "3/2" => Ok(MaternNu::ThreeHalves),
        "2.5" | "5/2" => Ok(MaternNu::FiveHalves),
        _ => Err(invalid(format!(
            "matern_nu must be 0.5, 1.5 or 2.5, got '{v}'"
        ))),
    }
}

impl StageConfig {
    /// Sets one stage-level key. Returns `Ok(false)` if the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "k" => self.k = num(key, v)?,
            "delta_d" => self.delta_d = float(key, v)?,
            "metric" => self.metric = v.parse()?,
            "kernel" => {
                self.kernel = match v {
                    "rbf" => match self.kernel {
                        KernelSpec::Rbf { .. } => self.kernel,
                        KernelSpec::Matern { .. } => KernelSpec::Rbf { gamma: 1.0 },
                    },
                    "matern" => match self.kernel {
                        KernelSpec::Matern { .. } => self.kernel,
                        KernelSpec::Rbf { .. } => KernelSpec::default(),
                    },
                    _ => return Err(invalid(format!("kernel must be rbf or matern, got '{v}'"))),
                }
            }
            "gamma" => match &mut self.kernel {
                KernelSpec::Rbf { gamma } => *gamma = float(key, v)?,
                _ => return Err(invalid("gamma requires kernel = rbf (set kernel first)")),
            },
            "matern_nu" | "length_scale" => match &mut self.kernel {
                KernelSpec::Matern { nu, length_scale } => {
                    if key == "matern_nu" {
                        *nu = matern_nu(v)?;
                    } else {
                        *length_scale = float(key, v)?;
                    }
                }
                _ => return Err(invalid(format!("{key} requires kernel = matern"))),
            },
            "lambda_b" => self.lambda_b = float(key, v)?,
            "lambda_s" => self.lambda_s = float(key, v)?,
            "node_field" => {
                self.node_field = match v {
                    "symmetric" => NodeField::Symmetric,
                    "out_neighbors" => NodeField::OutNeighbors,
                    _ => return Err(invalid(format!("unknown node_field '{v}'"))),
                }
            }
            "T" | "bp_rounds" => self.bp.max_rounds = num(key, v)?,
            "damping" => self.bp.damping = float(key, v)?,
            "bp_tolerance" => self.bp.tolerance = float(key, v)?,
            "tau" => self.tau = float(key, v)?,
            "threshold_mode" => self.threshold_mode = v.parse()?,
            "lambda_a" => self.train.lambda_a = float(key, v)?,
            "learning_rate" => self.train.learning_rate = float(key, v)?,
            "weight_decay" => self.train.weight_decay = float(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "max_epochs" => self.train.max_epochs = num(key, v)?,
            "patience" => self.train.patience = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl PipelineConfig {
    /// Applies one key. Unprefixed stage keys update the base stage and every
    /// existing override; `iter<r>.key` touches only iteration `r`.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("iter") {
            if let Some((r, sub)) = rest.split_once('.') {
                let r: usize = num(key, r)?;
                let stage = self.stage_mut(r);
                return if stage.set(sub, v)? {
                    Ok(())
                } else {
                    Err(invalid(format!("unknown stage key '{sub}'")))
                };
            }
        }
        match key {
            "iterations" | "R" => self.iterations = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "hidden_dims" => {
                self.hidden_dims = v
                    .split(',')
                    .map(|s| num::<usize>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "pool_hidden" => self.pool_hidden = num(key, v)?,
            "pooling" => {
                self.pooling = match v {
                    "mean" => Pooling::Mean,
                    "sum" => Pooling::Sum,
                    "max" => Pooling::Max,
                    _ => {
                        return Err(invalid(format!(
                            "pooling must be mean, sum or max, got '{v}'"
                        )))
                    }
                }
            }
            "embedding_layer" => self.embedding_layer = Some(num(key, v)?),
            "knn_fraction" => self.knn_fraction = float(key, v)?,
            "standardize" => self.standardize = boolean(key, v)?,
            "dp_epsilon" => self.noise_mut().epsilon = float(key, v)?,
            "dp_delta" => self.noise_mut().delta = float(key, v)?,
            "dp_count_mode" => {
                self.noise_mut().count_mode = match v {
                    "rounded" => CountMode::Rounded,
                    "real" => CountMode::Real,
                    _ => {
                        return Err(invalid(format!(
                            "dp_count_mode must be rounded or real, got '{v}'"
                        )))
                    }
                }
            }
            _ => {
                let mut known = self.base.set(key, v)?;
                for stage in self.overrides.values_mut() {
                    known = stage.set(key, v)? || known;
                }
                if !known {
                    return Err(invalid(format!("unknown config key '{key}'")));
                }
            }
        }
        Ok(())
    }

    fn noise_mut(&mut self) -> &mut NoiseConfig {
        self.noise.get_or_insert_with(NoiseConfig::default)
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`
/// so JSON round-trips them; numbers are accepted as usual.
pub(crate) mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!(
                    "expected a number, got '{other}'"
                ))),
            },
        }
    }
}
