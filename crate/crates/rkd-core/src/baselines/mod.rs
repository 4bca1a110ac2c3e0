//! Reference aggregators the defense is compared against.

use serde::{Deserialize, Serialize};

use crate::defense::elementwise_median;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Fedavg,
    CoordMedian,
    Rlr,
    Rkd,
}

/// Aggregator choice plus the knobs only some kinds read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// Minimum |sign vote sum| for a coordinate to keep the positive server
    /// learning rate (rlr only).
    #[serde(default)]
    pub rlr_threshold: Option<usize>,
    /// Server step size applied to the mean update (rlr only).
    #[serde(default)]
    pub server_lr: Option<f64>,
}

impl AggregatorConfig {
    pub fn new(kind: AggregatorKind) -> Self {
        AggregatorConfig {
            kind,
            rlr_threshold: None,
            server_lr: None,
        }
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.kind != AggregatorKind::Rlr {
            return Ok(());
        }
        match self.rlr_threshold {
            Some(t) if t >= 1 && t <= n_clients => {}
            Some(t) => {
                return Err(Error::config(
                    "aggregator.rlr_threshold",
                    format!("must lie in [1, n_clients={n_clients}], got {t}"),
                ))
            }
            None => {
                return Err(Error::config(
                    "aggregator.rlr_threshold",
                    "required for kind rlr",
                ))
            }
        }
        match self.server_lr {
            Some(lr) if lr.is_finite() && lr > 0.0 => Ok(()),
            Some(lr) => Err(Error::config(
                "aggregator.server_lr",
                format!("must be positive and finite, got {lr}"),
            )),
            None => Err(Error::config("aggregator.server_lr", "required for kind rlr")),
        }
    }
}

fn check_layouts(params: &[ParamVector]) -> Result<usize> {
    if params.is_empty() {
        return Err(Error::EmptyInput("no parameter vectors to aggregate".into()));
    }
    let dim = params[0].len();
    for (i, p) in params.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "vector {i} has {} params, expected {dim}",
                p.len()
            )));
        }
    }
    Ok(dim)
}

/// Unweighted arithmetic mean, accumulated in f64.
pub fn fedavg(params: &[ParamVector]) -> Result<ParamVector> {
    let dim = check_layouts(params)?;
    let scale = 1.0 / params.len() as f64;
    let mut sums = vec![0.0f64; dim];
    for p in params {
        for (s, &v) in sums.iter_mut().zip(p.values()) {
            *s += v as f64;
        }
    }
    Ok(ParamVector::new(
        sums.iter().map(|&s| (s * scale) as f32).collect(),
    ))
}

/// Mean weighted by per-client sample counts.
pub fn fedavg_weighted(params: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let dim = check_layouts(params)?;
    if weights.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} vectors",
            weights.len(),
            params.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::InvalidArgument(
            "aggregation weights must be positive and finite".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    let mut sums = vec![0.0f64; dim];
    for (p, &w) in params.iter().zip(weights) {
        for (s, &v) in sums.iter_mut().zip(p.values()) {
            *s += w * v as f64;
        }
    }
    Ok(ParamVector::new(
        sums.iter().map(|&s| (s / total) as f32).collect(),
    ))
}

/// Coordinate-wise median across client vectors.
pub fn coord_median_aggregate(params: &[ParamVector]) -> Result<ParamVector> {
    elementwise_median(params)
}

/// Sign-voting aggregation: a coordinate keeps +server_lr only when at
/// least `threshold` more clients agree on the update's sign than disagree;
/// otherwise the server steps against the mean update. threshold = 0
/// degenerates to a plain averaged step with +server_lr.
pub fn rlr_aggregate(
    updates: &[ParamVector],
    threshold: usize,
    server_lr: f64,
    global: &ParamVector,
) -> Result<ParamVector> {
    let dim = check_layouts(updates)?;
    if global.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "global has {} params, updates have {dim}",
            global.len()
        )));
    }
    if !(server_lr.is_finite() && server_lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "server learning rate must be positive and finite, got {server_lr}"
        )));
    }
    let scale = 1.0 / updates.len() as f64;
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut votes = 0i64;
        let mut sum = 0.0f64;
        for u in updates {
            let v = u.values()[j];
            votes += if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            };
            sum += v as f64;
        }
        let lr = if votes.unsigned_abs() as usize >= threshold {
            server_lr
        } else {
            -server_lr
        };
        out.push((global.values()[j] as f64 + lr * sum * scale) as f32);
    }
    Ok(ParamVector::new(out))
}
