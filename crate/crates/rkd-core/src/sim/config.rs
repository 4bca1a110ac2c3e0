//! Experiment configuration: every knob of a run in one serializable struct.

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::baselines::{AggregatorConfig, AggregatorKind};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// Where the training and test data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian class blobs generated from the master seed.
    Synthetic {
        n_per_class: usize,
        num_classes: usize,
        dim: usize,
        spread: f32,
        #[serde(default = "default_test_n_per_class")]
        test_n_per_class: usize,
    },
    /// IDX image/label file pairs on disk.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
}

fn default_test_n_per_class() -> usize {
    50
}

/// What a flagged client receives at dispatch time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStrategy {
    /// Flagged clients keep the model they just trained; the new global
    /// never reaches them.
    Exclusion,
    /// Flagged clients receive the new global plus a noise vector of exact
    /// L2 norm `noise_norm`.
    Perturbation,
}

/// Switches that bypass individual defense stages, for ablation runs.
/// With all three set the defense reduces to plain unweighted FedAvg.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Skip scoring and clustering; every client counts as benign.
    pub no_clustering: bool,
    /// Skip the median distance cut; the ensemble is the whole benign set.
    pub no_median_selection: bool,
    /// Skip distillation; the new global is the ensemble average itself.
    pub no_kd: bool,
}

/// Full description of one experiment. Optional fields carry the defaults
/// below, so a minimal config is just a dataset, `n_clients` and `rounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub n_clients: usize,
    pub rounds: usize,
    #[serde(default)]
    pub malicious_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_local_lr")]
    pub local_lr: f32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Hidden layer widths; input and output sizes come from the data.
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_aggregator")]
    pub aggregator: AggregatorConfig,
    #[serde(default = "default_attack")]
    pub attack: AttackConfig,
    #[serde(default = "default_dispatch")]
    pub dispatch_strategy: DispatchStrategy,
    /// Exact L2 norm of the perturbation-dispatch noise.
    #[serde(default = "default_noise_norm")]
    pub noise_norm: f64,
    /// Width of the mean-plus-k-sigma ensemble cut.
    #[serde(default = "default_k_sigma")]
    pub k_sigma: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default = "default_kd_epochs")]
    pub kd_epochs: usize,
    #[serde(default = "default_kd_lr")]
    pub kd_lr: f32,
    /// Fraction of the training pool held out (labels dropped) for
    /// distillation, split off before clients are partitioned.
    #[serde(default = "default_distill_fraction")]
    pub distill_fraction: f64,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub master_seed: u64,
    /// Fixed minimum cluster size instead of the round schedule.
    #[serde(default)]
    pub q_override: Option<usize>,
    /// Score cosine similarity on updates against the mean update rather
    /// than on raw parameters against the global model. Requires a nonzero
    /// mean update, so it cannot be combined with a zero learning rate.
    #[serde(default)]
    pub cosine_on_updates: bool,
    /// Multiply the distillation gradient by T^2, the classic correction
    /// for the 1/T^2 softening of soft-label gradients.
    #[serde(default)]
    pub kd_grad_scale_t_squared: bool,
    /// Fold the student into the weight average after every batch instead
    /// of after every epoch.
    #[serde(default)]
    pub swa_per_batch: bool,
    /// Weight client averages by local sample count instead of uniformly.
    #[serde(default)]
    pub weighted_fedavg: bool,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_local_epochs() -> usize {
    2
}
fn default_local_lr() -> f32 {
    0.01
}
fn default_batch_size() -> usize {
    64
}
fn default_hidden_layers() -> Vec<usize> {
    vec![32]
}
fn default_aggregator() -> AggregatorConfig {
    AggregatorConfig::new(AggregatorKind::Rkd)
}
fn default_attack() -> AttackConfig {
    AttackConfig::new(AttackKind::StaticTrigger)
}
fn default_dispatch() -> DispatchStrategy {
    DispatchStrategy::Exclusion
}
fn default_noise_norm() -> f64 {
    1e-4
}
fn default_k_sigma() -> f64 {
    1.0
}
fn default_temperature() -> f32 {
    2.0
}
fn default_kd_epochs() -> usize {
    5
}
fn default_kd_lr() -> f32 {
    0.01
}
fn default_distill_fraction() -> f64 {
    0.16
}

impl ExperimentConfig {
    /// Smallest valid config: everything not passed in takes its default.
    pub fn new(dataset: DatasetSource, n_clients: usize, rounds: usize) -> Self {
        ExperimentConfig {
            dataset,
            n_clients,
            rounds,
            malicious_fraction: 0.0,
            alpha: default_alpha(),
            local_epochs: default_local_epochs(),
            local_lr: default_local_lr(),
            batch_size: default_batch_size(),
            hidden_layers: default_hidden_layers(),
            aggregator: default_aggregator(),
            attack: default_attack(),
            dispatch_strategy: default_dispatch(),
            noise_norm: default_noise_norm(),
            k_sigma: default_k_sigma(),
            temperature: default_temperature(),
            kd_epochs: default_kd_epochs(),
            kd_lr: default_kd_lr(),
            distill_fraction: default_distill_fraction(),
            ablation: AblationFlags::default(),
            master_seed: 0,
            q_override: None,
            cosine_on_updates: false,
            kd_grad_scale_t_squared: false,
            swa_per_batch: false,
            weighted_fedavg: false,
        }
    }

    /// Checks every field, reporting the first violation by dotted path.
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSource::Synthetic {
                n_per_class,
                num_classes,
                dim,
                spread,
                test_n_per_class,
            } => {
                if *n_per_class == 0 {
                    return Err(Error::config("dataset.n_per_class", "must be at least 1"));
                }
                if *num_classes < 2 {
                    return Err(Error::config("dataset.num_classes", "need at least 2 classes"));
                }
                if *num_classes > *dim {
                    return Err(Error::config(
                        "dataset.dim",
                        format!("{num_classes} classes need at least that many dimensions, got {dim}"),
                    ));
                }
                if !(spread.is_finite() && *spread >= 0.0) {
                    return Err(Error::config(
                        "dataset.spread",
                        format!("must be finite and non-negative, got {spread}"),
                    ));
                }
                if *test_n_per_class == 0 {
                    return Err(Error::config("dataset.test_n_per_class", "must be at least 1"));
                }
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for (field, path) in [
                    ("dataset.train_images", train_images),
                    ("dataset.train_labels", train_labels),
                    ("dataset.test_images", test_images),
                    ("dataset.test_labels", test_labels),
                ] {
                    if path.is_empty() {
                        return Err(Error::config(field, "path must not be empty"));
                    }
                }
            }
        }
        if self.n_clients == 0 {
            return Err(Error::config("n_clients", "need at least one client"));
        }
        if self.aggregator.kind == AggregatorKind::Rkd && self.n_clients < 2 {
            return Err(Error::config(
                "n_clients",
                "the clustering defense needs at least two clients",
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "need at least one round"));
        }
        if !(self.malicious_fraction >= 0.0 && self.malicious_fraction <= 1.0) {
            return Err(Error::config(
                "malicious_fraction",
                format!("must lie in [0,1], got {}", self.malicious_fraction),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(
                "alpha",
                format!("must be positive and finite, got {}", self.alpha),
            ));
        }
        if !(self.local_lr.is_finite() && self.local_lr >= 0.0) {
            return Err(Error::config(
                "local_lr",
                format!("must be finite and non-negative, got {}", self.local_lr),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden_layers", "layer widths must be at least 1"));
        }
        self.aggregator.validate(self.n_clients)?;
        self.attack.validate()?;
        if !(self.noise_norm.is_finite() && self.noise_norm > 0.0) {
            return Err(Error::config(
                "noise_norm",
                format!("must be positive and finite, got {}", self.noise_norm),
            ));
        }
        if !(self.k_sigma.is_finite() && self.k_sigma >= 0.0) {
            return Err(Error::config(
                "k_sigma",
                format!("must be finite and non-negative, got {}", self.k_sigma),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(
                "temperature",
                format!("must be positive and finite, got {}", self.temperature),
            ));
        }
        if self.kd_epochs == 0 {
            return Err(Error::config("kd_epochs", "must be at least 1"));
        }
        if !(self.kd_lr.is_finite() && self.kd_lr >= 0.0) {
            return Err(Error::config(
                "kd_lr",
                format!("must be finite and non-negative, got {}", self.kd_lr),
            ));
        }
        if !(self.distill_fraction > 0.0 && self.distill_fraction < 1.0) {
            return Err(Error::config(
                "distill_fraction",
                format!("must lie in (0,1), got {}", self.distill_fraction),
            ));
        }
        if let Some(q) = self.q_override {
            if q < 2 {
                return Err(Error::config(
                    "q_override",
                    format!("minimum cluster size must be at least 2, got {q}"),
                ));
            }
        }
        Ok(())
    }

    /// 16 hex digit FNV-1a hash of the canonical JSON form. Two configs
    /// hash alike exactly when every field matches.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}
