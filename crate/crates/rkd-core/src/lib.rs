//! Federated learning simulator built around a robust aggregation defense.
//!
//! The library is organised in layers. `nn` holds the dense network and its
//! training operations, `data` the dataset loading, partitioning and trigger
//! machinery. `attacks` implements the model and data manipulations used by
//! adversarial clients. `defense` contains the similarity scoring, density
//! clustering and ensemble selection pipeline, `distill` the knowledge
//! distillation step that turns the selected ensemble into the next global
//! model, and `baselines` the reference aggregators. `sim` ties everything
//! into a deterministic round loop driven by a single experiment config.
//!
//! Every source of randomness is a named stream derived from the experiment
//! master seed (see [`rng`]), so a run is reproducible bit for bit, whether
//! clients are trained serially or in parallel.

pub mod attacks;
pub mod baselines;
pub mod data;
pub mod defense;
pub mod distill;
pub mod error;
pub mod nn;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
