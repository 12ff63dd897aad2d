//! Toolkit for finite Markov decision processes with Euclidean state coordinates.
//!
//! The crate solves discounted and average-cost control problems exactly on
//! desk-scale models, measures Wasserstein-1 distances between models, builds
//! quantized and estimated models from partitions and sampled data, constructs
//! kernels driven by disturbance noise, and evaluates closed-form perturbation
//! bounds against measured policy losses. A seeded experiment harness (see the
//! `wrmdp` binary) emits deterministic CSV records for rate studies.

pub mod bounds;
pub mod harness;
pub mod hash;
pub mod instances;
pub mod learn;
pub mod mdp;
pub mod metrics;
pub mod noise;
pub mod quantize;
pub mod solve;
pub mod stats;
pub mod tol;

mod linalg;
