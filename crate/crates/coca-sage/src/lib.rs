//! Robust GraphSAGE training with causal and cooperative-causal neighbor
//! sampling.
//!
//! GraphSAGE aggregates a fixed-size sampled neighborhood per node. How those
//! neighbors are chosen decides how the model behaves when features are
//! corrupted. This crate implements three choices:
//!
//! - `uniform`: every neighbor equally likely.
//! - `causal`: neighbors scored by the inverse conditional density of their
//!   features under the rest of the neighborhood, so feature outliers score
//!   highest. Accurate on clean data, brittle under corruption.
//! - `coca`: cooperative causal scores. A neighbor's weight averages its
//!   marginal effect on the inverse density over all coalitions of the other
//!   neighbors at the target sample size, with Shapley-style combinatorial
//!   coefficients. Corrupted outliers drag the score down instead of up,
//!   which is what makes the sampler robust.
//!
//! Pipeline, bottom up: [`graph`] loads citation datasets or synthesizes
//! block-model graphs; [`density`] estimates conditional feature densities
//! (random projection, Gaussian kernel, Scott bandwidth); [`sampling`] turns
//! densities into per-neighbor weights and sampled trees, enumerating
//! coalitions exactly when feasible and falling back to seeded Monte Carlo
//! otherwise; [`model`] trains a two-layer mean-aggregator classifier with
//! handwritten backprop and Adam; [`perturb`] corrupts features (bit flips,
//! gated Gaussian noise, sign flips) on configurable data partitions;
//! [`harness`] runs seeded repeat experiments and emits CSV, JSON, or
//! markdown reports.
//!
//! Everything that draws randomness takes an explicit seed and derives
//! per-purpose streams from it ([`seed`]), so any run is reproducible bit for
//! bit, timing aside.

pub mod density;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod perturb;
pub mod sampling;
pub mod seed;

pub use error::{Error, Result};
