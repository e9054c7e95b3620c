//! Deterministic simulator of a distributed database spread across a hybrid
//! (private + public) cloud.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: nodes, links and per-client routes with random selection.
//! - [`datamodel`]: fragments, query templates, placements and per-node footprints.
//! - [`workload`]: seeded query streams (fixed-count or Poisson) with burst injection.
//! - [`engine`]: the discrete-event core producing a per-query [`engine::Trace`],
//!   plus trace statistics.
//! - [`placement`]: analytic placement cost, greedy and exhaustive optimisation,
//!   and offloading of demanding templates to the public tier.
//! - [`control`]: ARX identification, integral feedback on node capacity,
//!   closed-loop stability and gain tuning.
//!
//! Every stochastic draw goes through [`rng::stream`], so a run is fully
//! determined by its inputs and a single 64-bit seed.

pub mod control;
pub mod datamodel;
pub mod engine;
mod error;
pub mod placement;
pub mod rng;
pub mod topology;
pub mod workload;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON encoding of `value`.
///
/// All domain types serialize with a fixed field order and ordered maps, so
/// equal values always hash equally.
pub fn digest<T: serde::Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("domain types always serialize");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
