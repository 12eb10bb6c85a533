//! Aggregation of finite Markov chains into smaller representative chains.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core:
//!
//! * [`chain`]: validated domain types (stochastic matrices, partitions,
//!   aggregated models) and the Helmert basis of the zero-sum hyperplane.
//! * [`kl`]: relative-entropy distances, Gibbs association weights, centroid
//!   updates, the annealing free energy and the aggregated transition matrix.
//! * [`anneal`]: deterministic-annealing aggregation with phase-transition
//!   detection through the critical temperature.
//! * [`selection`]: per-superstate heterogeneity, marginal return and the
//!   choice of the number of superstates.
//! * [`generators`]: seeded synthetic chains with a known number of
//!   superstates.
//!
//! File formats and the command-line tool live in the `lumpkit` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod anneal;
pub mod chain;
mod error;
pub mod generators;
pub mod kl;
pub mod linalg;
pub(crate) mod math;
pub mod selection;

pub use anneal::{
    fill_gaps, AnnealState, TraceRecord,
    anneal, AggregationEntry, AnnealConfig, AnnealOutcome, CriticalReport, FixedPoint, Schedule,
};
pub use chain::{
    simplex_basis, stationary_distribution, validate_stochastic, AggregatedModel, Partition,
    SimplexBasis, StateWeights, StochasticMatrix,
};
pub use error::{Error, Result};
pub use generators::{gen_ncd, gen_replicated_rows, perturb, GenSpec};
pub use kl::SoftAssociation;
pub use linalg::Matrix;
pub use selection::{select_k, HeterogeneityMode, Membership, SelectionOptions, SelectionReport};
