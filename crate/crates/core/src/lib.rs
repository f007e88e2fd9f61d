//! Spatial Bradley-Terry models for comparative judgement studies.
//!
//! The crate covers the whole analysis path of a study in which judges are
//! shown pairs of areas ("wards") and asked which one has the higher rate of
//! some outcome:
//!
//! - [`graph`] and [`spatial`] build the ward adjacency graph, its
//!   communicability matrix and the normalised prior covariance.
//! - [`bt`] holds comparison records, tallies, the likelihood and the sparse
//!   design matrix.
//! - [`pg`] samples Polya-Gamma variates, which turn the logistic likelihood
//!   into a conditionally Gaussian one.
//! - [`bsbt`] is the Gibbs sampler for the spatial-prior model, plus a
//!   single-site Metropolis baseline.
//! - [`cluster`] is the distance-dependent CRP clustering model.
//! - [`schedule`] builds distributions over ward pairs from which upcoming
//!   comparisons are drawn.
//! - [`sim`] runs the scheduling utility study and the sampler benchmark.

pub mod bsbt;
pub mod bt;
pub mod cluster;
pub mod diagnostics;
pub mod error;
pub mod geo;
pub mod graph;
pub mod pairs;
pub mod pg;
pub mod schedule;
pub mod sim;
pub mod spatial;
pub mod stats;

pub use bsbt::{fit, BsbtFit, FitConfig, GibbsState, PosteriorSummary};
pub use bt::{ComparisonRecord, DesignMatrix, RateVector, Tallies};
pub use cluster::{fit_clustered, ClusterConfig, ClusterFit, ClusterState, NigBase};
pub use error::{Error, Result};
pub use graph::WardGraph;
pub use pairs::PairIndex;
pub use schedule::{Mechanism, ScheduleDistribution};
pub use spatial::SpatialCovariance;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random number generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Deterministic generator for a `(seed, stream)` pair.
///
/// Independent streams of one master seed never overlap, so replicates and
/// chains can run in parallel and still be reproducible.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
