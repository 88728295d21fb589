//! Deterministic federated-learning simulator for classification under label
//! noise.
//!
//! The library models a server and a population of clients whose shards are
//! non-IID (Dirichlet proportions, Bernoulli class participation) and whose
//! labels pass through a sparsity-controlled noise channel. Training runs in
//! two phases: plain federated averaging while a patience monitor watches the
//! clients' estimated accuracy, then — once that signal stops improving — a
//! per-client noise-transition estimate turns the loss into its
//! forward-corrected form (or prunes confidently mislabeled examples,
//! depending on the method).
//!
//! Everything is reproducible by construction: all randomness flows from one
//! seed through named per-stage streams, client work is order-independent,
//! and a (config, seed) pair maps to a byte-exact metrics CSV regardless of
//! how many worker threads run the client loop.
//!
//! Module map:
//! - [`nn`]: dense ReLU networks, softmax cross-entropy, SGD with momentum,
//!   federated weighted averaging.
//! - [`noise`]: transition matrices, the (rho, zeta) noise channel, realized
//!   noise statistics.
//! - [`data`]: Gaussian-mixture generation, IDX file loading, non-IID
//!   partitioning, client views.
//! - [`estimation`]: confident-learning thresholds and count matrices, the
//!   column-normalized transition estimates, the percentile-anchor baseline.
//! - [`correction`]: the forward-corrected loss built from an estimated
//!   transition.
//! - [`fed`]: the round engine — sampling, local updates, aggregation, the
//!   prestopping monitor, the per-method phase-2 policies.
//! - [`config`] / [`experiment`] / [`report`]: the key=value config format,
//!   the end-to-end pipeline with its CSV contract, and cross-run summaries.
//! - [`rng`]: the seed plan that derives every random stream.

pub mod config;
pub mod correction;
pub mod data;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod fed;
pub mod nn;
pub mod noise;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
