//! Exact laboratory for reward-tilted sampling from autoregressive models
//! over small symbol trees.
//!
//! Everything here operates on fully enumerable instances: a reference model
//! given by conditional next-symbol rows on a depth-`T` tree over an alphabet
//! of size `B`, together with a positive twist function on prefixes. At this
//! scale every distribution of interest (the tilted target, its intermediate
//! marginals, the exact law of each sampler's building blocks) can be computed
//! by dense enumeration, so samplers are tested against closed-form answers
//! rather than against each other.
//!
//! Module layout:
//!
//! - [`model`]: alphabets, prefixes, reference models, twists, instances,
//!   the instance file format, and instance generators.
//! - [`oracle`]: exact target/intermediate distributions, total-variation
//!   distance, and instance diagnostics (ratio and lookahead constants,
//!   unnormalized-flow ratio tables).
//! - [`fk`]: Feynman-Kac representations of tilted targets for a chosen
//!   proposal, exact flows, coverage constants, and particle-count budgets.
//! - [`samplers`]: seeded random streams, rejection sampling, empirical
//!   normalizer estimates, resampling schemes, and the SMC and stepwise
//!   guided samplers.
//! - [`mh`]: pool-based and rejection-based Metropolis-Hastings chains over
//!   trajectories, plus exact enumeration of the augmented pool chain.
//! - [`lowerbound`]: hard instance family and the query-counting oracle used
//!   for search lower-bound experiments.
//! - [`harness`]: replicated experiments, empirical output laws, sweep
//!   configs, CSV/JSON reporting, and bound verification.

pub mod error;
pub mod fk;
pub mod harness;
pub mod lowerbound;
pub mod mh;
pub mod model;
pub(crate) mod numeric;
pub mod oracle;
pub mod samplers;

pub use error::{Error, Result};
