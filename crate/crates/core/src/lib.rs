//! Polynomial-vector preprocessing feeding a one-hidden-layer sigmoid network trained
//! by online back-propagation, applied to variable compression ratio diesel engine data.
//!
//! - [`corpus`]: bundled engine and emission tables, cleaning, min-max scaling, splits.
//! - [`featurizer`]: outer-product feature maps (linear, NL1..NL6).
//! - [`mlp`]: the network, its per-pattern update rule, and a finite-difference check.
//! - [`engine_metrics`]: brake power, BSFC, per-blend maxima.
//! - [`harness`]: the `pvnet` command implementations and their artifacts.

pub mod corpus;
pub mod engine_metrics;
pub mod featurizer;
pub mod harness;
pub mod mlp;
