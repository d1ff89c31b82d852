//! TreeCaps: tree-based convolution over syntax trees fused with capsule
//! routing, trained for code classification and function-name prediction.
//!
//! The pipeline runs mini-C source (or an ingested JSON AST) through
//! [`encoder`] (embedding lookup plus stacked tree convolution), forms the
//! primary variable capsules, routes them to a fixed-size secondary layer
//! with either shared-weight dynamic routing or variable-to-static routing
//! ([`capsules`]), routes again into code capsules and applies a task head
//! ([`heads`]). [`training`] owns the parameters, exact gradients and the
//! optimizer; [`perturb`] and [`corpus`] provide the robustness harness and
//! the synthetic data.

pub mod ast;
pub mod capsules;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod perturb;
pub mod real;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
