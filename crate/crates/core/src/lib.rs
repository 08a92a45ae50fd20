//! Boundary-local decomposition of dense feed-forward classifiers.
//!
//! The crate splits a trained classifier into one binary component per class,
//! each a structured sub-network of the frozen original, and checks the result
//! against a contract with three parts:
//!
//! - semantic fidelity: on low-margin (boundary-adjacent) samples the
//!   aggregated components disagree with the original on at most an `ε`
//!   fraction, after a Hoeffding correction;
//! - structural separation: pairwise Jaccard overlap of component supports
//!   is at most `γ`;
//! - non-trivial reduction: every component prunes at least an `η` fraction
//!   of hidden units.
//!
//! The pipeline runs in four stages (see [`pipeline`]): identity components,
//! boundary mining ([`boundary`]), mask learning ([`decomp`]) and contract
//! evaluation ([`contract`]).
//!
//! With the default `parallel` feature, per-sample and per-component loops run
//! on rayon; every stochastic step draws from an index-derived seed, so
//! results are identical to the sequential build.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod contract;
pub mod data;
pub mod decomp;
pub mod error;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
