//! Temporal convolution engine built on Jacobi polynomial kernels.
//!
//! The crate is organised bottom-up:
//!
//! * [`polybasis`] builds Jacobi bases, checks orthogonality and integrates
//!   them exactly into per-bin discrete bases.
//! * [`kernels`] contracts per-channel coefficients with a discrete basis.
//! * [`planner`] parses small einsum expressions and costs every pairwise
//!   contraction path, with convolution-aware memory and compute rules.
//! * [`exec`] executes contraction paths (counting multiply-accumulates) and
//!   provides the direct temporal and spatial convolutions.
//! * [`events`] bins raw event streams into dense frame tensors.
//! * [`model`] declares networks, runs them offline or frame-by-frame with
//!   ring buffers, decodes outputs and reports parameter/MAC budgets.

pub mod error;
pub mod events;
pub mod exec;
pub mod kernels;
pub mod model;
pub mod planner;
pub mod polybasis;
pub mod quadrature;
pub mod tensor;

pub use error::{Error, Result};
