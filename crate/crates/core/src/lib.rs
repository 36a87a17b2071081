//! Contextual stochastic bilevel optimization by linear reduction.
//!
//! The lower-level solution `y⋆(x, ξ)` of a contextual bilevel problem is
//! parameterized as `W Φ(ξ)` over a feature map `Φ`, which turns the
//! contextual problem into an ordinary stochastic bilevel problem in
//! `(x, W)` that needs only joint samples of `(ξ, η)`. The reduced problem
//! is solved with a double-loop hypergradient method (inner SGD on `W`,
//! truncated Neumann series for the Hessian inverse, outer descent on `x`).
//!
//! The crate is `no_std` with `alloc`; IO, configuration and the command
//! line live in the companion harness crate.

#![no_std]
// `!(a < b)` is used deliberately so that NaN takes the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod basis;
mod error;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod reduction;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
