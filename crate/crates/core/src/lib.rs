//! Exact Lipschitz-Prokhorov distances for finite metric spaces that carry
//! finitely supported laws of grid-time paths.
//!
//! Markov processes come from graph Dirichlet forms on circle
//! discretizations; their path laws are sampled or propagated exactly.
//!
//! | module | contents |
//! |--------|----------|
//! | [`metric`] | finite metric spaces, bijections, dilation, exact Lipschitz distance, Cauchy limits |
//! | [`paths`] | time grids, grid paths, path measures, pushforward along maps |
//! | [`prokhorov`] | Prokhorov distance by max-flow, subset oracle, modified inequality check |
//! | [`lp`] | (ε, δ)-isomorphism certificates and the Lipschitz–Prokhorov distance |
//! | [`diffusion`] | circle heat kernel, path samplers, φ-bounds and modulus estimates |
//! | [`dirichlet`] | graph Dirichlet forms, resolvents, semigroups, Mosco and fdd checks |
//! | [`io`] | versioned JSON wire formats |

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod dirichlet;
mod error;
mod flow;
pub mod io;
pub mod lp;
pub mod metric;
pub mod paths;
pub mod prokhorov;
pub mod stats;

pub use error::{Error, Result};

/// Absolute tolerance used when validating distance matrices and weight sums.
pub const VALIDATION_TOL: f64 = 1e-12;
