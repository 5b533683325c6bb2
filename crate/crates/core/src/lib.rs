//! Bayesian multi-source matrix factorization.
//!
//! This crate decomposes several column-linked data matrices into low-rank
//! joint structure (variation shared by all sources) plus low-rank individual
//! structure (variation specific to each source), with optional prediction of
//! a continuous or binary outcome from the latent scores. Model fitting runs
//! in two stages:
//!
//! 1. a convex structured nuclear-norm solver finds the posterior mode and
//!    selects the joint and individual ranks ([`solver`]);
//! 2. a Gibbs sampler draws from the full posterior of all factor matrices,
//!    regression coefficients, and noise variance, imputing missing entries
//!    of the data and outcome at every iteration ([`gibbs`]).
//!
//! Posterior factor samples are only identified up to rotation, permutation,
//! and sign; [`align`] resolves this with a varimax-plus-greedy-matching
//! procedure so that factor-level summaries are meaningful. [`summary`]
//! computes credible intervals, relative squared errors, variance explained,
//! outcome predictions, and cluster-stability maps. [`sim`] holds the data
//! generators, missingness injectors, baseline imputers, and the simulation
//! studies used to exercise the whole pipeline.
//!
//! Numeric kernels are generic over the scalar type through the [`Real`]
//! trait (`f32` or `f64`); the aliases below fix the default `f64` precision
//! used by the CLI and the simulation harness.

pub mod align;
pub mod data;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod scalar;
pub mod sim;
pub mod solver;
pub mod stats;
pub mod summary;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense matrix at the crate's default precision.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense vector at the crate's default precision.
pub type Vector = nalgebra::DVector<f64>;

/// Multi-source dataset at the default precision.
pub type Dataset = data::MultiOmicDataset<f64>;
/// Outcome vector at the default precision.
pub type Outcome = data::OutcomeSpec<f64>;
/// Mode decomposition at the default precision.
pub type Mode = solver::ModeDecomposition<f64>;
/// Penalty pair at the default precision.
pub type Penalties = solver::PenaltySpec<f64>;
/// Prior hyperparameters at the default precision.
pub type Priors = gibbs::PriorSpec<f64>;
/// Posterior chain at the default precision.
pub type Chain = gibbs::PosteriorSamples<f64>;
