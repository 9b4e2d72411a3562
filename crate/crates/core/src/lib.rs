//! Jeffreys priors for finite mixture models.
//!
//! The crate is organised around the workflow of studying default priors for
//! mixtures of location-scale components:
//!
//! * [`mixture`] holds the model, its density and likelihood, simulation and
//!   the exact allocation-expanded likelihood used as an oracle.
//! * [`fisher`] assembles the expected Fisher information of a mixture by
//!   numerical integration (midpoint Riemann sums, adaptive Gauss–Kronrod or
//!   Monte Carlo) for each choice of unknown parameters.
//! * [`priors`] turns Fisher determinants into Jeffreys log-priors and hosts
//!   the proper alternatives (a data-free scale prior, the hierarchical
//!   prior) together with the reference location-scale reparametrisation.
//! * [`mcmc`] is a block-wise adaptive random-walk Metropolis–Hastings sampler
//!   with the diagnostics used to spot improper posteriors.
//! * [`harness`] runs replicated experiments, prior/posterior grids,
//!   properness probes and integrator comparisons.
//!
//! Embarrassingly parallel loops (replications, grid cells, Monte Carlo
//! repeats, random-model sweeps) go through [`exec`], which uses rayon when
//! the `parallel` feature is enabled and a plain loop otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod error;
pub mod exec;
pub mod fisher;
pub mod harness;
pub mod mcmc;
pub mod mixture;
pub mod priors;

pub use error::{Error, Result};
pub use exec::Execution;
pub use fisher::{FisherMatrix, IntegrationMethod, IntegrationSpec, UnknownConfig};
pub use mixture::{Component, DataSet, MixtureModel};
