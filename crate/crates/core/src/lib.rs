//! Multi-species Coulomb plasma simulator based on weighted characteristics.
//!
//! The model is the nondimensional Vlasov-Poisson system for `n` species with
//! charge-per-mass ratios `sigma_i`, restricted to truncated initial data
//! (velocity cutoff `N`, spatial cutoff `N^beta`). Initial densities are
//! discretized on a deterministic phase-space lattice, advanced along their
//! characteristics with a kick-drift-kick leapfrog, and a set of diagnostics
//! checks the field-energy identity, energy/velocity/local-energy scalings in
//! `N`, far-field decay, and Cauchy-in-`N` convergence of trajectories across
//! a ladder of cutoffs.

pub mod config;
pub mod energy;
pub mod envelope;
pub mod error;
pub mod field;
pub mod harness;
pub mod initial_data;
pub mod integrator;
pub mod local_energy;
pub mod output;
pub mod sum;
pub mod vec3;

pub use config::{CutoffConfig, NumericsConfig, RunConfig, SpeciesParams};
pub use error::{Error, Result};
pub use initial_data::{Ensemble, Particle};
pub use vec3::Vec3;
