//! Relativistic Markov diffusion on Minkowski space.
//!
//! The crate builds the drift and diffusion fields of a diffusion process
//! whose sample paths are parametrized by a dynamical parameter `s`
//! distinct from coordinate time, simulates those paths, and evaluates the
//! equations such a process must satisfy: the Nelson equations, the
//! Kolmogorov and Fokker-Planck equations, Lorentz covariance and
//! reparametrization invariance.
//!
//! Module map:
//! - [`geometry`]: four-vectors, metric, Lorentz transformations
//! - [`gauge`]: dynamical-parameter gauge `g(s)`
//! - [`fields`], [`process`]: drift/potential fields, diffusion tensor, residuals
//! - [`sde`]: Euler–Maruyama ensembles and estimators
//! - [`free_particle`]: closed-form free-particle density and its checks
//! - [`spectral`]: separation of variables on periodic grids
//! - [`export`]: CSV/JSON serialization helpers

pub mod error;
pub mod export;
pub mod fields;
pub mod free_particle;
pub mod gauge;
pub mod geometry;
pub mod process;
pub mod sde;
pub mod spectral;

pub use error::{Error, Result};
pub use gauge::{Gauge, GaugeSpec};
pub use geometry::{Covector, FourVector, LorentzTransform, SpacetimePoint, Tensor2};
pub use process::{DriftFields, EMPotential, PhysicalConstants};
