//! Simulation and analysis of operator spreading in power-law interacting
//! spin systems.
//!
//! The crate bundles three complementary ways of computing the growth of
//! global out-of-time-order correlators (OTOCs):
//!
//! - [`spread`]: a continuous-time stochastic spreading model on a lattice of
//!   molecules, each carrying several spins, with infection rates decaying as
//!   a power of the distance. The mean number of occupied spins is the global
//!   OTOC proxy.
//! - [`kn`]: a stochastic model on the cluster-size/coherence-order grid,
//!   producing multiple quantum coherence (MQC) spectra without spatial
//!   structure.
//! - [`oracle`]: exact state-vector simulation of small quantum systems
//!   (double-quantum, dipolar and kicked-Ising models) for validating the
//!   stochastic pictures.
//!
//! Downstream analysis lives in [`mqc`] (spectra, second moments, cluster
//! size fits) and [`scaling`] (light-cone regime taxonomy and two-parameter
//! fits against experimental series). [`cli`] provides configuration,
//! presets and artifact emission used by the `spinspread` binary.
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability.

pub mod cli;
pub mod kn;
pub mod lattice;
pub mod mqc;
pub mod oracle;
pub mod scaling;
pub mod seeding;
pub mod spread;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
