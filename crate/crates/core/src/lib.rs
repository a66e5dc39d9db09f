//! Neural networks whose inputs are points of a metrized space or positive
//! finite atomic measures.
//!
//! A distributional network maps a measure `mu` to
//! `f(g0(mu(E)), int g_2 dmu/mu(E), ..., int g_n dmu/mu(E))`: a bounded monotone
//! function of the total mass, followed by normalized integrals of test
//! functions, fed to a dense head. Atomic measures make every integral an exact
//! weighted sum, so outputs are invariant under reordering of the atoms.
//!
//! Modules:
//! - [`measure`], [`dataset`]: atomic measures and their line-oriented file format.
//! - [`testfn`]: test-function families and the mass channel.
//! - [`metrics`]: the point and measure metrics induced by a family, and sup distances.
//! - [`nets`]: dense heads, topological, distributional and composed networks.
//! - [`training`]: empirical risk, gradients, gradient descent, power search.
//! - [`simulate`]: HMM, bootstrap particle filter, synthetic datasets.
//! - [`checkpoint`]: model serialization.
//! - [`cli`], [`verify`]: the command-line driver and its property suites.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod measure;
pub mod metrics;
pub mod nets;
pub mod params;
pub mod simulate;
pub mod sum;
pub mod testfn;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use measure::{Atom, ParticleMeasure};
pub use testfn::{MassChannel, TestFunction};
