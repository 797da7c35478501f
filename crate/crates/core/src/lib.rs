//! Morse homology of free loop spaces of flat tori and Floer-theoretic
//! quantities of their cotangent bundles.

mod banded;
pub mod acceptance;
pub mod broken_geodesics;
pub mod critical_points;
pub mod error;
pub mod floer_cylinder;
pub mod gradient_system;
pub mod heat_flow;
pub mod morse_complex;
pub mod potentials;
pub mod radial_spectrum;
pub mod spectral;
pub mod torus_loops;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
