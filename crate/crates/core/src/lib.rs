//! Numerical laboratory for localized weak-strong uniqueness and one-scale
//! epsilon regularity of the 3D incompressible Navier-Stokes equations.
//!
//! The crate is organised bottom-up: quadrature and transforms on spheres,
//! balls and the periodic torus; space-time norms and slicing; the
//! divergence-free extension and heat lift; the Stokes operator on a ball
//! and very weak solves; the Duhamel/Picard mild solver; and the
//! weak-strong / epsilon-regularity pipeline fed by a pseudo-spectral DNS.

pub mod ball;
pub mod dns;
pub mod error;
pub mod experiment;
pub mod extension;
pub mod field;
pub mod mild;
pub mod norms;
pub mod nsf;
pub mod presets;
pub mod acceptance;
pub mod quadrature;
pub mod slicing;
pub mod sphere;
pub mod stokes;
pub mod torus;
pub mod wsu;

pub use error::{LabError, Result};
