//! Multiscale solvers for kinetic epidemic models with controlled contact
//! formation.

pub mod cli;
pub mod dsmc;
pub mod equilibria;
pub mod error;
pub mod fp;
pub mod kinetic;
pub mod macro_models;
pub mod params;
mod quadrature;
mod tridiag;

pub use error::{KinError, Result};
