//! Spectral Galerkin toolkit for the two-dimensional stochastic Navier-Stokes
//! equations in a periodic channel with non-homogeneous Navier-slip walls.

pub mod basis;
pub mod cli;
pub mod config;
pub mod control;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod lifting;
pub mod quadrature;

pub use error::{Error, Result};
