//! A Runge-Kutta convolution quadrature laboratory.
//!
//! The crate bundles the discrete operational calculus of A-stable implicit
//! Runge-Kutta methods (discrete derivatives, antiderivatives, and FFT-based
//! application of transfer functions), a finite-dimensional testbed for
//! evolution problems with inhomogeneous side constraints, and two
//! convergence experiments: a method-of-lines heat testbed and a
//! boundary-integral heat-conduction problem on the unit sphere reduced to a
//! single spherical harmonic.

pub mod error;
pub mod heat_sphere;
pub mod opcalc;
pub mod report;
pub mod semigroup;
pub mod tableau;
pub mod zlin;

pub use error::{Error, Result};
