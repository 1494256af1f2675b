//! Numerical laboratory for transverse microlocal analysis on torus-bundle
//! foliations.
//!
//! The models are trivial torus bundles `T^p x T^q -> T^q` carrying
//! bundle-like (Kaluza-Klein type) metrics.  On top of them the crate builds
//!
//! * the adapted geometry: horizontal frames, the transverse Levi-Civita
//!   connection, integrability tensor, mean curvature and divergence
//!   ([`geometry`]),
//! * Hamiltonian and transverse geodesic flows, frame flows and parallel
//!   transport for partial connections ([`flows`]),
//! * a transverse symbol calculus with torus quantization, symbol
//!   extraction, composition expansions and commutator symbols
//!   ([`symbols`]),
//! * transverse Dirac and signature operators in a truncated Fourier basis
//!   ([`dirac`]),
//! * exact Heisenberg evolution of discretized operators and the Egorov
//!   comparison between evolved operators and transported symbols
//!   ([`evolution`], [`transport`]).
//!
//! The [`scenarios`] module wires these pieces into reproducible experiment
//! pipelines driven by JSON configs; the `translab` binary and the files in
//! `examples/` are thin wrappers around it.

extern crate blas_src;

pub mod config;
pub mod dirac;
pub mod error;
pub mod evolution;
pub mod field;
pub mod flows;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod scenarios;
pub mod symbols;
pub mod tol;
pub mod transport;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Shorthand for the imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);
