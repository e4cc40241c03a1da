//! Numerical laboratory for the spectral edge of β-Dyson Brownian motion.
//!
//! The crate simulates the interacting particle system, solves the
//! deterministic McKean–Vlasov limit by complex characteristics and by a
//! local power series at the edge, and provides Monte Carlo harnesses for
//! edge rigidity, the mesoscopic edge CLT and Tracy–Widom universality.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dbm;
pub mod fluct;
pub mod mkv;
pub mod model;
pub mod rigidity;
pub mod seeds;
pub mod series;
pub mod universality;

mod cheb;
pub mod stats;

pub use num_complex::Complex64;
