//! Simulation and numerical verification for Lévy-driven Heath–Jarrow–Morton
//! bond markets: compensated jump integrals, equivalent measure changes, the
//! forward-rate drift condition, finite bond portfolios and a numerical
//! witness of market incompleteness.

pub mod error;
pub mod fields;
pub mod girsanov;
pub mod hedging;
pub mod hjm;
pub mod incompleteness;
pub mod jump_calculus;
pub mod levy;
pub mod mc;
pub mod quadrature;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sets;

pub use error::{Error, Result};
