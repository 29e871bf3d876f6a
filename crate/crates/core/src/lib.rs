//! Decentralized optimization over a simulated gossip network with
//! compressed communication.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: mixing matrices and the spectral constants the rate
//!   bounds consume.
//! - [`compression`]: the unbiased p-norm b-bit dithered quantizer, its wire
//!   format and bit accounting.
//! - [`problems`]: local objectives (ridge and logistic regression) with
//!   exact and stochastic gradient oracles.
//! - [`algorithms`]: the LEAD, NIDS and DGD steppers, the Lyapunov function
//!   and the parameter calculators.
//! - [`simulator`]: the deterministic round engine, metrics and the
//!   analysis helpers used to check convergence claims.
//! - [`quantcheck`]: a Monte-Carlo self-test of the quantizer.
//! - [`rng`]: counter-based random streams shared by all of the above.

pub mod algorithms;
pub mod compression;
pub mod error;
pub mod exec;
pub mod problems;
pub mod quantcheck;
pub mod rng;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
