//! Simulation and verification toolkit for the parabolic–parabolic
//! Keller–Segel particle system with memory.
//!
//! ```text
//! dX^i = dB^i - grad V(X^i) dt + chi grad h_N(t, X^i) dt
//! d_t h_N = (1/2) Lap h_N - alpha h_N + (beta / N) sum_i g(X^i - x)
//! ```
//!
//! * [`model`]: problem instance, theoretical constants and assumption checks.
//! * [`field`]: grid and direct evaluators of the chemical field.
//! * [`simulate`]: explicit Euler scheme, coupled runs, refinement.
//! * [`metrics`]: Wasserstein distances, moments, tails, slope fits.
//! * [`experiments`]: scenario configuration, runners, CSV and manifests.

pub mod error;
pub mod experiments;
pub mod field;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod simulate;

pub use error::{Error, Result};
