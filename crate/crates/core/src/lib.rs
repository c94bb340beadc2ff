//! Numerical toolkit for mean-field stochastic control.
//!
//! The state follows a McKean-Vlasov SDE simulated by interacting particles.
//! Coefficients live in the moment-coupled family
//! `f(t, x, mu, v) = phi(t, x, integral of h dmu, v)`, which gives exact
//! Lions derivatives. On top of the forward solver sit the spike-variation
//! processes, regression Monte Carlo solvers for the first- and second-order
//! adjoint equations, and checks of the first- and second-order maximum
//! principle for candidate controls, including singular ones.

// Particle and component loops index several parallel arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod adjoint;
pub mod copy;
pub mod error;
pub mod fixtures;
pub mod forward;
pub mod linalg;
pub mod measure;
pub mod paths;
pub mod poly;
pub mod problem;
pub mod smp;
pub mod variation;

pub(crate) mod linearize;

pub use error::{Error, Result};
