//! Numerics for prescribed-time stabilization of the perturbed chain of
//! integrators
//!
//! ```text
//! x' = J_n x + (d(t) + b(t) u) e_n
//! ```
//!
//! Three controller families live here: the time-varying linear feedback
//! `u = -K^T D_{eta lambda(t)} x` ([`pnf`]), Hong's homogeneous backstepping
//! feedback with its Lyapunov functions ([`hong`]), and the switching-degree
//! controller built on top of it ([`ptstab`]). [`sim`] integrates closed
//! loops and computes ISS metrics.

pub mod error;
pub mod homog;
pub mod hong;
pub mod linalg;
pub mod par;
pub mod pnf;
pub mod ptstab;
pub mod quad;
pub mod sim;
pub mod spec;
pub mod timescale;

pub use error::{Error, Result};
pub use spec::ChainSpec;
