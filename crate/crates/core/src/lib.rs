#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Mild solutions of the time-fractional diffusion equation
//! `d_t^a u + L^b u + k(t) u = F` with the nonlocal condition
//! `u(T, x) = kappa u(0, x) + phi(x)`, and recovery of `k(t)` from a point trace.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod fractional_ops;
pub mod harness;
pub mod inverse;
pub mod mittag_leffler;
pub mod quad;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
pub use forward::{NonlocalProblemSpec, SourceModel};
pub use fractional_ops::{GridFunction, TimeGrid};
pub use spectral::{ModalTrajectory, ModalVector, SpectralBasis};
