//! Distributed multi-time-slot economic dispatch (MTSED) engine.
//!
//! A power grid with synchronous generators and energy storage schedules
//! active/reactive dispatch over a receding horizon of `tau` slots. Every bus
//! runs a projection-based ODE using only its own state and messages from its
//! graph neighbors; the stationary points of the coupled system are exactly
//! the KKT points of the dispatch problem, so a converged run *is* an optimal
//! schedule. The crate provides:
//!
//! - [`network`]: case model and decoupled linearized power flow matrices,
//! - [`problem`]: cost functions, horizon coupling matrices, and the stacked
//!   compact form of the dispatch QP,
//! - [`projection`]: box/orthant projection kernels,
//! - [`dynamics`]: the per-bus right-hand side and its stacked counterpart,
//! - [`simulator`]: deterministic fixed-step integration, stopping rules and
//!   the receding-horizon driver,
//! - [`verify`]: independent certification (feasibility, KKT residuals,
//!   Lyapunov monitor, Slater margin screen) and a centralized QP oracle that
//!   shares no algorithmic path with the agent dynamics.
//!
//! The crate is `no_std`-compatible (with `alloc`); enable the `libm` feature
//! when building without `std`. All internal quantities are per-unit on the
//! case MVA base; conversions to MW/MVar/MWh happen at the boundaries.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("building without `std` requires the `libm` feature for float math");

pub mod dynamics;
pub mod linalg;
pub mod network;
pub mod problem;
pub mod projection;
pub mod simulator;
pub mod verify;

pub(crate) mod math {
    #[cfg(feature = "std")]
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }

    #[cfg(all(not(feature = "std"), feature = "libm"))]
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }

    #[cfg(feature = "std")]
    #[inline]
    pub fn abs(x: f64) -> f64 {
        x.abs()
    }

    #[cfg(all(not(feature = "std"), feature = "libm"))]
    #[inline]
    pub fn abs(x: f64) -> f64 {
        libm::fabs(x)
    }
}
