//! Numerical laboratory for second-order dissipative learning dynamics.
//!
//! Weights follow `m_i ẅ_i + (ψ̇/ψ) ẇ_i + ∂V/∂w_i = 0` driven by an
//! environment signal `x(t)`. The crate integrates these dynamics, keeps an
//! energy ledger (dissipated energy `Z`, environmental energy `E`, internal
//! energy `U = V + K`), checks the balance `Z + ΔU − E = 0`, and certifies
//! exponential stability of linear time-varying systems
//! `ẍ + 2A(t)ẋ + B(t)x = 0` through matrix measures.

pub mod cli;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod fit;
pub mod interp;
pub mod linalg;
pub mod potentials;
pub mod signals;
pub mod stability;
pub mod verify;

pub use error::{Error, Result};
