//! Damping a system of linear oscillators with a generalized dry-friction
//! feedback derived from the asymptotic shape of its reachable sets.
//!
//! The pipeline, bottom to top:
//!
//! * [`model`] — the oscillator system `ẋᵢ = yᵢ, ẏᵢ = −ωᵢ²xᵢ + u` with
//!   `|u| ≤ 1`, its block rotations, energy accounting and a resonance
//!   detector for integer relations between eigenfrequencies.
//! * [`support`] — the limit support function `𝕳(z)` of the normalized
//!   reachable set (an averaged absolute trigonometric sum), evaluated by
//!   tensor quadrature with the innermost angle integrated in closed form.
//! * [`dual`] — the norm `ρ(x)` dual to `𝕳`, whose unit ball is the limit
//!   shape; `ρ` plays the role of time-to-go and its gradient carries the
//!   feedback direction.
//! * [`control`] — the scalar feedback `u = −sign⟨B, ∂ρ/∂x⟩`, its
//!   ε-regularization and the staged-amplitude policy.
//! * [`sim`] — adaptive integration of the regularized motion with
//!   switching-surface-aware step control, plus the diagnostic batteries
//!   (Hamiltonian residual, monotone ρ decay, ε→0 Cauchy sweeps, canonical
//!   two-point system).
//!
//! Heavy inner loops (quadrature node batches, sweep rungs) run in parallel
//! through [`exec::Exec`] when the `parallel` feature (default) is enabled;
//! results are bit-identical to the sequential fallback.

pub mod control;
pub mod dual;
pub mod error;
pub mod exec;
pub mod model;
pub mod rk45;
pub mod sim;
pub mod support;

pub use error::{Error, Result};
