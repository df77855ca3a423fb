//! The generalized dry-friction feedback and its regularization.
//!
//! The exact law is `u(x) = −sign σ(x)` with switching value
//! `σ(x) = ⟨B, ∂ρ/∂x⟩ = Σᵢ ∂ρ/∂yᵢ`; on the switching surface `σ = 0` the
//! sign is multivalued and the law is a differential inclusion with values
//! in `[−1, 1]`. For integration the sign is replaced by an odd saturating
//! smoother of width ε, and a staged policy lowers the amplitude at
//! intermediate `ρ` to shrink the standstill zones.

use crate::dual::{self, DualConfig, DualSolution};
use crate::error::{Error, Result};
use crate::model::{b_dot, OscillatorSystem, State};

/// Odd, nondecreasing surrogate for `sign`, saturating at ±1 and converging
/// to `sign` pointwise as ε → 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoother {
    /// Piecewise-linear ramp `clamp(σ/ε, −1, 1)`; exact sliding behaviour,
    /// not differentiable at the band edges.
    Saturation,
    /// `tanh(σ/ε)`; everywhere smooth, needed by the canonical diagnostics.
    TanhLike,
}

impl Smoother {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Smoother::Saturation => v.clamp(-1.0, 1.0),
            Smoother::TanhLike => v.tanh(),
        }
    }
}

/// Regularized feedback `u = −amplitude · smoother(σ/ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLaw {
    pub epsilon: f64,
    pub smoother: Smoother,
    pub amplitude: f64,
}

impl ControlLaw {
    pub fn new(epsilon: f64, smoother: Smoother, amplitude: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        if !(amplitude > 0.0 && amplitude <= 1.0) {
            return Err(Error::invalid(
                "amplitude",
                format!("must lie in (0, 1], got {amplitude}"),
            ));
        }
        Ok(Self {
            epsilon,
            smoother,
            amplitude,
        })
    }

    /// Default regularization width scaling with the problem: `1e−3 · ρ(x₀)`.
    pub fn epsilon_from_initial_rho(rho0: f64) -> f64 {
        1e-3 * rho0
    }

    /// The same law with a different amplitude (staged policies).
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }
}

/// Amplitude staging over ρ: full authority at high ρ, reduced at
/// intermediate ρ, terminal below `rho_lo` (the low-energy controller is a
/// different mechanism and out of scope here).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePolicy {
    pub rho_hi: f64,
    pub rho_lo: f64,
    pub a_mid: f64,
}

impl StagePolicy {
    pub fn new(rho_hi: f64, rho_lo: f64, a_mid: f64) -> Result<Self> {
        if !(rho_lo > 0.0 && rho_hi > rho_lo) {
            return Err(Error::invalid(
                "stage thresholds",
                format!("need rho_hi > rho_lo > 0, got hi = {rho_hi}, lo = {rho_lo}"),
            ));
        }
        if !(a_mid > 0.0 && a_mid < 1.0) {
            return Err(Error::invalid("a_mid", format!("must lie in (0, 1), got {a_mid}")));
        }
        Ok(Self { rho_hi, rho_lo, a_mid })
    }
}

impl Default for StagePolicy {
    fn default() -> Self {
        Self {
            rho_hi: 10.0,
            rho_lo: 1.0,
            a_mid: 0.5,
        }
    }
}

/// Outcome of the staging decision at a given ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDecision {
    pub amplitude: f64,
    pub terminal: bool,
}

/// Amplitude for the current ρ; `terminal` once ρ drops below `rho_lo`.
pub fn stage_select(policy: &StagePolicy, rho: f64) -> StageDecision {
    if rho >= policy.rho_hi {
        StageDecision {
            amplitude: 1.0,
            terminal: false,
        }
    } else if rho >= policy.rho_lo {
        StageDecision {
            amplitude: policy.a_mid,
            terminal: false,
        }
    } else {
        StageDecision {
            amplitude: policy.a_mid,
            terminal: true,
        }
    }
}

/// The exact control as a set: a point `{−sign σ}` off the surface, the
/// whole interval `[−1, 1]` on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ControlInterval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }
}

/// Switching value `σ(x) = ⟨B, ∂ρ/∂x⟩` extracted from a dual solution.
pub fn switching_value_from(sol: &DualSolution) -> f64 {
    b_dot(&sol.grad_rho)
}

/// Switching value `σ(x) = Σᵢ ∂ρ/∂yᵢ` at a state.
pub fn switching_value(sys: &OscillatorSystem, s: &State, cfg: &DualConfig) -> Result<f64> {
    Ok(switching_value_from(&dual::solve_dual(sys, s, cfg)?))
}

/// Exact (multivalued) generalized dry-friction law.
pub fn control_exact(sys: &OscillatorSystem, s: &State, cfg: &DualConfig) -> Result<ControlInterval> {
    let sigma = switching_value(sys, s, cfg)?;
    Ok(if sigma > 0.0 {
        ControlInterval::point(-1.0)
    } else if sigma < 0.0 {
        ControlInterval::point(1.0)
    } else {
        ControlInterval { lo: -1.0, hi: 1.0 }
    })
}

/// Regularized control value `−amplitude · smoother(σ/ε)`.
pub fn regularized_from_sigma(sigma: f64, law: &ControlLaw) -> f64 {
    -law.amplitude * law.smoother.apply(sigma / law.epsilon)
}

/// Regularized control at a state.
pub fn control_regularized(
    sys: &OscillatorSystem,
    s: &State,
    law: &ControlLaw,
    cfg: &DualConfig,
) -> Result<f64> {
    Ok(regularized_from_sigma(switching_value(sys, s, cfg)?, law))
}
