//! The oscillator system and its phase-space bookkeeping.
//!
//! A system of `N` independent linear oscillators under one scalar control,
//! `ẋᵢ = yᵢ`, `ẏᵢ = −ωᵢ²xᵢ + u`, stored as the frequency list; the drift
//! matrix `A` is block-diagonal with 2×2 blocks `[[0,1],[−ωᵢ²,0]]` and the
//! input vector `B` stacks `(0,1)` per block. States and momenta are flat
//! interleaved vectors of block pairs.

use crate::error::{Error, Result};

/// Default lattice-size cap for the resonance search, in grid cells.
pub const DEFAULT_RESONANCE_CAP: f64 = 1e8;

/// A system of `N` linear oscillators with positive eigenfrequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorSystem {
    omegas: Vec<f64>,
}

impl OscillatorSystem {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::EmptySystem);
        }
        for (i, &w) in omegas.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::BadFrequency { index: i, value: w });
            }
        }
        Ok(Self { omegas })
    }

    /// Number of oscillators.
    pub fn n(&self) -> usize {
        self.omegas.len()
    }

    /// Phase-space dimension `2N`.
    pub fn dim(&self) -> usize {
        2 * self.omegas.len()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn max_omega(&self) -> f64 {
        self.omegas.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min_omega(&self) -> f64 {
        self.omegas.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Period of the slowest oscillator, `2π / min ωᵢ`.
    pub fn slowest_period(&self) -> f64 {
        std::f64::consts::TAU / self.min_omega()
    }

    /// Operator norm of the drift matrix: `max(1, max ωᵢ²)` over the blocks.
    pub fn drift_norm(&self) -> f64 {
        let w = self.max_omega();
        (w * w).max(1.0)
    }

    /// Uncontrolled vector field `Ax`: component pairs `(yᵢ, −ωᵢ²xᵢ)`.
    pub fn drift(&self, s: &State) -> Result<Vec<f64>> {
        self.check_dim(s.as_slice().len())?;
        let mut out = vec![0.0; self.dim()];
        self.apply_a(s.as_slice(), &mut out);
        Ok(out)
    }

    /// `out = A v` on a raw interleaved vector (no allocation).
    pub fn apply_a(&self, v: &[f64], out: &mut [f64]) {
        for (i, &w) in self.omegas.iter().enumerate() {
            out[2 * i] = v[2 * i + 1];
            out[2 * i + 1] = -w * w * v[2 * i];
        }
    }

    /// Reduced coordinates `zᵢ = sqrt(ηᵢ² + ξᵢ²/ωᵢ²)` of a momentum.
    ///
    /// `z` is exactly invariant under the costate rotation `e^{A*t}` and
    /// positively 1-homogeneous in `p`.
    pub fn z_map(&self, p: &Momentum) -> Vec<f64> {
        self.omegas
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let xi = p.0[2 * i];
                let eta = p.0[2 * i + 1];
                (eta * eta + (xi / w) * (xi / w)).sqrt()
            })
            .collect()
    }

    /// Total mechanical energy `½ Σ (yᵢ² + ωᵢ²xᵢ²)`.
    pub fn energy(&self, s: &State) -> f64 {
        0.5 * self
            .omegas
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let x = s.0[2 * i];
                let y = s.0[2 * i + 1];
                y * y + w * w * x * x
            })
            .sum::<f64>()
    }

    /// `e^{At} s`: each block rotates as
    /// `(x, y) ↦ (x cos ωt + y sin(ωt)/ω, −ωx sin ωt + y cos ωt)`.
    pub fn rotate_state(&self, s: &State, t: f64) -> State {
        let mut out = s.0.clone();
        for (i, &w) in self.omegas.iter().enumerate() {
            let (sn, cs) = (w * t).sin_cos();
            let x = s.0[2 * i];
            let y = s.0[2 * i + 1];
            out[2 * i] = x * cs + y * sn / w;
            out[2 * i + 1] = -x * w * sn + y * cs;
        }
        State(out)
    }

    /// `e^{A*t} p`: each block maps
    /// `(ξ, η) ↦ (ξ cos ωt − ωη sin ωt, ξ sin(ωt)/ω + η cos ωt)`.
    pub fn rotate_costate(&self, p: &Momentum, t: f64) -> Momentum {
        let mut out = p.0.clone();
        for (i, &w) in self.omegas.iter().enumerate() {
            let (sn, cs) = (w * t).sin_cos();
            let xi = p.0[2 * i];
            let eta = p.0[2 * i + 1];
            out[2 * i] = xi * cs - eta * w * sn;
            out[2 * i + 1] = xi * sn / w + eta * cs;
        }
        Momentum(out)
    }

    /// Exhaustive search for integer relations `Σ mᵢωᵢ ≈ 0` with
    /// `‖m‖∞ ≤ bound`, up to sign (first nonzero entry positive).
    ///
    /// Diagnostic only: the feedback law is applied unchanged in the
    /// resonant case. Tolerance defaults to `1e−9 · max ωᵢ · bound`.
    pub fn detect_resonance(&self, bound: u32, tolerance: Option<f64>) -> Result<ResonanceReport> {
        self.detect_resonance_with_cap(bound, tolerance, DEFAULT_RESONANCE_CAP)
    }

    pub fn detect_resonance_with_cap(
        &self,
        bound: u32,
        tolerance: Option<f64>,
        max_cells: f64,
    ) -> Result<ResonanceReport> {
        if bound < 1 {
            return Err(Error::invalid("bound", "must be at least 1"));
        }
        let tol = match tolerance {
            Some(t) if t > 0.0 => t,
            Some(t) => {
                return Err(Error::invalid("tolerance", format!("must be positive, got {t}")))
            }
            None => self.default_resonance_tolerance(bound),
        };
        let n = self.n();
        let side = 2.0 * bound as f64 + 1.0;
        let cells = side.powi(n as i32);
        if cells > max_cells {
            return Err(Error::SearchSpaceTooLarge { cells, cap: max_cells });
        }

        let m_max = bound as i64;
        let mut digits = vec![-m_max; n];
        let mut witnesses = Vec::new();
        'outer: loop {
            // canonical representative: first nonzero digit positive
            if let Some(&first) = digits.iter().find(|&&d| d != 0) {
                if first > 0 {
                    let s: f64 = digits
                        .iter()
                        .zip(&self.omegas)
                        .map(|(&m, &w)| m as f64 * w)
                        .sum();
                    if s.abs() <= tol {
                        witnesses.push(digits.clone());
                    }
                }
            }
            // odometer increment
            for k in (0..n).rev() {
                digits[k] += 1;
                if digits[k] <= m_max {
                    continue 'outer;
                }
                digits[k] = -m_max;
            }
            break;
        }
        Ok(ResonanceReport {
            resonant: !witnesses.is_empty(),
            witnesses,
            bound,
            tolerance: tol,
        })
    }

    /// `1e−9 · max ωᵢ · bound` — scales with the problem so that frequency
    /// lists scaled by a common factor classify identically.
    pub fn default_resonance_tolerance(&self, bound: u32) -> f64 {
        1e-9 * self.max_omega() * bound as f64
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Phase point as interleaved pairs `(x₁, y₁, …, x_N, y_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State(pub(crate) Vec<f64>);

impl State {
    pub fn new(flat: Vec<f64>) -> Result<Self> {
        check_flat(&flat, "state")?;
        Ok(Self(flat))
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut flat = Vec::with_capacity(2 * pairs.len());
        for &(x, y) in pairs {
            flat.push(x);
            flat.push(y);
        }
        Self::new(flat)
    }

    pub fn n_oscillators(&self) -> usize {
        self.0.len() / 2
    }

    pub fn position(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    pub fn velocity(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Costate as interleaved dual pairs `(ξ₁, η₁, …, ξ_N, η_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum(pub(crate) Vec<f64>);

impl Momentum {
    pub fn new(flat: Vec<f64>) -> Result<Self> {
        check_flat(&flat, "momentum")?;
        Ok(Self(flat))
    }

    pub fn xi(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    pub fn eta(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

fn check_flat(flat: &[f64], what: &'static str) -> Result<()> {
    if flat.is_empty() {
        return Err(Error::EmptyInput);
    }
    if flat.len() % 2 != 0 {
        return Err(Error::invalid("flat", "length must be even (pairs per oscillator)"));
    }
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { what });
    }
    Ok(())
}

/// Pairing `⟨B, v⟩ = Σᵢ v[2i+1]` of the input vector with an interleaved vector.
pub fn b_dot(v: &[f64]) -> f64 {
    v.iter().skip(1).step_by(2).sum()
}

/// Outcome of the integer-relation search among the eigenfrequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceReport {
    pub resonant: bool,
    /// Canonical witnesses (first nonzero entry positive), enumeration order.
    pub witnesses: Vec<Vec<i64>>,
    pub bound: u32,
    pub tolerance: f64,
}
