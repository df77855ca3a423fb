//! The limit support function `𝕳(z)` of the normalized reachable set.
//!
//! `𝕳(z)` is the average of `|Σ zᵢ cos φᵢ|` over the torus of phases, a
//! norm of `z ∈ ℝᴺ`. For `N = 1` it is `(2/π)|z|`. For `N ≥ 2` the angle of
//! the largest coordinate is integrated in closed form ([`inner_marginal`]),
//! which removes the kink of the absolute value from that axis; the
//! remaining `N−1` angles go through a tensor rule, Chebyshev–Gauss in
//! `tᵢ = cos φᵢ` by default (the `(1−t²)^{−1/2}` weight of the cosine
//! substitution is exactly the Chebyshev weight). Gradients are the exact
//! derivatives of the discrete functional, so finite differences of
//! [`h_eval`] reproduce [`h_grad`] to rounding, and the Euler identity
//! `⟨z, ∇𝕳⟩ = 𝕳(z)` holds exactly (the discrete rule is 1-homogeneous).

use crate::error::{Error, Result};
use crate::exec::{indexed_map, Exec};
use crate::model::{Momentum, OscillatorSystem};
use std::f64::consts::FRAC_2_PI;

/// Tensor rules beyond this many oscillators are refused (node count grows
/// as `nodes^(N−1)`).
pub const MAX_TENSOR_OSCILLATORS: usize = 6;

/// Node-count threshold below which the parallel path is not worth the
/// scheduling overhead.
const PARALLEL_NODE_THRESHOLD: usize = 1 << 15;

/// Node placement for the outer angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Chebyshev–Gauss nodes in `t = cos φ` (default; spectral accuracy away
    /// from coordinate ties).
    ChebyshevGauss,
    /// Midpoint rule in the angle itself. Use an even node count so the node
    /// set is symmetric under `t ↦ −t`.
    UniformAngle,
}

/// Discretization of the outer angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    nodes_per_axis: usize,
    scheme: Scheme,
}

impl QuadratureSpec {
    pub fn new(nodes_per_axis: usize, scheme: Scheme) -> Result<Self> {
        if nodes_per_axis < 2 {
            return Err(Error::invalid("nodes_per_axis", "must be at least 2"));
        }
        Ok(Self { nodes_per_axis, scheme })
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn nodes(&self, count: usize) -> Vec<f64> {
        match self.scheme {
            Scheme::ChebyshevGauss => (1..=count)
                .map(|k| ((2 * k - 1) as f64 * std::f64::consts::PI / (2 * count) as f64).cos())
                .collect(),
            Scheme::UniformAngle => (0..count)
                .map(|k| ((k as f64 + 0.5) * std::f64::consts::TAU / count as f64).cos())
                .collect(),
        }
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes_per_axis: 64,
            scheme: Scheme::ChebyshevGauss,
        }
    }
}

/// Value, gradient and a two-resolution error estimate of `𝕳`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportValue {
    pub value: f64,
    /// Gradient of `𝕳` at the signed argument; entries are bounded by `2/π`.
    pub gradient: Vec<f64>,
    /// `|value(n) − value(3n/2)|`; zero where the evaluation is exact.
    pub estimated_error: f64,
}

/// Support value pulled back to momentum space, `H_Ω(p) = 𝕳(z(p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSupport {
    pub value: f64,
    /// Length-`2N` gradient in `p` by the chain rule through `z(p)`.
    pub gradient: Vec<f64>,
    pub estimated_error: f64,
    /// Blocks with `zᵢ = 0`, where the chain rule contributes nothing.
    pub degenerate_blocks: Vec<usize>,
}

/// Angular average `(1/2π) ∫₀^{2π} |c + a cos φ| dφ` in closed form.
///
/// Equals `|c|` once `|c| ≥ a`; at `c = 0` it is `(2/π)a`. Even and convex
/// in `c`, nondecreasing in `a`, jointly 1-homogeneous.
pub fn inner_marginal(c: f64, a: f64) -> f64 {
    debug_assert!(a >= 0.0);
    let c = c.abs();
    if c >= a {
        c
    } else {
        FRAC_2_PI * (c * (c / a).asin() + (a * a - c * c).sqrt())
    }
}

/// `inner_marginal` together with its partial derivatives `(∂/∂c, ∂/∂a)`.
///
/// `∂/∂c = (2/π) asin(c/a)` saturating to `sign c`, `∂/∂a = (2/π)√(1−(c/a)²)`
/// vanishing once `|c| ≥ a`; both continuous, which is the point of closing
/// this axis analytically.
pub fn inner_marginal_with_partials(c: f64, a: f64) -> (f64, f64, f64) {
    debug_assert!(a >= 0.0);
    let ac = c.abs();
    if ac >= a {
        let dc = if c > 0.0 {
            1.0
        } else if c < 0.0 {
            -1.0
        } else {
            0.0
        };
        (ac, dc, 0.0)
    } else {
        let u = c / a;
        let root = (a * a - c * c).sqrt();
        let v = FRAC_2_PI * (ac * (ac / a).asin() + root);
        (v, FRAC_2_PI * u.asin(), FRAC_2_PI * root / a)
    }
}

/// Evaluate `𝕳` with gradient and a two-resolution error estimate.
///
/// Exact closed form for `N = 1`; tensor quadrature otherwise.
pub fn h_eval(z: &[f64], q: &QuadratureSpec) -> Result<SupportValue> {
    h_eval_with(z, q, Exec::default())
}

pub fn h_eval_with(z: &[f64], q: &QuadratureSpec, exec: Exec) -> Result<SupportValue> {
    check_z(z)?;
    if z.len() == 1 {
        let value = FRAC_2_PI * z[0].abs();
        return Ok(SupportValue {
            value,
            gradient: vec![FRAC_2_PI * sign_or_zero(z[0])],
            estimated_error: 0.0,
        });
    }
    h_eval_via_quadrature_with(z, q, exec)
}

/// Evaluate `𝕳` through the tensor path regardless of dimension.
///
/// Diagnostic entry point: for `N = 1` the tensor degenerates to the exact
/// inner marginal and must agree with the closed form.
pub fn h_eval_via_quadrature(z: &[f64], q: &QuadratureSpec) -> Result<SupportValue> {
    h_eval_via_quadrature_with(z, q, Exec::default())
}

pub fn h_eval_via_quadrature_with(z: &[f64], q: &QuadratureSpec, exec: Exec) -> Result<SupportValue> {
    check_z(z)?;
    let (value, gradient) = tensor_value_grad(z, q, q.nodes_per_axis, exec)?;
    let coarse_exact = z.len() == 1 || z.iter().filter(|v| **v != 0.0).count() <= 1;
    let estimated_error = if coarse_exact {
        0.0
    } else {
        let refined = q.nodes_per_axis + q.nodes_per_axis / 2;
        let (v2, _) = tensor_value_grad(z, q, refined, exec)?;
        (value - v2).abs()
    };
    Ok(SupportValue {
        value,
        gradient,
        estimated_error,
    })
}

/// Gradient of `𝕳` at `z ≠ 0`; odd in each coordinate and satisfying the
/// Euler identity `⟨z, ∇𝕳(z)⟩ = 𝕳(z)` to rounding.
pub fn h_grad(z: &[f64], q: &QuadratureSpec) -> Result<Vec<f64>> {
    h_grad_with(z, q, Exec::default())
}

pub fn h_grad_with(z: &[f64], q: &QuadratureSpec, exec: Exec) -> Result<Vec<f64>> {
    check_z(z)?;
    if z.iter().all(|&v| v == 0.0) {
        return Err(Error::GradientAtZero);
    }
    let (_, g) = value_grad(z, q, exec)?;
    Ok(g)
}

/// Single-pass value and gradient without the error estimate — the workhorse
/// for the dual solver's inner iterations.
pub(crate) fn value_grad(z: &[f64], q: &QuadratureSpec, exec: Exec) -> Result<(f64, Vec<f64>)> {
    if z.len() == 1 {
        return Ok((
            FRAC_2_PI * z[0].abs(),
            vec![FRAC_2_PI * sign_or_zero(z[0])],
        ));
    }
    tensor_value_grad(z, q, q.nodes_per_axis, exec)
}

/// Like [`value_grad`] but with the analytically closed axis pinned by the
/// caller instead of chosen from `argmax |zᵢ|`.
///
/// The discrete functional switches branches when the argmax moves across a
/// coordinate tie, and the two branches disagree at the quadrature-error
/// level; an optimizer crossing the tie would see a kink it cannot converge
/// through. Pinning the axis for the whole solve keeps the functional C¹.
pub(crate) fn value_grad_pinned(
    z: &[f64],
    q: &QuadratureSpec,
    exec: Exec,
    inner: usize,
) -> Result<(f64, Vec<f64>)> {
    if z.len() == 1 {
        return Ok((
            FRAC_2_PI * z[0].abs(),
            vec![FRAC_2_PI * sign_or_zero(z[0])],
        ));
    }
    tensor_value_grad_at(z, q, q.nodes_per_axis, exec, Some(inner))
}

/// `H_Ω(p) = 𝕳(z(p))` with its momentum-space gradient.
///
/// Blocks with `zᵢ = 0` get zero gradient entries and are reported in
/// `degenerate_blocks` rather than treated as fatal.
pub fn h_of_p(sys: &OscillatorSystem, p: &Momentum, q: &QuadratureSpec) -> Result<MomentumSupport> {
    h_of_p_with(sys, p, q, Exec::default())
}

pub fn h_of_p_with(
    sys: &OscillatorSystem,
    p: &Momentum,
    q: &QuadratureSpec,
    exec: Exec,
) -> Result<MomentumSupport> {
    if p.as_slice().len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: p.as_slice().len(),
        });
    }
    let z = sys.z_map(p);
    let mut degenerate = Vec::new();
    let mut gradient = vec![0.0; sys.dim()];
    if z.iter().all(|&v| v == 0.0) {
        return Ok(MomentumSupport {
            value: 0.0,
            gradient,
            estimated_error: 0.0,
            degenerate_blocks: (0..sys.n()).collect(),
        });
    }
    let sv = h_eval_with(&z, q, exec)?;
    for (i, &w) in sys.omegas().iter().enumerate() {
        if z[i] == 0.0 {
            degenerate.push(i);
            continue;
        }
        // ∂z/∂ξ = ξ/(ω²z), ∂z/∂η = η/z
        gradient[2 * i] = sv.gradient[i] * p.xi(i) / (w * w * z[i]);
        gradient[2 * i + 1] = sv.gradient[i] * p.eta(i) / z[i];
    }
    Ok(MomentumSupport {
        value: sv.value,
        gradient,
        estimated_error: sv.estimated_error,
        degenerate_blocks: degenerate,
    })
}

/// Exact finite-horizon support rate `(1/T) ∫₀ᵀ |⟨B, e^{A*s}p⟩| ds`.
///
/// The integrand is `|Σ zᵢ cos(ωᵢ s + θᵢ)|`; for non-resonant frequencies
/// this average converges to `𝕳(z(p))` as `T` grows, which is the testable
/// content of the reachable-set asymptotics.
pub fn reachable_support_rate(sys: &OscillatorSystem, p: &Momentum, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", format!("must be positive, got {horizon}")));
    }
    if p.as_slice().len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: p.as_slice().len(),
        });
    }
    let z = sys.z_map(p);
    if z.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let phases: Vec<(f64, f64, f64)> = sys
        .omegas()
        .iter()
        .enumerate()
        .filter(|&(i, _)| z[i] > 0.0)
        .map(|(i, &w)| {
            // zᵢ cos(ω s + θᵢ) with cos-coefficient ηᵢ and sin-coefficient ξᵢ/ωᵢ
            let theta = (-p.xi(i) / w).atan2(p.eta(i));
            (z[i], w, theta)
        })
        .collect();
    let f = |s: f64| -> f64 {
        phases
            .iter()
            .map(|&(zi, w, th)| zi * (w * s + th).cos())
            .sum::<f64>()
            .abs()
    };
    let scale: f64 = z.iter().sum();
    let panel = (std::f64::consts::FRAC_PI_2 / sys.max_omega()).min(horizon);
    let panels = (horizon / panel).ceil() as usize;
    let tol_per_panel = 1e-11 * scale * horizon / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = horizon * k as f64 / panels as f64;
        let b = horizon * (k + 1) as f64 / panels as f64;
        total += adaptive_simpson(&f, a, b, tol_per_panel);
    }
    Ok(total / horizon)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 28)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

fn check_z(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { what: "z" });
    }
    Ok(())
}

fn sign_or_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Neumaier-compensated accumulator; keeps chunked sums deterministic *and*
/// accurate for large tensor grids.
#[derive(Debug, Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

struct ChunkSums {
    value: Compensated,
    grad_outer: Vec<f64>,
    grad_inner: f64,
}

/// Tensor evaluation of the averaged absolute cosine sum and its gradient.
///
/// The largest `|zᵢ|` takes the analytically closed axis; the others get
/// `nodes` quadrature nodes each. The sum is chunked by the first outer axis
/// and chunks combine in index order, so sequential and parallel runs agree
/// bitwise.
fn tensor_value_grad(
    z: &[f64],
    q: &QuadratureSpec,
    nodes: usize,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    tensor_value_grad_at(z, q, nodes, exec, None)
}

fn tensor_value_grad_at(
    z: &[f64],
    q: &QuadratureSpec,
    nodes: usize,
    exec: Exec,
    pinned_inner: Option<usize>,
) -> Result<(f64, Vec<f64>)> {
    let dim = z.len();
    if dim > MAX_TENSOR_OSCILLATORS {
        return Err(Error::invalid(
            "z",
            format!("tensor quadrature supports at most {MAX_TENSOR_OSCILLATORS} oscillators, got {dim}"),
        ));
    }
    let w: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    let mut grad = vec![0.0; dim];
    // inner axis: first coordinate attaining the maximum magnitude, unless
    // the caller pinned one (the closed form is exact for any axis; only
    // quadrature accuracy prefers the largest)
    let inner = match pinned_inner {
        Some(i) if i < dim && w[i] > 0.0 => i,
        _ => {
            let mut best = 0;
            for (i, &v) in w.iter().enumerate() {
                if v > w[best] {
                    best = i;
                }
            }
            best
        }
    };
    let a = w[inner];
    if a == 0.0 {
        return Ok((0.0, grad));
    }
    if dim == 1 {
        let (v, _, da) = inner_marginal_with_partials(0.0, a);
        grad[0] = da * sign_or_zero(z[0]);
        return Ok((v, grad));
    }

    let outer_map: Vec<usize> = (0..dim).filter(|&i| i != inner).collect();
    let outer_w: Vec<f64> = outer_map.iter().map(|&i| w[i]).collect();
    let k = outer_w.len();
    let t = q.nodes(nodes);
    let total_nodes = nodes.pow(k as u32);
    let mode = if total_nodes >= PARALLEL_NODE_THRESHOLD {
        exec
    } else {
        Exec::Sequential
    };

    let chunks = indexed_map(mode, nodes, |c0| chunk_sums(c0, &t, &outer_w, a));

    let mut value = Compensated::default();
    let mut grad_outer = vec![0.0; k];
    let mut grad_inner = 0.0;
    for ch in &chunks {
        value.add(ch.value.total());
        grad_inner += ch.grad_inner;
        for j in 0..k {
            grad_outer[j] += ch.grad_outer[j];
        }
    }
    let norm = (total_nodes as f64).recip();
    grad[inner] = grad_inner * norm * sign_or_zero(z[inner]);
    for (j, &orig) in outer_map.iter().enumerate() {
        grad[orig] = grad_outer[j] * norm * sign_or_zero(z[orig]);
    }
    Ok((value.total() * norm, grad))
}

fn chunk_sums(c0: usize, t: &[f64], outer_w: &[f64], a: f64) -> ChunkSums {
    let k = outer_w.len();
    let n = t.len();
    let mut value = Compensated::default();
    let mut grad_outer = vec![0.0; k];
    let mut grad_inner = 0.0;

    if k == 1 {
        let c = outer_w[0] * t[c0];
        let (v, dc, da) = inner_marginal_with_partials(c, a);
        value.add(v);
        grad_outer[0] += dc * t[c0];
        grad_inner += da;
        return ChunkSums { value, grad_outer, grad_inner };
    }

    let mut idx = vec![0usize; k];
    idx[0] = c0;
    // prefix[j] = Σ_{i ≤ j} outer_w[i] · t[idx[i]]
    let mut prefix = vec![0.0; k];
    prefix[0] = outer_w[0] * t[c0];
    for j in 1..k {
        prefix[j] = prefix[j - 1] + outer_w[j] * t[0];
    }
    loop {
        let (v, dc, da) = inner_marginal_with_partials(prefix[k - 1], a);
        value.add(v);
        grad_inner += da;
        for j in 0..k {
            grad_outer[j] += dc * t[idx[j]];
        }
        // odometer over axes 1..k (axis 0 is pinned to the chunk)
        let mut lvl = k - 1;
        loop {
            idx[lvl] += 1;
            if idx[lvl] < n {
                for j in lvl..k {
                    prefix[j] = prefix[j - 1] + outer_w[j] * t[idx[j]];
                }
                break;
            }
            idx[lvl] = 0;
            if lvl == 1 {
                return ChunkSums { value, grad_outer, grad_inner };
            }
            lvl -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Momentum, OscillatorSystem};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_2_PI, PI, TAU};

    // Frozen against a 10^6-point trapezoid oracle (see tests/support_oracles.rs)
    // and the analytic split of the integral at the zero crossing.
    const INNER_HALF: f64 = 0.717_995_562_088_458_7;

    #[test]
    fn inner_marginal_anchors() {
        assert_abs_diff_eq!(inner_marginal(0.0, 1.0), FRAC_2_PI, epsilon = 1e-15);
        assert_abs_diff_eq!(inner_marginal(5.0, 1.0), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inner_marginal(0.5, 1.0), INNER_HALF, epsilon = 1e-15);
        // even in c, continuous across |c| = a
        assert_eq!(inner_marginal(-0.5, 1.0), inner_marginal(0.5, 1.0));
        assert_abs_diff_eq!(inner_marginal(1.0 - 1e-12, 1.0), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn inner_marginal_partials_are_consistent() {
        for &(c, a) in &[(0.3, 1.0), (-0.7, 2.0), (1.5, 1.0), (0.0, 0.4)] {
            let (v, dc, da) = inner_marginal_with_partials(c, a);
            assert_abs_diff_eq!(v, inner_marginal(c, a), epsilon = 1e-15);
            let h = 1e-6;
            let fd_c = (inner_marginal(c + h, a) - inner_marginal(c - h, a)) / (2.0 * h);
            assert_abs_diff_eq!(dc, fd_c, epsilon = 1e-8);
            if a > 0.0 {
                let fd_a = (inner_marginal(c, a + h) - inner_marginal(c, a - h)) / (2.0 * h);
                assert_abs_diff_eq!(da, fd_a, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn n1_closed_form() {
        let q = QuadratureSpec::default();
        let sv = h_eval(&[1.0], &q).unwrap();
        assert_abs_diff_eq!(sv.value, FRAC_2_PI, epsilon = 1e-15);
        assert_abs_diff_eq!(sv.gradient[0], FRAC_2_PI, epsilon = 1e-15);
        assert_eq!(sv.estimated_error, 0.0);
    }

    #[test]
    fn n1_forced_through_tensor_path_matches() {
        let q = QuadratureSpec::default();
        let sv = h_eval_via_quadrature(&[1.0], &q).unwrap();
        assert_abs_diff_eq!(sv.value, FRAC_2_PI, epsilon = 1e-12);
        assert_abs_diff_eq!(sv.gradient[0], FRAC_2_PI, epsilon = 1e-12);
    }

    #[test]
    fn zero_vector_evaluates_to_zero() {
        let q = QuadratureSpec::default();
        let sv = h_eval(&[0.0, 0.0], &q).unwrap();
        assert_eq!(sv.value, 0.0);
        assert_eq!(sv.gradient, vec![0.0, 0.0]);
    }

    #[test]
    fn equal_pair_matches_eight_over_pi_squared() {
        let q = QuadratureSpec::default();
        let sv = h_eval(&[1.0, 1.0], &q).unwrap();
        assert_abs_diff_eq!(sv.value, 8.0 / (PI * PI), epsilon = 2e-8);
    }

    #[test]
    fn three_four_matches_frozen_oracle() {
        // 2.919486721006234 from a high-precision split quadrature; the dense
        // uniform-grid oracle cross-check lives in tests/support_oracles.rs.
        let q = QuadratureSpec::default();
        let sv = h_eval(&[3.0, 4.0], &q).unwrap();
        assert_abs_diff_eq!(sv.value, 2.919_486_721_006_234, epsilon = 1e-9);
        assert!(sv.estimated_error < 1e-9);
    }

    #[test]
    fn uniform_angle_scheme_agrees_with_chebyshev() {
        let qc = QuadratureSpec::default();
        let qu = QuadratureSpec::new(256, Scheme::UniformAngle).unwrap();
        let a = h_eval(&[3.0, 4.0], &qc).unwrap().value;
        let b = h_eval(&[3.0, 4.0], &qu).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }

    #[test]
    fn gradient_anchors_and_oddness() {
        let q = QuadratureSpec::default();
        assert_abs_diff_eq!(h_grad(&[1.0], &q).unwrap()[0], FRAC_2_PI, epsilon = 1e-15);
        assert_abs_diff_eq!(h_grad(&[-1.0], &q).unwrap()[0], -FRAC_2_PI, epsilon = 1e-15);
        let g = h_grad(&[1.0, 2.0], &q).unwrap();
        let gm = h_grad(&[-1.0, 2.0], &q).unwrap();
        assert_abs_diff_eq!(g[0], -gm[0], epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], gm[1], epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = QuadratureSpec::default();
        let z = [1.0, 2.0];
        let g = h_grad(&z, &q).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let fd = (h_eval(&zp, &q).unwrap().value - h_eval(&zm, &q).unwrap().value) / (2.0 * h);
            assert_abs_diff_eq!(g[j], fd, epsilon = 1e-5 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn gradient_at_zero_is_refused() {
        let q = QuadratureSpec::default();
        assert!(matches!(h_grad(&[0.0, 0.0], &q), Err(Error::GradientAtZero)));
        assert!(matches!(h_eval(&[], &q), Err(Error::EmptyInput)));
    }

    #[test]
    fn euler_identity_holds_for_the_discrete_functional() {
        let q = QuadratureSpec::default();
        for z in [vec![0.3, 1.7], vec![1.0, 0.2, 0.9], vec![2.0, 2.0, 2.0]] {
            let (v, g) = value_grad(&z, &q, Exec::Sequential).unwrap();
            let pairing: f64 = z.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(pairing, v, epsilon = 1e-12 * v.max(1.0));
        }
    }

    #[test]
    fn h_of_p_examples() {
        let q = QuadratureSpec::default();
        let s1 = OscillatorSystem::new(vec![1.0]).unwrap();
        let hp = h_of_p(&s1, &Momentum::new(vec![0.0, 1.0]).unwrap(), &q).unwrap();
        assert_abs_diff_eq!(hp.value, FRAC_2_PI, epsilon = 1e-14);
        assert!(hp.degenerate_blocks.is_empty());

        let hp0 = h_of_p(&s1, &Momentum::new(vec![0.0, 0.0]).unwrap(), &q).unwrap();
        assert_eq!(hp0.value, 0.0);
        assert_eq!(hp0.degenerate_blocks, vec![0]);

        let s12 = OscillatorSystem::new(vec![1.0, 2.0]).unwrap();
        let hp = h_of_p(&s12, &Momentum::new(vec![1.0, 0.0, 0.0, 1.0]).unwrap(), &q).unwrap();
        // z(p) = (1, 1)
        assert_abs_diff_eq!(hp.value, 8.0 / (PI * PI), epsilon = 2e-8);
        // block 1: ∂H/∂ξ = g·ξ/(ω²z); block 2: ∂H/∂η = g·η/z
        assert!(hp.gradient[1].abs() < 1e-14);
        assert!(hp.gradient[2].abs() < 1e-14);
        assert!(hp.gradient[0] > 0.0 && hp.gradient[3] > 0.0);
    }

    #[test]
    fn h_of_p_gradient_matches_finite_differences() {
        let q = QuadratureSpec::default();
        let sys = OscillatorSystem::new(vec![1.0, 2.0]).unwrap();
        let p0 = vec![0.4, -0.8, 1.2, 0.5];
        let hp = h_of_p(&sys, &Momentum::new(p0.clone()).unwrap(), &q).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut pp = p0.clone();
            let mut pm = p0.clone();
            pp[j] += h;
            pm[j] -= h;
            let vp = h_of_p(&sys, &Momentum::new(pp).unwrap(), &q).unwrap().value;
            let vm = h_of_p(&sys, &Momentum::new(pm).unwrap(), &q).unwrap().value;
            let fd = (vp - vm) / (2.0 * h);
            assert_abs_diff_eq!(hp.gradient[j], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn support_rate_period_average_is_exact() {
        let sys = OscillatorSystem::new(vec![1.0]).unwrap();
        let p = Momentum::new(vec![0.0, 1.0]).unwrap();
        for k in [1u32, 5] {
            let rate = reachable_support_rate(&sys, &p, TAU * k as f64).unwrap();
            assert_abs_diff_eq!(rate, FRAC_2_PI, epsilon = 1e-9);
        }
    }

    #[test]
    fn support_rate_zero_momentum() {
        let sys = OscillatorSystem::new(vec![1.0, 2.0]).unwrap();
        let p = Momentum::new(vec![0.0; 4]).unwrap();
        assert_eq!(reachable_support_rate(&sys, &p, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn support_rate_approaches_the_limit_norm() {
        let sys = OscillatorSystem::new(vec![1.0, std::f64::consts::SQRT_2]).unwrap();
        let p = Momentum::new(vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let q = QuadratureSpec::default();
        let target = h_eval(&[1.0, 1.0], &q).unwrap().value;
        let rate = reachable_support_rate(&sys, &p, 1e3).unwrap();
        assert!((rate - target).abs() / target < 1e-2);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let q = QuadratureSpec::new(24, Scheme::ChebyshevGauss).unwrap();
        let z = [0.9, 1.7, 0.4, 1.1];
        let (vs, gs) = tensor_value_grad(&z, &q, 24, Exec::Sequential).unwrap();
        let (vp, gp) = tensor_value_grad(&z, &q, 24, Exec::Parallel).unwrap();
        assert_eq!(vs, vp);
        assert_eq!(gs, gp);
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let q = QuadratureSpec::new(2, Scheme::ChebyshevGauss).unwrap();
        let z = vec![1.0; MAX_TENSOR_OSCILLATORS + 1];
        assert!(h_eval(&z, &q).is_err());
    }
}
