//! Integration of the regularized controlled motion and its diagnostics.
//!
//! The motion is `ẋ = Ax + B·u_ε(x)` with `u_ε = −a(ρ)·smoother(σ/ε)`.
//! The right-hand side is Lipschitz with constant `O(1/ε)` inside the
//! regularization band, so besides the embedded error control the step size
//! is capped so that `|σ|` moves by at most `ε/2` per step near the
//! switching surface. Along the way the integrator records the norm ρ, the
//! switching value σ, the control, the Hamiltonian residual `⟨Ax, ∂ρ/∂x⟩`
//! (zero in exact arithmetic because ρ is invariant under the free rotation)
//! and the energy.
//!
//! Two operational tests of the underlying uniqueness theory live here as
//! well: the ε→0 Cauchy sweep with continuity probes, and the canonical
//! two-point system propagating `p = ∂ρ/∂x` alongside the state.

use crate::control::{regularized_from_sigma, stage_select, ControlLaw, Smoother, StagePolicy};
use crate::dual::{self, DualCache, DualConfig, DualSolution};
use crate::error::{Error, Result};
use crate::exec::{indexed_map, Exec};
use crate::model::{b_dot, Momentum, OscillatorSystem, State};
use crate::rk45::{integrate_adaptive, LoopExit, StepCommand, StepperOpts};
use std::cell::RefCell;
use std::collections::VecDeque;

/// Everything the integrator needs besides system and initial state.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t_max: f64,
    pub stepper: StepperOpts,
    pub law: ControlLaw,
    pub stages: StagePolicy,
    /// Standstill window; defaults to one slowest period `2π/min ωᵢ`.
    pub stall_window: Option<f64>,
    /// Relative ρ-decay below which the window declares standstill;
    /// non-positive disables the detector.
    pub stall_decay_rel: f64,
    /// Record every k-th accepted step (first and last always recorded).
    pub record_stride: usize,
    pub dual: DualConfig,
    /// Integrate the free motion `ẋ = Ax` (diagnostics still recorded).
    pub drift_only: bool,
    /// Relative state distance under which a cached dual solution is reused
    /// verbatim across integrator stages.
    pub cache_reuse_rel: f64,
    pub exec: Exec,
}

impl SimConfig {
    pub fn new(t_max: f64, law: ControlLaw, stages: StagePolicy) -> Result<Self> {
        let cfg = Self {
            t_max,
            stepper: StepperOpts::default(),
            law,
            stages,
            stall_window: None,
            stall_decay_rel: 1e-6,
            record_stride: 1,
            dual: DualConfig::default(),
            drift_only: false,
            cache_reuse_rel: 1e-10,
            exec: Exec::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("t_max", format!("must be positive, got {}", self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be at least 1"));
        }
        if !(self.stepper.rtol > 0.0 && self.stepper.atol > 0.0 && self.stepper.h_max > 0.0) {
            return Err(Error::invalid("stepper", "tolerances and h_max must be positive"));
        }
        if let Some(w) = self.stall_window {
            if !(w > 0.0) {
                return Err(Error::invalid("stall_window", "must be positive"));
            }
        }
        Ok(())
    }
}

/// One recorded point of a controlled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub u: f64,
    pub sigma: f64,
    pub rho: f64,
    pub h_res: f64,
    pub energy: f64,
}

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// ρ dropped below the terminal threshold; the low-energy controller
    /// takes over outside this crate's scope.
    TerminalStage,
    Horizon,
    Standstill,
    SolverFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::TerminalStage => "terminal-stage",
            Termination::Horizon => "horizon",
            Termination::Standstill => "standstill",
            Termination::SolverFailure => "solver-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub min_step: f64,
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Structural invariants every produced trajectory must satisfy:
    /// strictly increasing time, bounded control, finite entries, and
    /// ρ nonincreasing up to `band`.
    pub fn validate(&self, band: f64) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_rho = f64::INFINITY;
        for s in &self.samples {
            if !(s.t > prev_t) {
                return Err(Error::invalid("trajectory", format!("time not increasing at t = {}", s.t)));
            }
            if s.u.abs() > 1.0 + 1e-12 {
                return Err(Error::invalid("trajectory", format!("|u| > 1 at t = {}", s.t)));
            }
            let finite = s.state.as_slice().iter().all(|v| v.is_finite())
                && [s.u, s.sigma, s.rho, s.h_res, s.energy].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite { what: "trajectory sample" });
            }
            if s.rho > prev_rho + band {
                return Err(Error::invalid(
                    "trajectory",
                    format!("rho increased beyond the tolerance band at t = {}", s.t),
                ));
            }
            prev_t = s.t;
            prev_rho = s.rho;
        }
        Ok(())
    }
}

struct Recorder {
    samples: Vec<Sample>,
    stride: usize,
    since_last: usize,
}

impl Recorder {
    fn push(&mut self, sample: Sample, force: bool) {
        if force || self.since_last == 0 {
            if let Some(last) = self.samples.last() {
                if last.t == sample.t {
                    return;
                }
            }
            self.samples.push(sample);
        }
        self.since_last = (self.since_last + 1) % self.stride;
    }
}

fn make_sample(sys: &OscillatorSystem, t: f64, y: &[f64], u: f64, sol: &DualSolution) -> Sample {
    let state = State(y.to_vec());
    let h_res = hamiltonian_residual_from(sys, &state, sol);
    Sample {
        t,
        energy: sys.energy(&state),
        sigma: b_dot(&sol.grad_rho),
        rho: sol.rho,
        u,
        h_res,
        state,
    }
}

/// Integrate the regularized motion from `s0` until the terminal stage, the
/// horizon, a standstill, or a dual-solver failure (the last returns the
/// partial trajectory with the failure tag rather than an error).
pub fn integrate(sys: &OscillatorSystem, s0: &State, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if s0.as_slice().len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: s0.as_slice().len(),
        });
    }
    if s0.is_zero() {
        return Err(Error::ZeroState { what: "controlled motion" });
    }

    let cache = RefCell::new(DualCache::new(cfg.cache_reuse_rel));
    let sol0 = cache.borrow_mut().solve(sys, s0, &cfg.dual)?;
    let stage0 = stage_select(&cfg.stages, sol0.rho);
    let u0 = if cfg.drift_only {
        0.0
    } else {
        regularized_from_sigma(b_dot(&sol0.grad_rho), &cfg.law.with_amplitude(stage0.amplitude))
    };

    let mut rec = Recorder {
        samples: Vec::new(),
        stride: cfg.record_stride,
        since_last: 0,
    };
    rec.push(make_sample(sys, 0.0, s0.as_slice(), u0, &sol0), true);
    if stage0.terminal {
        return Ok(Trajectory {
            samples: rec.samples,
            termination: Termination::TerminalStage,
            accepted_steps: 0,
            rejected_steps: 0,
            min_step: 0.0,
        });
    }

    let window = cfg.stall_window.unwrap_or_else(|| sys.slowest_period());
    let mut rho_history: VecDeque<(f64, f64)> = VecDeque::new();
    rho_history.push_back((0.0, sol0.rho));
    let mut prev_sigma = b_dot(&sol0.grad_rho);
    let mut termination = Termination::Horizon;

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        sys.apply_a(y, dy);
        if cfg.drift_only {
            return Ok(());
        }
        let state = State(y.to_vec());
        let sol = cache.borrow_mut().solve(sys, &state, &cfg.dual)?;
        if !sol.converged {
            return Err(Error::DualSolverFailed {
                residual: sol.kkt_residual,
                iterations: sol.iterations,
            });
        }
        let amp = stage_select(&cfg.stages, sol.rho).amplitude;
        let u = regularized_from_sigma(b_dot(&sol.grad_rho), &cfg.law.with_amplitude(amp));
        for i in 0..sys.n() {
            dy[2 * i + 1] += u;
        }
        Ok(())
    };

    let rec_cell = RefCell::new(&mut rec);
    let observer = |acc: crate::rk45::Accepted<'_>| -> StepCommand {
        let state = State(acc.y.to_vec());
        let sol = match cache.borrow_mut().solve(sys, &state, &cfg.dual) {
            Ok(s) => s,
            Err(_) => {
                termination = Termination::SolverFailure;
                return StepCommand::Stop;
            }
        };
        if !sol.converged {
            termination = Termination::SolverFailure;
            return StepCommand::Stop;
        }
        let stage = stage_select(&cfg.stages, sol.rho);
        let sigma = b_dot(&sol.grad_rho);
        let u = if cfg.drift_only {
            0.0
        } else {
            regularized_from_sigma(sigma, &cfg.law.with_amplitude(stage.amplitude))
        };
        debug_assert!({
            let speed: f64 = acc.dy.iter().map(|v| v * v).sum::<f64>().sqrt();
            speed <= sys.drift_norm() * state.norm() + 1.0 + 1e-9
        });

        let mut stop = false;
        if stage.terminal && !cfg.drift_only {
            termination = Termination::TerminalStage;
            stop = true;
        }

        if !stop && cfg.stall_decay_rel > 0.0 {
            rho_history.push_back((acc.t, sol.rho));
            while rho_history.len() >= 2 && rho_history[1].0 <= acc.t - window {
                rho_history.pop_front();
            }
            if let Some(&(t_old, rho_old)) = rho_history.front() {
                if t_old <= acc.t - window && rho_old - sol.rho < cfg.stall_decay_rel * sol.rho {
                    termination = Termination::Standstill;
                    stop = true;
                }
            }
        }

        rec_cell
            .borrow_mut()
            .push(make_sample(sys, acc.t, acc.y, u, &sol), stop);
        if stop {
            return StepCommand::Stop;
        }

        // resolve the regularization band: keep |σ| from moving more than
        // ε/2 per step while near the surface
        let slew = (sigma - prev_sigma).abs() / acc.h_used;
        prev_sigma = sigma;
        if sigma.abs() < 3.0 * cfg.law.epsilon && slew > 0.0 {
            StepCommand::ContinueCapped(0.5 * cfg.law.epsilon / slew)
        } else {
            StepCommand::Continue
        }
    };

    let outcome = integrate_adaptive(rhs, 0.0, s0.as_slice(), cfg.t_max, &cfg.stepper, observer);

    match outcome {
        Ok((t_final, y_final, stats, exit)) => {
            if exit == LoopExit::ReachedEnd {
                termination = Termination::Horizon;
                if rec.samples.last().map(|s| s.t < t_final).unwrap_or(true) {
                    let state = State(y_final.clone());
                    let sol = cache.borrow_mut().solve(sys, &state, &cfg.dual)?;
                    let amp = stage_select(&cfg.stages, sol.rho).amplitude;
                    let u = if cfg.drift_only {
                        0.0
                    } else {
                        regularized_from_sigma(b_dot(&sol.grad_rho), &cfg.law.with_amplitude(amp))
                    };
                    rec.push(make_sample(sys, t_final, &y_final, u, &sol), true);
                }
            }
            Ok(Trajectory {
                samples: rec.samples,
                termination,
                accepted_steps: stats.accepted,
                rejected_steps: stats.rejected,
                min_step: if stats.min_step.is_finite() { stats.min_step } else { 0.0 },
            })
        }
        Err(Error::DualSolverFailed { .. }) | Err(Error::StepUnderflow { .. }) => Ok(Trajectory {
            samples: rec.samples,
            termination: Termination::SolverFailure,
            accepted_steps: 0,
            rejected_steps: 0,
            min_step: 0.0,
        }),
        Err(e) => Err(e),
    }
}

/// `⟨Ax, ∂ρ/∂x⟩` — the on-trajectory Hamiltonian. Rotation invariance of ρ
/// makes it vanish identically; the numerical value measures rounding plus
/// solver error.
pub fn hamiltonian_residual(sys: &OscillatorSystem, s: &State, cfg: &DualConfig) -> Result<f64> {
    let sol = dual::solve_dual(sys, s, cfg)?;
    Ok(hamiltonian_residual_from(sys, s, &sol))
}

pub fn hamiltonian_residual_from(sys: &OscillatorSystem, s: &State, sol: &DualSolution) -> f64 {
    let mut ax = vec![0.0; sys.dim()];
    sys.apply_a(s.as_slice(), &mut ax);
    ax.iter().zip(&sol.grad_rho).map(|(a, g)| a * g).sum()
}

/// Outcome of the monotonicity audit of ρ along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub violations: usize,
    /// Largest observed increase `ρ(t_{k+1}) − ρ(t_k)` (negative when ρ
    /// strictly decreased everywhere).
    pub worst_increase: f64,
    pub tol_band: f64,
}

/// Verify `ρ(t_{k+1}) ≤ ρ(t_k) + C(ε + steperr)` over the recorded samples.
pub fn rho_decay_check(
    traj: &Trajectory,
    law: &ControlLaw,
    step_err: f64,
    band_coeff: f64,
) -> Result<DecayReport> {
    if traj.samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let tol_band = band_coeff * (law.epsilon + step_err);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for pair in traj.samples.windows(2) {
        let inc = pair[1].rho - pair[0].rho;
        worst = worst.max(inc);
        if inc > tol_band {
            violations += 1;
        }
    }
    Ok(DecayReport {
        violations,
        worst_increase: worst,
        tol_band,
    })
}

/// Deviation of a perturbed run from the base run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityProbe {
    pub delta: f64,
    /// Sup-norm distance between the base and perturbed trajectories on the
    /// shared grid.
    pub deviation: f64,
}

/// Result of an ε→0 Cauchy sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub ladder: Vec<f64>,
    /// `d_k = sup_t ‖x_{ε_k}(t) − x_{ε_{k+1}}(t)‖` for consecutive rungs.
    pub distances: Vec<f64>,
    pub probes: Vec<ContinuityProbe>,
    pub grid_points: usize,
    pub t_common: f64,
}

impl SweepReport {
    /// Cauchy proxy for flow uniqueness: every consecutive distance shrinks
    /// by at least `factor`.
    pub fn cauchy_decreasing(&self, factor: f64) -> bool {
        self.distances
            .windows(2)
            .all(|w| w[1] <= factor * w[0] && w[1] > 0.0)
            && !self.distances.is_empty()
    }
}

const SWEEP_GRID_CAP: usize = 2_000_000;

/// Integrate per rung of a strictly decreasing ε ladder and compare
/// consecutive trajectories on a shared time grid (linear interpolation of
/// the dense output, spacing the smallest accepted step across rungs).
/// Two continuity probes (δ and 10δ initial perturbations at the middle
/// rung's ε) ride along.
pub fn epsilon_sweep(
    sys: &OscillatorSystem,
    s0: &State,
    cfg: &SimConfig,
    ladder: &[f64],
    probe_delta: f64,
) -> Result<SweepReport> {
    if ladder.len() < 3
        || ladder.windows(2).any(|w| w[1] >= w[0])
        || ladder.iter().any(|&e| !(e > 0.0 && e.is_finite()))
    {
        return Err(Error::BadLadder);
    }
    let dim = sys.dim();
    let probe_eps = ladder[ladder.len() / 2];
    let delta_dir = 1.0 / (dim as f64).sqrt();
    let perturbed = |delta: f64| -> State {
        State(s0.as_slice().iter().map(|&v| v + delta * delta_dir).collect())
    };

    // rung configs followed by probe configs; all dense-recorded
    let mut runs: Vec<(f64, State)> = ladder.iter().map(|&e| (e, s0.clone())).collect();
    runs.push((probe_eps, perturbed(probe_delta)));
    runs.push((probe_eps, perturbed(10.0 * probe_delta)));

    let results: Vec<Result<Trajectory>> = indexed_map(cfg.exec, runs.len(), |k| {
        let (eps, start) = &runs[k];
        let mut rung_cfg = cfg.clone();
        rung_cfg.law.epsilon = *eps;
        rung_cfg.record_stride = 1;
        rung_cfg.exec = Exec::Sequential;
        integrate(sys, start, &rung_cfg)
    });
    let mut trajectories = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        let traj = r?;
        if traj.termination == Termination::SolverFailure {
            return Err(Error::DualSolverFailed {
                residual: f64::NAN,
                iterations: k as u32,
            });
        }
        trajectories.push(traj);
    }

    let t_common = trajectories
        .iter()
        .map(Trajectory::t_end)
        .fold(f64::INFINITY, f64::min);
    let min_step = trajectories
        .iter()
        .map(|tr| tr.min_step)
        .filter(|&h| h > 0.0)
        .fold(f64::INFINITY, f64::min);
    let spacing = min_step.max(t_common / SWEEP_GRID_CAP as f64);
    let grid_points = (t_common / spacing).floor() as usize + 1;

    let n_rungs = ladder.len();
    let distances: Vec<f64> = (0..n_rungs - 1)
        .map(|k| sup_distance(&trajectories[k], &trajectories[k + 1], t_common, spacing))
        .collect();
    let base_mid = &trajectories[ladder.len() / 2];
    let probes = vec![
        ContinuityProbe {
            delta: probe_delta,
            deviation: sup_distance(base_mid, &trajectories[n_rungs], t_common, spacing),
        },
        ContinuityProbe {
            delta: 10.0 * probe_delta,
            deviation: sup_distance(base_mid, &trajectories[n_rungs + 1], t_common, spacing),
        },
    ];

    Ok(SweepReport {
        ladder: ladder.to_vec(),
        distances,
        probes,
        grid_points,
        t_common,
    })
}

fn sup_distance(a: &Trajectory, b: &Trajectory, t_end: f64, spacing: f64) -> f64 {
    let dim = a.samples[0].state.as_slice().len();
    let mut ia = 0;
    let mut ib = 0;
    let mut worst = 0.0f64;
    let mut xa = vec![0.0; dim];
    let mut xb = vec![0.0; dim];
    let steps = (t_end / spacing).floor() as usize;
    for j in 0..=steps {
        let t = (j as f64 * spacing).min(t_end);
        interp_state(&a.samples, t, &mut ia, &mut xa);
        interp_state(&b.samples, t, &mut ib, &mut xb);
        let d2: f64 = xa
            .iter()
            .zip(&xb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        worst = worst.max(d2.sqrt());
    }
    worst
}

fn interp_state(samples: &[Sample], t: f64, cursor: &mut usize, out: &mut [f64]) {
    while *cursor + 1 < samples.len() && samples[*cursor + 1].t < t {
        *cursor += 1;
    }
    let lo = &samples[*cursor];
    if *cursor + 1 >= samples.len() || t <= lo.t {
        out.copy_from_slice(lo.state.as_slice());
        return;
    }
    let hi = &samples[*cursor + 1];
    let w = (t - lo.t) / (hi.t - lo.t);
    for (i, o) in out.iter_mut().enumerate() {
        let a = lo.state.as_slice()[i];
        let b = hi.state.as_slice()[i];
        *o = a + w * (b - a);
    }
}

/// One recorded point of the canonical two-point run.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSample {
    pub t: f64,
    pub state: State,
    pub costate: Momentum,
    /// `‖p(t) − ∂ρ/∂x(x(t))‖` — the maximum-principle consistency gap.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalRun {
    pub samples: Vec<CanonicalSample>,
    pub max_gap: f64,
}

/// Integrate the canonical pair `(x, p)` with `p(0) = ∂ρ/∂x(s0)`.
///
/// Along the motion `d/dt ∂ρ/∂x = −A*∂ρ/∂x + (∂²ρ/∂x²)B·u`, so the costate
/// equation uses the applied control `u`; the Hessian column `(∂²ρ/∂x²)B`
/// comes from central differences of the gradient with step `1e−5·ρ`.
/// Staging is not applied — the diagnostic runs at the law's amplitude for
/// the full horizon. Requires the smooth smoother.
pub fn canonical_integrate(
    sys: &OscillatorSystem,
    s0: &State,
    cfg: &SimConfig,
) -> Result<CanonicalRun> {
    cfg.validate()?;
    if !cfg.drift_only && cfg.law.smoother != Smoother::TanhLike {
        return Err(Error::SmootherNotSmooth);
    }
    if s0.is_zero() {
        return Err(Error::ZeroState { what: "canonical motion" });
    }
    let dim = sys.dim();
    let cache = RefCell::new(DualCache::new(cfg.cache_reuse_rel));
    let sol0 = cache.borrow_mut().solve(sys, s0, &cfg.dual)?;

    let mut y0 = s0.as_slice().to_vec();
    y0.extend_from_slice(&sol0.grad_rho);

    let hess_b = |sol: &DualSolution, x: &[f64]| -> Result<Vec<f64>> {
        let h = 1e-5 * sol.rho;
        let bump = |sign: f64| -> Result<Vec<f64>> {
            let mut xs = x.to_vec();
            for i in 0..sys.n() {
                xs[2 * i + 1] += sign * h;
            }
            let s = State(xs);
            let sol_fd = dual::solve_dual_from(sys, &s, &sol.z_opt, &cfg.dual)?;
            if let Some(&block) = sol_fd.degenerate_blocks.first() {
                return Err(Error::HessianDegenerate { block });
            }
            if !sol_fd.converged {
                return Err(Error::DualSolverFailed {
                    residual: sol_fd.kkt_residual,
                    iterations: sol_fd.iterations,
                });
            }
            Ok(sol_fd.grad_rho)
        };
        let gp = bump(1.0)?;
        let gm = bump(-1.0)?;
        Ok(gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect())
    };

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (x, p) = y.split_at(dim);
        sys.apply_a(x, &mut dy[..dim]);
        // −A*p per block: (ξ, η) ↦ (ω²η, −ξ)
        for (i, &w) in sys.omegas().iter().enumerate() {
            dy[dim + 2 * i] = w * w * p[2 * i + 1];
            dy[dim + 2 * i + 1] = -p[2 * i];
        }
        if cfg.drift_only {
            return Ok(());
        }
        let state = State(x.to_vec());
        let sol = cache.borrow_mut().solve(sys, &state, &cfg.dual)?;
        let u = regularized_from_sigma(b_dot(&sol.grad_rho), &cfg.law);
        for i in 0..sys.n() {
            dy[2 * i + 1] += u;
        }
        let hb = hess_b(&sol, x)?;
        for (j, &v) in hb.iter().enumerate() {
            dy[dim + j] += v * u;
        }
        Ok(())
    };

    let samples = RefCell::new(Vec::new());
    let push = |t: f64, y: &[f64]| -> Result<()> {
        let (x, p) = y.split_at(dim);
        let state = State(x.to_vec());
        let sol = cache.borrow_mut().solve(sys, &state, &cfg.dual)?;
        let gap = p
            .iter()
            .zip(&sol.grad_rho)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        samples.borrow_mut().push(CanonicalSample {
            t,
            state,
            costate: Momentum(p.to_vec()),
            gap,
        });
        Ok(())
    };
    push(0.0, &y0)?;

    let failed = RefCell::new(None);
    integrate_adaptive(rhs, 0.0, &y0, cfg.t_max, &cfg.stepper, |acc| {
        match push(acc.t, acc.y) {
            Ok(()) => StepCommand::Continue,
            Err(e) => {
                *failed.borrow_mut() = Some(e);
                StepCommand::Stop
            }
        }
    })?;
    if let Some(e) = failed.into_inner() {
        return Err(e);
    }

    let samples = samples.into_inner();
    let max_gap = samples.iter().map(|s| s.gap).fold(0.0, f64::max);
    Ok(CanonicalRun { samples, max_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Smoother;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    fn n1() -> OscillatorSystem {
        OscillatorSystem::new(vec![1.0]).unwrap()
    }

    fn base_cfg(t_max: f64, eps: f64) -> SimConfig {
        let law = ControlLaw::new(eps, Smoother::Saturation, 1.0).unwrap();
        let stages = StagePolicy::new(0.5, 0.05, 0.5).unwrap();
        SimConfig::new(t_max, law, stages).unwrap()
    }

    #[test]
    fn switching_surface_start_integrates() {
        // σ(1, 0) = 0 exactly: the inclusion is still solvable and the
        // regularized integration must not fail.
        let cfg = base_cfg(2.0, 1e-3);
        let traj = integrate(&n1(), &State::new(vec![1.0, 0.0]).unwrap(), &cfg).unwrap();
        assert!(traj.samples.len() > 2);
        assert!(traj.termination != Termination::SolverFailure);
        traj.validate(1e-3).unwrap();
    }

    #[test]
    fn n1_damping_decreases_rho_and_energy() {
        let cfg = base_cfg(6.0, 1e-3);
        let sys = n1();
        let s0 = State::new(vec![0.0, 2.0]).unwrap();
        let traj = integrate(&sys, &s0, &cfg).unwrap();
        let first = traj.samples.first().unwrap();
        let last = traj.samples.last().unwrap();
        assert!(last.rho < 0.7 * first.rho, "rho {} -> {}", first.rho, last.rho);
        assert!(last.energy < first.energy);
        // control saturates away from the surface
        assert_abs_diff_eq!(traj.samples[1].u, -1.0, epsilon = 1e-9);
        let report = rho_decay_check(&traj, &cfg.law, cfg.stepper.rtol, 1.0).unwrap();
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn drift_only_keeps_rho_constant() {
        let mut cfg = base_cfg(TAU, 1e-3);
        cfg.drift_only = true;
        cfg.stall_decay_rel = 0.0;
        cfg.stepper.rtol = 1e-11;
        cfg.stepper.atol = 1e-13;
        let traj = integrate(&n1(), &State::new(vec![0.7, -0.4]).unwrap(), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Horizon);
        let rho0 = traj.samples[0].rho;
        for s in &traj.samples {
            assert_abs_diff_eq!(s.rho, rho0, epsilon = 1e-8 * rho0);
            assert_eq!(s.u, 0.0);
        }
    }

    #[test]
    fn standstill_detector_fires_when_stuck() {
        // start inside the stick region: |x| < 1 at y = 0 stalls classical
        // dry friction; the regularized flow still creeps at a rate O(ε), so
        // the detector threshold must sit above the creep decay per window
        let mut cfg = base_cfg(40.0, 1e-4);
        cfg.stall_decay_rel = 1e-3;
        let traj = integrate(&n1(), &State::new(vec![0.6, 0.0]).unwrap(), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Standstill);
        assert!(traj.t_end() < 39.0);
    }

    #[test]
    fn terminal_stage_reached_from_above() {
        let law = ControlLaw::new(1e-3, Smoother::Saturation, 1.0).unwrap();
        let stages = StagePolicy::new(3.0, 2.8, 0.5).unwrap();
        let cfg = SimConfig::new(30.0, law, stages).unwrap();
        let traj = integrate(&n1(), &State::new(vec![0.0, 2.0]).unwrap(), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::TerminalStage);
        assert!(traj.samples.last().unwrap().rho < 2.8);
    }

    #[test]
    fn hamiltonian_residual_is_tiny_and_homogeneous() {
        let dual_cfg = DualConfig::default();
        let sys = n1();
        for s in [vec![1.0, 0.3], vec![-0.4, 2.0]] {
            let state = State::new(s).unwrap();
            let r = hamiltonian_residual(&sys, &state, &dual_cfg).unwrap();
            assert!(r.abs() <= 1e-12, "residual {r}");
        }
        let sys2 = OscillatorSystem::new(vec![1.0, 2.0]).unwrap();
        let s = State::new(vec![0.9, 0.4, -0.7, 1.2]).unwrap();
        let s3 = State::new(vec![2.7, 1.2, -2.1, 3.6]).unwrap();
        let r1 = hamiltonian_residual(&sys2, &s, &dual_cfg).unwrap();
        let r3 = hamiltonian_residual(&sys2, &s3, &dual_cfg).unwrap();
        // 1-homogeneous in the state, both at rounding level
        assert!(r1.abs() < 1e-12 && r3.abs() < 3e-12, "{r1} {r3}");
    }

    #[test]
    fn decay_check_flags_injected_increase() {
        let cfg = base_cfg(3.0, 1e-3);
        let mut traj = integrate(&n1(), &State::new(vec![0.0, 2.0]).unwrap(), &cfg).unwrap();
        let clean = rho_decay_check(&traj, &cfg.law, cfg.stepper.rtol, 1.0).unwrap();
        assert_eq!(clean.violations, 0);
        let mid = traj.samples.len() / 2;
        traj.samples[mid].rho += 1.0;
        let dirty = rho_decay_check(&traj, &cfg.law, cfg.stepper.rtol, 1.0).unwrap();
        assert!(dirty.violations >= 1);
        assert!(dirty.worst_increase > 0.5);
    }

    #[test]
    fn sweep_requires_a_proper_ladder() {
        let cfg = base_cfg(1.0, 1e-2);
        let sys = n1();
        let s0 = State::new(vec![0.0, 2.0]).unwrap();
        for bad in [vec![1e-1, 1e-2], vec![1e-2, 1e-2, 1e-3], vec![1e-1, 1e-2, -1.0]] {
            assert!(matches!(
                epsilon_sweep(&sys, &s0, &cfg, &bad, 1e-6),
                Err(Error::BadLadder)
            ));
        }
    }

    #[test]
    fn identical_configs_integrate_identically() {
        let cfg = base_cfg(4.0, 1e-3);
        let sys = n1();
        let s0 = State::new(vec![0.0, 2.0]).unwrap();
        let a = integrate(&sys, &s0, &cfg).unwrap();
        let b = integrate(&sys, &s0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_drift_only_matches_costate_rotation() {
        let mut cfg = base_cfg(1.3, 1e-3);
        cfg.drift_only = true;
        cfg.stepper.rtol = 1e-11;
        cfg.stepper.atol = 1e-13;
        let sys = OscillatorSystem::new(vec![1.0, 2.0]).unwrap();
        let s0 = State::new(vec![0.4, 1.0, -0.3, 0.8]).unwrap();
        let run = canonical_integrate(&sys, &s0, &cfg).unwrap();
        let p0 = run.samples[0].costate.clone();
        let last = run.samples.last().unwrap();
        // ṗ = −A*p has the closed-form solution p(t) = e^{−A*t} p(0)
        let expected = sys.rotate_costate(&p0, -last.t);
        for (a, b) in last.costate.as_slice().iter().zip(expected.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn canonical_requires_smooth_smoother() {
        let cfg = base_cfg(1.0, 1e-3); // saturation smoother
        let err = canonical_integrate(&n1(), &State::new(vec![0.0, 2.0]).unwrap(), &cfg);
        assert!(matches!(err, Err(Error::SmootherNotSmooth)));
    }

    #[test]
    fn canonical_gap_detector_sees_wrong_initial_costate() {
        let mut cfg = base_cfg(0.3, 1e-2);
        cfg.law.smoother = Smoother::TanhLike;
        let sys = n1();
        let s0 = State::new(vec![0.0, 2.0]).unwrap();
        let run = canonical_integrate(&sys, &s0, &cfg).unwrap();
        assert!(run.samples[0].gap < 1e-12);
        // doubling p(0) must register as a gap of ‖∂ρ/∂x‖ at t = 0
        let dual_cfg = DualConfig::default();
        let g = dual::grad_rho(&sys, &s0, &dual_cfg).unwrap();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut y0 = s0.as_slice().to_vec();
        y0.extend(g.iter().map(|v| 2.0 * v));
        let (xp, pp) = y0.split_at(2);
        let gap0: f64 = pp
            .iter()
            .zip(&dual::grad_rho(&sys, &State(xp.to_vec()), &dual_cfg).unwrap())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(gap0 >= gnorm * (1.0 - 1e-12));
    }

    #[test]
    fn canonical_gap_stays_small_on_half_period() {
        let mut cfg = base_cfg(std::f64::consts::PI, 1e-2);
        cfg.law.smoother = Smoother::TanhLike;
        cfg.stepper.rtol = 1e-10;
        cfg.stepper.atol = 1e-12;
        let run = canonical_integrate(&n1(), &State::new(vec![0.0, 2.0]).unwrap(), &cfg).unwrap();
        assert!(run.max_gap <= 1e-3, "max gap {}", run.max_gap);
    }
}
