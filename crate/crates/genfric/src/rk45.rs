//! Adaptive Dormand–Prince 5(4) stepper.
//!
//! Generic over the right-hand side so the controlled motion, the canonical
//! two-point system and plain linear flows all share one error-controlled
//! loop. The caller observes every accepted step and may stop early or cap
//! the next step size — that is how the simulation layer keeps steps small
//! while the switching value crosses its regularization band.

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

/// Step-size control parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepperOpts {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; derived from `h_max` when absent.
    pub h_init: Option<f64>,
    pub h_max: f64,
    /// Steps below this are treated as an integration failure.
    pub h_min: f64,
}

impl Default for StepperOpts {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-8,
            h_init: None,
            h_max: 0.1,
            h_min: 1e-14,
        }
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepCommand {
    Continue,
    /// Continue, but keep the next step at or below the given size.
    ContinueCapped(f64),
    Stop,
}

/// Accepted-step record handed to the observer.
#[derive(Debug)]
pub struct Accepted<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub dy: &'a [f64],
    pub h_used: f64,
    /// Normalized embedded-error estimate of the accepted step (≤ 1).
    pub error: f64,
}

/// Why the integration loop returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopExit {
    ReachedEnd,
    StoppedByObserver,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
}

/// Integrate `y' = f(t, y)` from `t0` to `t_end`, reporting accepted steps.
///
/// `f` may fail (the controlled vector field needs an inner optimization);
/// its error aborts the integration and is returned as-is, with whatever the
/// observer already collected remaining valid.
pub fn integrate_adaptive<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &StepperOpts,
    mut observer: O,
) -> Result<(f64, Vec<f64>, StepStats, LoopExit)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(Accepted<'_>) -> StepCommand,
{
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    let mut h = opts.h_init.unwrap_or(opts.h_max * 1e-2).min(opts.h_max);
    let mut cap: Option<f64> = None;
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..StepStats::default()
    };

    f(t, &y, &mut k1)?;
    while t < t_end {
        h = h.min(opts.h_max).min(t_end - t);
        if let Some(c) = cap {
            h = h.min(c.max(opts.h_min));
        }
        if h < opts.h_min {
            return Err(Error::StepUnderflow { t, h });
        }

        for i in 0..dim {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &stage, &mut k2)?;
        for i in 0..dim {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &stage, &mut k3)?;
        for i in 0..dim {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &stage, &mut k4)?;
        for i in 0..dim {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &stage, &mut k5)?;
        for i in 0..dim {
            stage[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &stage, &mut k6)?;
        for i in 0..dim {
            y_new[i] =
                y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        f(t + h, &y_new, &mut k7)?;

        let mut err_sq = 0.0;
        for i in 0..dim {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h);
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7); // FSAL
            let cmd = observer(Accepted {
                t,
                y: &y,
                dy: &k1,
                h_used: h,
                error: err,
            });
            cap = match cmd {
                StepCommand::Continue => None,
                StepCommand::ContinueCapped(c) => Some(c),
                StepCommand::Stop => return Ok((t, y, stats, LoopExit::StoppedByObserver)),
            };
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok((t, y, stats, LoopExit::ReachedEnd))
}
