//! Numerical integration of a vector field from t=0 to t=1.
//!
//! Fixed-step Euler and midpoint solvers plus an adaptive Bogacki-Shampine
//! 3(2) pair with an embedded error estimate. Every trace reports the
//! exact count of vector-field evaluations.

use crate::array::Array;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Euler,
    Midpoint,
    Adaptive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    pub method: SolveMethod,
    /// Fixed-step size; must divide 1 into an integer number of steps.
    pub step_size: f64,
    /// Absolute tolerance (adaptive only).
    pub abs_tol: f64,
    /// Relative tolerance (adaptive only).
    pub rel_tol: f64,
    /// Classifier-free guidance strength applied by guided solves.
    pub cfg_alpha: f64,
    /// Keep the per-step states in the trace.
    pub record_states: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolveMethod::Midpoint,
            step_size: 0.0625,
            abs_tol: 1e-5,
            rel_tol: 1e-5,
            cfg_alpha: 0.0,
            record_states: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            SolveMethod::Euler | SolveMethod::Midpoint => {
                if self.step_size <= 0.0 || self.step_size > 1.0 {
                    return Err(Error::invalid(format!(
                        "step size {} outside (0, 1]",
                        self.step_size
                    )));
                }
                let steps = 1.0 / self.step_size;
                if (steps - steps.round()).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "step size {} does not divide 1 into an integer step count",
                        self.step_size
                    )));
                }
            }
            SolveMethod::Adaptive => {
                if self.abs_tol <= 0.0 || self.rel_tol <= 0.0 {
                    return Err(Error::invalid("adaptive tolerances must be positive"));
                }
            }
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (1.0 / self.step_size).round() as usize
    }
}

/// Record of one integration.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    /// Count of vector-field evaluations, exact.
    pub nfe: usize,
    pub endpoint: Array,
    /// (t, state) pairs when recording was requested; includes t=0.
    pub states: Option<Vec<(f64, Array)>>,
    pub wall: std::time::Duration,
}

/// Integrate dy/dt = field(t, y) from t=0 to t=1 starting at `x0`.
pub fn solve<F>(field: F, x0: &Array, config: &SolverConfig) -> Result<SolveTrace>
where
    F: FnMut(f64, &Array) -> Result<Array>,
{
    config.validate()?;
    if !x0.is_finite() {
        return Err(Error::NonFinite {
            op: "solve initial state",
            step: 0,
        });
    }
    let start = Instant::now();
    let mut nfe = 0usize;
    let mut field = field;
    let mut eval = |t: f64, y: &Array, nfe: &mut usize| -> Result<Array> {
        *nfe += 1;
        field(t, y)
    };

    let mut states = config.record_states.then(|| vec![(0.0, x0.clone())]);
    let mut y = x0.clone();

    match config.method {
        SolveMethod::Euler => {
            let steps = config.steps();
            let h = config.step_size;
            for s in 0..steps {
                let t = s as f64 * h;
                let k = eval(t, &y, &mut nfe)?;
                y.axpy(h, &k)?;
                check_finite(&y, s)?;
                if let Some(states) = states.as_mut() {
                    states.push(((s + 1) as f64 * h, y.clone()));
                }
            }
        }
        SolveMethod::Midpoint => {
            let steps = config.steps();
            let h = config.step_size;
            for s in 0..steps {
                let t = s as f64 * h;
                let k1 = eval(t, &y, &mut nfe)?;
                let mut mid = y.clone();
                mid.axpy(h / 2.0, &k1)?;
                let k2 = eval(t + h / 2.0, &mid, &mut nfe)?;
                y.axpy(h, &k2)?;
                check_finite(&y, s)?;
                if let Some(states) = states.as_mut() {
                    states.push(((s + 1) as f64 * h, y.clone()));
                }
            }
        }
        SolveMethod::Adaptive => {
            adaptive_bs23(
                &mut eval,
                &mut y,
                config,
                &mut nfe,
                states.as_mut(),
            )?;
        }
    }

    Ok(SolveTrace {
        nfe,
        endpoint: y,
        states,
        wall: start.elapsed(),
    })
}

fn check_finite(y: &Array, step: usize) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::NonFinite {
            op: "solve",
            step,
        });
    }
    Ok(())
}

/// Bogacki-Shampine 3(2) with FSAL and a standard step controller. The
/// last step is shortened to land exactly on t=1.
fn adaptive_bs23<E>(
    eval: &mut E,
    y: &mut Array,
    config: &SolverConfig,
    nfe: &mut usize,
    mut states: Option<&mut Vec<(f64, Array)>>,
) -> Result<()>
where
    E: FnMut(f64, &Array, &mut usize) -> Result<Array>,
{
    let mut t = 0.0;
    let mut h = 0.1f64;
    let mut k1 = eval(t, y, nfe)?;
    let mut step_index = 0usize;
    let max_steps = 100_000;

    while t < 1.0 {
        if step_index > max_steps {
            return Err(Error::invalid("adaptive solver exceeded step budget"));
        }
        h = h.min(1.0 - t);

        let mut y2 = y.clone();
        y2.axpy(h * 0.5, &k1)?;
        let k2 = eval(t + 0.5 * h, &y2, nfe)?;

        let mut y3 = y.clone();
        y3.axpy(h * 0.75, &k2)?;
        let k3 = eval(t + 0.75 * h, &y3, nfe)?;

        // Third-order solution.
        let mut y_next = y.clone();
        y_next.axpy(h * 2.0 / 9.0, &k1)?;
        y_next.axpy(h * 1.0 / 3.0, &k2)?;
        y_next.axpy(h * 4.0 / 9.0, &k3)?;

        let k4 = eval(t + h, &y_next, nfe)?;

        // Embedded second-order solution for the error estimate.
        let mut err_vec = k1.scale(2.0 / 9.0 - 7.0 / 24.0);
        err_vec.axpy(1.0 / 3.0 - 1.0 / 4.0, &k2)?;
        err_vec.axpy(4.0 / 9.0 - 1.0 / 3.0, &k3)?;
        err_vec.axpy(-1.0 / 8.0, &k4)?;
        // err = h * (y3rd - y2nd)

        let mut err_norm: f64 = 0.0;
        for (i, e) in err_vec.data().iter().enumerate() {
            let tol = config.abs_tol + config.rel_tol * y_next.data()[i].abs();
            err_norm = err_norm.max((h * e).abs() / tol);
        }

        if err_norm <= 1.0 {
            t += h;
            *y = y_next;
            check_finite(y, step_index)?;
            k1 = k4; // FSAL
            if let Some(states) = states.as_deref_mut() {
                states.push((t, y.clone()));
            }
        }
        let factor = if err_norm > 0.0 {
            (0.9 * (1.0 / err_norm).powf(1.0 / 3.0)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = (h * factor).min(1.0);
        if h < 1e-12 {
            return Err(Error::invalid("adaptive solver step size underflow"));
        }
        step_index += 1;
    }
    Ok(())
}
