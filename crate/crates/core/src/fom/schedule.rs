//! Geometric time-step schedule and the backward Euler difference.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    pub dt0: f64,
    pub dt_mult: f64,
    pub dt_max: f64,
    pub final_time: f64,
    /// `t⁰ = 0, t¹, …, t^{N^t} = T`.
    times: Vec<f64>,
}

/// Steps grow by `dt_mult` up to `dt_max`; the last step is clipped to end
/// exactly at `final_time`.
pub fn build_time_schedule(dt0: f64, dt_mult: f64, dt_max: f64, final_time: f64) -> Result<TimeSchedule> {
    for (name, v) in [("dt0", dt0), ("dt_mult", dt_mult), ("dt_max", dt_max), ("T", final_time)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if dt0 > final_time {
        return Err(Error::InvalidParameter(format!("dt0 = {dt0} exceeds T = {final_time}")));
    }
    let floor = 1e-6 * final_time;
    let mut times = vec![0.0];
    let mut dt = dt0.min(dt_max);
    let mut t = 0.0;
    loop {
        if dt < floor {
            return Err(Error::InvalidParameter(format!(
                "time step shrank to {dt:e} s, below 1e-6 T; use dt_mult >= 1"
            )));
        }
        // Merge a sliver shorter than the floor into the final step.
        if t + dt >= final_time - floor {
            times.push(final_time);
            break;
        }
        t += dt;
        times.push(t);
        dt = (dt * dt_mult).min(dt_max);
    }
    Ok(TimeSchedule { dt0, dt_mult, dt_max, final_time, times })
}

impl TimeSchedule {
    /// Uniform steps of `dt` up to `final_time`.
    pub fn uniform(dt: f64, final_time: f64) -> Result<TimeSchedule> {
        build_time_schedule(dt, 1.0, dt, final_time)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N^t`.
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `Δtⁿ` for `n = 1..=N^t`.
    pub fn step(&self, n: usize) -> f64 {
        self.times[n] - self.times[n - 1]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `(φⁿ - φⁿ⁻¹) / Δt`.
pub fn bdf1(current: &[f64], previous: &[f64], dt: f64) -> Result<Vec<f64>> {
    ensure_len(current.len(), previous.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    Ok(current.iter().zip(previous).map(|(a, b)| (a - b) / dt).collect())
}
