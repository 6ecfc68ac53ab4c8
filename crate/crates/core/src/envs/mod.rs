//! Partially observable simulation environments: a randomly generated
//! stable linear plant and a cascaded double tank, both with
//! piecewise-constant reference and disturbance schedules and the
//! negative-squared-error tracking reward.

mod linear;
mod schedule;
mod tank;

pub use linear::{generate_stable_linear, linear_step, GenParams, LinearEnv, LinearEnvConfig, LinearSystem};
pub use schedule::{PiecewiseSchedule, ScheduleConfig};
pub use tank::{euler_step, tank_equilibrium, tank_equilibrium_input, tank_rates, TankConfig, TankEnv, TankEnvConfig};

use crate::{Error, Result};

/// What the controller sees each step: measured output, measured
/// disturbance (present even when identically zero), and the current
/// reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub y_ref: Vec<f64>,
}

impl Observation {
    pub fn validate_finite(&self) -> Result<()> {
        let ok = self.y.iter().chain(&self.d).chain(&self.y_ref).all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("observation".into()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Tracking reward: negative squared error, zero iff y == y_ref exactly.
pub fn tracking_reward(y: &[f64], y_ref: &[f64]) -> f64 {
    debug_assert_eq!(y.len(), y_ref.len());
    -y.iter().zip(y_ref).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Common environment interface used by the trainer and the analysis code.
pub trait Env {
    /// Reset state and re-seed all schedules deterministically.
    fn reset(&mut self, seed: u64) -> Observation;
    /// Advance one sample with input `u` (clipped to actuator bounds
    /// internally where the plant has them).
    fn step(&mut self, u: &[f64]) -> StepResult;
    /// True plant state, for analysis only (never fed to policies).
    fn true_state(&self) -> Vec<f64>;
    /// Noise-free physical output (what tracking quality is measured
    /// against); policies only ever see the measured `Observation`.
    fn true_output(&self) -> Vec<f64>;
    fn n_y(&self) -> usize;
    fn n_d(&self) -> usize;
    fn n_u(&self) -> usize;
    fn episode_length(&self) -> usize;
    /// Actuator bounds (lo, hi) per input dimension.
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Force a constant reference (evaluation mode); `None` restores the
    /// seeded schedule.
    fn set_ref_override(&mut self, y_ref: Option<Vec<f64>>);
}

/// Either plant behind one concrete type, so workers can hold them by value.
pub enum EnvInstance {
    Linear(LinearEnv),
    Tank(TankEnv),
}

impl Env for EnvInstance {
    fn reset(&mut self, seed: u64) -> Observation {
        match self {
            EnvInstance::Linear(e) => e.reset(seed),
            EnvInstance::Tank(e) => e.reset(seed),
        }
    }

    fn step(&mut self, u: &[f64]) -> StepResult {
        match self {
            EnvInstance::Linear(e) => e.step(u),
            EnvInstance::Tank(e) => e.step(u),
        }
    }

    fn true_state(&self) -> Vec<f64> {
        match self {
            EnvInstance::Linear(e) => e.true_state(),
            EnvInstance::Tank(e) => e.true_state(),
        }
    }

    fn true_output(&self) -> Vec<f64> {
        match self {
            EnvInstance::Linear(e) => e.true_output(),
            EnvInstance::Tank(e) => e.true_output(),
        }
    }

    fn n_y(&self) -> usize {
        match self {
            EnvInstance::Linear(e) => e.n_y(),
            EnvInstance::Tank(e) => e.n_y(),
        }
    }

    fn n_d(&self) -> usize {
        match self {
            EnvInstance::Linear(e) => e.n_d(),
            EnvInstance::Tank(e) => e.n_d(),
        }
    }

    fn n_u(&self) -> usize {
        match self {
            EnvInstance::Linear(e) => e.n_u(),
            EnvInstance::Tank(e) => e.n_u(),
        }
    }

    fn episode_length(&self) -> usize {
        match self {
            EnvInstance::Linear(e) => e.episode_length(),
            EnvInstance::Tank(e) => e.episode_length(),
        }
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            EnvInstance::Linear(e) => e.action_bounds(),
            EnvInstance::Tank(e) => e.action_bounds(),
        }
    }

    fn set_ref_override(&mut self, y_ref: Option<Vec<f64>>) {
        match self {
            EnvInstance::Linear(e) => e.set_ref_override(y_ref),
            EnvInstance::Tank(e) => e.set_ref_override(y_ref),
        }
    }
}
