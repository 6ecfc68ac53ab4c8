//! Cascaded double-tank process: a pump feeds the top tank, which drains
//! into the lower tank; the measured disturbance is an extra outlet area in
//! the top tank. Only the lower level is measured.

use crate::envs::schedule::{PiecewiseSchedule, ScheduleConfig};
use crate::envs::{tracking_reward, Env, Observation, StepResult};
use crate::rng;
use crate::{Error, Result};

/// Physical constants and integration step. Units: cm, s, V.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TankConfig {
    /// Bottom outlet areas (cm^2).
    pub a1: f64,
    pub a2: f64,
    /// Tank cross-sections (cm^2).
    pub area1: f64,
    pub area2: f64,
    /// Pump constant (cm^3 per volt-second).
    pub k_pump: f64,
    /// Gravitational acceleration (cm/s^2).
    pub gravity: f64,
    /// Sampling period (s).
    pub dt: f64,
    /// Input ceiling (V).
    pub u_max: f64,
    /// Level ceiling (cm).
    pub x_max: f64,
}

impl Default for TankConfig {
    fn default() -> Self {
        // Sized like a small lab rig: levels up to 25 cm, steady states
        // spanning 2-12 cm over the pump range, per-tank time constants of
        // 10-20 samples at operating levels, and a forward-Euler map at
        // dt = 2 s that stays contractive over the whole level range even
        // with the disturbance outlet fully open (a1 + d doubles the drain
        // rate).
        TankConfig {
            a1: 0.6,
            a2: 0.6,
            area1: 50.0,
            area2: 50.0,
            k_pump: 20.0,
            gravity: 981.0,
            dt: 2.0,
            u_max: 10.0,
            x_max: 25.0,
        }
    }
}

impl TankConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a1, self.a2, self.area1, self.area2, self.k_pump, self.gravity, self.dt,
            self.u_max, self.x_max,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("all tank constants must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Level derivatives (cm/s) at levels (x1, x2) with pump voltage u and
/// disturbance outlet area d. Inputs must be non-negative; clamping levels
/// into range is the integrator's job, not this function's.
pub fn tank_rates(cfg: &TankConfig, x1: f64, x2: f64, u: f64, d: f64) -> Result<(f64, f64)> {
    if x1 < 0.0 || x2 < 0.0 {
        return Err(Error::Config(format!("negative tank level: x1={x1}, x2={x2}")));
    }
    if u < 0.0 || d < 0.0 {
        return Err(Error::Config(format!("negative input: u={u}, d={d}")));
    }
    let out1 = (2.0 * cfg.gravity * x1).sqrt();
    let out2 = (2.0 * cfg.gravity * x2).sqrt();
    let dx1 = -(cfg.a1 / cfg.area1) * out1 + (cfg.k_pump / cfg.area1) * u - (d / cfg.area1) * out1;
    let dx2 = (cfg.a1 / cfg.area1) * out1 - (cfg.a2 / cfg.area2) * out2;
    Ok((dx1, dx2))
}

/// Forward Euler with clamping into [0, x_max] element-wise.
pub fn euler_step(x: [f64; 2], rates: (f64, f64), cfg: &TankConfig) -> [f64; 2] {
    [
        (x[0] + cfg.dt * rates.0).clamp(0.0, cfg.x_max),
        (x[1] + cfg.dt * rates.1).clamp(0.0, cfg.x_max),
    ]
}

/// Algebraic steady state (x1*, x2*) for constant pump voltage u and
/// disturbance d, ignoring the level ceiling.
pub fn tank_equilibrium(cfg: &TankConfig, u: f64, d: f64) -> (f64, f64) {
    let x1 = (cfg.k_pump * u / (cfg.a1 + d)).powi(2) / (2.0 * cfg.gravity);
    let x2 = (cfg.a1 / cfg.a2).powi(2) * x1;
    (x1, x2)
}

/// Pump voltage whose steady state puts the lower level at `x2_ref` under
/// constant disturbance d.
pub fn tank_equilibrium_input(cfg: &TankConfig, x2_ref: f64, d: f64) -> f64 {
    let x1 = (cfg.a2 / cfg.a1).powi(2) * x2_ref;
    (cfg.a1 + d) * (2.0 * cfg.gravity * x1).sqrt() / cfg.k_pump
}

#[derive(Clone, Debug)]
pub struct TankEnvConfig {
    pub tank: TankConfig,
    pub episode_length: usize,
    pub ref_schedule: ScheduleConfig,
    /// Disturbance hold length in steps; the range is pinned to [0, a1].
    pub dist_hold: usize,
    /// Initial levels drawn uniformly from [lo, hi] * x_max.
    pub init_frac: (f64, f64),
    /// White level-sensor noise on the measured output (cm). The
    /// disturbance outlet area is still measured exactly.
    pub y_noise_std: f64,
    /// Stationary standard deviation (cm) of a slowly wandering sensor
    /// bias (first-order autoregressive with coefficient `y_drift_rho`).
    pub y_drift_std: f64,
    pub y_drift_rho: f64,
}

impl TankEnvConfig {
    pub fn defaults_with(tank: TankConfig) -> Self {
        TankEnvConfig {
            tank,
            episode_length: 600,
            ref_schedule: ScheduleConfig { lo: 6.0, hi: 14.0, hold: 150 },
            dist_hold: 50,
            init_frac: (0.2, 0.8),
            y_noise_std: 0.0,
            y_drift_std: 0.0,
            y_drift_rho: 0.99,
        }
    }

    fn validate(&self) -> Result<()> {
        self.tank.validate()?;
        if self.episode_length == 0
            || self.episode_length % self.ref_schedule.hold != 0
            || self.episode_length % self.dist_hold != 0
        {
            return Err(Error::Config(
                "episode_length must be a positive multiple of both hold lengths".into(),
            ));
        }
        if !(0.0 <= self.init_frac.0 && self.init_frac.0 <= self.init_frac.1 && self.init_frac.1 <= 1.0) {
            return Err(Error::Config("init_frac must satisfy 0 <= lo <= hi <= 1".into()));
        }
        if self.y_noise_std < 0.0 || self.y_drift_std < 0.0 {
            return Err(Error::Config("sensor noise levels must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.y_drift_rho) {
            return Err(Error::Config("y_drift_rho must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub struct TankEnv {
    cfg: TankEnvConfig,
    x: [f64; 2],
    t: usize,
    base_seed: u64,
    episode: u64,
    ref_sched: PiecewiseSchedule,
    dist_sched: PiecewiseSchedule,
    ref_override: Option<Vec<f64>>,
    noise_rng: rand_chacha::ChaCha8Rng,
    sensor_bias: f64,
}

impl TankEnv {
    pub fn new(cfg: TankEnvConfig) -> Result<Self> {
        cfg.validate()?;
        let ref_sched = PiecewiseSchedule::new(cfg.ref_schedule, 0, "ref");
        let dist_sched = PiecewiseSchedule::new(
            ScheduleConfig { lo: 0.0, hi: cfg.tank.a1, hold: cfg.dist_hold },
            0,
            "dist",
        );
        let mut env = TankEnv {
            cfg,
            x: [0.0; 2],
            t: 0,
            base_seed: 0,
            episode: 0,
            ref_sched,
            dist_sched,
            ref_override: None,
            noise_rng: rng::stream(0, "y_noise", 0),
            sensor_bias: 0.0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn tank_config(&self) -> &TankConfig {
        &self.cfg.tank
    }

    pub fn reset_auto(&mut self) -> Observation {
        self.episode += 1;
        self.reset_inner()
    }

    fn reset_inner(&mut self) -> Observation {
        let ep_seed = rng::derive_seed(self.base_seed, "episode", self.episode);
        let mut r = rng::stream(ep_seed, "init_levels", 0);
        let (lo, hi) = self.cfg.init_frac;
        self.x = [
            rng::uniform(&mut r, lo, hi) * self.cfg.tank.x_max,
            rng::uniform(&mut r, lo, hi) * self.cfg.tank.x_max,
        ];
        self.t = 0;
        self.ref_sched.reseed(rng::derive_seed(ep_seed, "ref", 0));
        self.dist_sched.reseed(rng::derive_seed(ep_seed, "dist", 0));
        self.noise_rng = rng::stream(ep_seed, "y_noise", 0);
        self.sensor_bias = if self.cfg.y_drift_std > 0.0 {
            self.cfg.y_drift_std * rng::normal(&mut self.noise_rng)
        } else {
            0.0
        };
        self.observe()
    }

    fn advance_sensor_bias(&mut self) {
        if self.cfg.y_drift_std > 0.0 {
            let rho = self.cfg.y_drift_rho;
            let increment = self.cfg.y_drift_std * (1.0 - rho * rho).sqrt();
            self.sensor_bias =
                rho * self.sensor_bias + increment * rng::normal(&mut self.noise_rng);
        }
    }

    fn observe(&mut self) -> Observation {
        let white = if self.cfg.y_noise_std > 0.0 {
            self.cfg.y_noise_std * rng::normal(&mut self.noise_rng)
        } else {
            0.0
        };
        Observation {
            y: vec![self.x[1] + self.sensor_bias + white],
            d: vec![self.dist_sched.value_at(self.t)],
            y_ref: self.current_ref(),
        }
    }

    fn current_ref(&self) -> Vec<f64> {
        if let Some(r) = &self.ref_override {
            return r.clone();
        }
        vec![self.ref_sched.value_at(self.t)]
    }
}

impl Env for TankEnv {
    fn reset(&mut self, seed: u64) -> Observation {
        self.base_seed = seed;
        self.episode = 0;
        self.reset_inner()
    }

    fn step(&mut self, u: &[f64]) -> StepResult {
        let u_clipped = u[0].clamp(0.0, self.cfg.tank.u_max);
        let d = self.dist_sched.value_at(self.t);
        let rates = tank_rates(&self.cfg.tank, self.x[0], self.x[1], u_clipped, d)
            .expect("levels are clamped non-negative");
        self.x = euler_step(self.x, rates, &self.cfg.tank);
        self.t += 1;
        self.advance_sensor_bias();
        let obs = self.observe();
        // The tracking reward is on the plant output itself; the sensor
        // noise only affects what the controller gets to see.
        let reward = tracking_reward(&[self.x[1]], &obs.y_ref);
        let done = self.t == self.cfg.episode_length;
        StepResult { obs, reward, done }
    }

    fn true_state(&self) -> Vec<f64> {
        self.x.to_vec()
    }

    fn true_output(&self) -> Vec<f64> {
        vec![self.x[1]]
    }

    fn n_y(&self) -> usize {
        1
    }

    fn n_d(&self) -> usize {
        1
    }

    fn n_u(&self) -> usize {
        1
    }

    fn episode_length(&self) -> usize {
        self.cfg.episode_length
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0], vec![self.cfg.tank.u_max])
    }

    fn set_ref_override(&mut self, y_ref: Option<Vec<f64>>) {
        self.ref_override = y_ref;
    }
}
