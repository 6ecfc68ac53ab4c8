//! Randomly generated stable discrete-time linear plant.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::schedule::{PiecewiseSchedule, ScheduleConfig};
use crate::envs::{tracking_reward, Env, Observation, StepResult};
use crate::linalg::{orthonormalize, Mat};
use crate::rng;
use crate::{Error, Result};

/// x_{t+1} = A x_t + B u_t + N [w_t; d_t],  y_t = C x_t + v_t.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: Mat,
    pub b: Mat,
    pub n: Mat,
    pub c: Mat,
    pub n_w: usize,
    pub n_d: usize,
    pub w_std: f64,
    pub v_std: f64,
}

impl LinearSystem {
    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    pub fn n_y(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n_x = self.n_x();
        if self.a.cols() != n_x
            || self.b.rows() != n_x
            || self.n.rows() != n_x
            || self.n.cols() != self.n_w + self.n_d
            || self.c.cols() != n_x
        {
            return Err(Error::Config("linear system dimensions are inconsistent".into()));
        }
        let rho = self.a.spectral_radius(800);
        if rho >= 1.0 {
            return Err(Error::Config(format!("A has spectral radius {rho:.6} >= 1")));
        }
        if self.w_std < 0.0 || self.v_std < 0.0 {
            return Err(Error::Config("noise standard deviations must be >= 0".into()));
        }
        Ok(())
    }

    /// DC gain from u to y: C (I - A)^{-1} B.
    pub fn dc_gain(&self) -> Result<Mat> {
        let n = self.n_x();
        let m = Mat::identity(n).sub(&self.a);
        let inv_b = m.solve(&self.b)?;
        Ok(self.c.matmul(&inv_b))
    }
}

/// Eigenvalue modulus range for [`generate_stable_linear`].
#[derive(Clone, Copy, Debug)]
pub struct GenParams {
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { radius_min: 0.1, radius_max: 0.95 }
    }
}

/// Randomly generate a stable system: eigenvalues (real or conjugate pairs)
/// with modulus uniform in [radius_min, radius_max], assembled in real
/// block-diagonal form and conjugated by a random orthogonal matrix; B, N, C
/// entries i.i.d. standard normal scaled by 1/sqrt(n_x). Deterministic in
/// the seed.
#[allow(clippy::too_many_arguments)]
pub fn generate_stable_linear(
    seed: u64,
    n_x: usize,
    n_u: usize,
    n_y: usize,
    n_w: usize,
    n_d: usize,
    gen: GenParams,
    w_std: f64,
    v_std: f64,
) -> Result<LinearSystem> {
    if n_x < 1 || n_u < 1 || n_y < 1 || n_w < 1 {
        return Err(Error::Config("linear dims n_x, n_u, n_y, n_w must be >= 1".into()));
    }
    if !(gen.radius_min > 0.0 && gen.radius_min <= gen.radius_max && gen.radius_max < 1.0) {
        return Err(Error::Config(format!(
            "eigenvalue modulus range [{}, {}] must sit inside (0, 1)",
            gen.radius_min, gen.radius_max
        )));
    }

    let mut r = rng::stream(seed, "linear_sys", 0);
    let mut d_block = Mat::zeros(n_x, n_x);
    let mut filled = 0;
    while filled < n_x {
        let modulus = rng::uniform(&mut r, gen.radius_min, gen.radius_max);
        let pair = filled + 2 <= n_x && r.random::<f64>() < 0.5;
        if pair {
            let theta = rng::uniform(&mut r, 0.0, std::f64::consts::PI);
            let (re, im) = (modulus * theta.cos(), modulus * theta.sin());
            d_block.set(filled, filled, re);
            d_block.set(filled, filled + 1, im);
            d_block.set(filled + 1, filled, -im);
            d_block.set(filled + 1, filled + 1, re);
            filled += 2;
        } else {
            let sign = if r.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            d_block.set(filled, filled, sign * modulus);
            filled += 1;
        }
    }

    let raw = Mat::from_fn(n_x, n_x, |_, _| rng::normal(&mut r));
    let q = orthonormalize(&raw)?;
    let a = q.transpose().matmul(&d_block).matmul(&q);

    let scale = 1.0 / (n_x as f64).sqrt();
    let b = Mat::from_fn(n_x, n_u, |_, _| scale * rng::normal(&mut r));
    let n = Mat::from_fn(n_x, n_w + n_d, |_, _| scale * rng::normal(&mut r));
    let c = Mat::from_fn(n_y, n_x, |_, _| scale * rng::normal(&mut r));

    let sys = LinearSystem { a, b, n, c, n_w, n_d, w_std, v_std };
    sys.validate()?;
    Ok(sys)
}

/// One plant transition: x_next = A x + B u + N [w; d], y = C x_next + v.
pub fn linear_step(
    sys: &LinearSystem,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    d: &[f64],
    v: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(x.len(), sys.n_x());
    debug_assert_eq!(u.len(), sys.n_u());
    debug_assert_eq!(w.len(), sys.n_w);
    debug_assert_eq!(d.len(), sys.n_d);
    debug_assert_eq!(v.len(), sys.n_y());
    let mut x_next = sys.a.matvec(x);
    let bu = sys.b.matvec(u);
    let mut wd = Vec::with_capacity(sys.n_w + sys.n_d);
    wd.extend_from_slice(w);
    wd.extend_from_slice(d);
    let nwd = sys.n.matvec(&wd);
    for i in 0..x_next.len() {
        x_next[i] += bu[i] + nwd[i];
    }
    let mut y = sys.c.matvec(&x_next);
    for i in 0..y.len() {
        y[i] += v[i];
    }
    (x_next, y)
}

#[derive(Clone, Debug)]
pub struct LinearEnvConfig {
    pub episode_length: usize,
    pub ref_schedule: ScheduleConfig,
    pub dist_schedule: ScheduleConfig,
    pub u_max: f64,
}

impl LinearEnvConfig {
    fn validate(&self) -> Result<()> {
        if self.episode_length == 0 || self.episode_length % self.ref_schedule.hold != 0 {
            return Err(Error::Config(
                "episode_length must be a positive multiple of the reference hold".into(),
            ));
        }
        if self.u_max <= 0.0 {
            return Err(Error::Config("u_max must be positive".into()));
        }
        Ok(())
    }
}

pub struct LinearEnv {
    sys: LinearSystem,
    cfg: LinearEnvConfig,
    x: Vec<f64>,
    t: usize,
    base_seed: u64,
    episode: u64,
    w_rng: ChaCha8Rng,
    v_rng: ChaCha8Rng,
    ref_sched: PiecewiseSchedule,
    dist_sched: PiecewiseSchedule,
    ref_override: Option<Vec<f64>>,
}

impl LinearEnv {
    pub fn new(sys: LinearSystem, cfg: LinearEnvConfig) -> Result<Self> {
        sys.validate()?;
        cfg.validate()?;
        let ref_sched = PiecewiseSchedule::new(cfg.ref_schedule, 0, "ref");
        let dist_sched = PiecewiseSchedule::new(cfg.dist_schedule, 0, "dist");
        let mut env = LinearEnv {
            x: vec![0.0; sys.n_x()],
            sys,
            cfg,
            t: 0,
            base_seed: 0,
            episode: 0,
            w_rng: rng::stream(0, "w", 0),
            v_rng: rng::stream(0, "v", 0),
            ref_sched,
            dist_sched,
            ref_override: None,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    /// Reset for the next episode without changing the base seed; schedules
    /// and noise derive from (base seed, episode index).
    pub fn reset_auto(&mut self) -> Observation {
        self.episode += 1;
        self.reset_inner()
    }

    fn reset_inner(&mut self) -> Observation {
        let ep_seed = rng::derive_seed(self.base_seed, "episode", self.episode);
        self.t = 0;
        self.x = vec![0.0; self.sys.n_x()];
        self.w_rng = rng::stream(ep_seed, "w", 0);
        self.v_rng = rng::stream(ep_seed, "v", 0);
        self.ref_sched.reseed(rng::derive_seed(ep_seed, "ref", 0));
        self.dist_sched.reseed(rng::derive_seed(ep_seed, "dist", 0));
        self.observe()
    }

    fn observe(&mut self) -> Observation {
        let mut y = self.sys.c.matvec(&self.x);
        for yi in &mut y {
            *yi += self.sys.v_std * rng::normal(&mut self.v_rng);
        }
        Observation { y, d: self.current_d(), y_ref: self.current_ref() }
    }

    fn current_ref(&self) -> Vec<f64> {
        if let Some(r) = &self.ref_override {
            return r.clone();
        }
        // One independent window sequence per output dimension.
        (0..self.sys.n_y())
            .map(|i| {
                if i == 0 {
                    self.ref_sched.value_at(self.t)
                } else {
                    self.ref_sched.value_at(self.t + i * 7919 * self.cfg.episode_length)
                }
            })
            .collect()
    }

    fn current_d(&self) -> Vec<f64> {
        (0..self.sys.n_d).map(|_| self.dist_sched.value_at(self.t)).collect()
    }
}

impl Env for LinearEnv {
    fn reset(&mut self, seed: u64) -> Observation {
        self.base_seed = seed;
        self.episode = 0;
        self.reset_inner()
    }

    fn step(&mut self, u: &[f64]) -> StepResult {
        let u_clipped: Vec<f64> =
            u.iter().map(|v| v.clamp(-self.cfg.u_max, self.cfg.u_max)).collect();
        let w: Vec<f64> =
            (0..self.sys.n_w).map(|_| self.sys.w_std * rng::normal(&mut self.w_rng)).collect();
        let d = self.current_d();
        let v: Vec<f64> =
            (0..self.sys.n_y()).map(|_| self.sys.v_std * rng::normal(&mut self.v_rng)).collect();
        let (x_next, y) = linear_step(&self.sys, &self.x, &u_clipped, &w, &d, &v);
        self.x = x_next;
        self.t += 1;
        let obs = Observation { y, d: self.current_d(), y_ref: self.current_ref() };
        let reward = tracking_reward(&obs.y, &obs.y_ref);
        let done = self.t == self.cfg.episode_length;
        StepResult { obs, reward, done }
    }

    fn true_state(&self) -> Vec<f64> {
        self.x.clone()
    }

    fn true_output(&self) -> Vec<f64> {
        self.sys.c.matvec(&self.x)
    }

    fn n_y(&self) -> usize {
        self.sys.n_y()
    }

    fn n_d(&self) -> usize {
        self.sys.n_d
    }

    fn n_u(&self) -> usize {
        self.sys.n_u()
    }

    fn episode_length(&self) -> usize {
        self.cfg.episode_length
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.cfg.u_max; self.sys.n_u()], vec![self.cfg.u_max; self.sys.n_u()])
    }

    fn set_ref_override(&mut self, y_ref: Option<Vec<f64>>) {
        self.ref_override = y_ref;
    }
}
