//! Classical baselines for the linear plant: discrete algebraic Riccati
//! solvers, Kalman filter, LQR state feedback, their LQG composition with a
//! steady-state reference feedthrough, and the plain P-controller.

use crate::envs::{Env, LinearEnv, LinearSystem, Observation};
use crate::linalg::Mat;
use crate::{Error, Result};

/// Fixed point of the discrete algebraic Riccati recursion.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// One step of the DARE map: f(P) = A'PA - A'PB (R + B'PB)^{-1} B'PA + Q.
fn dare_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat> {
    let at = a.transpose();
    let bt = b.transpose();
    let atpa = at.matmul(&p.matmul(a));
    let atpb = at.matmul(&p.matmul(b));
    let gram = r.add(&bt.matmul(&p.matmul(b)));
    // (R + B'PB)^{-1} B'PA
    let rhs = bt.matmul(&p.matmul(a));
    let gain = gram.solve(&rhs)?;
    Ok(atpa.sub(&atpb.matmul(&gain)).add(q).symmetrize())
}

/// Solve A'PA - P - A'PB(R+B'PB)^{-1}B'PA + Q = 0 by fixed-point iteration
/// from P = Q, until the sup-norm update falls below 1e-12.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<RiccatiSolution> {
    const TOL: f64 = 1e-12;
    const MAX_ITERS: usize = 100_000;
    let mut p = q.symmetrize();
    for it in 1..=MAX_ITERS {
        let next = dare_map(a, b, q, r, &p)?;
        let delta = next.sub(&p).inf_norm();
        p = next;
        if delta < TOL {
            let residual = dare_map(a, b, q, r, &p)?.sub(&p).inf_norm();
            return Ok(RiccatiSolution { p, iterations: it, residual });
        }
    }
    let residual = dare_map(a, b, q, r, &p)?.sub(&p).inf_norm();
    Err(Error::RiccatiDiverged { residual, iterations: MAX_ITERS })
}

/// LQR gain L = (R + B'PB)^{-1} B'PA from a solved DARE.
pub fn lqr_gain(a: &Mat, b: &Mat, p: &Mat, r: &Mat) -> Result<Mat> {
    let bt = b.transpose();
    let gram = r.add(&bt.matmul(&p.matmul(b)));
    gram.solve(&bt.matmul(&p.matmul(a)))
}

/// Kalman predictor gain K = A Σ C' (C Σ C' + V)^{-1}, with Σ the filter
/// DARE solution for (A', C', W, V).
pub fn kalman_gain(a: &Mat, c: &Mat, w_cov: &Mat, v_cov: &Mat) -> Result<(Mat, Mat)> {
    let sol = solve_dare(&a.transpose(), &c.transpose(), w_cov, v_cov)?;
    let sigma = sol.p;
    let gram = c.matmul(&sigma.matmul(&c.transpose())).add(v_cov);
    // Solve gram' X = (A Σ C')' to get X = gram^{-1} (A Σ C')', K = X'.
    let asc = a.matmul(&sigma.matmul(&c.transpose()));
    let k = gram.transpose().solve(&asc.transpose())?.transpose();
    Ok((k, sigma))
}

/// Kalman filter plus LQR state feedback on the estimate, with a DC
/// feedthrough so a constant reference is tracked with zero steady-state
/// error on the noise-free plant.
pub struct LqgController {
    pub feedback: Mat,
    pub kalman: Mat,
    pub feedthrough: Mat,
    a: Mat,
    b: Mat,
    c: Mat,
    n_d: Mat,
    x_hat: Vec<f64>,
}

impl LqgController {
    /// Build from the plant and the output/input weights of the quadratic
    /// criterion E[y'Q1 y + u'Q2 u].
    pub fn design(sys: &LinearSystem, q1: &Mat, q2: &Mat) -> Result<Self> {
        let n_x = sys.n_x();
        let q = sys.c.transpose().matmul(&q1.matmul(&sys.c)).symmetrize();
        let control = solve_dare(&sys.a, &sys.b, &q, q2)?;
        let feedback = lqr_gain(&sys.a, &sys.b, &control.p, q2)?;

        // Noise covariances from the plant: W = N_w N_w' w_std^2, V = v_std^2 I,
        // floored slightly so the filter DARE stays well posed when noise-free.
        let n_w_mat = Mat::from_fn(n_x, sys.n_w, |i, j| sys.n.get(i, j));
        let w_cov = n_w_mat
            .matmul(&n_w_mat.transpose())
            .scale(sys.w_std * sys.w_std)
            .add(&Mat::identity(n_x).scale(1e-12));
        let v_cov = Mat::identity(sys.n_y()).scale((sys.v_std * sys.v_std).max(1e-12));
        let (kalman, _) = kalman_gain(&sys.a, &sys.c, &w_cov, &v_cov)?;

        // Closed-loop stability of both loops.
        let a_cl = sys.a.sub(&sys.b.matmul(&feedback));
        let rho_fb = a_cl.spectral_radius(800);
        let a_filt = sys.a.sub(&kalman.matmul(&sys.c));
        let rho_filt = a_filt.spectral_radius(800);
        if rho_fb >= 1.0 || rho_filt >= 1.0 {
            return Err(Error::Config(format!(
                "LQG closed loop unstable: feedback radius {rho_fb:.4}, filter radius {rho_filt:.4}"
            )));
        }

        // DC feedthrough F with y_ss = C (I - A + BL)^{-1} B F y_ref = y_ref.
        let dc = sys.c.matmul(&Mat::identity(n_x).add(&sys.b.matmul(&feedback)).sub(&sys.a).solve(&sys.b)?);
        let feedthrough = dc.solve(&Mat::identity(sys.n_y()))?;

        let n_d_mat = Mat::from_fn(n_x, sys.n_d, |i, j| sys.n.get(i, sys.n_w + j));
        Ok(LqgController {
            feedback,
            kalman,
            feedthrough,
            a: sys.a.clone(),
            b: sys.b.clone(),
            c: sys.c.clone(),
            n_d: n_d_mat,
            x_hat: vec![0.0; n_x],
        })
    }

    pub fn reset(&mut self) {
        self.x_hat = vec![0.0; self.x_hat.len()];
    }

    pub fn state_estimate(&self) -> &[f64] {
        &self.x_hat
    }

    /// Control for the current measurement, then advance the predictor:
    /// u = -L x̂ + F y_ref;  x̂⁺ = A x̂ + B u + N_d d + K (y - C x̂).
    pub fn act(&mut self, y: &[f64], y_ref: &[f64], d: &[f64]) -> Vec<f64> {
        let mut u = self.feedthrough.matvec(y_ref);
        let lx = self.feedback.matvec(&self.x_hat);
        for i in 0..u.len() {
            u[i] -= lx[i];
        }
        let innovation: Vec<f64> = self
            .c
            .matvec(&self.x_hat)
            .iter()
            .zip(y)
            .map(|(cx, yi)| yi - cx)
            .collect();
        let mut next = self.a.matvec(&self.x_hat);
        let bu = self.b.matvec(&u);
        let kv = self.kalman.matvec(&innovation);
        let nd = self.n_d.matvec(d);
        for i in 0..next.len() {
            next[i] += bu[i] + kv[i] + nd[i];
        }
        self.x_hat = next;
        u
    }
}

/// u = Kp (y_ref − y).
pub fn p_controller(kp: f64, y: &[f64], y_ref: &[f64]) -> Vec<f64> {
    y.iter().zip(y_ref).map(|(yi, ri)| kp * (ri - yi)).collect()
}

/// Average per-step tracking reward of a controller over `episodes`
/// deterministic-schedule episodes of the linear env.
pub fn average_reward<F>(env: &mut LinearEnv, seeds: &[u64], mut controller: F) -> f64
where
    F: FnMut(&Observation, bool) -> Vec<f64>,
{
    let mut total = 0.0;
    let mut steps = 0usize;
    for &seed in seeds {
        let mut obs = env.reset(seed);
        let mut first = true;
        loop {
            let u = controller(&obs, first);
            first = false;
            let res = env.step(&u);
            total += res.reward;
            steps += 1;
            obs = res.obs;
            if res.done {
                break;
            }
        }
    }
    total / steps as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_stable_linear, GenParams, LinearEnvConfig, ScheduleConfig};
    use crate::rng;

    #[test]
    fn dare_collapses_when_a_zero() {
        let a = Mat::zeros(2, 2);
        let b = Mat::from_rows(&[vec![1.0], vec![0.0]]);
        let q = Mat::identity(2);
        let r = Mat::identity(1);
        let sol = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(sol.p.sub(&q).inf_norm() < 1e-12);
    }

    #[test]
    fn scalar_dare_matches_closed_form() {
        // p = a^2 p - (a b p)^2/(r + b^2 p) + q with a=0.9, b=1, q=1, r=1:
        // quadratic b^2 p^2 + (r - a^2 r - b^2 q) p - q r = 0.
        let (a, b, q, r) = (0.9f64, 1.0f64, 1.0f64, 1.0f64);
        let qa = b * b;
        let qb = r - a * a * r - b * b * q;
        let qc = -q * r;
        let p_closed = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        let sol = solve_dare(
            &Mat::diag(&[a]),
            &Mat::diag(&[b]),
            &Mat::diag(&[q]),
            &Mat::diag(&[r]),
        )
        .unwrap();
        assert!((sol.p.get(0, 0) - p_closed).abs() < 1e-10, "{} vs {p_closed}", sol.p.get(0, 0));
    }

    #[test]
    fn dare_plugback_residual_on_random_systems() {
        for seed in 0..25 {
            let n_x = 2 + (seed as usize % 9); // 2..=10
            let sys =
                generate_stable_linear(seed, n_x, 1, 1, n_x, 0, GenParams::default(), 0.0, 0.0)
                    .unwrap();
            let q = sys.c.transpose().matmul(&sys.c).add(&Mat::identity(n_x).scale(1e-6));
            let r = Mat::identity(1).scale(0.1);
            let sol = solve_dare(&sys.a, &sys.b, &q, &r).unwrap();
            assert!(sol.residual < 1e-9, "seed {seed}: residual {}", sol.residual);
            assert!(sol.p.max_symmetry_defect() < 1e-10);
        }
    }

    #[test]
    fn p_controller_examples() {
        assert_eq!(p_controller(2.0, &[1.0], &[1.0]), vec![0.0]);
        assert_eq!(p_controller(2.0, &[0.0], &[1.5]), vec![3.0]);
    }

    fn env_for(sys: LinearSystem) -> LinearEnv {
        LinearEnv::new(
            sys,
            LinearEnvConfig {
                episode_length: 300,
                ref_schedule: ScheduleConfig { lo: -1.0, hi: 1.0, hold: 100 },
                dist_schedule: ScheduleConfig { lo: 0.0, hi: 0.0, hold: 50 },
                u_max: 20.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn lqg_closed_loop_stable_and_tracks() {
        let sys = generate_stable_linear(33, 6, 1, 1, 6, 0, GenParams::default(), 0.0, 0.0).unwrap();
        let mut ctrl = LqgController::design(&sys, &Mat::identity(1), &Mat::identity(1).scale(0.1)).unwrap();
        // Noise-free, constant reference: steady-state error below 1e-6.
        let mut env = env_for(sys);
        env.set_ref_override(Some(vec![0.7]));
        let mut obs = env.reset(0);
        ctrl.reset();
        let mut last_err = f64::NAN;
        for _ in 0..300 {
            let u = ctrl.act(&obs.y, &obs.y_ref, &obs.d);
            let res = env.step(&u);
            last_err = (res.obs.y[0] - 0.7).abs();
            obs = res.obs;
        }
        assert!(last_err < 1e-6, "steady-state error {last_err}");
    }

    #[test]
    fn lqg_bounded_over_long_noisy_run() {
        let sys = generate_stable_linear(7, 8, 1, 1, 8, 0, GenParams::default(), 0.02, 0.02).unwrap();
        let mut ctrl = LqgController::design(&sys, &Mat::identity(1), &Mat::identity(1).scale(0.1)).unwrap();
        let mut env = env_for(sys);
        let mut obs = env.reset(5);
        ctrl.reset();
        for t in 0..10_000 {
            let u = ctrl.act(&obs.y, &obs.y_ref, &obs.d);
            let res = env.step(&u);
            let norm: f64 = env.true_state().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e3, "state blew up at t={t}: {norm}");
            obs = res.obs;
            if res.done {
                obs = env.reset_auto();
                ctrl.reset();
            }
        }
    }

    #[test]
    fn kalman_innovations_are_white() {
        let sys = generate_stable_linear(13, 6, 1, 1, 6, 0, GenParams::default(), 0.05, 0.05).unwrap();
        let n_x = 6;
        let n_w_mat = Mat::from_fn(n_x, sys.n_w, |i, j| sys.n.get(i, j));
        let w_cov = n_w_mat.matmul(&n_w_mat.transpose()).scale(sys.w_std * sys.w_std)
            .add(&Mat::identity(n_x).scale(1e-12));
        let v_cov = Mat::identity(1).scale(sys.v_std * sys.v_std);
        let (k, _) = kalman_gain(&sys.a, &sys.c, &w_cov, &v_cov).unwrap();

        // Simulate the open-loop plant with the predictor and collect
        // innovations y_t - C x̂_t.
        let t_max = 10_000;
        let mut x = vec![0.0; n_x];
        let mut x_hat = vec![0.0; n_x];
        let mut w_rng = rng::stream(99, "w", 0);
        let mut v_rng = rng::stream(99, "v", 0);
        let mut innovations = Vec::with_capacity(t_max);
        for _ in 0..t_max {
            let y = sys.c.matvec(&x)[0] + sys.v_std * rng::normal(&mut v_rng);
            let innov = y - sys.c.matvec(&x_hat)[0];
            innovations.push(innov);
            // Predictor update.
            let mut next_hat = sys.a.matvec(&x_hat);
            let kv = k.matvec(&[innov]);
            for i in 0..n_x {
                next_hat[i] += kv[i];
            }
            x_hat = next_hat;
            // Plant update.
            let w: Vec<f64> = (0..sys.n_w).map(|_| sys.w_std * rng::normal(&mut w_rng)).collect();
            let mut next = sys.a.matvec(&x);
            let nw = Mat::from_fn(n_x, sys.n_w, |i, j| sys.n.get(i, j)).matvec(&w);
            for i in 0..n_x {
                next[i] += nw[i];
            }
            x = next;
        }
        let mean = innovations.iter().sum::<f64>() / t_max as f64;
        let var: f64 = innovations.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / t_max as f64;
        let bound = 3.0 / (t_max as f64).sqrt();
        for lag in 1..=10 {
            let mut acc = 0.0;
            for t in lag..t_max {
                acc += (innovations[t] - mean) * (innovations[t - lag] - mean);
            }
            let rho = acc / ((t_max - lag) as f64 * var);
            assert!(rho.abs() < bound, "lag {lag} autocorrelation {rho} exceeds {bound}");
        }
    }

    #[test]
    fn lqg_beats_grid_searched_constant_output_feedback_scalar() {
        // Scalar plant: exhaustive grid over constant gains u = g (ref - y).
        let sys = generate_stable_linear(2, 1, 1, 1, 1, 0, GenParams { radius_min: 0.5, radius_max: 0.9 }, 0.05, 0.05)
            .unwrap();
        let dc = sys.dc_gain().unwrap().get(0, 0);
        let mut env = env_for(sys.clone());
        let seeds = [0u64, 1, 2];
        let mut best_p = f64::NEG_INFINITY;
        for i in 1..=60 {
            let g = 0.05 * i as f64 * dc.signum();
            let reward = average_reward(&mut env, &seeds, |obs, _| {
                p_controller(g, &obs.y, &obs.y_ref)
            });
            best_p = best_p.max(reward);
        }
        let mut ctrl = LqgController::design(&sys, &Mat::identity(1), &Mat::identity(1).scale(0.01)).unwrap();
        let lqg_reward = average_reward(&mut env, &seeds, |obs, first| {
            if first {
                ctrl.reset();
            }
            ctrl.act(&obs.y, &obs.y_ref, &obs.d)
        });
        assert!(
            lqg_reward >= best_p,
            "LQG {lqg_reward} worse than best constant gain {best_p}"
        );
    }
}
