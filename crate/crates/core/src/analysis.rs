//! Evaluation tooling: least-squares identification of the observer state
//! against the true plant state, multi-level tracking evaluation, the
//! feedforward ablation, and CSV export.

use crate::envs::{Env, EnvInstance};
use crate::gradcore::ParamStore;
use crate::linalg::Mat;
use crate::policy::{self, HiddenState, PolicySpec};
use crate::rng;
use crate::{Error, Result};

/// Result of regressing true states on estimated states.
#[derive(Clone, Debug)]
pub struct StateFitResult {
    /// One row per true-state dimension, one column per regressor.
    pub weights: Mat,
    pub intercept: Vec<f64>,
    pub r_squared: Vec<f64>,
    pub sample_count: usize,
    pub rank_deficient: bool,
}

impl StateFitResult {
    pub fn mean_r_squared(&self) -> f64 {
        self.r_squared.iter().sum::<f64>() / self.r_squared.len() as f64
    }
}

/// The estimated state exposed to analysis: the observer state, plus the
/// feedforward estimate when present. For the unstructured baseline this is
/// the actor RNN's 64-unit internal state.
fn estimated_state(hidden: &HiddenState) -> Vec<f64> {
    let mut v = hidden.obs.clone();
    v.extend_from_slice(&hidden.ff);
    v
}

/// Run deterministic episodes over `n_levels` evenly spaced reference
/// levels in `[level_lo, level_hi]`, recording (estimated state, true
/// state) pairs after `warmup` steps per level.
#[allow(clippy::too_many_arguments)]
pub fn collect_state_pairs(
    env: &mut EnvInstance,
    store: &ParamStore,
    spec: &PolicySpec,
    n_levels: usize,
    steps_per_level: usize,
    warmup: usize,
    level_lo: f64,
    level_hi: f64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if n_levels < 2 || steps_per_level <= warmup {
        return Err(Error::Config("need n_levels >= 2 and steps_per_level > warmup".into()));
    }
    let mut xhat = Vec::with_capacity(n_levels * (steps_per_level - warmup));
    let mut xtrue = Vec::with_capacity(xhat.capacity());
    for k in 0..n_levels {
        let level = level_lo + (level_hi - level_lo) * k as f64 / (n_levels - 1) as f64;
        env.set_ref_override(Some(vec![level; env.n_y()]));
        let mut obs = env.reset(rng::derive_seed(seed, "statefit", k as u64));
        let mut hidden = HiddenState::zeros(spec);
        let mut prev_u = vec![0.0; spec.dims.n_u];
        for t in 0..steps_per_level {
            let out = policy::act(store, spec, &mut hidden, &obs, &prev_u, None)?;
            if t >= warmup {
                xhat.push(estimated_state(&hidden));
                xtrue.push(env.true_state());
            }
            let res = env.step(&out.u_applied);
            obs = res.obs;
            prev_u = out.u_applied;
        }
    }
    env.set_ref_override(None);
    Ok((xhat, xtrue))
}

/// Ordinary least squares with intercept, one regression per true-state
/// dimension; rank-deficient designs fall back to the minimum-norm solution
/// (eigen-pseudo-inverse) and are flagged.
pub fn fit_state_map(xhat: &[Vec<f64>], xtrue: &[Vec<f64>]) -> Result<StateFitResult> {
    let n = xhat.len();
    if n == 0 || n != xtrue.len() {
        return Err(Error::Config("state fit needs equal, non-empty sample sets".into()));
    }
    let k = xhat[0].len();
    let n_true = xtrue[0].len();
    if n < 10 * (k + 1) {
        return Err(Error::Config(format!(
            "state fit needs at least 10x regressors: {} samples for {} regressors",
            n,
            k + 1
        )));
    }

    // Normal equations on the augmented design G = [xhat, 1].
    let ka = k + 1;
    let mut gtg = Mat::zeros(ka, ka);
    let mut gty = Mat::zeros(ka, n_true);
    let mut row = vec![0.0; ka];
    for (xh, xt) in xhat.iter().zip(xtrue) {
        row[..k].copy_from_slice(xh);
        row[k] = 1.0;
        for i in 0..ka {
            for j in 0..ka {
                gtg.set(i, j, gtg.get(i, j) + row[i] * row[j]);
            }
            for j in 0..n_true {
                gty.set(i, j, gty.get(i, j) + row[i] * xt[j]);
            }
        }
    }

    // Minimum-norm solve via the symmetric eigendecomposition.
    let (vals, vecs) = gtg.jacobi_eigh();
    let max_eig = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max_eig * 1e-12;
    let rank_deficient = vals.iter().any(|v| v.abs() <= tol);
    let inv_vals: Vec<f64> =
        vals.iter().map(|v| if v.abs() > tol { 1.0 / v } else { 0.0 }).collect();
    // pinv = V diag(inv_vals) V^T
    let pinv = vecs.matmul(&Mat::diag(&inv_vals)).matmul(&vecs.transpose());
    let beta = pinv.matmul(&gty); // ka x n_true

    // R^2 per true-state dimension.
    let mut r_squared = vec![0.0; n_true];
    let mean_true: Vec<f64> = (0..n_true)
        .map(|j| xtrue.iter().map(|x| x[j]).sum::<f64>() / n as f64)
        .collect();
    let mut ss_res = vec![0.0; n_true];
    let mut ss_tot = vec![0.0; n_true];
    for (xh, xt) in xhat.iter().zip(xtrue) {
        for j in 0..n_true {
            let mut pred = beta.get(k, j);
            for i in 0..k {
                pred += beta.get(i, j) * xh[i];
            }
            ss_res[j] += (xt[j] - pred) * (xt[j] - pred);
            ss_tot[j] += (xt[j] - mean_true[j]) * (xt[j] - mean_true[j]);
        }
    }
    for j in 0..n_true {
        r_squared[j] = if ss_tot[j] > 0.0 {
            1.0 - ss_res[j] / ss_tot[j]
        } else if ss_res[j] == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
    }

    let weights = Mat::from_fn(n_true, k, |j, i| beta.get(i, j));
    let intercept: Vec<f64> = (0..n_true).map(|j| beta.get(k, j)).collect();
    Ok(StateFitResult { weights, intercept, r_squared, sample_count: n, rank_deficient })
}

/// One evaluated (policy seed, level) episode.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub variant: String,
    pub seed: u64,
    pub level: f64,
    pub rms_error: f64,
    pub mean_return: f64,
    pub input_rms: f64,
    pub settled: bool,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Per-seed RMS error averaged over levels.
    pub fn rms_by_seed(&self) -> Vec<(u64, f64)> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
            .into_iter()
            .map(|s| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.seed == s).collect();
                let mean = rows.iter().map(|r| r.rms_error).sum::<f64>() / rows.len() as f64;
                (s, mean)
            })
            .collect()
    }
}

/// Evaluate trained policies (one parameter store per training seed) on
/// constant reference levels under the environment's disturbance schedule,
/// in deterministic mode. When `ablate_feedforward` is set, the observation
/// fed to the policy has its measured-disturbance component zeroed while
/// the plant still experiences the true disturbance.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_tracking<FB>(
    build_env: FB,
    spec: &PolicySpec,
    policies: &[(u64, ParamStore)],
    levels: &[f64],
    eval_seed: u64,
    warmup: usize,
    ablate_feedforward: bool,
) -> Result<EvalReport>
where
    FB: Fn() -> Result<EnvInstance> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..levels.len()).map(move |l| (p, l)))
        .collect();
    let rows = crate::par::map(jobs, |(p, l)| -> Result<EvalRow> {
        let (train_seed, store) = &policies[p];
        let level = levels[l];
        let mut env = build_env()?;
        env.set_ref_override(Some(vec![level; env.n_y()]));
        let episode_seed = rng::derive_seed(eval_seed, "eval", (p * levels.len() + l) as u64);
        let mut obs = env.reset(episode_seed);
        let mut hidden = HiddenState::zeros(spec);
        let mut prev_u = vec![0.0; spec.dims.n_u];
        let steps = env.episode_length();

        let mut errs = Vec::with_capacity(steps);
        let mut inputs = Vec::with_capacity(steps);
        let mut episode_return = 0.0;
        for _ in 0..steps {
            let mut seen = obs.clone();
            if ablate_feedforward {
                for d in &mut seen.d {
                    *d = 0.0;
                }
            }
            let out = policy::act(store, spec, &mut hidden, &seen, &prev_u, None)?;
            let res = env.step(&out.u_applied);
            episode_return += res.reward;
            errs.push(env.true_output()[0] - level);
            inputs.push(out.u_applied[0]);
            prev_u = out.u_applied;
            obs = res.obs;
        }
        let post = &errs[warmup.min(errs.len())..];
        let post_u = &inputs[warmup.min(inputs.len())..];
        let rms_error = (post.iter().map(|e| e * e).sum::<f64>() / post.len() as f64).sqrt();
        let input_rms = (post_u.iter().map(|u| u * u).sum::<f64>() / post_u.len() as f64).sqrt();
        let tail = &errs[errs.len() - errs.len() / 4..];
        let settled = tail.iter().all(|e| e.abs() <= 0.05 * level.abs().max(0.1));
        Ok(EvalRow {
            variant: spec.variant.as_str().to_string(),
            seed: *train_seed,
            level,
            rms_error,
            mean_return: episode_return,
            input_rms,
            settled,
        })
    });
    let rows: Result<Vec<EvalRow>> = rows.into_iter().collect();
    Ok(EvalReport { rows: rows? })
}

/// [`evaluate_tracking`] with the disturbance input to the policy zeroed.
pub fn ablate_feedforward<FB>(
    build_env: FB,
    spec: &PolicySpec,
    policies: &[(u64, ParamStore)],
    levels: &[f64],
    eval_seed: u64,
    warmup: usize,
) -> Result<EvalReport>
where
    FB: Fn() -> Result<EnvInstance> + Sync,
{
    evaluate_tracking(build_env, spec, policies, levels, eval_seed, warmup, true)
}

/// Mean deterministic episode return of a policy over the environment's own
/// reference/disturbance schedules, one episode per seed.
pub fn mean_episode_return(
    env: &mut EnvInstance,
    store: &ParamStore,
    spec: &PolicySpec,
    seeds: &[u64],
) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        let mut obs = env.reset(seed);
        let mut hidden = HiddenState::zeros(spec);
        let mut prev_u = vec![0.0; spec.dims.n_u];
        for _ in 0..env.episode_length() {
            let out = policy::act(store, spec, &mut hidden, &obs, &prev_u, None)?;
            let res = env.step(&out.u_applied);
            total += res.reward;
            prev_u = out.u_applied;
            obs = res.obs;
        }
    }
    Ok(total / seeds.len() as f64)
}

/// One closed-loop trajectory dump for plotting and debugging.
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

pub struct TrajectoryRow {
    pub t: usize,
    pub y: f64,
    pub y_ref: f64,
    pub d: f64,
    pub u: f64,
    pub reward: f64,
    pub x_true: Vec<f64>,
}

pub fn run_trajectory(
    env: &mut EnvInstance,
    store: &ParamStore,
    spec: &PolicySpec,
    seed: u64,
    ablate: bool,
) -> Result<Trajectory> {
    let mut obs = env.reset(seed);
    let mut hidden = HiddenState::zeros(spec);
    let mut prev_u = vec![0.0; spec.dims.n_u];
    let mut rows = Vec::with_capacity(env.episode_length());
    for t in 0..env.episode_length() {
        let mut seen = obs.clone();
        if ablate {
            for d in &mut seen.d {
                *d = 0.0;
            }
        }
        let out = policy::act(store, spec, &mut hidden, &seen, &prev_u, None)?;
        let res = env.step(&out.u_applied);
        rows.push(TrajectoryRow {
            t,
            y: obs.y[0],
            y_ref: obs.y_ref[0],
            d: obs.d.first().copied().unwrap_or(0.0),
            u: out.u_applied[0],
            reward: res.reward,
            x_true: env.true_state(),
        });
        prev_u = out.u_applied;
        obs = res.obs;
    }
    Ok(Trajectory { rows })
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// statefit.csv: true_dim, r_squared, n_samples.
pub fn statefit_csv(fit: &StateFitResult) -> String {
    let mut out = String::from("true_dim,r_squared,n_samples\n");
    for (j, r2) in fit.r_squared.iter().enumerate() {
        out.push_str(&format!("{j},{},{}\n", fmt(*r2), fit.sample_count));
    }
    out
}

/// scatter.csv: sample, true_dim, x_true, x_fit (the fitted linear
/// combination of the estimated state).
pub fn scatter_csv(fit: &StateFitResult, xhat: &[Vec<f64>], xtrue: &[Vec<f64>]) -> String {
    let mut out = String::from("sample,true_dim,x_true,x_fit\n");
    for (s, (xh, xt)) in xhat.iter().zip(xtrue).enumerate() {
        for (j, xt_j) in xt.iter().enumerate() {
            let mut pred = fit.intercept[j];
            for i in 0..xh.len() {
                pred += fit.weights.get(j, i) * xh[i];
            }
            out.push_str(&format!("{s},{j},{},{}\n", fmt(*xt_j), fmt(pred)));
        }
    }
    out
}

/// eval.csv: variant, seed, level, rms_error, mean_return, input_rms.
pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("variant,seed,level,rms_error,mean_return,input_rms\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant,
            r.seed,
            fmt(r.level),
            fmt(r.rms_error),
            fmt(r.mean_return),
            fmt(r.input_rms)
        ));
    }
    out
}

/// traj.csv: t, y, y_ref, d, u, reward, x_true_0..x_true_{n-1}.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n_x = traj.rows.first().map(|r| r.x_true.len()).unwrap_or(0);
    let mut out = String::from("t,y,y_ref,d,u,reward");
    for i in 0..n_x {
        out.push_str(&format!(",x_true_{i}"));
    }
    out.push('\n');
    for r in &traj.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.t,
            fmt(r.y),
            fmt(r.y_ref),
            fmt(r.d),
            fmt(r.u),
            fmt(r.reward)
        ));
        for v in &r.x_true {
            out.push_str(&format!(",{}", fmt(*v)));
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_pairs(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, "synth", 0);
        (0..n).map(|_| (0..k).map(|_| rng::normal(&mut r)).collect()).collect()
    }

    #[test]
    fn identity_fit_recovers_identity() {
        let xhat = synthetic_pairs(200, 4, 0);
        let fit = fit_state_map(&xhat, &xhat).unwrap();
        for j in 0..4 {
            assert!((fit.r_squared[j] - 1.0).abs() < 1e-10);
            assert!(fit.intercept[j].abs() < 1e-8);
            for i in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((fit.weights.get(j, i) - expected).abs() < 1e-8);
            }
        }
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn known_affine_map_is_recovered() {
        let xhat = synthetic_pairs(500, 3, 1);
        let m = [[2.0, -1.0, 0.5], [0.0, 3.0, 1.0]];
        let c = [0.7, -0.2];
        let xtrue: Vec<Vec<f64>> = xhat
            .iter()
            .map(|x| {
                (0..2)
                    .map(|j| c[j] + (0..3).map(|i| m[j][i] * x[i]).sum::<f64>())
                    .collect()
            })
            .collect();
        let fit = fit_state_map(&xhat, &xtrue).unwrap();
        for j in 0..2 {
            assert!((fit.intercept[j] - c[j]).abs() < 1e-8);
            for i in 0..3 {
                assert!((fit.weights.get(j, i) - m[j][i]).abs() < 1e-8);
            }
            assert!((fit.r_squared[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_noise_has_near_zero_r_squared() {
        let xhat = synthetic_pairs(10_000, 4, 2);
        let xtrue = synthetic_pairs(10_000, 3, 3);
        let fit = fit_state_map(&xhat, &xtrue).unwrap();
        for j in 0..3 {
            assert!(fit.r_squared[j] < 0.05, "dim {j}: {}", fit.r_squared[j]);
        }
    }

    #[test]
    fn r_squared_invariant_under_invertible_affine_reparameterization() {
        let xhat = synthetic_pairs(400, 3, 4);
        let xtrue: Vec<Vec<f64>> = xhat
            .iter()
            .map(|x| vec![x[0] + 0.3 * x[1] + 0.1, 2.0 * x[2] - x[0]])
            .collect();
        // Add some noise so R^2 < 1.
        let mut r = rng::stream(9, "noise", 0);
        let xtrue: Vec<Vec<f64>> = xtrue
            .iter()
            .map(|x| x.iter().map(|v| v + 0.1 * rng::normal(&mut r)).collect())
            .collect();
        let base = fit_state_map(&xhat, &xtrue).unwrap();

        // Random invertible affine transform of the regressors.
        let t = [[1.2, 0.3, -0.4], [0.0, 0.8, 0.5], [0.2, -0.1, 1.5]];
        let shift = [0.5, -1.0, 2.0];
        let xhat_t: Vec<Vec<f64>> = xhat
            .iter()
            .map(|x| {
                (0..3)
                    .map(|j| shift[j] + (0..3).map(|i| t[j][i] * x[i]).sum::<f64>())
                    .collect()
            })
            .collect();
        let transformed = fit_state_map(&xhat_t, &xtrue).unwrap();
        for j in 0..2 {
            assert!(
                (base.r_squared[j] - transformed.r_squared[j]).abs() < 1e-9,
                "dim {j}: {} vs {}",
                base.r_squared[j],
                transformed.r_squared[j]
            );
        }
    }

    #[test]
    fn rank_deficient_design_is_flagged() {
        // Duplicate a regressor column: exact collinearity.
        let base = synthetic_pairs(300, 2, 5);
        let xhat: Vec<Vec<f64>> = base.iter().map(|x| vec![x[0], x[1], x[0]]).collect();
        let xtrue: Vec<Vec<f64>> = base.iter().map(|x| vec![x[0] - x[1]]).collect();
        let fit = fit_state_map(&xhat, &xtrue).unwrap();
        assert!(fit.rank_deficient);
        assert!((fit.r_squared[0] - 1.0).abs() < 1e-8, "min-norm fit should still explain");
    }

    #[test]
    fn sample_count_invariant_enforced() {
        let xhat = synthetic_pairs(30, 4, 6);
        let xtrue = synthetic_pairs(30, 2, 7);
        assert!(fit_state_map(&xhat, &xtrue).is_err());
    }

    #[test]
    fn csv_roundtrip_values_exact() {
        let xhat = synthetic_pairs(200, 2, 8);
        let xtrue: Vec<Vec<f64>> = xhat.iter().map(|x| vec![x[0] * 1.5 - 0.25]).collect();
        let fit = fit_state_map(&xhat, &xtrue).unwrap();
        let csv = statefit_csv(&fit);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "true_dim,r_squared,n_samples");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        let parsed: f64 = first[1].parse().unwrap();
        assert_eq!(parsed, fit.r_squared[0], "17-significant-digit format must round-trip");
    }
}
