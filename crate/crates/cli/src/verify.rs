//! The `verify` command: a fast oracle suite over the numerical core.
//! Prints one line per check with the measured tolerance; any failure makes
//! the command exit non-zero.

use rand::Rng;

use srlc_core::envs::{
    euler_step, generate_stable_linear, tank_equilibrium, tank_rates, EnvInstance, GenParams,
    LinearEnv, LinearEnvConfig, ScheduleConfig, TankConfig,
};
use srlc_core::gradcore::{fd_check, read_params, write_params, ParamStore, Tape};
use srlc_core::linalg::Mat;
use srlc_core::lqg::solve_dare;
use srlc_core::policy::{self, HiddenState, PolicyDims, PolicySpec, Variant};
use srlc_core::ppo::{
    collect_rollout, compute_gae, replay_log_probs, train, EnvWorker, PpoConfig, SegmentRef,
    Snapshot, StepRecord,
};
use srlc_core::rng;
use srlc_core::Result;

pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, measured: f64, bound: f64, detail: String) -> CheckResult {
    CheckResult { name, measured, bound, pass: measured < bound, detail }
}

fn linear_env() -> Result<EnvInstance> {
    let sys = generate_stable_linear(7, 4, 1, 1, 4, 1, GenParams { radius_min: 0.1, radius_max: 0.9 }, 0.01, 0.01)?;
    Ok(EnvInstance::Linear(LinearEnv::new(
        sys,
        LinearEnvConfig {
            episode_length: 64,
            ref_schedule: ScheduleConfig { lo: -1.0, hi: 1.0, hold: 32 },
            dist_schedule: ScheduleConfig { lo: 0.0, hi: 0.3, hold: 16 },
            u_max: 20.0,
        },
    )?))
}

fn spec_for(variant: Variant) -> Result<PolicySpec> {
    let (obs_state, ff_state) = match variant {
        Variant::Structure1 => (4, 0),
        Variant::Structure2 => (3, 1),
        Variant::Unstructured => (64, 0),
    };
    PolicySpec::new(
        variant,
        PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state, ff_state, mlp_width: 12 },
        0.4,
        vec![-20.0],
        vec![20.0],
    )
}

/// A synthetic BPTT segment with plausible magnitudes, for FD probing the
/// full PPO loss per variant.
fn synthetic_segment(spec: &PolicySpec, len: usize, seed: u64) -> (Vec<StepRecord>, Snapshot, Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, "fd_segment", 0);
    let mut records = Vec::with_capacity(len);
    let mut prev_u = vec![0.0];
    for t in 0..len {
        let u_applied = vec![rng::uniform(&mut r, -2.0, 2.0)];
        records.push(StepRecord {
            y: vec![rng::uniform(&mut r, -1.0, 1.0)],
            d: vec![rng::uniform(&mut r, 0.0, 0.5)],
            y_ref: vec![rng::uniform(&mut r, -1.0, 1.0)],
            prev_u: prev_u.clone(),
            u_sample: vec![rng::uniform(&mut r, -2.0, 2.0)],
            log_prob: rng::uniform(&mut r, -2.0, 0.0),
            value: rng::normal(&mut r),
            reward: -rng::uniform(&mut r, 0.0, 1.0),
            done: t == len - 1,
        });
        prev_u = u_applied;
    }
    let snapshot = Snapshot { hidden: HiddenState::zeros(spec), prev_u: vec![0.0] };
    let advantages: Vec<f64> = (0..len).map(|_| rng::normal(&mut r)).collect();
    let returns: Vec<f64> = (0..len).map(|_| rng::normal(&mut r)).collect();
    (records, snapshot, advantages, returns)
}

/// Worst relative FD error of the full PPO loss for one policy variant
/// (central differences, eps = 1e-6), on a synthetic 8-step segment.
pub fn fd_on_ppo_loss(variant: Variant, probes: usize) -> Result<f64> {
    let spec = spec_for(variant)?;
    let store = policy::init_params(41, &spec)?;
    let cfg = PpoConfig { clip_eps: 0.2, value_coef: 0.5, entropy_coef: 0.01, ..PpoConfig::default() };
    let (records, snapshot, advantages, returns) = synthetic_segment(&spec, 8, 17);

    // The loss as a pure scalar function of the parameters.
    let program = move |tape: &mut Tape, params: &ParamStore| {
        let seg = SegmentRef {
            records: &records,
            snapshot: &snapshot,
            advantages: &advantages,
            returns: &returns,
        };
        srlc_core::ppo::build_segment_loss(tape, params, &spec, &cfg, &seg)
    };
    fd_check(&program, &store, probes, 1e-6, 99)
}

pub fn run_verify() -> (Vec<CheckResult>, bool) {
    let mut results: Vec<CheckResult> = Vec::new();

    // 1-3: gradient correctness per variant on the full PPO loss.
    for (name, variant) in [
        ("fd_check structure1 + ppo loss", Variant::Structure1),
        ("fd_check structure2 + ppo loss", Variant::Structure2),
        ("fd_check unstructured + ppo loss", Variant::Unstructured),
    ] {
        match fd_on_ppo_loss(variant, 64) {
            Ok(err) => results.push(check(name, err, 1e-5, "central differences, eps=1e-6, 64 probes".into())),
            Err(e) => results.push(CheckResult { name, measured: f64::NAN, bound: 1e-5, pass: false, detail: e.to_string() }),
        }
    }

    // 4: GAE against the brute-force double loop.
    {
        let mut worst = 0.0f64;
        let mut r = rng::stream(4, "verify_gae", 0);
        for _ in 0..200 {
            let n = 1 + (r.random::<u32>() % 50) as usize;
            let rewards: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
            let dones: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.2).collect();
            let bootstrap = rng::normal(&mut r);
            let gamma = rng::uniform(&mut r, 0.8, 1.0);
            let lambda = rng::uniform(&mut r, 0.0, 1.0);
            let (fast, _) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
            // Brute force.
            for t in 0..n {
                let mut acc = 0.0;
                let mut w = 1.0;
                for l in t..n {
                    let mask = if dones[l] { 0.0 } else { 1.0 };
                    let v_next = if l + 1 < n { values[l + 1] } else { bootstrap };
                    acc += w * (rewards[l] + gamma * v_next * mask - values[l]);
                    if dones[l] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                worst = worst.max((fast[t] - acc).abs());
            }
        }
        results.push(check("gae vs brute force", worst, 1e-12, "200 random instances, len <= 50".into()));
    }

    // 5: DARE plug-back residual + scalar closed form.
    {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let n_x = 2 + (seed as usize % 9);
            let sys = generate_stable_linear(seed, n_x, 1, 1, n_x, 0, GenParams::default(), 0.0, 0.0)
                .expect("generation");
            let q = sys.c.transpose().matmul(&sys.c).add(&Mat::identity(n_x).scale(1e-6));
            let r = Mat::identity(1).scale(0.1);
            match solve_dare(&sys.a, &sys.b, &q, &r) {
                Ok(sol) => worst = worst.max(sol.residual),
                Err(_) => worst = f64::INFINITY,
            }
        }
        let (a, b, q, rr) = (0.9f64, 1.0f64, 1.0f64, 1.0f64);
        let qa = b * b;
        let qb = rr - a * a * rr - b * b * q;
        let qc = -q * rr;
        let p_closed = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        let sol = solve_dare(&Mat::diag(&[a]), &Mat::diag(&[b]), &Mat::diag(&[q]), &Mat::diag(&[rr])).unwrap();
        let scalar_err = (sol.p.get(0, 0) - p_closed).abs();
        results.push(check("dare plug-back residual", worst, 1e-9, "20 random stabilizable systems".into()));
        results.push(check("dare scalar closed form", scalar_err, 1e-10, "quadratic-formula oracle".into()));
    }

    // 6: tank equilibrium and Euler clamping.
    {
        let cfg = TankConfig::default();
        let mut worst = 0.0f64;
        for (u, d) in [(3.0, 0.0), (6.5, 0.25), (9.5, 0.5)] {
            let (x1, x2) = tank_equilibrium(&cfg, u, d);
            let (dx1, dx2) = tank_rates(&cfg, x1, x2, u, d).unwrap();
            worst = worst.max(dx1.abs()).max(dx2.abs());
        }
        results.push(check("tank equilibrium rates", worst, 1e-10, "algebraic equilibria".into()));

        let mut r = rng::stream(8, "verify_euler", 0);
        let mut violations = 0usize;
        let mut x = [1.0, 1.0];
        for _ in 0..100_000 {
            let u = rng::uniform(&mut r, 0.0, cfg.u_max);
            let d = rng::uniform(&mut r, 0.0, cfg.a1);
            let rates = tank_rates(&cfg, x[0], x[1], u, d).unwrap();
            x = euler_step(x, rates, &cfg);
            if !(0.0..=cfg.x_max).contains(&x[0]) || !(0.0..=cfg.x_max).contains(&x[1]) {
                violations += 1;
            }
        }
        results.push(check("euler clamp bounds", violations as f64, 0.5, "100k random steps in [0, x_max]".into()));
    }

    // 7: rollout replay reproduces stored log-probs.
    {
        let spec = spec_for(Variant::Structure2).unwrap();
        let store = policy::init_params(3, &spec).unwrap();
        let cfg = PpoConfig {
            rollout_length: 64,
            n_envs: 2,
            bptt_length: 16,
            total_steps: 128,
            seed: 11,
            ..PpoConfig::default()
        };
        let mut workers: Vec<EnvWorker> = (0..cfg.n_envs)
            .map(|i| EnvWorker::new(linear_env().unwrap(), &spec, cfg.seed, i))
            .collect();
        let buffer = collect_rollout(&mut workers, &store, &spec, &cfg).unwrap();
        let replayed = replay_log_probs(&store, &spec, &buffer).unwrap();
        let mut worst = 0.0f64;
        for (env, probs) in replayed.iter().enumerate() {
            for (t, lp) in probs.iter().enumerate() {
                worst = worst.max((lp - buffer.rollouts[env].steps[t].log_prob).abs());
            }
        }
        results.push(check("rollout replay log-probs", worst, 1e-12, "128 steps, structure2 on linear env".into()));
    }

    // 8: checkpoint round-trip.
    {
        let spec = spec_for(Variant::Structure2).unwrap();
        let store = policy::init_params(21, &spec).unwrap();
        let mut bytes = Vec::new();
        write_params(&store, &mut bytes).unwrap();
        let back = read_params(bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        write_params(&back, &mut bytes2).unwrap();
        let ok = bytes == bytes2 && back == store;
        results.push(CheckResult {
            name: "checkpoint round-trip",
            measured: if ok { 0.0 } else { 1.0 },
            bound: 0.5,
            pass: ok,
            detail: format!("{} bytes, bit-exact", bytes.len()),
        });
    }

    // 9: short-train determinism.
    {
        let spec = spec_for(Variant::Structure1).unwrap();
        let cfg = PpoConfig {
            rollout_length: 128,
            n_envs: 2,
            bptt_length: 16,
            minibatch_segments: 8,
            epochs_per_round: 2,
            total_steps: 512,
            seed: 5,
            ..PpoConfig::default()
        };
        let run = || train(|_| linear_env(), &spec, &cfg, |_, _| Ok(())).map(|(s, _)| s);
        let ok = match (run(), run()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        results.push(CheckResult {
            name: "training determinism",
            measured: if ok { 0.0 } else { 1.0 },
            bound: 0.5,
            pass: ok,
            detail: "two 512-step runs, bit-identical parameters".into(),
        });
    }

    // 10: structural isolation of the feedforward observer.
    {
        let spec = spec_for(Variant::Structure2).unwrap();
        let store = policy::init_params(13, &spec).unwrap();
        let mut r = rng::stream(31, "verify_iso", 0);
        let mut identical = true;
        'trials: for trial in 0u64..100 {
            let d_seq: Vec<f64> = (0..20).map(|_| rng::uniform(&mut r, 0.0, 0.5)).collect();
            let run = |stream_seed: u64| -> Vec<f64> {
                let mut rr = rng::stream(stream_seed, "iso", trial);
                let mut hidden = HiddenState::zeros(&spec);
                for d in &d_seq {
                    let obs = srlc_core::envs::Observation {
                        y: vec![rng::uniform(&mut rr, -1.0, 1.0)],
                        d: vec![*d],
                        y_ref: vec![rng::uniform(&mut rr, -1.0, 1.0)],
                    };
                    let u = vec![rng::uniform(&mut rr, -5.0, 5.0)];
                    policy::act(&store, &spec, &mut hidden, &obs, &u, None).unwrap();
                }
                hidden.ff
            };
            if run(1) != run(2) {
                identical = false;
                break 'trials;
            }
        }
        results.push(CheckResult {
            name: "feedforward isolation",
            measured: if identical { 0.0 } else { 1.0 },
            bound: 0.5,
            pass: identical,
            detail: "x̂ᵈ bit-invariant to y/u perturbations, 100 trials".into(),
        });
    }

    let all_pass = results.iter().all(|r| r.pass);
    (results, all_pass)
}

pub fn print_report(results: &[CheckResult]) {
    println!("{:<36} {:>12} {:>10}  {:<6} detail", "check", "measured", "bound", "status");
    for r in results {
        println!(
            "{:<36} {:>12.3e} {:>10.1e}  {:<6} {}",
            r.name,
            r.measured,
            r.bound,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
    }
}
