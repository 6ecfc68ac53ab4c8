//! Closed-loop behavior checks that cut across envs, policies and analysis.

use srlc_core::analysis::{evaluate_tracking, run_trajectory};
use srlc_core::envs::{
    tank_equilibrium_input, Env, EnvInstance, GenParams, LinearEnv, LinearEnvConfig,
    ScheduleConfig, TankConfig, TankEnv, TankEnvConfig,
};
use srlc_core::envs::generate_stable_linear;
use srlc_core::lqg::p_controller;
use srlc_core::policy::{init_params, PolicyDims, PolicySpec, Variant};

fn tank_env() -> EnvInstance {
    EnvInstance::Tank(TankEnv::new(TankEnvConfig::defaults_with(TankConfig::default())).unwrap())
}

fn tank_spec(variant: Variant) -> PolicySpec {
    let (obs_state, ff_state) = match variant {
        Variant::Structure2 => (2, 1),
        _ => (3, 0),
    };
    PolicySpec::new(
        variant,
        PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state, ff_state, mlp_width: 16 },
        0.5,
        vec![0.0],
        vec![10.0],
    )
    .unwrap()
}

/// Pure P-control on the tank: stable, settles, but keeps a strictly
/// positive steady-state error under a constant nonzero disturbance.
#[test]
fn tank_p_control_settles_with_offset() {
    let cfg = TankConfig::default();
    let kp = 0.5;
    let y_ref = 6.0;
    for d in [0.0, 0.15, 0.3] {
        let mut x = [10.0, 10.0];
        let mut prev_y = x[1];
        let mut max_late_move = 0.0f64;
        for t in 0..600 {
            let u = p_controller(kp, &[x[1]], &[y_ref])[0].clamp(0.0, cfg.u_max);
            let rates = srlc_core::envs::tank_rates(&cfg, x[0], x[1], u, d).unwrap();
            x = srlc_core::envs::euler_step(x, rates, &cfg);
            assert!(x[0] <= cfg.x_max && x[1] <= cfg.x_max, "levels bounded");
            if t > 500 {
                max_late_move = max_late_move.max((x[1] - prev_y).abs());
            }
            prev_y = x[1];
        }
        // Settled: no residual limit cycle.
        assert!(max_late_move < 1e-6, "d={d}: still moving by {max_late_move}");
        let err = (y_ref - x[1]).abs();
        assert!(err > 1e-3, "d={d}: P-control should keep a steady-state offset, err={err}");
        // The offset grows with the disturbance.
        if d > 0.0 {
            let u_needed = tank_equilibrium_input(&cfg, y_ref, d);
            assert!(u_needed > kp * err * 0.5, "sanity: equilibrium input {u_needed} vs P output");
        }
    }
}

/// With the plant's disturbance identically zero, ablating the measured
/// disturbance input is a no-op: bit-identical trajectories.
#[test]
fn ablation_is_noop_when_plant_disturbance_is_zero() {
    let sys = generate_stable_linear(5, 3, 1, 1, 3, 1, GenParams::default(), 0.01, 0.01).unwrap();
    let build = || {
        EnvInstance::Linear(
            LinearEnv::new(
                sys.clone(),
                LinearEnvConfig {
                    episode_length: 120,
                    ref_schedule: ScheduleConfig { lo: -1.0, hi: 1.0, hold: 60 },
                    // Disturbance channel exists but is pinned to zero.
                    dist_schedule: ScheduleConfig { lo: 0.0, hi: 0.0, hold: 30 },
                    u_max: 20.0,
                },
            )
            .unwrap(),
        )
    };
    let spec = PolicySpec::new(
        Variant::Structure2,
        PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state: 3, ff_state: 1, mlp_width: 16 },
        0.5,
        vec![-20.0],
        vec![20.0],
    )
    .unwrap();
    let store = init_params(4, &spec).unwrap();
    let mut env_a = build();
    let traj_plain = run_trajectory(&mut env_a, &store, &spec, 9, false).unwrap();
    let mut env_b = build();
    let traj_ablate = run_trajectory(&mut env_b, &store, &spec, 9, true).unwrap();
    for (a, b) in traj_plain.rows.iter().zip(&traj_ablate.rows) {
        assert_eq!(a.y, b.y);
        assert_eq!(a.u, b.u);
        assert_eq!(a.x_true, b.x_true);
    }
}

/// Deterministic evaluation is bit-reproducible, and the ablated run of a
/// Structure 2 policy keeps x̂ᵈ on its zero-input trajectory.
#[test]
fn evaluation_is_reproducible() {
    let spec = tank_spec(Variant::Structure2);
    let store = init_params(11, &spec).unwrap();
    let policies = vec![(0u64, store)];
    let levels = [4.0, 9.0];
    let run = |ablate: bool| {
        evaluate_tracking(|| Ok(tank_env()), &spec, &policies, &levels, 77, 50, ablate).unwrap()
    };
    let a = run(false);
    let b = run(false);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.rms_error, rb.rms_error);
        assert_eq!(ra.mean_return, rb.mean_return);
        assert_eq!(ra.input_rms, rb.input_rms);
    }
    // Ablation changes the numbers (the tank schedule has real disturbances).
    let c = run(true);
    assert!(
        a.rows.iter().zip(&c.rows).any(|(x, y)| x.rms_error != y.rms_error),
        "ablation had no effect under a live disturbance schedule"
    );
}

/// done flags appear exactly at the episode boundary and auto-reset starts
/// a fresh schedule (same contract the trainer relies on).
#[test]
fn episode_boundaries_are_exact() {
    let mut env = tank_env();
    env.reset(3);
    for t in 1..=600 {
        let res = env.step(&[4.0]);
        assert_eq!(res.done, t == 600);
    }
}
