use srlc_core::envs::*;
use srlc_core::policy::*;
use srlc_core::ppo::*;

fn tank_env() -> EnvInstance {
    let mut cfg = TankEnvConfig::defaults_with(TankConfig::default());
    EnvInstance::Tank(TankEnv::new(cfg).unwrap())
}

fn main() {
    // Reference controllers first.
    let cfg = TankConfig::default();
    let mut env = tank_env();
    for (name, ctl) in [
        ("p_only_kp10", 0usize),
        ("analytic_ff", 1usize),
    ] {
        let mut total_sq = 0.0;
        let mut n = 0usize;
        for seed in 0..3u64 {
            let mut obs = env.reset(seed + 50);
            for t in 0..600 {
                let (y, d, r) = (obs.y[0], obs.d[0], obs.y_ref[0]);
                let u = match ctl {
                    0 => 10.0 * (r - y),
                    _ => tank_equilibrium_input(&cfg, r, d) + 10.0 * (r - y),
                };
                let res = env.step(&[u.clamp(0.0, 10.0)]);
                if t >= 50 { total_sq += (res.obs.y[0] - res.obs.y_ref[0]).powi(2); n += 1; }
                obs = res.obs;
            }
        }
        println!("{name}: rms {:.4}", (total_sq / n as f64).sqrt());
    }

    // Instrumented training.
    let spec = PolicySpec::new(Variant::Structure2,
        PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state: 2, ff_state: 1, mlp_width: 32 },
        10.0, vec![0.0], vec![10.0]).unwrap();
    let lr: f64 = std::env::args().nth(1).map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let total: u64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(100_000);
    let ppo_cfg = PpoConfig {
        rollout_length: 2048, n_envs: 4, bptt_length: 64, minibatch_segments: 32,
        epochs_per_round: 10, lr, total_steps: total, seed: 0, ..PpoConfig::default()
    };
    let (store, log) = train(|_| Ok(tank_env()), &spec, &ppo_cfg, |step, params| {
        if step % 16384 < 8192 {
            let ls = params.get("log_std").unwrap().data[0];
            // deterministic probe episode
            let mut env = tank_env();
            let mut obs = env.reset(123);
            let mut hidden = HiddenState::zeros(&spec);
            let mut prev_u = vec![0.0];
            let (mut sq, mut usum, mut umean_net) = (0.0, 0.0, 0.0);
            for t in 0..600 {
                let out = act(params, &spec, &mut hidden, &obs, &prev_u, None).unwrap();
                let res = env.step(&out.u_applied);
                if t >= 50 { sq += (res.obs.y[0] - res.obs.y_ref[0]).powi(2); }
                usum += out.u_applied[0];
                umean_net += out.u_sample[0] - 10.0 * (obs.y_ref[0] - obs.y[0]);
                prev_u = out.u_applied;
                obs = res.obs;
            }
            println!("step {step}: rms {:.4} u_mean {:.2} net_part {:.2} log_std {:.2}",
                (sq / 550.0).sqrt(), usum / 600.0, umean_net / 600.0, ls);
        }
        Ok(())
    }).unwrap();
    let last = log.rounds.last().unwrap();
    println!("final: ret {:.2} ploss {:.4} vloss {:.5} gnorm {:.3}",
        last.mean_return, last.policy_loss, last.value_loss, last.grad_norm);
    let _ = store;
}
