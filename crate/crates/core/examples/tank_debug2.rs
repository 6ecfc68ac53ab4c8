use srlc_core::envs::*;
use srlc_core::policy::*;
use srlc_core::ppo::*;

fn tank_env() -> EnvInstance {
    let area: f64 = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(150.0);
    let hold: usize = std::env::args().nth(5).map(|v| v.parse().unwrap()).unwrap_or(150);
    let mut tank = TankConfig::default();
    tank.area1 = area;
    tank.area2 = area;
    let mut cfg = TankEnvConfig::defaults_with(tank);
    cfg.ref_schedule.hold = hold;
    EnvInstance::Tank(TankEnv::new(cfg).unwrap())
}

fn main() {
    let kp: f64 = std::env::args().nth(9).map(|v| v.parse().unwrap()).unwrap_or(0.5);
    let spec = PolicySpec::new(Variant::Structure2,
        PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state: 2, ff_state: 1, mlp_width: 32 },
        kp, vec![0.0], vec![10.0]).unwrap();
    let lambda: f64 = std::env::args().nth(1).map(|v| v.parse().unwrap()).unwrap_or(0.95);
    let gamma: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(0.99);
    let rounds_arg: usize = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(5);
    let cfg = PpoConfig {
        rollout_length: 2048,
        n_envs: std::env::args().nth(8).map(|v| v.parse().unwrap()).unwrap_or(4),
        bptt_length: 64,
        minibatch_segments: std::env::args().nth(7).map(|v| v.parse().unwrap()).unwrap_or(32),
        epochs_per_round: 10, lr: std::env::args().nth(6).map(|v| v.parse().unwrap()).unwrap_or(1e-3),
        lambda, gamma, total_steps: 40_960, seed: 0, ..PpoConfig::default()
    };
    // Manual loop to inspect internals per round.
    let store_init = init_params(srlc_core::rng::derive_seed(0, "init", 0), &spec).unwrap();
    let mut store = store_init;
    let mut adam = Adam::new(&store, cfg.lr);
    let mut workers: Vec<EnvWorker> = (0..cfg.n_envs)
        .map(|i| EnvWorker::new(tank_env(), &spec, cfg.seed, i)).collect();
    let mut shuffle = srlc_core::rng::stream(cfg.seed, "shuffle", 0);

    for round in 0..rounds_arg {
        let buffer = collect_rollout(&mut workers, &store, &spec, &cfg).unwrap();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for r in &buffer.rollouts {
            let rew: Vec<f64> = r.steps.iter().map(|s| s.reward).collect();
            let val: Vec<f64> = r.steps.iter().map(|s| s.value).collect();
            let don: Vec<bool> = r.steps.iter().map(|s| s.done).collect();
            let (a, ret) = compute_gae(&rew, &val, &don, r.bootstrap_value, cfg.gamma, cfg.lambda);
            advantages.push(a); returns.push(ret);
        }
        // Diagnostics BEFORE normalization.
        let vals: Vec<f64> = buffer.rollouts.iter().flat_map(|r| r.steps.iter().map(|s| s.value)).collect();
        let rets: Vec<f64> = returns.iter().flatten().cloned().collect();
        let v_mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let ret_mean = rets.iter().sum::<f64>() / rets.len() as f64;
        let vloss = vals.iter().zip(&rets).map(|(v, r)| (v - r) * (v - r)).sum::<f64>() / vals.len() as f64;
        // Correlation: advantage vs noise direction when below reference.
        let mut num = 0.0; let mut cnt = 0.0;
        for (er, radv) in buffer.rollouts.iter().zip(&advantages) {
            for (s, a) in er.steps.iter().zip(radv) {
                let err = s.y_ref[0] - s.y[0];
                if err > 1.0 {
                    let mean_total_eps = s.u_sample[0]; // sample
                    // epsilon sign: sample minus (Kp err + net_mean); approximate via logp? store prev? use sample - Kp*err as proxy for (net + noise)
                    let eps_proxy = mean_total_eps - kp * err;
                    num += a * eps_proxy; cnt += 1.0;
                }
            }
        }
        let mut adv_flat = advantages.clone();
        normalize_advantages(&mut adv_flat);
        let stats = ppo_update(&mut store, &mut adam, &buffer, &adv_flat, &returns, &spec, &cfg, &mut shuffle).unwrap();
        println!("round {round}: V mean {v_mean:.2} ret mean {ret_mean:.2} vloss {vloss:.3} E[A*eps|err>0] {:.4} ploss {:.4} vloss_stat {:.4} ent {:.3} gnorm {:.3}",
                 num / cnt, stats.policy_loss, stats.value_loss, stats.entropy, stats.grad_norm);
        // value head weights magnitude
        let wout = store.get("critic.out.w").unwrap().data.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let bout = store.get("critic.out.b").unwrap().data[0];
        println!("   critic out |w|max {wout:.3} b {bout:.3}; ctrl out b {:.3}", store.get("controller.out.b").unwrap().data[0]);
    }
    // Final deterministic probe.
    let mut env = tank_env();
    let mut obs = env.reset(123);
    let mut hidden = HiddenState::zeros(&spec);
    let mut prev_u = vec![0.0];
    let mut sq = 0.0;
    for t in 0..600 {
        let out = act(&store, &spec, &mut hidden, &obs, &prev_u, None).unwrap();
        let res = env.step(&out.u_applied);
        if t >= 50 { sq += (res.obs.y[0] - res.obs.y_ref[0]).powi(2); }
        prev_u = out.u_applied;
        obs = res.obs;
    }
    println!("final deterministic rms {:.4}", (sq / 550.0).sqrt());
}
