// Calibration sweeps for the acceptance experiments.
use srlc_core::analysis::*;
use srlc_core::envs::*;
use srlc_core::linalg::Mat;
use srlc_core::lqg::*;
use srlc_core::policy::*;
use srlc_core::ppo::*;
use std::time::Instant;

fn scalar_sys() -> LinearSystem {
    LinearSystem {
        a: Mat::diag(&[0.7]),
        b: Mat::from_rows(&[vec![1.0]]),
        n: Mat::from_rows(&[vec![1.0]]),
        c: Mat::from_rows(&[vec![1.0]]),
        n_w: 1, n_d: 0, w_std: 0.0, v_std: 0.0,
    }
}

fn scalar_env() -> EnvInstance {
    EnvInstance::Linear(LinearEnv::new(scalar_sys(), LinearEnvConfig {
        episode_length: 300,
        ref_schedule: ScheduleConfig { lo: -1.0, hi: 1.0, hold: 100 },
        dist_schedule: ScheduleConfig { lo: 0.0, hi: 0.0, hold: 50 },
        u_max: 20.0,
    }).unwrap())
}

fn pomdp_env(sys_seed: u64, n_x: usize, w_std: f64, v_std: f64, radius_max: f64) -> EnvInstance {
    let sys = generate_stable_linear(sys_seed, n_x, 1, 1, n_x, 0, GenParams { radius_min: 0.3, radius_max }, w_std, v_std).unwrap();
    EnvInstance::Linear(LinearEnv::new(sys, LinearEnvConfig {
        episode_length: 300,
        ref_schedule: ScheduleConfig { lo: -1.0, hi: 1.0, hold: 100 },
        dist_schedule: ScheduleConfig { lo: 0.0, hi: 0.0, hold: 50 },
        u_max: 20.0,
    }).unwrap())
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "scalar".into());
    let eval_seeds: Vec<u64> = (1000..1010).collect();

    if which == "scalar" {
        // LQG oracle return on the scalar noise-free plant.
        let sys = scalar_sys();
        let mut ctrl = LqgController::design(&sys, &Mat::identity(1), &Mat::identity(1).scale(0.1)).unwrap();
        let mut env = match scalar_env() { EnvInstance::Linear(e) => e, _ => unreachable!() };
        let lqg_ret = 300.0 * average_reward(&mut env, &eval_seeds, |obs, first| {
            if first { ctrl.reset(); }
            ctrl.act(&obs.y, &obs.y_ref, &obs.d)
        });
        println!("LQG episode return: {lqg_ret:.4}");

        for seed in 0..5u64 {
            let spec = PolicySpec::new(Variant::Structure1,
                PolicyDims { n_y: 1, n_d: 0, n_u: 1, obs_state: 1, ff_state: 0, mlp_width: 32 },
                0.3, vec![-20.0], vec![20.0]).unwrap();
            let lr: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(3e-4);
            let epochs: usize = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(6);
            let mb: usize = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(32);
            let cfg = PpoConfig {
                rollout_length: 2048, n_envs: 4, bptt_length: 64, minibatch_segments: mb,
                epochs_per_round: epochs, lr, total_steps: 200_000, seed, ..PpoConfig::default()
            };
            let t0 = Instant::now();
            let (store, log) = train(|_| Ok(scalar_env()), &spec, &cfg, |_, _| Ok(())).unwrap();
            let mut env = scalar_env();
            let ret = mean_episode_return(&mut env, &store, &spec, &eval_seeds).unwrap();
            println!("seed {seed}: eval return {ret:.4} (vs LQG {lqg_ret:.4}, ratio {:.3}) train_return {:.2} [{:.0}s]",
                     ret / lqg_ret, log.rounds.last().unwrap().mean_return, t0.elapsed().as_secs_f64());
        }
    }

    if which == "scan" {
        // Inspect candidate systems: DC gain and best P-only return.
        for sys_seed in 0..12u64 {
            let env = pomdp_env(sys_seed, 10, 0.02, 0.02, 0.95);
            let EnvInstance::Linear(mut env) = env else { unreachable!() };
            let dc = env.system().dc_gain().unwrap().get(0, 0);
            let mut best = (0.0f64, f64::NEG_INFINITY);
            for i in 0..40 {
                let g = 0.05 * (i + 1) as f64 * dc.signum();
                let r = 300.0 * srlc_core::lqg::average_reward(&mut env, &eval_seeds, |obs, _| {
                    srlc_core::lqg::p_controller(g, &obs.y, &obs.y_ref)
                });
                if r > best.1 { best = (g, r); }
            }
            let sys = env.system().clone();
            let mut ctrl = LqgController::design(&sys, &Mat::identity(1), &Mat::identity(1).scale(0.1));
            let lqg_ret = match &mut ctrl {
                Ok(c) => 300.0 * srlc_core::lqg::average_reward(&mut env, &eval_seeds, |obs, first| {
                    if first { c.reset(); }
                    c.act(&obs.y, &obs.y_ref, &obs.d)
                }),
                Err(_) => f64::NAN,
            };
            println!("sys_seed {sys_seed}: dc {dc:.3} best_p (kp {:.2}) {:.2} lqg {lqg_ret:.2}", best.0, best.1);
        }
    }

    if which == "scan2" {
        // Gramian screen: per-state driven variance (controllability) and
        // output sensitivity (observability); want every mode coupled.
        for sys_seed in 0..60u64 {
            let sys = generate_stable_linear(sys_seed, 10, 1, 1, 10, 0,
                GenParams { radius_min: 0.1, radius_max: 0.95 }, 0.02, 0.02).unwrap();
            let gram = |a: &Mat, b: &Mat| {
                let mut w = b.matmul(&b.transpose());
                for _ in 0..2000 {
                    w = a.matmul(&w.matmul(&a.transpose())).add(&b.matmul(&b.transpose()));
                }
                w
            };
            let wc = gram(&sys.a, &sys.b);
            let wo = gram(&sys.a.transpose(), &sys.c.transpose());
            let coupling: Vec<f64> = (0..10).map(|i| (wc.get(i,i) * wo.get(i,i)).sqrt()).collect();
            let min_c = coupling.iter().cloned().fold(f64::INFINITY, f64::min);
            let dc = sys.dc_gain().unwrap().get(0, 0);
            if min_c > 0.05 {
                println!("sys_seed {sys_seed}: min coupling {min_c:.3} dc {dc:.3}");
            }
        }
    }

    if which == "scan3" {
        // Joint screen: modal coupling (for identifiability) and the
        // best-P vs LQG gap (how much filtering is worth).
        for sys_seed in 0..100u64 {
            let sys = generate_stable_linear(sys_seed, 10, 1, 1, 10, 0,
                GenParams { radius_min: 0.1, radius_max: 0.95 }, 0.01, 0.01).unwrap();
            let gram = |a: &Mat, b: &Mat| {
                let mut w = b.matmul(&b.transpose());
                for _ in 0..1500 {
                    w = a.matmul(&w.matmul(&a.transpose())).add(&b.matmul(&b.transpose()));
                }
                w
            };
            let wc = gram(&sys.a, &sys.b);
            let wo = gram(&sys.a.transpose(), &sys.c.transpose());
            let min_c = (0..10).map(|i| (wc.get(i,i) * wo.get(i,i)).sqrt())
                .fold(f64::INFINITY, f64::min);
            let dc = sys.dc_gain().unwrap().get(0, 0);
            if min_c < 0.04 || dc.abs() < 0.2 { continue; }
            let mut env = match pomdp_env(sys_seed, 10, 0.01, 0.01, 0.95) {
                EnvInstance::Linear(e) => e, _ => unreachable!() };
            let seeds = [0u64, 1];
            let mut best_p = f64::NEG_INFINITY;
            for i in 1..=30 {
                let g = 0.1 * i as f64 * dc.signum();
                let r = srlc_core::lqg::average_reward(&mut env, &seeds, |obs, _| {
                    srlc_core::lqg::p_controller(g, &obs.y, &obs.y_ref)
                });
                if r > best_p { best_p = r; }
            }
            let sys2 = env.system().clone();
            let lqg_ret = match LqgController::design(&sys2, &Mat::identity(1), &Mat::identity(1).scale(0.1)) {
                Ok(mut c) => srlc_core::lqg::average_reward(&mut env, &seeds, |obs, first| {
                    if first { c.reset(); }
                    c.act(&obs.y, &obs.y_ref, &obs.d)
                }),
                Err(_) => continue,
            };
            let gap = best_p / lqg_ret.min(-1e-9);
            println!("sys_seed {sys_seed}: coupling {min_c:.3} dc {dc:.2} bestP {:.2} lqg {:.2} gap {gap:.1}",
                     best_p * 300.0, lqg_ret * 300.0);
        }
    }

    if which == "pomdp" {
        let sys_seed: u64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(12);
        let kp: f64 = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(0.3);
        let width: usize = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(32);
        let n_x: usize = std::env::args().nth(5).map(|v| v.parse().unwrap()).unwrap_or(10);
        let v_std: f64 = std::env::args().nth(6).map(|v| v.parse().unwrap()).unwrap_or(0.02);
        let lr: f64 = std::env::args().nth(7).map(|v| v.parse().unwrap()).unwrap_or(1e-3);
        let radius: f64 = std::env::args().nth(8).map(|v| v.parse().unwrap()).unwrap_or(0.95);
        let w_std: f64 = std::env::args().nth(9).map(|v| v.parse().unwrap()).unwrap_or(0.02);
        let envb = move || pomdp_env(sys_seed, n_x, w_std, v_std, radius);
        for variant in [Variant::Structure1, Variant::Unstructured] {
            for seed in 0..3u64 {
                let obs_state = if variant == Variant::Unstructured { 64 } else { n_x };
                let spec = PolicySpec::new(variant,
                    PolicyDims { n_y: 1, n_d: 0, n_u: 1, obs_state, ff_state: 0, mlp_width: width },
                    kp, vec![-20.0], vec![20.0]).unwrap();
                let cfg = PpoConfig {
                    rollout_length: 2048, n_envs: 4, bptt_length: 64, minibatch_segments: 32,
                    epochs_per_round: 10, lr, total_steps: 200_000, seed, ..PpoConfig::default()
                };
                let t0 = Instant::now();
                // Deterministic eval at roughly every 16k steps.
                let spec_c = spec.clone();
                let eb = envb;
                let mut eval_curve: Vec<(u64, f64)> = Vec::new();
                let mut next_eval = 0u64;
                let (store, _log) = train(|_| Ok(envb()), &spec, &cfg, move |step, params| {
                    if step >= next_eval {
                        next_eval = step + 16_384;
                        let mut env = eb();
                        let r = mean_episode_return(&mut env, params, &spec_c, &[1000, 1001, 1002, 1003, 1004]).unwrap();
                        eval_curve.push((step, r));
                        println!("   [eval] {step} {r:.2}");
                    }
                    Ok(())
                }).unwrap();
                let mut env = envb();
                let ret = mean_episode_return(&mut env, &store, &spec, &eval_seeds).unwrap();
                println!("{:?} seed {seed}: final eval {ret:.2} [{:.0}s]", variant, t0.elapsed().as_secs_f64());
                let mut env2 = envb();
                let (xh, xt) = collect_state_pairs(&mut env2, &store, &spec, 100, 150, 50, -1.0, 1.0, 777).unwrap();
                let fit = fit_state_map(&xh, &xt).unwrap();
                println!("   R2 mean {:.3} dims {:?}", fit.mean_r_squared(),
                         fit.r_squared.iter().map(|r| (r*100.0).round()/100.0).collect::<Vec<_>>());
            }
        }
    }
}
