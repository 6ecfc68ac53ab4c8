// Tank experiment calibration: structure2 vs structure1 vs unstructured,
// switching-disturbance RMS and the feedforward ablation.
use srlc_core::analysis::*;
use srlc_core::envs::*;
use srlc_core::policy::*;
use srlc_core::ppo::*;
use std::time::Instant;

fn tank_env(y_noise: f64, y_drift: f64) -> EnvInstance {
    let mut cfg = TankEnvConfig::defaults_with(TankConfig::default());
    cfg.y_noise_std = y_noise;
    cfg.y_drift_std = y_drift;
    if let Some(hold) = std::env::args().nth(10).and_then(|v| v.parse().ok()) {
        cfg.ref_schedule.hold = hold;
    }
    EnvInstance::Tank(TankEnv::new(cfg).unwrap())
}

fn main() {
    let total: u64 = std::env::args().nth(1).map(|v| v.parse().unwrap()).unwrap_or(100_000);
    let kp: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(10.0);
    let n_seeds: u64 = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(2);
    let lr: f64 = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let levels = [6.0, 8.0, 10.0, 12.0, 14.0];

    let only: Option<String> = std::env::args().nth(5);
    let y_noise: f64 = std::env::args().nth(6).map(|v| v.parse().unwrap()).unwrap_or(0.0);
    let y_drift: f64 = std::env::args().nth(9).map(|v| v.parse().unwrap()).unwrap_or(0.0);
    for variant in [Variant::Structure2, Variant::Structure1, Variant::Unstructured] {
        if let Some(o) = &only {
            if !format!("{variant:?}").to_lowercase().contains(&o.to_lowercase()) { continue; }
        }
        let (obs_state, ff_state) = match variant {
            Variant::Structure1 => (3, 0),
            Variant::Structure2 => (2, 1),
            Variant::Unstructured => (64, 0),
        };
        for seed in 0..n_seeds {
            let spec = PolicySpec::new(variant,
                PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state, ff_state, mlp_width: 32 },
                kp, vec![0.0], vec![10.0]).unwrap();
            let gamma: f64 = std::env::args().nth(7).map(|v| v.parse().unwrap()).unwrap_or(0.99);
            let lambda: f64 = std::env::args().nth(8).map(|v| v.parse().unwrap()).unwrap_or(0.95);
            let cfg = PpoConfig {
                rollout_length: 2048, n_envs: 4, bptt_length: 64, minibatch_segments: 32,
                epochs_per_round: 10, lr, gamma, lambda,
                total_steps: total, seed, ..PpoConfig::default()
            };
            let t0 = Instant::now();
            let (store, log) = train(|_| Ok(tank_env(y_noise, y_drift)), &spec, &cfg, |_, _| Ok(())).unwrap();
            let policies = vec![(seed, store)];
            let rep = evaluate_tracking(|| Ok(tank_env(y_noise, y_drift)), &spec, &policies, &levels, 42, 50, false).unwrap();
            let rms: f64 = rep.rows.iter().map(|r| r.rms_error).sum::<f64>() / rep.rows.len() as f64;
            let rep_ab = evaluate_tracking(|| Ok(tank_env(y_noise, y_drift)), &spec, &policies, &levels, 42, 50, true).unwrap();
            let rms_ab: f64 = rep_ab.rows.iter().map(|r| r.rms_error).sum::<f64>() / rep_ab.rows.len() as f64;
            println!("{:?} seed {seed}: rms {rms:.5} ablated {rms_ab:.5} (x{:.2}) train_ret {:.2} [{:.0}s]",
                variant, rms_ab / rms, log.rounds.last().unwrap().mean_return, t0.elapsed().as_secs_f64());
        }
    }
}
