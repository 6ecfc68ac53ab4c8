use srlc_core::envs::*;
use srlc_core::policy::*;
use srlc_core::ppo::*;
use std::time::Instant;

fn env4() -> EnvInstance {
    let sys = generate_stable_linear(12, 4, 1, 1, 4, 0, GenParams { radius_min: 0.1, radius_max: 0.9 }, 0.01, 0.01).unwrap();
    EnvInstance::Linear(LinearEnv::new(sys, LinearEnvConfig {
        episode_length: 300,
        ref_schedule: ScheduleConfig { lo: -1.0, hi: 1.0, hold: 100 },
        dist_schedule: ScheduleConfig { lo: 0.0, hi: 0.0, hold: 50 },
        u_max: 20.0,
    }).unwrap())
}

fn main() {
    for (name, variant, obs_state, width, epochs) in [
        ("structure1 w32 e6", Variant::Structure1, 4usize, 32usize, 6usize),
        ("structure1 w64 e10", Variant::Structure1, 4, 64, 10),
        ("unstructured w32 e6", Variant::Unstructured, 64, 32, 6),
    ] {
        let spec = PolicySpec::new(variant,
            PolicyDims { n_y: 1, n_d: 0, n_u: 1, obs_state, ff_state: 0, mlp_width: width },
            0.3, vec![-20.0], vec![20.0]).unwrap();
        let cfg = PpoConfig {
            rollout_length: 2048, n_envs: 4, bptt_length: 64, minibatch_segments: 32,
            epochs_per_round: epochs, total_steps: 8192, seed: 0, ..PpoConfig::default()
        };
        let t0 = Instant::now();
        let (_, log) = train(|_| Ok(env4()), &spec, &cfg, |_, _| Ok(())).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let steps = 8192.0;
        println!("{name}: {dt:.2}s for {steps} steps -> {:.1}s per 1e5 steps; ret {:.3}",
                 dt * 1e5 / steps, log.rounds.last().unwrap().mean_return);
    }
}
