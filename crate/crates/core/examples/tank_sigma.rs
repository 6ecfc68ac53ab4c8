use srlc_core::envs::*;
use srlc_core::policy::*;
use srlc_core::ppo::*;

fn tank_env() -> EnvInstance {
    EnvInstance::Tank(TankEnv::new(TankEnvConfig::defaults_with(TankConfig::default())).unwrap())
}

fn main() {
    let spec = PolicySpec::new(Variant::Structure2,
        PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state: 2, ff_state: 1, mlp_width: 32 },
        2.0, vec![0.0], vec![10.0]).unwrap();
    let cfg = PpoConfig {
        rollout_length: 2048, n_envs: 4, bptt_length: 64, minibatch_segments: 32,
        epochs_per_round: 10, lr: 1e-3, gamma: 0.9, lambda: 0.9,
        total_steps: 400_000, seed: 0, ..PpoConfig::default()
    };
    let (_store, _log) = train(|_| Ok(tank_env()), &spec, &cfg, |step, params| {
        if step % 40_960 < 8192 {
            println!("step {step}: log_std {:.3}", params.get("log_std").unwrap().data[0]);
        }
        Ok(())
    }).unwrap();
}
