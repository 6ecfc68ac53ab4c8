// Oracle gap: best d-aware controller vs best d-blind controller on the
// noisy tank, to bound what the feedforward ablation can show.
use srlc_core::envs::*;

fn run<C: FnMut(f64, f64, f64, &mut f64) -> f64>(env: &mut EnvInstance, mut ctl: C) -> f64 {
    let mut sq = 0.0;
    let mut n = 0;
    for seed in 0..6u64 {
        let mut obs = env.reset(seed + 30);
        let mut integ = 0.0;
        for t in 0..600 {
            let u = ctl(obs.y[0], obs.d[0], obs.y_ref[0], &mut integ).clamp(0.0, 10.0);
            let res = env.step(&[u]);
            if t >= 50 {
                sq += (env.true_output()[0] - obs.y_ref[0]).powi(2);
                n += 1;
            }
            obs = res.obs;
        }
    }
    (sq / n as f64).sqrt()
}

fn main() {
    let noise: f64 = std::env::args().nth(1).map(|v| v.parse().unwrap()).unwrap_or(1.0);
    let drift: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(0.0);
    let ref_lo: f64 = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(2.0);
    let ref_hi: f64 = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(12.0);
    let tank = TankConfig::default();
    let mut cfg = TankEnvConfig::defaults_with(tank);
    cfg.y_noise_std = noise;
    cfg.y_drift_std = drift;
    cfg.ref_schedule.lo = ref_lo;
    cfg.ref_schedule.hi = ref_hi;
    let mut env = EnvInstance::Tank(TankEnv::new(cfg).unwrap());

    println!("y noise {noise}, drift {drift}, refs [{ref_lo}, {ref_hi}]");
    // d-aware: analytic feedforward + P on measured y.
    for kp in [0.2, 0.5, 1.0] {
        let rms = run(&mut env, |y, d, r, _| tank_equilibrium_input(&tank, r, d) + kp * (r - y));
        println!("FF(d) + P kp {kp}: rms {rms:.3}");
    }
    // d-blind: feedforward on the mean disturbance + PI on measured y.
    for kp in [0.2, 0.5, 1.0] {
        for ki in [0.01, 0.03, 0.1] {
            let rms = run(&mut env, |y, _d, r, integ| {
                *integ += r - y;
                tank_equilibrium_input(&tank, r, 0.15) + kp * (r - y) + ki * *integ
            });
            println!("FF(mean) + PI kp {kp} ki {ki}: rms {rms:.3}");
        }
    }
}
