use srlc_core::envs::*;

fn main() {
    let mut cfg = TankEnvConfig::defaults_with(TankConfig::default());
    let tank = cfg.tank;
    let mut env = TankEnv::new(cfg).unwrap();
    for kp in [0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5] {
        let mut sq = 0.0;
        let mut n = 0;
        for seed in 0..4u64 {
            let mut obs = env.reset(seed + 10);
            for t in 0..600 {
                let u = (kp * (obs.y_ref[0] - obs.y[0])).clamp(0.0, tank.u_max);
                let res = env.step(&[u]);
                if t >= 50 { sq += (res.obs.y[0] - res.obs.y_ref[0]).powi(2); n += 1; }
                obs = res.obs;
            }
        }
        // Also FF + P at this kp
        let mut sq_ff = 0.0; let mut n_ff = 0;
        for seed in 0..4u64 {
            let mut obs = env.reset(seed + 10);
            for t in 0..600 {
                let u = (tank_equilibrium_input(&tank, obs.y_ref[0], obs.d[0]) + kp * (obs.y_ref[0] - obs.y[0])).clamp(0.0, tank.u_max);
                let res = env.step(&[u]);
                if t >= 50 { sq_ff += (res.obs.y[0] - res.obs.y_ref[0]).powi(2); n_ff += 1; }
                obs = res.obs;
            }
        }
        println!("kp {kp:>5}: P-only rms {:.4}   FF+P rms {:.4}", (sq / n as f64).sqrt(), (sq_ff / n_ff as f64).sqrt());
    }
}
