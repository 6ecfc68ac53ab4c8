//! Flat sectioned key=value experiment configuration.
//!
//! Four sections: `[env]`, `[policy]`, `[ppo]`, `[run]`. Unknown keys are
//! rejected with their line number; the resolved config (defaults applied)
//! serializes canonically and re-parses to an identical value.

use std::collections::BTreeMap;

use srlc_core::envs::{
    generate_stable_linear, EnvInstance, GenParams, LinearEnv, LinearEnvConfig, ScheduleConfig,
    TankConfig, TankEnv, TankEnvConfig,
};
use srlc_core::policy::{param_count, PolicyDims, PolicySpec, Variant, UNSTRUCTURED_HIDDEN};
use srlc_core::ppo::PpoConfig;
use srlc_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum EnvSection {
    Linear(LinearSection),
    Tank(TankSection),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSection {
    pub sys_seed: u64,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_w: usize,
    pub n_d: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub w_std: f64,
    pub v_std: f64,
    pub episode_length: usize,
    pub ref_hold: usize,
    pub ref_min: f64,
    pub ref_max: f64,
    pub dist_hold: usize,
    pub dist_max: f64,
    pub u_max: f64,
}

impl Default for LinearSection {
    fn default() -> Self {
        LinearSection {
            sys_seed: 0,
            n_x: 10,
            n_u: 1,
            n_y: 1,
            n_w: 10,
            n_d: 0,
            radius_min: 0.1,
            radius_max: 0.95,
            w_std: 0.01,
            v_std: 0.01,
            episode_length: 300,
            ref_hold: 100,
            ref_min: -1.0,
            ref_max: 1.0,
            dist_hold: 50,
            dist_max: 0.0,
            u_max: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TankSection {
    pub a1: f64,
    pub a2: f64,
    pub area1: f64,
    pub area2: f64,
    pub k_pump: f64,
    pub gravity: f64,
    pub dt: f64,
    pub u_max: f64,
    pub x_max: f64,
    pub episode_length: usize,
    pub ref_hold: usize,
    pub ref_min: f64,
    pub ref_max: f64,
    pub dist_hold: usize,
    pub init_min: f64,
    pub init_max: f64,
    pub y_noise_std: f64,
    pub y_drift_std: f64,
    pub y_drift_rho: f64,
}

impl Default for TankSection {
    fn default() -> Self {
        let t = TankConfig::default();
        TankSection {
            a1: t.a1,
            a2: t.a2,
            area1: t.area1,
            area2: t.area2,
            k_pump: t.k_pump,
            gravity: t.gravity,
            dt: t.dt,
            u_max: t.u_max,
            x_max: t.x_max,
            episode_length: 600,
            ref_hold: 150,
            ref_min: 6.0,
            ref_max: 14.0,
            dist_hold: 50,
            init_min: 0.2,
            init_max: 0.8,
            y_noise_std: 0.0,
            y_drift_std: 0.0,
            y_drift_rho: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySection {
    pub variant: Variant,
    pub obs_state: usize,
    pub ff_state: usize,
    pub mlp_width: usize,
    pub kp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoSection {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs_per_round: usize,
    pub rollout_length: usize,
    pub n_envs: usize,
    pub minibatch_segments: usize,
    pub bptt_length: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
}

impl Default for PpoSection {
    fn default() -> Self {
        let d = PpoConfig::default();
        PpoSection {
            gamma: d.gamma,
            lambda: d.lambda,
            clip_eps: d.clip_eps,
            lr: d.lr,
            epochs_per_round: d.epochs_per_round,
            rollout_length: d.rollout_length,
            n_envs: d.n_envs,
            minibatch_segments: d.minibatch_segments,
            bptt_length: d.bptt_length,
            value_coef: d.value_coef,
            entropy_coef: d.entropy_coef,
            grad_clip_norm: d.grad_clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub output_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: vec![0],
            total_steps: 800_000,
            checkpoint_every: 100_000,
            output_dir: "runs/run".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub policy: PolicySection,
    pub ppo: PpoSection,
    pub run: RunSection,
}

fn parse_num<T: std::str::FromStr>(key: &str, line: usize, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse `{v}` for key `{key}`")))
}

struct RawSections {
    /// section -> key -> (line, value)
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

fn parse_raw(text: &str) -> Result<RawSections> {
    let mut sections: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !matches!(name.as_str(), "env" | "policy" | "ppo" | "run") {
                return Err(Error::Config(format!("line {line_no}: unknown section `[{name}]`")));
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")));
        };
        let section = current
            .clone()
            .ok_or_else(|| Error::Config(format!("line {line_no}: key outside any section")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let entry = sections.entry(section).or_default();
        if entry.insert(key.clone(), (line_no, value)).is_some() {
            return Err(Error::Config(format!("line {line_no}: duplicate key `{key}`")));
        }
    }
    Ok(RawSections { sections })
}

/// Take a key out of a section map, so leftovers can be reported as unknown.
fn take(map: &mut BTreeMap<String, (usize, String)>, key: &str) -> Option<(usize, String)> {
    map.remove(key)
}

macro_rules! set_num {
    ($map:expr, $target:expr, $key:literal) => {
        if let Some((line, v)) = take($map, $key) {
            $target = parse_num($key, line, &v)?;
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = parse_raw(text)?;
        for required in ["env", "policy", "ppo", "run"] {
            if !raw.sections.contains_key(required) {
                return Err(Error::Config(format!("missing required section `[{required}]`")));
            }
        }

        // [env]
        let env_map = raw.sections.get_mut("env").unwrap();
        let kind = take(env_map, "kind")
            .ok_or_else(|| Error::Config("[env] needs `kind = linear | tank`".into()))?
            .1;
        let env = match kind.as_str() {
            "linear" => {
                let mut s = LinearSection::default();
                set_num!(env_map, s.sys_seed, "sys_seed");
                set_num!(env_map, s.n_x, "n_x");
                set_num!(env_map, s.n_u, "n_u");
                set_num!(env_map, s.n_y, "n_y");
                set_num!(env_map, s.n_w, "n_w");
                set_num!(env_map, s.n_d, "n_d");
                set_num!(env_map, s.radius_min, "radius_min");
                set_num!(env_map, s.radius_max, "radius_max");
                set_num!(env_map, s.w_std, "w_std");
                set_num!(env_map, s.v_std, "v_std");
                set_num!(env_map, s.episode_length, "episode_length");
                set_num!(env_map, s.ref_hold, "ref_hold");
                set_num!(env_map, s.ref_min, "ref_min");
                set_num!(env_map, s.ref_max, "ref_max");
                set_num!(env_map, s.dist_hold, "dist_hold");
                set_num!(env_map, s.dist_max, "dist_max");
                set_num!(env_map, s.u_max, "u_max");
                EnvSection::Linear(s)
            }
            "tank" => {
                let mut s = TankSection::default();
                set_num!(env_map, s.a1, "a1");
                set_num!(env_map, s.a2, "a2");
                set_num!(env_map, s.area1, "area1");
                set_num!(env_map, s.area2, "area2");
                set_num!(env_map, s.k_pump, "k_pump");
                set_num!(env_map, s.gravity, "gravity");
                set_num!(env_map, s.dt, "dt");
                set_num!(env_map, s.u_max, "u_max");
                set_num!(env_map, s.x_max, "x_max");
                set_num!(env_map, s.episode_length, "episode_length");
                set_num!(env_map, s.ref_hold, "ref_hold");
                set_num!(env_map, s.ref_min, "ref_min");
                set_num!(env_map, s.ref_max, "ref_max");
                set_num!(env_map, s.dist_hold, "dist_hold");
                set_num!(env_map, s.init_min, "init_min");
                set_num!(env_map, s.init_max, "init_max");
                set_num!(env_map, s.y_noise_std, "y_noise_std");
                set_num!(env_map, s.y_drift_std, "y_drift_std");
                set_num!(env_map, s.y_drift_rho, "y_drift_rho");
                EnvSection::Tank(s)
            }
            other => return Err(Error::Config(format!("unknown env kind `{other}`"))),
        };

        // [policy]
        let pol_map = raw.sections.get_mut("policy").unwrap();
        let variant = Variant::parse(
            &take(pol_map, "variant")
                .ok_or_else(|| Error::Config("[policy] needs `variant`".into()))?
                .1,
        )?;
        let mut policy = PolicySection {
            variant,
            obs_state: match variant {
                Variant::Unstructured => UNSTRUCTURED_HIDDEN,
                _ => 10,
            },
            ff_state: if variant == Variant::Structure2 { 1 } else { 0 },
            mlp_width: 64,
            kp: 0.0,
        };
        set_num!(pol_map, policy.obs_state, "obs_state");
        set_num!(pol_map, policy.ff_state, "ff_state");
        set_num!(pol_map, policy.mlp_width, "mlp_width");
        set_num!(pol_map, policy.kp, "kp");

        // [ppo]
        let ppo_map = raw.sections.get_mut("ppo").unwrap();
        let mut ppo = PpoSection::default();
        set_num!(ppo_map, ppo.gamma, "gamma");
        set_num!(ppo_map, ppo.lambda, "lambda");
        set_num!(ppo_map, ppo.clip_eps, "clip_eps");
        set_num!(ppo_map, ppo.lr, "lr");
        set_num!(ppo_map, ppo.epochs_per_round, "epochs_per_round");
        set_num!(ppo_map, ppo.rollout_length, "rollout_length");
        set_num!(ppo_map, ppo.n_envs, "n_envs");
        set_num!(ppo_map, ppo.minibatch_segments, "minibatch_segments");
        set_num!(ppo_map, ppo.bptt_length, "bptt_length");
        set_num!(ppo_map, ppo.value_coef, "value_coef");
        set_num!(ppo_map, ppo.entropy_coef, "entropy_coef");
        set_num!(ppo_map, ppo.grad_clip_norm, "grad_clip_norm");

        // [run]
        let run_map = raw.sections.get_mut("run").unwrap();
        let mut run = RunSection::default();
        if let Some((line, v)) = take(run_map, "seeds") {
            run.seeds = v
                .split(',')
                .map(|s| parse_num::<u64>("seeds", line, s.trim()))
                .collect::<Result<_>>()?;
            if run.seeds.is_empty() {
                return Err(Error::Config(format!("line {line}: seeds list is empty")));
            }
        }
        set_num!(run_map, run.total_steps, "total_steps");
        set_num!(run_map, run.checkpoint_every, "checkpoint_every");
        if let Some((_, v)) = take(run_map, "output_dir") {
            run.output_dir = v;
        }

        // Reject anything left over.
        for (section, map) in &raw.sections {
            if let Some((key, (line, _))) = map.iter().next() {
                return Err(Error::Config(format!(
                    "line {line}: unknown key `{key}` in section `[{section}]`"
                )));
            }
        }

        let cfg = ExperimentConfig { env, policy, ppo, run };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // Policy dims must make sense for this env, and the structured
        // variants must be strictly smaller than the unstructured baseline
        // at the same interface dims.
        let spec = self.policy_spec()?;
        if self.policy.variant != Variant::Unstructured {
            let unstructured = PolicySpec::new(
                Variant::Unstructured,
                PolicyDims { obs_state: UNSTRUCTURED_HIDDEN, ff_state: 0, ..spec.dims },
                spec.kp,
                spec.u_lo.clone(),
                spec.u_hi.clone(),
            )?;
            let s = param_count(&spec);
            let u = param_count(&unstructured);
            if s >= u {
                return Err(Error::Config(format!(
                    "structured parameter count {s} is not smaller than the unstructured baseline {u}"
                )));
            }
        }
        // Exercise env construction (validates physics/schedule invariants)
        // and the PPO invariants for the first seed.
        self.build_env(0)?;
        self.ppo_config(self.run.seeds[0], self.run.total_steps).validate()?;
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        match &self.env {
            EnvSection::Linear(s) => {
                out.push_str("[env]\nkind = linear\n");
                out.push_str(&format!("sys_seed = {}\n", s.sys_seed));
                out.push_str(&format!("n_x = {}\n", s.n_x));
                out.push_str(&format!("n_u = {}\n", s.n_u));
                out.push_str(&format!("n_y = {}\n", s.n_y));
                out.push_str(&format!("n_w = {}\n", s.n_w));
                out.push_str(&format!("n_d = {}\n", s.n_d));
                out.push_str(&format!("radius_min = {}\n", s.radius_min));
                out.push_str(&format!("radius_max = {}\n", s.radius_max));
                out.push_str(&format!("w_std = {}\n", s.w_std));
                out.push_str(&format!("v_std = {}\n", s.v_std));
                out.push_str(&format!("episode_length = {}\n", s.episode_length));
                out.push_str(&format!("ref_hold = {}\n", s.ref_hold));
                out.push_str(&format!("ref_min = {}\n", s.ref_min));
                out.push_str(&format!("ref_max = {}\n", s.ref_max));
                out.push_str(&format!("dist_hold = {}\n", s.dist_hold));
                out.push_str(&format!("dist_max = {}\n", s.dist_max));
                out.push_str(&format!("u_max = {}\n", s.u_max));
            }
            EnvSection::Tank(s) => {
                out.push_str("[env]\nkind = tank\n");
                out.push_str(&format!("a1 = {}\n", s.a1));
                out.push_str(&format!("a2 = {}\n", s.a2));
                out.push_str(&format!("area1 = {}\n", s.area1));
                out.push_str(&format!("area2 = {}\n", s.area2));
                out.push_str(&format!("k_pump = {}\n", s.k_pump));
                out.push_str(&format!("gravity = {}\n", s.gravity));
                out.push_str(&format!("dt = {}\n", s.dt));
                out.push_str(&format!("u_max = {}\n", s.u_max));
                out.push_str(&format!("x_max = {}\n", s.x_max));
                out.push_str(&format!("episode_length = {}\n", s.episode_length));
                out.push_str(&format!("ref_hold = {}\n", s.ref_hold));
                out.push_str(&format!("ref_min = {}\n", s.ref_min));
                out.push_str(&format!("ref_max = {}\n", s.ref_max));
                out.push_str(&format!("dist_hold = {}\n", s.dist_hold));
                out.push_str(&format!("init_min = {}\n", s.init_min));
                out.push_str(&format!("init_max = {}\n", s.init_max));
                out.push_str(&format!("y_noise_std = {}\n", s.y_noise_std));
                out.push_str(&format!("y_drift_std = {}\n", s.y_drift_std));
                out.push_str(&format!("y_drift_rho = {}\n", s.y_drift_rho));
            }
        }
        out.push_str("\n[policy]\n");
        out.push_str(&format!("variant = {}\n", self.policy.variant.as_str()));
        out.push_str(&format!("obs_state = {}\n", self.policy.obs_state));
        out.push_str(&format!("ff_state = {}\n", self.policy.ff_state));
        out.push_str(&format!("mlp_width = {}\n", self.policy.mlp_width));
        out.push_str(&format!("kp = {}\n", self.policy.kp));

        out.push_str("\n[ppo]\n");
        let p = &self.ppo;
        out.push_str(&format!("gamma = {}\n", p.gamma));
        out.push_str(&format!("lambda = {}\n", p.lambda));
        out.push_str(&format!("clip_eps = {}\n", p.clip_eps));
        out.push_str(&format!("lr = {}\n", p.lr));
        out.push_str(&format!("epochs_per_round = {}\n", p.epochs_per_round));
        out.push_str(&format!("rollout_length = {}\n", p.rollout_length));
        out.push_str(&format!("n_envs = {}\n", p.n_envs));
        out.push_str(&format!("minibatch_segments = {}\n", p.minibatch_segments));
        out.push_str(&format!("bptt_length = {}\n", p.bptt_length));
        out.push_str(&format!("value_coef = {}\n", p.value_coef));
        out.push_str(&format!("entropy_coef = {}\n", p.entropy_coef));
        out.push_str(&format!("grad_clip_norm = {}\n", p.grad_clip_norm));

        out.push_str("\n[run]\n");
        let seeds: Vec<String> = self.run.seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(",")));
        out.push_str(&format!("total_steps = {}\n", self.run.total_steps));
        out.push_str(&format!("checkpoint_every = {}\n", self.run.checkpoint_every));
        out.push_str(&format!("output_dir = {}\n", self.run.output_dir));
        out
    }

    /// Build a fresh env instance (the linear plant is fixed by `sys_seed`,
    /// shared across all training seeds and env workers).
    pub fn build_env(&self, _index: usize) -> Result<EnvInstance> {
        match &self.env {
            EnvSection::Linear(s) => {
                let sys = generate_stable_linear(
                    s.sys_seed,
                    s.n_x,
                    s.n_u,
                    s.n_y,
                    s.n_w,
                    s.n_d,
                    GenParams { radius_min: s.radius_min, radius_max: s.radius_max },
                    s.w_std,
                    s.v_std,
                )?;
                Ok(EnvInstance::Linear(LinearEnv::new(
                    sys,
                    LinearEnvConfig {
                        episode_length: s.episode_length,
                        ref_schedule: ScheduleConfig { lo: s.ref_min, hi: s.ref_max, hold: s.ref_hold },
                        dist_schedule: ScheduleConfig { lo: 0.0, hi: s.dist_max, hold: s.dist_hold },
                        u_max: s.u_max,
                    },
                )?))
            }
            EnvSection::Tank(s) => {
                let tank = TankConfig {
                    a1: s.a1,
                    a2: s.a2,
                    area1: s.area1,
                    area2: s.area2,
                    k_pump: s.k_pump,
                    gravity: s.gravity,
                    dt: s.dt,
                    u_max: s.u_max,
                    x_max: s.x_max,
                };
                Ok(EnvInstance::Tank(TankEnv::new(TankEnvConfig {
                    tank,
                    episode_length: s.episode_length,
                    ref_schedule: ScheduleConfig { lo: s.ref_min, hi: s.ref_max, hold: s.ref_hold },
                    dist_hold: s.dist_hold,
                    init_frac: (s.init_min, s.init_max),
                    y_noise_std: s.y_noise_std,
                    y_drift_std: s.y_drift_std,
                    y_drift_rho: s.y_drift_rho,
                })?))
            }
        }
    }

    pub fn policy_spec(&self) -> Result<PolicySpec> {
        let (n_y, n_d, n_u, u_lo, u_hi) = match &self.env {
            EnvSection::Linear(s) => (s.n_y, s.n_d, s.n_u, vec![-s.u_max; s.n_u], vec![s.u_max; s.n_u]),
            EnvSection::Tank(s) => (1, 1, 1, vec![0.0], vec![s.u_max]),
        };
        PolicySpec::new(
            self.policy.variant,
            PolicyDims {
                n_y,
                n_d,
                n_u,
                obs_state: self.policy.obs_state,
                ff_state: self.policy.ff_state,
                mlp_width: self.policy.mlp_width,
            },
            self.policy.kp,
            u_lo,
            u_hi,
        )
    }

    pub fn ppo_config(&self, seed: u64, total_steps: u64) -> PpoConfig {
        let p = &self.ppo;
        PpoConfig {
            gamma: p.gamma,
            lambda: p.lambda,
            clip_eps: p.clip_eps,
            lr: p.lr,
            epochs_per_round: p.epochs_per_round,
            rollout_length: p.rollout_length,
            n_envs: p.n_envs,
            minibatch_segments: p.minibatch_segments,
            bptt_length: p.bptt_length,
            value_coef: p.value_coef,
            entropy_coef: p.entropy_coef,
            grad_clip_norm: p.grad_clip_norm,
            total_steps,
            seed,
        }
    }

    /// Reference range of the configured env (used for eval levels).
    pub fn ref_range(&self) -> (f64, f64) {
        match &self.env {
            EnvSection::Linear(s) => (s.ref_min, s.ref_max),
            EnvSection::Tank(s) => (s.ref_min, s.ref_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[env]
kind = tank

[policy]
variant = structure2
obs_state = 2
ff_state = 1
kp = 5

[ppo]
rollout_length = 512
bptt_length = 64

[run]
seeds = 0,1
total_steps = 2048
output_dir = /tmp/x
";

    #[test]
    fn parse_applies_defaults_and_roundtrips() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.ppo.gamma, 0.99);
        assert_eq!(cfg.run.seeds, vec![0, 1]);
        let text = cfg.serialize();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.serialize());
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let bad = MINIMAL.replace("kp = 5", "kp = 5\nbogus_key = 3");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_section_rejected() {
        let bad = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn missing_section_rejected() {
        let bad = MINIMAL.replace("[ppo]\nrollout_length = 512\nbptt_length = 64\n", "");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("ppo"), "{err}");
    }

    #[test]
    fn structured_param_count_guard_applies() {
        // Oversized structured observer: no longer smaller than baseline.
        let bad = MINIMAL.replace("obs_state = 2", "obs_state = 300");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("not smaller"), "{err}");
    }

    #[test]
    fn builds_env_and_spec() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let env = cfg.build_env(0).unwrap();
        assert!(matches!(env, EnvInstance::Tank(_)));
        let spec = cfg.policy_spec().unwrap();
        assert_eq!(spec.dims.ff_state, 1);
        assert_eq!(spec.u_hi, vec![10.0]);
    }
}
