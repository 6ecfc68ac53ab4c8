//! The train / eval / statefit / verify commands behind the CLI.

use std::path::{Path, PathBuf};

use srlc_core::analysis;
use srlc_core::envs::Env;
use srlc_core::gradcore::{read_params_file, write_params_file, ParamStore};
use srlc_core::policy::{spec_metadata, PolicySpec};
use srlc_core::ppo::{train, TrainingLog};
use srlc_core::{Error, Result};

use crate::config::ExperimentConfig;

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub per_seed: Vec<(u64, PathBuf)>,
}

/// One training run per seed: emits `{run}/seed{seed}/{step}.srlc`
/// checkpoints (plus a `.meta` sidecar), a training CSV per seed, and the
/// resolved config echoed to `{run}/config.ini`.
pub fn cmd_train(cfg: &ExperimentConfig, out_override: Option<&Path>) -> Result<TrainOutcome> {
    let run_dir = out_override
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join("config.ini"), cfg.serialize())?;

    let spec = cfg.policy_spec()?;
    let jobs: Vec<u64> = cfg.run.seeds.clone();
    let results = srlc_core::par::map(jobs, |seed| -> Result<(u64, PathBuf)> {
        let seed_dir = run_dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let ppo_cfg = cfg.ppo_config(seed, cfg.run.total_steps);
        let interval = cfg.run.checkpoint_every.max(1);
        let mut last_bucket = 0u64;
        let spec_for_run = spec.clone();
        let (final_params, log) = train(
            |i| cfg.build_env(i),
            &spec_for_run,
            &ppo_cfg,
            |step, params| {
                let bucket = step / interval;
                if bucket > last_bucket || step >= cfg.run.total_steps {
                    last_bucket = bucket;
                    write_checkpoint(&seed_dir, step, params, &spec_for_run)?;
                }
                Ok(())
            },
        )?;
        std::fs::write(seed_dir.join("train.csv"), log.to_csv())?;
        let final_path = checkpoint_path(&seed_dir, final_step(&log));
        if !final_path.exists() {
            write_checkpoint(&seed_dir, final_step(&log), &final_params, &spec)?;
        }
        Ok((seed, final_path))
    });
    let per_seed: Result<Vec<(u64, PathBuf)>> = results.into_iter().collect();
    Ok(TrainOutcome { run_dir, per_seed: per_seed? })
}

fn final_step(log: &TrainingLog) -> u64 {
    log.rounds.last().map(|r| r.global_step).unwrap_or(0)
}

fn checkpoint_path(seed_dir: &Path, step: u64) -> PathBuf {
    seed_dir.join(format!("{step}.srlc"))
}

fn write_checkpoint(seed_dir: &Path, step: u64, params: &ParamStore, spec: &PolicySpec) -> Result<()> {
    let path = checkpoint_path(seed_dir, step);
    write_params_file(params, &path)?;
    std::fs::write(path.with_extension("srlc.meta"), spec_metadata(spec))?;
    Ok(())
}

/// Load a checkpoint and check its sidecar metadata against the config's
/// policy section.
pub fn load_checkpoint(path: &Path, spec: &PolicySpec) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint `{}` does not exist", path.display())));
    }
    let store = read_params_file(path)?;
    let meta_path = path.with_extension("srlc.meta");
    if meta_path.exists() {
        let meta = std::fs::read_to_string(&meta_path)?;
        let expected = spec_metadata(spec);
        if meta != expected {
            return Err(Error::Config(format!(
                "checkpoint metadata mismatch for `{}`: found\n{meta}\nexpected\n{expected}",
                path.display()
            )));
        }
    }
    Ok(store)
}

/// Final checkpoints of every seed under a run directory.
pub fn final_checkpoints(run_dir: &Path, cfg: &ExperimentConfig, spec: &PolicySpec) -> Result<Vec<(u64, ParamStore)>> {
    let mut out = Vec::new();
    for &seed in &cfg.run.seeds {
        let seed_dir = run_dir.join(format!("seed{seed}"));
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in std::fs::read_dir(&seed_dir)
            .map_err(|_| Error::Config(format!("no run data for seed {seed} in `{}`", run_dir.display())))?
        {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("srlc") {
                if let Some(step) = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<u64>().ok())
                {
                    if best.as_ref().map(|(b, _)| step > *b).unwrap_or(true) {
                        best = Some((step, path.clone()));
                    }
                }
            }
        }
        let (_, path) = best.ok_or_else(|| Error::Config(format!("no checkpoints for seed {seed}")))?;
        out.push((seed, load_checkpoint(&path, spec)?));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Track,
    Ablate,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "track" => Ok(EvalMode::Track),
            "ablate" => Ok(EvalMode::Ablate),
            other => Err(Error::Config(format!("unknown eval mode `{other}` (track | ablate)"))),
        }
    }
}

/// Evenly spaced reference levels across the configured range.
pub fn eval_levels(cfg: &ExperimentConfig, n: usize) -> Vec<f64> {
    let (lo, hi) = cfg.ref_range();
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n.max(2) - 1) as f64).collect()
}

/// Evaluate tracking (or the feedforward ablation) for trained checkpoints
/// and write eval.csv. Returns the report.
pub fn cmd_eval(
    run_dir: &Path,
    checkpoint: Option<&Path>,
    mode: EvalMode,
    n_levels: usize,
    out_override: Option<&Path>,
) -> Result<analysis::EvalReport> {
    let cfg = read_run_config(run_dir)?;
    let spec = cfg.policy_spec()?;
    let policies = match checkpoint {
        Some(path) => vec![(seed_of(path), load_checkpoint(path, &spec)?)],
        None => final_checkpoints(run_dir, &cfg, &spec)?,
    };
    let levels = eval_levels(&cfg, n_levels);
    let warmup = 50;
    let report = analysis::evaluate_tracking(
        || cfg.build_env(0),
        &spec,
        &policies,
        &levels,
        0xE7A1_u64,
        warmup,
        mode == EvalMode::Ablate,
    )?;
    let out_dir = out_override.map(|p| p.to_path_buf()).unwrap_or_else(|| run_dir.to_path_buf());
    let name = match mode {
        EvalMode::Track => "eval.csv",
        EvalMode::Ablate => "eval_ablate.csv",
    };
    analysis::write_csv(&out_dir.join(name), &analysis::eval_csv(&report))?;
    Ok(report)
}

fn seed_of(checkpoint: &Path) -> u64 {
    checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("seed"))
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

pub fn read_run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    let path = run_dir.join("config.ini");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::Config(format!("cannot read `{}`", path.display())))?;
    ExperimentConfig::parse(&text)
}

/// State-identifiability regression over 100 reference levels; writes
/// statefit.csv and scatter.csv.
pub fn cmd_statefit(
    run_dir: &Path,
    checkpoint: Option<&Path>,
    n_levels: usize,
    out_override: Option<&Path>,
) -> Result<analysis::StateFitResult> {
    let cfg = read_run_config(run_dir)?;
    let spec = cfg.policy_spec()?;
    let (seed, store) = match checkpoint {
        Some(path) => (seed_of(path), load_checkpoint(path, &spec)?),
        None => final_checkpoints(run_dir, &cfg, &spec)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Config("no checkpoints found".into()))?,
    };
    let (lo, hi) = cfg.ref_range();
    let mut env = cfg.build_env(0)?;
    let steps_per_level = (env.episode_length() / 2).clamp(60, 200);
    let warmup = 50;
    let (xhat, xtrue) = analysis::collect_state_pairs(
        &mut env,
        &store,
        &spec,
        n_levels,
        steps_per_level,
        warmup,
        lo,
        hi,
        0x57A7_EF17 ^ seed,
    )?;
    let fit = analysis::fit_state_map(&xhat, &xtrue)?;
    let out_dir = out_override.map(|p| p.to_path_buf()).unwrap_or_else(|| run_dir.to_path_buf());
    analysis::write_csv(&out_dir.join("statefit.csv"), &analysis::statefit_csv(&fit))?;
    analysis::write_csv(&out_dir.join("scatter.csv"), &analysis::scatter_csv(&fit, &xhat, &xtrue))?;
    Ok(fit)
}
