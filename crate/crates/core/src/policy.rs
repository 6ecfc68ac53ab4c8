//! The three controller architectures, as differentiable programs over the
//! gradcore tape.
//!
//! - `Structure1`: a recurrent observer estimating a low-order state from
//!   (y, d, u_prev), feeding a static state-feedback network and a critic.
//! - `Structure2`: additionally a separate recurrent feedforward observer
//!   that sees only the measured disturbance; its estimate feeds the main
//!   observer, the controller and the critic.
//! - `Unstructured`: the history-compression baseline — two fully separate
//!   64-unit recurrent networks (one for the actor, one for the critic)
//!   over the raw (y, d, u_prev, y_ref) stream.
//!
//! All recurrent cells are Elman cells (tanh), all heads are two-hidden-
//! layer tanh networks with linear outputs, and exploration is a diagonal
//! Gaussian on top of an additive P-controller prior.

use rand_chacha::ChaCha8Rng;

use crate::envs::Observation;
use crate::gradcore::{ParamStore, Shape, Tape, ValueId};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Structure1,
    Structure2,
    Unstructured,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Structure1 => "structure1",
            Variant::Structure2 => "structure2",
            Variant::Unstructured => "unstructured",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "structure1" => Ok(Variant::Structure1),
            "structure2" => Ok(Variant::Structure2),
            "unstructured" => Ok(Variant::Unstructured),
            other => Err(Error::Config(format!("unknown policy variant `{other}`"))),
        }
    }
}

/// Hidden size of the unstructured recurrent networks.
pub const UNSTRUCTURED_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyDims {
    pub n_y: usize,
    pub n_d: usize,
    pub n_u: usize,
    /// Observer state size (the unstructured variant fixes this to 64).
    pub obs_state: usize,
    /// Feedforward-observer state size (Structure2 only, otherwise 0).
    pub ff_state: usize,
    /// Hidden width of the controller/critic heads.
    pub mlp_width: usize,
}

#[derive(Clone, Debug)]
pub struct PolicySpec {
    pub variant: Variant,
    pub dims: PolicyDims,
    /// Prior P-controller gain (additive residual outside the network).
    pub kp: f64,
    /// Actuator bounds, element-wise.
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

impl PolicySpec {
    pub fn new(variant: Variant, mut dims: PolicyDims, kp: f64, u_lo: Vec<f64>, u_hi: Vec<f64>) -> Result<Self> {
        if variant == Variant::Unstructured {
            dims.obs_state = UNSTRUCTURED_HIDDEN;
            dims.ff_state = 0;
        }
        if variant != Variant::Structure2 && dims.ff_state != 0 {
            return Err(Error::Config("ff_state is only meaningful for structure2".into()));
        }
        if variant == Variant::Structure2 && dims.ff_state == 0 {
            return Err(Error::Config("structure2 needs ff_state >= 1".into()));
        }
        if dims.n_y == 0 || dims.n_u == 0 || dims.obs_state == 0 || dims.mlp_width == 0 {
            return Err(Error::Config("policy dims must be positive".into()));
        }
        if u_lo.len() != dims.n_u || u_hi.len() != dims.n_u {
            return Err(Error::Config("actuator bounds must have n_u entries".into()));
        }
        if kp != 0.0 && dims.n_y != dims.n_u {
            return Err(Error::Config("P-prior needs n_y == n_u (or kp = 0)".into()));
        }
        Ok(PolicySpec { variant, dims, kp, u_lo, u_hi })
    }

    /// Observer input width: what the main recurrent cell consumes besides
    /// its own state.
    fn observer_input(&self) -> usize {
        match self.variant {
            // Measured output and disturbance together, plus the last input.
            Variant::Structure1 => self.dims.n_y + self.dims.n_d + self.dims.n_u,
            // The disturbance goes only to the feedforward observer; its
            // current estimate enters here instead.
            Variant::Structure2 => self.dims.n_y + self.dims.n_u + self.dims.ff_state,
            // The raw stream, reference included.
            Variant::Unstructured => self.dims.n_y + self.dims.n_d + self.dims.n_u + self.dims.n_y,
        }
    }

    /// Head input width: concat(x̂ [, x̂ᵈ], y_ref).
    fn head_input(&self) -> usize {
        self.dims.obs_state + self.dims.ff_state + self.dims.n_y
    }

    /// Scale dividing u_prev before it enters a recurrent cell, so actuator
    /// ranges like [0, 10] V do not saturate the tanh units.
    pub fn u_scale(&self) -> f64 {
        self.u_lo
            .iter()
            .chain(&self.u_hi)
            .fold(1.0f64, |m, v| m.max(v.abs()))
    }
}

/// Observer estimates carried across time steps. Zeroed at episode starts.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub obs: Vec<f64>,
    pub ff: Vec<f64>,
    pub critic: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(spec: &PolicySpec) -> Self {
        HiddenState {
            obs: vec![0.0; spec.dims.obs_state],
            ff: vec![0.0; spec.dims.ff_state],
            critic: match spec.variant {
                Variant::Unstructured => vec![0.0; spec.dims.obs_state],
                _ => Vec::new(),
            },
        }
    }
}

fn uniform_fan_in(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    (0..rows * cols).map(|_| rng::uniform(r, -bound, bound)).collect()
}

fn insert_elman(store: &mut ParamStore, r: &mut ChaCha8Rng, prefix: &str, hidden: usize, input: usize) -> Result<()> {
    store.insert(&format!("{prefix}.w_in"), Shape::Matrix(hidden, input), uniform_fan_in(r, hidden, input))?;
    store.insert(&format!("{prefix}.w_rec"), Shape::Matrix(hidden, hidden), uniform_fan_in(r, hidden, hidden))?;
    store.insert(&format!("{prefix}.b"), Shape::Vector(hidden), vec![0.0; hidden])?;
    Ok(())
}

fn insert_mlp(store: &mut ParamStore, r: &mut ChaCha8Rng, prefix: &str, input: usize, width: usize, output: usize) -> Result<()> {
    store.insert(&format!("{prefix}.l0.w"), Shape::Matrix(width, input), uniform_fan_in(r, width, input))?;
    store.insert(&format!("{prefix}.l0.b"), Shape::Vector(width), vec![0.0; width])?;
    store.insert(&format!("{prefix}.l1.w"), Shape::Matrix(width, width), uniform_fan_in(r, width, width))?;
    store.insert(&format!("{prefix}.l1.b"), Shape::Vector(width), vec![0.0; width])?;
    store.insert(&format!("{prefix}.out.w"), Shape::Matrix(output, width), uniform_fan_in(r, output, width))?;
    store.insert(&format!("{prefix}.out.b"), Shape::Vector(output), vec![0.0; output])?;
    Ok(())
}

/// Fresh parameters: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
/// biases zero, log_std -0.5. Deterministic in the seed.
pub fn init_params(seed: u64, spec: &PolicySpec) -> Result<ParamStore> {
    let mut r = rng::stream(seed, "init", 0);
    let mut store = ParamStore::new();
    let d = &spec.dims;
    insert_elman(&mut store, &mut r, "observer", d.obs_state, spec.observer_input())?;
    if spec.variant == Variant::Structure2 {
        insert_elman(&mut store, &mut r, "ff_observer", d.ff_state, d.n_d)?;
    }
    if spec.variant == Variant::Unstructured {
        insert_elman(&mut store, &mut r, "critic_observer", d.obs_state, spec.observer_input())?;
    }
    insert_mlp(&mut store, &mut r, "controller", spec.head_input(), d.mlp_width, d.n_u)?;
    insert_mlp(&mut store, &mut r, "critic", spec.head_input(), d.mlp_width, 1)?;
    store.insert("log_std", Shape::Vector(d.n_u), vec![-0.5; d.n_u])?;
    Ok(store)
}

/// Total scalar parameter count for a variant/dims combination.
pub fn param_count(spec: &PolicySpec) -> usize {
    let d = &spec.dims;
    let elman = |hidden: usize, input: usize| hidden * input + hidden * hidden + hidden;
    let mlp = |input: usize, width: usize, output: usize| {
        width * input + width + width * width + width + output * width + output
    };
    let mut total = elman(d.obs_state, spec.observer_input());
    if spec.variant == Variant::Structure2 {
        total += elman(d.ff_state, d.n_d);
    }
    if spec.variant == Variant::Unstructured {
        total += elman(d.obs_state, spec.observer_input());
    }
    total += mlp(spec.head_input(), d.mlp_width, d.n_u);
    total += mlp(spec.head_input(), d.mlp_width, 1);
    total + d.n_u
}

/// One Elman update: tanh(W_in input + W_rec state + b).
fn elman_step(tape: &mut Tape, store: &ParamStore, prefix: &str, state: ValueId, input: ValueId) -> Result<ValueId> {
    let w_in = tape.param(store, &format!("{prefix}.w_in"))?;
    let w_rec = tape.param(store, &format!("{prefix}.w_rec"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let zeros = tape.constant(&vec![0.0; tape.len_of(b)]);
    let drive = tape.affine(w_in, input, b)?;
    let rec = tape.affine(w_rec, state, zeros)?;
    let pre = tape.add(drive, rec)?;
    Ok(tape.tanh(pre))
}

/// Two-hidden-layer tanh network with a linear output head.
fn mlp_forward(tape: &mut Tape, store: &ParamStore, prefix: &str, input: ValueId) -> Result<ValueId> {
    let w0 = tape.param(store, &format!("{prefix}.l0.w"))?;
    let b0 = tape.param(store, &format!("{prefix}.l0.b"))?;
    let h0 = tape.affine(w0, input, b0)?;
    let h0 = tape.tanh(h0);
    let w1 = tape.param(store, &format!("{prefix}.l1.w"))?;
    let b1 = tape.param(store, &format!("{prefix}.l1.b"))?;
    let h1 = tape.affine(w1, h0, b1)?;
    let h1 = tape.tanh(h1);
    let w_out = tape.param(store, &format!("{prefix}.out.w"))?;
    let b_out = tape.param(store, &format!("{prefix}.out.b"))?;
    tape.affine(w_out, h1, b_out)
}

/// Main-observer update. `parts` is the cell input in order (e.g. y, d,
/// u_prev for Structure1) and `x_prev` the carried estimate.
pub fn observer_step(tape: &mut Tape, store: &ParamStore, x_prev: ValueId, parts: &[ValueId]) -> Result<ValueId> {
    let input = tape.concat(parts);
    elman_step(tape, store, "observer", x_prev, input)
}

/// Feedforward-observer update: consumes only the measured disturbance.
/// Errors under variants other than Structure2.
pub fn ff_observer_step(
    tape: &mut Tape,
    store: &ParamStore,
    spec: &PolicySpec,
    xd_prev: ValueId,
    d: ValueId,
) -> Result<ValueId> {
    if spec.variant != Variant::Structure2 {
        return Err(Error::Config(format!(
            "ff_observer_step called under {}",
            spec.variant.as_str()
        )));
    }
    elman_step(tape, store, "ff_observer", xd_prev, d)
}

/// Mean control from the state-feedback head over concat(x̂ [, x̂ᵈ], y_ref).
pub fn controller_mean(tape: &mut Tape, store: &ParamStore, parts: &[ValueId]) -> Result<ValueId> {
    let input = tape.concat(parts);
    mlp_forward(tape, store, "controller", input)
}

/// Scalar value estimate from the critic head over the same input.
pub fn critic_value(tape: &mut Tape, store: &ParamStore, parts: &[ValueId]) -> Result<ValueId> {
    let input = tape.concat(parts);
    mlp_forward(tape, store, "critic", input)
}

/// Hidden-state nodes entering a step (constants for fresh tapes, or the
/// previous step's outputs inside a BPTT segment).
#[derive(Clone, Copy, Debug)]
pub struct HiddenNodes {
    pub obs: ValueId,
    pub ff: Option<ValueId>,
    pub critic: Option<ValueId>,
}

pub fn hidden_as_constants(tape: &mut Tape, spec: &PolicySpec, h: &HiddenState) -> HiddenNodes {
    HiddenNodes {
        obs: tape.constant(&h.obs),
        ff: (spec.variant == Variant::Structure2).then(|| tape.constant(&h.ff)),
        critic: (spec.variant == Variant::Unstructured).then(|| tape.constant(&h.critic)),
    }
}

/// Everything a policy step produces on the tape.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    /// Pre-clip Gaussian mean: P-prior plus network mean.
    pub mean_total: ValueId,
    /// Critic value (scalar node).
    pub value: ValueId,
    pub hidden: HiddenNodes,
}

/// Inputs to one policy step (current measurement set plus last applied u).
#[derive(Clone, Copy, Debug)]
pub struct StepIo<'a> {
    pub y: &'a [f64],
    pub d: &'a [f64],
    pub y_ref: &'a [f64],
    pub prev_u: &'a [f64],
}

/// Advance all observers one step and evaluate both heads. The only
/// non-constant inputs are the hidden nodes, so gradients flow through the
/// recurrences; measurements and `prev_u` are teacher-forced constants.
pub fn step_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    spec: &PolicySpec,
    hidden: HiddenNodes,
    io: StepIo<'_>,
) -> Result<StepNodes> {
    let d = &spec.dims;
    debug_assert_eq!(io.y.len(), d.n_y);
    debug_assert_eq!(io.d.len(), d.n_d);
    debug_assert_eq!(io.y_ref.len(), d.n_y);
    debug_assert_eq!(io.prev_u.len(), d.n_u);

    let u_scale = spec.u_scale();
    let u_scaled: Vec<f64> = io.prev_u.iter().map(|u| u / u_scale).collect();
    let y_node = tape.constant(io.y);
    let d_node = tape.constant(io.d);
    let u_node = tape.constant(&u_scaled);
    let ref_node = tape.constant(io.y_ref);

    let (obs_next, ff_next, critic_next, head_parts): (ValueId, Option<ValueId>, Option<ValueId>, Vec<ValueId>) =
        match spec.variant {
            Variant::Structure1 => {
                let x = observer_step(tape, store, hidden.obs, &[y_node, d_node, u_node])?;
                (x, None, None, vec![x, ref_node])
            }
            Variant::Structure2 => {
                let xd_prev = hidden.ff.ok_or_else(|| Error::Config("structure2 step without x̂ᵈ".into()))?;
                let xd = ff_observer_step(tape, store, spec, xd_prev, d_node)?;
                let x = observer_step(tape, store, hidden.obs, &[y_node, u_node, xd])?;
                (x, Some(xd), None, vec![x, xd, ref_node])
            }
            Variant::Unstructured => {
                let xc_prev =
                    hidden.critic.ok_or_else(|| Error::Config("unstructured step without critic state".into()))?;
                let stream = tape.concat(&[y_node, d_node, u_node, ref_node]);
                let x = elman_step(tape, store, "observer", hidden.obs, stream)?;
                let stream_c = tape.concat(&[y_node, d_node, u_node, ref_node]);
                let xc = elman_step(tape, store, "critic_observer", xc_prev, stream_c)?;
                (x, None, Some(xc), vec![x, ref_node])
            }
        };

    let u_mean = controller_mean(tape, store, &head_parts)?;
    let value = match spec.variant {
        Variant::Unstructured => {
            let xc = critic_next.expect("critic state exists");
            critic_value(tape, store, &[xc, ref_node])?
        }
        _ => critic_value(tape, store, &head_parts)?,
    };

    // Additive P-prior, a constant with respect to the parameters.
    let prior: Vec<f64> = if spec.kp != 0.0 {
        io.y_ref.iter().zip(io.y).map(|(r, y)| spec.kp * (r - y)).collect()
    } else {
        vec![0.0; d.n_u]
    };
    let prior_node = tape.constant(&prior);
    let mean_total = tape.add(u_mean, prior_node)?;

    Ok(StepNodes {
        mean_total,
        value,
        hidden: HiddenNodes { obs: obs_next, ff: ff_next, critic: critic_next },
    })
}

/// Output of one acting step.
#[derive(Clone, Debug)]
pub struct ActOutput {
    /// Clipped input actually applied to the plant.
    pub u_applied: Vec<f64>,
    /// Pre-clip Gaussian sample; the point the log-density is evaluated at.
    pub u_sample: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Run one policy step outside training: advances `hidden` in place,
/// samples (or takes the mean when `exploration` is `None`), and returns
/// the applied input, the density point, its log-probability and the
/// critic value. The same tape ops as the training replay are used, so
/// replaying a rollout reproduces these numbers bit-for-bit.
pub fn act(
    store: &ParamStore,
    spec: &PolicySpec,
    hidden: &mut HiddenState,
    obs: &Observation,
    prev_u: &[f64],
    mut exploration: Option<&mut ChaCha8Rng>,
) -> Result<ActOutput> {
    obs.validate_finite()?;
    let mut tape = Tape::new(store);
    let h_nodes = hidden_as_constants(&mut tape, spec, hidden);
    let step = step_on_tape(
        &mut tape,
        store,
        spec,
        h_nodes,
        StepIo { y: &obs.y, d: &obs.d, y_ref: &obs.y_ref, prev_u },
    )?;

    let mean = tape.value(step.mean_total).to_vec();
    let log_std_entry = store.get("log_std").expect("log_std exists");
    let u_sample: Vec<f64> = match exploration.as_deref_mut() {
        Some(r) => mean
            .iter()
            .zip(&log_std_entry.data)
            .map(|(m, ls)| m + ls.exp() * rng::normal(r))
            .collect(),
        None => mean.clone(),
    };

    let log_std_node = tape.param(store, "log_std")?;
    let log_prob_node = tape.gauss_log_pdf(step.mean_total, log_std_node, &u_sample)?;
    let log_prob = tape.scalar_value(log_prob_node);
    let value = tape.scalar_value(step.value);

    hidden.obs = tape.value(step.hidden.obs).to_vec();
    if let Some(ff) = step.hidden.ff {
        hidden.ff = tape.value(ff).to_vec();
    }
    if let Some(c) = step.hidden.critic {
        hidden.critic = tape.value(c).to_vec();
    }
    debug_assert!(hidden.obs.iter().chain(&hidden.ff).chain(&hidden.critic).all(|v| v.abs() < 1.0));

    let u_applied: Vec<f64> = u_sample
        .iter()
        .zip(spec.u_lo.iter().zip(&spec.u_hi))
        .map(|(u, (lo, hi))| u.clamp(*lo, *hi))
        .collect();

    Ok(ActOutput { u_applied, u_sample, log_prob, value })
}

/// Serialize variant and dims for the checkpoint sidecar.
pub fn spec_metadata(spec: &PolicySpec) -> String {
    let d = &spec.dims;
    format!(
        "variant={}\nn_y={}\nn_d={}\nn_u={}\nobs_state={}\nff_state={}\nmlp_width={}\nkp={}\n",
        spec.variant.as_str(),
        d.n_y,
        d.n_d,
        d.n_u,
        d.obs_state,
        d.ff_state,
        d.mlp_width,
        spec.kp
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tank_spec(variant: Variant) -> PolicySpec {
        let (obs_state, ff_state) = match variant {
            Variant::Structure1 => (3, 0),
            Variant::Structure2 => (2, 1),
            Variant::Unstructured => (UNSTRUCTURED_HIDDEN, 0),
        };
        PolicySpec::new(
            variant,
            PolicyDims { n_y: 1, n_d: 1, n_u: 1, obs_state, ff_state, mlp_width: 16 },
            2.0,
            vec![0.0],
            vec![10.0],
        )
        .unwrap()
    }

    fn obs(y: f64, d: f64, y_ref: f64) -> Observation {
        Observation { y: vec![y], d: vec![d], y_ref: vec![y_ref] }
    }

    #[test]
    fn init_is_deterministic_and_counts_match() {
        for variant in [Variant::Structure1, Variant::Structure2, Variant::Unstructured] {
            let spec = tank_spec(variant);
            let a = init_params(3, &spec).unwrap();
            let b = init_params(3, &spec).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.total_values(), param_count(&spec), "count mismatch for {variant:?}");
        }
    }

    #[test]
    fn init_respects_fan_in_bounds_over_seeds() {
        let spec = tank_spec(Variant::Structure2);
        for seed in 0..100 {
            let store = init_params(seed, &spec).unwrap();
            for e in store.iter() {
                if e.name.ends_with(".b") || e.name.ends_with("out.b") {
                    assert!(e.data.iter().all(|&v| v == 0.0), "bias {} not zero", e.name);
                }
                if let Shape::Matrix(_, cols) = e.shape {
                    let bound = 1.0 / (cols as f64).sqrt() + 1e-12;
                    assert!(e.data.iter().all(|&v| v.abs() <= bound), "{} out of bound", e.name);
                }
            }
            assert_eq!(store.get("log_std").unwrap().data, vec![-0.5]);
        }
    }

    #[test]
    fn structured_has_fewer_params_than_unstructured() {
        for structured in [Variant::Structure1, Variant::Structure2] {
            let s = param_count(&tank_spec(structured));
            let u = param_count(&tank_spec(Variant::Unstructured));
            assert!(s < u, "{structured:?}: {s} >= {u}");
        }
    }

    #[test]
    fn zero_params_give_pure_p_control() {
        let spec = tank_spec(Variant::Structure1);
        let mut store = ParamStore::new();
        for e in init_params(0, &spec).unwrap().iter() {
            store.insert(&e.name, e.shape, vec![0.0; e.data.len()]).unwrap();
        }
        let mut hidden = HiddenState::zeros(&spec);
        let out = act(&store, &spec, &mut hidden, &obs(0.2, 0.1, 0.45), &[0.0], None).unwrap();
        // kp (y_ref - y) = 2.0 * 0.25 = 0.5, inside [0, 10]
        assert!((out.u_applied[0] - 0.5).abs() < 1e-15);
        assert_eq!(out.value, 0.0);
        assert!(hidden.obs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_prob_at_mean_is_analytic() {
        let spec = tank_spec(Variant::Structure1);
        let store = init_params(5, &spec).unwrap();
        let mut hidden = HiddenState::zeros(&spec);
        let out = act(&store, &spec, &mut hidden, &obs(0.3, 0.0, 0.4), &[1.0], None).unwrap();
        // log N(mu|mu, sigma) = -1/2 (log 2pi + 2 log sigma), sigma = e^{-0.5}
        let expected = -0.5 * ((2.0 * std::f64::consts::PI).ln() + 2.0 * (-0.5));
        assert!((out.log_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn hidden_stays_in_open_unit_interval() {
        let spec = tank_spec(Variant::Structure2);
        let store = init_params(9, &spec).unwrap();
        let mut hidden = HiddenState::zeros(&spec);
        let mut r = rng::stream(1, "explore", 0);
        let mut prev_u = vec![0.0];
        for t in 0..200 {
            let o = obs(0.1 + 0.3 * ((t as f64) * 0.1).sin().abs(), 0.2, 0.4);
            let out = act(&store, &spec, &mut hidden, &o, &prev_u, Some(&mut r)).unwrap();
            prev_u = out.u_applied;
            assert!(hidden.obs.iter().all(|v| v.abs() < 1.0));
            assert!(hidden.ff.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn memoryless_when_recurrent_weights_zero() {
        let spec = tank_spec(Variant::Structure1);
        let mut store = init_params(4, &spec).unwrap();
        let idx = store.entry_index("observer.w_rec").unwrap();
        for v in &mut store.entry_mut(idx).data {
            *v = 0.0;
        }
        // Same observation from two different hidden states -> same x̂.
        let o = obs(0.2, 0.05, 0.3);
        let mut h1 = HiddenState::zeros(&spec);
        let mut h2 = HiddenState::zeros(&spec);
        h2.obs = vec![0.9, -0.7, 0.3];
        act(&store, &spec, &mut h1, &o, &[0.5], None).unwrap();
        act(&store, &spec, &mut h2, &o, &[0.5], None).unwrap();
        assert_eq!(h1.obs, h2.obs);
    }

    #[test]
    fn ff_observer_sees_only_the_disturbance() {
        let spec = tank_spec(Variant::Structure2);
        let store = init_params(11, &spec).unwrap();
        // Two histories identical in d but wildly different in y, u.
        let run = |ys: &[f64], us: &[f64]| {
            let mut hidden = HiddenState::zeros(&spec);
            for t in 0..50 {
                let o = obs(ys[t % ys.len()], 0.3 + 0.01 * (t as f64 % 7.0), 0.4);
                act(&store, &spec, &mut hidden, &o, &[us[t % us.len()]], None).unwrap();
            }
            hidden.ff.clone()
        };
        let a = run(&[0.1, 0.2, 0.5], &[0.0, 5.0]);
        let b = run(&[0.9, 0.05, 0.33], &[9.0, 1.0, 2.0]);
        assert_eq!(a, b, "x̂ᵈ depends on y or u");
    }

    #[test]
    fn ff_observer_rejected_outside_structure2() {
        let spec = tank_spec(Variant::Structure1);
        let store = init_params(0, &spec).unwrap();
        let mut tape = Tape::new(&store);
        let xd = tape.constant(&[0.0]);
        let d = tape.constant(&[0.1]);
        assert!(ff_observer_step(&mut tape, &store, &spec, xd, d).is_err());
    }

    #[test]
    fn constant_disturbance_drives_ff_state_to_fixed_point() {
        let spec = tank_spec(Variant::Structure2);
        let store = init_params(2, &spec).unwrap();
        let mut hidden = HiddenState::zeros(&spec);
        let mut prev = hidden.ff.clone();
        let mut converged = false;
        for _ in 0..500 {
            act(&store, &spec, &mut hidden, &obs(0.2, 0.35, 0.4), &[0.0], None).unwrap();
            let delta: f64 = hidden.ff.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
            prev = hidden.ff.clone();
            if delta < 1e-10 {
                converged = true;
                break;
            }
        }
        assert!(converged, "x̂ᵈ did not reach a fixed point");
    }

    #[test]
    fn rollout_matches_hand_rolled_elman_oracle() {
        // 50 steps of Structure1 against a plain-arithmetic recurrence.
        let spec = tank_spec(Variant::Structure1);
        let store = init_params(7, &spec).unwrap();
        let w_in = store.get("observer.w_in").unwrap().data.clone();
        let w_rec = store.get("observer.w_rec").unwrap().data.clone();
        let b = store.get("observer.b").unwrap().data.clone();
        let hidden_n = 3;
        let u_scale = spec.u_scale();

        let mut hidden = HiddenState::zeros(&spec);
        let mut x_oracle = vec![0.0; hidden_n];
        let mut r = rng::stream(3, "drive", 0);
        for _ in 0..50 {
            let o = obs(rng::uniform(&mut r, 0.0, 0.5), rng::uniform(&mut r, 0.0, 0.5), 0.3);
            let u_prev = rng::uniform(&mut r, 0.0, 10.0);
            act(&store, &spec, &mut hidden, &o, &[u_prev], None).unwrap();

            let input = [o.y[0], o.d[0], u_prev / u_scale];
            let mut next = vec![0.0; hidden_n];
            for i in 0..hidden_n {
                let mut acc = b[i];
                for (j, inp) in input.iter().enumerate() {
                    acc += w_in[i * 3 + j] * inp;
                }
                for j in 0..hidden_n {
                    acc += w_rec[i * hidden_n + j] * x_oracle[j];
                }
                next[i] = acc.tanh();
            }
            x_oracle = next;
            for i in 0..hidden_n {
                assert!((hidden.obs[i] - x_oracle[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identical_observations_give_identical_action_means() {
        let spec = tank_spec(Variant::Unstructured);
        let store = init_params(8, &spec).unwrap();
        let seq: Vec<Observation> = (0..30).map(|t| obs(0.1 + 0.01 * t as f64, 0.2, 0.35)).collect();
        let run = || {
            let mut hidden = HiddenState::zeros(&spec);
            let mut prev_u = vec![0.0];
            let mut means = Vec::new();
            for o in &seq {
                let out = act(&store, &spec, &mut hidden, o, &prev_u, None).unwrap();
                prev_u = out.u_applied.clone();
                means.push(out.u_sample[0]);
            }
            means
        };
        assert_eq!(run(), run());
    }
}
