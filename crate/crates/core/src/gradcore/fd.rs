//! Central finite-difference verification of backward gradients.

use rand::Rng;

use crate::gradcore::store::ParamStore;
use crate::gradcore::tape::{Tape, ValueId};
use crate::rng;
use crate::{Error, Result};

/// A differentiable program: builds a scalar output on the tape from the
/// given parameters. Must be a pure function of the parameters (fixed
/// inputs are captured by the closure).
pub trait Program: Sync {
    fn run(&self, tape: &mut Tape, params: &ParamStore) -> Result<ValueId>;
}

impl<F> Program for F
where
    F: Fn(&mut Tape, &ParamStore) -> Result<ValueId> + Sync,
{
    fn run(&self, tape: &mut Tape, params: &ParamStore) -> Result<ValueId> {
        self(tape, params)
    }
}

fn eval_scalar(program: &dyn Program, params: &ParamStore) -> Result<f64> {
    let mut tape = Tape::new(params);
    let out = program.run(&mut tape, params)?;
    if tape.len_of(out) != 1 {
        return Err(Error::ShapeMismatch {
            op: "fd_check",
            detail: format!("program output has length {}, expected scalar", tape.len_of(out)),
        });
    }
    if let Some((idx, op)) = tape.find_non_finite() {
        return Err(Error::NonFinite(format!("op `{op}` (node {idx})")));
    }
    Ok(tape.scalar_value(out))
}

/// Compare backward gradients of a scalar program against central finite
/// differences on `probe_count` randomly chosen parameter coordinates.
/// Returns the worst relative error, with denominator
/// `max(|g_ad|, |g_fd|, 1e-8)`.
pub fn fd_check(
    program: &dyn Program,
    params: &ParamStore,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!("fd_check epsilon {epsilon} outside [1e-8, 1e-4]")));
    }
    if probe_count == 0 {
        return Err(Error::Config("fd_check needs probe_count >= 1".into()));
    }

    // Analytic gradient once.
    let mut tape = Tape::new(params);
    let out = program.run(&mut tape, params)?;
    if tape.len_of(out) != 1 {
        return Err(Error::ShapeMismatch {
            op: "fd_check",
            detail: format!("program output has length {}, expected scalar", tape.len_of(out)),
        });
    }
    if let Some((idx, op)) = tape.find_non_finite() {
        return Err(Error::NonFinite(format!("op `{op}` (node {idx})")));
    }
    let grads = tape.backward(out, &[1.0], params)?;

    // Probe coordinates.
    let total: usize = params.total_values();
    if total == 0 {
        return Ok(0.0);
    }
    let mut probe_rng = rng::stream(seed, "fd_probe", 0);
    let coords: Vec<usize> = (0..probe_count)
        .map(|_| probe_rng.random_range(0..total))
        .collect();

    let errs = crate::par::map(coords, |flat| -> Result<f64> {
        // Locate (entry, offset) for the flat coordinate.
        let mut remaining = flat;
        let mut entry = 0;
        while remaining >= params.entry(entry).data.len() {
            remaining -= params.entry(entry).data.len();
            entry += 1;
        }
        let g_ad = grads.grad(entry)[remaining];

        let mut plus = params.clone();
        plus.entry_mut(entry).data[remaining] += epsilon;
        let mut minus = params.clone();
        minus.entry_mut(entry).data[remaining] -= epsilon;
        let f_plus = eval_scalar(program, &plus)?;
        let f_minus = eval_scalar(program, &minus)?;
        let g_fd = (f_plus - f_minus) / (2.0 * epsilon);

        let denom = g_ad.abs().max(g_fd.abs()).max(1e-8);
        Ok((g_ad - g_fd).abs() / denom)
    });

    let mut worst = 0.0f64;
    for e in errs {
        worst = worst.max(e?);
    }
    Ok(worst)
}

/// Like [`fd_check`] but also returns the probed coordinate count actually
/// used (for reporting).
pub fn fd_check_probed(
    program: &dyn Program,
    params: &ParamStore,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<(f64, usize)> {
    let err = fd_check(program, params, probe_count, epsilon, seed)?;
    Ok((err, probe_count.min(params.total_values().max(1))))
}


#[cfg(test)]
mod primitive_sweep {
    use super::*;
    use crate::gradcore::store::Shape;
    use crate::gradcore::tape::{Tape, ValueId};
    use crate::rng::normal;

    fn store_vec(n: usize, seed: u64) -> ParamStore {
        let mut r = rng::stream(seed, "sweep", 0);
        let mut s = ParamStore::new();
        s.insert("x", Shape::Vector(n), (0..n).map(|_| 0.5 * normal(&mut r)).collect()).unwrap();
        s.insert("y", Shape::Vector(n), (0..n).map(|_| 0.5 * normal(&mut r)).collect()).unwrap();
        s.insert("w", Shape::Matrix(n, n), (0..n * n).map(|_| 0.5 * normal(&mut r)).collect()).unwrap();
        s
    }

    /// Collapse any vector node to a scalar so fd_check applies.
    fn reduce(t: &mut Tape, v: ValueId) -> Result<ValueId> {
        let zero = t.constant(&vec![0.0; t.len_of(v)]);
        t.squared_error(v, zero)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        type Prog = fn(&mut Tape, &ParamStore) -> Result<ValueId>;
        let programs: Vec<(&str, Prog)> = vec![
            ("affine", |t, p| {
                let w = t.param(p, "w")?;
                let x = t.param(p, "x")?;
                let b = t.param(p, "y")?;
                let v = t.affine(w, x, b)?;
                reduce(t, v)
            }),
            ("tanh", |t, p| {
                let x = t.param(p, "x")?;
                let v = t.tanh(x);
                reduce(t, v)
            }),
            ("exp", |t, p| {
                let x = t.param(p, "x")?;
                let v = t.exp(x);
                reduce(t, v)
            }),
            ("add", |t, p| {
                let x = t.param(p, "x")?;
                let y = t.param(p, "y")?;
                let v = t.add(x, y)?;
                reduce(t, v)
            }),
            ("mul", |t, p| {
                let x = t.param(p, "x")?;
                let y = t.param(p, "y")?;
                let v = t.mul(x, y)?;
                reduce(t, v)
            }),
            ("concat_slice", |t, p| {
                let x = t.param(p, "x")?;
                let y = t.param(p, "y")?;
                let c = t.concat(&[x, y]);
                let s = t.slice(c, 2, 5)?;
                reduce(t, s)
            }),
            ("squared_error", |t, p| {
                let x = t.param(p, "x")?;
                let y = t.param(p, "y")?;
                t.squared_error(x, y)
            }),
            ("mean", |t, p| {
                let x = t.param(p, "x")?;
                let y = t.param(p, "y")?;
                let a = t.squared_error(x, y)?;
                let b = t.mul(a, a)?;
                t.mean(&[a, b])
            }),
            ("gauss_log_pdf", |t, p| {
                let x = t.param(p, "x")?;
                let y = t.param(p, "y")?;
                t.gauss_log_pdf(x, y, &[0.3, -0.1, 0.7, 0.2, -0.4])
            }),
            ("clip_interior", |t, p| {
                let x = t.param(p, "x")?;
                let v = t.clip_uniform(x, -100.0, 100.0)?;
                reduce(t, v)
            }),
        ];
        let store = store_vec(5, 3);
        for (name, prog) in programs {
            let err = fd_check(&prog, &store, 100, 1e-6, 7).unwrap();
            assert!(err < 1e-5, "primitive `{name}`: fd error {err:.3e}");
        }
    }
}
