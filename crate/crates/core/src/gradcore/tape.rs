//! The Wengert tape: ops are evaluated eagerly as they are recorded, and
//! replayed in reverse for the backward pass.
//!
//! Node values and adjoints live in flat arenas to keep per-node allocation
//! off the hot path (the PPO update records a few thousand nodes per BPTT
//! segment). Replaying a recorded program from identical inputs is
//! bit-reproducible because evaluation order is the recording order.

use crate::gradcore::store::{GradStore, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(u32);

#[derive(Clone, Copy, Debug)]
enum Kind {
    /// Leaf holding external input or constant data.
    Const,
    /// Leaf bound to a ParamStore entry.
    Param { entry: u32 },
    /// W x + b, with W a row-major matrix node of shape (b.len, x.len).
    Affine { w: ValueId, x: ValueId, b: ValueId },
    Tanh { x: ValueId },
    Exp { x: ValueId },
    Add { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    /// Concatenation of `count` ids starting at `first` in the id arena.
    Concat { first: u32, count: u32 },
    Slice { x: ValueId, start: u32 },
    /// sum_i (a_i - b_i)^2, scalar output.
    SquaredError { a: ValueId, b: ValueId },
    /// Mean of `count` scalar ids starting at `first` in the id arena.
    Mean { first: u32, count: u32 },
    /// log N(sample | mean, diag exp(log_std)^2), scalar output. The sample
    /// lives in the aux arena at `sample`, with mean.len entries.
    GaussLogPdf { mean: ValueId, log_std: ValueId, sample: u32 },
    /// Elementwise clamp to constant bounds [lo_i, hi_i] stored in the aux
    /// arena at `bounds` (lo block then hi block). Zero gradient outside.
    Clip { x: ValueId, bounds: u32 },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    kind: Kind,
    off: u32,
    len: u32,
}

pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    ids: Vec<ValueId>,
    aux: Vec<f64>,
    /// One recorded leaf per ParamStore entry, deduplicated.
    param_nodes: Vec<Option<ValueId>>,
}

impl Tape {
    /// Start a tape bound to `store` (parameters are looked up by name and
    /// deduplicated per entry).
    pub fn new(store: &ParamStore) -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            vals: Vec::with_capacity(4096),
            ids: Vec::new(),
            aux: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        let n = &self.nodes[id.0 as usize];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    pub fn scalar_value(&self, id: ValueId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn len_of(&self, id: ValueId) -> usize {
        self.nodes[id.0 as usize].len as usize
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, kind: Kind, len: usize) -> ValueId {
        let off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, 0.0);
        let id = ValueId(self.nodes.len() as u32);
        self.nodes.push(Node { kind, off, len: len as u32 });
        id
    }

    fn out_slice(&mut self, id: ValueId) -> &mut [f64] {
        let n = self.nodes[id.0 as usize];
        &mut self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    pub fn constant(&mut self, data: &[f64]) -> ValueId {
        let id = self.push(Kind::Const, data.len());
        self.out_slice(id).copy_from_slice(data);
        id
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.constant(&[v])
    }

    /// Leaf bound to a named parameter. Recording the same name twice on
    /// one tape returns the same node, so its adjoint accumulates.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<ValueId> {
        let idx = store
            .entry_index(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if let Some(id) = self.param_nodes[idx] {
            return Ok(id);
        }
        let data = store.entry(idx).data.clone();
        let id = self.push(Kind::Param { entry: idx as u32 }, data.len());
        self.out_slice(id).copy_from_slice(&data);
        self.param_nodes[idx] = Some(id);
        Ok(id)
    }

    /// W x + b. Requires w.len == x.len * b.len; the output length is b.len.
    pub fn affine(&mut self, w: ValueId, x: ValueId, b: ValueId) -> Result<ValueId> {
        let (rows, cols) = (self.len_of(b), self.len_of(x));
        if self.len_of(w) != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "affine",
                detail: format!(
                    "weight has {} values, expected {}x{}",
                    self.len_of(w),
                    rows,
                    cols
                ),
            });
        }
        let id = self.push(Kind::Affine { w, x, b }, rows);
        let (wn, xn, bn) = (self.nodes[w.0 as usize], self.nodes[x.0 as usize], self.nodes[b.0 as usize]);
        for i in 0..rows {
            let wrow = &self.vals[(wn.off as usize + i * cols)..(wn.off as usize + (i + 1) * cols)];
            let xv = &self.vals[xn.off as usize..xn.off as usize + cols];
            let mut acc = self.vals[bn.off as usize + i];
            for j in 0..cols {
                acc += wrow[j] * xv[j];
            }
            let out_off = self.nodes[id.0 as usize].off as usize;
            self.vals[out_off + i] = acc;
        }
        Ok(id)
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let len = self.len_of(x);
        let id = self.push(Kind::Tanh { x }, len);
        let xn = self.nodes[x.0 as usize];
        let out_off = self.nodes[id.0 as usize].off as usize;
        for i in 0..len {
            self.vals[out_off + i] = self.vals[xn.off as usize + i].tanh();
        }
        id
    }

    pub fn exp(&mut self, x: ValueId) -> ValueId {
        let len = self.len_of(x);
        let id = self.push(Kind::Exp { x }, len);
        let xn = self.nodes[x.0 as usize];
        let out_off = self.nodes[id.0 as usize].off as usize;
        for i in 0..len {
            self.vals[out_off + i] = self.vals[xn.off as usize + i].exp();
        }
        id
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let len = self.len_of(a);
        if self.len_of(b) != len {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{} vs {}", len, self.len_of(b)),
            });
        }
        let id = self.push(Kind::Add { a, b }, len);
        let (an, bn) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
        let out_off = self.nodes[id.0 as usize].off as usize;
        for i in 0..len {
            self.vals[out_off + i] =
                self.vals[an.off as usize + i] + self.vals[bn.off as usize + i];
        }
        Ok(id)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let len = self.len_of(a);
        if self.len_of(b) != len {
            return Err(Error::ShapeMismatch {
                op: "mul",
                detail: format!("{} vs {}", len, self.len_of(b)),
            });
        }
        let id = self.push(Kind::Mul { a, b }, len);
        let (an, bn) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
        let out_off = self.nodes[id.0 as usize].off as usize;
        for i in 0..len {
            self.vals[out_off + i] =
                self.vals[an.off as usize + i] * self.vals[bn.off as usize + i];
        }
        Ok(id)
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> ValueId {
        let first = self.ids.len() as u32;
        self.ids.extend_from_slice(parts);
        let len: usize = parts.iter().map(|&p| self.len_of(p)).sum();
        let id = self.push(Kind::Concat { first, count: parts.len() as u32 }, len);
        let mut off = self.nodes[id.0 as usize].off as usize;
        for &p in parts {
            let pn = self.nodes[p.0 as usize];
            let (src_off, src_len) = (pn.off as usize, pn.len as usize);
            self.vals.copy_within(src_off..src_off + src_len, off);
            off += src_len;
        }
        id
    }

    pub fn slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        if start + len > self.len_of(x) {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("range {}..{} of length {}", start, start + len, self.len_of(x)),
            });
        }
        let id = self.push(Kind::Slice { x, start: start as u32 }, len);
        let xn = self.nodes[x.0 as usize];
        let src = xn.off as usize + start;
        let dst = self.nodes[id.0 as usize].off as usize;
        self.vals.copy_within(src..src + len, dst);
        Ok(id)
    }

    /// sum_i (a_i - b_i)^2, scalar.
    pub fn squared_error(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let len = self.len_of(a);
        if self.len_of(b) != len {
            return Err(Error::ShapeMismatch {
                op: "squared_error",
                detail: format!("{} vs {}", len, self.len_of(b)),
            });
        }
        let id = self.push(Kind::SquaredError { a, b }, 1);
        let (an, bn) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
        let mut acc = 0.0;
        for i in 0..len {
            let d = self.vals[an.off as usize + i] - self.vals[bn.off as usize + i];
            acc += d * d;
        }
        let out_off = self.nodes[id.0 as usize].off as usize;
        self.vals[out_off] = acc;
        Ok(id)
    }

    /// Mean of a batch of scalar nodes.
    pub fn mean(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch { op: "mean", detail: "empty batch".into() });
        }
        for &p in parts {
            if self.len_of(p) != 1 {
                return Err(Error::ShapeMismatch {
                    op: "mean",
                    detail: format!("batch element has length {}", self.len_of(p)),
                });
            }
        }
        let first = self.ids.len() as u32;
        self.ids.extend_from_slice(parts);
        let id = self.push(Kind::Mean { first, count: parts.len() as u32 }, 1);
        let mut acc = 0.0;
        for &p in parts {
            let pn = self.nodes[p.0 as usize];
            acc += self.vals[pn.off as usize];
        }
        let out_off = self.nodes[id.0 as usize].off as usize;
        self.vals[out_off] = acc / parts.len() as f64;
        Ok(id)
    }

    /// log-density of `sample` under N(mean, diag exp(log_std)^2), summed
    /// over dimensions. Scalar output.
    pub fn gauss_log_pdf(&mut self, mean: ValueId, log_std: ValueId, sample: &[f64]) -> Result<ValueId> {
        let len = self.len_of(mean);
        if self.len_of(log_std) != len || sample.len() != len {
            return Err(Error::ShapeMismatch {
                op: "gauss_log_pdf",
                detail: format!(
                    "mean {}, log_std {}, sample {}",
                    len,
                    self.len_of(log_std),
                    sample.len()
                ),
            });
        }
        let aux_off = self.aux.len() as u32;
        self.aux.extend_from_slice(sample);
        let id = self.push(Kind::GaussLogPdf { mean, log_std, sample: aux_off }, 1);
        let (mn, sn) = (self.nodes[mean.0 as usize], self.nodes[log_std.0 as usize]);
        let mut acc = -0.5 * len as f64 * (2.0 * std::f64::consts::PI).ln();
        for i in 0..len {
            let ls = self.vals[sn.off as usize + i];
            let z = (sample[i] - self.vals[mn.off as usize + i]) * (-ls).exp();
            acc -= 0.5 * z * z + ls;
        }
        let out_off = self.nodes[id.0 as usize].off as usize;
        self.vals[out_off] = acc;
        Ok(id)
    }

    /// Elementwise clamp to [lo_i, hi_i]; the gradient is the identity
    /// strictly inside the bounds and zero outside.
    pub fn clip(&mut self, x: ValueId, lo: &[f64], hi: &[f64]) -> Result<ValueId> {
        let len = self.len_of(x);
        if lo.len() != len || hi.len() != len {
            return Err(Error::ShapeMismatch {
                op: "clip",
                detail: format!("bounds {}/{} for value {}", lo.len(), hi.len(), len),
            });
        }
        let aux_off = self.aux.len() as u32;
        self.aux.extend_from_slice(lo);
        self.aux.extend_from_slice(hi);
        let id = self.push(Kind::Clip { x, bounds: aux_off }, len);
        let xn = self.nodes[x.0 as usize];
        let out_off = self.nodes[id.0 as usize].off as usize;
        for i in 0..len {
            let v = self.vals[xn.off as usize + i];
            self.vals[out_off + i] = v.clamp(lo[i], hi[i]);
        }
        Ok(id)
    }

    pub fn clip_uniform(&mut self, x: ValueId, lo: f64, hi: f64) -> Result<ValueId> {
        let len = self.len_of(x);
        self.clip(x, &vec![lo; len], &vec![hi; len])
    }

    /// First non-finite node, if any, reported as (node index, op name).
    pub fn find_non_finite(&self) -> Option<(usize, &'static str)> {
        for (i, n) in self.nodes.iter().enumerate() {
            let vals = &self.vals[n.off as usize..(n.off + n.len) as usize];
            if !vals.iter().all(|v| v.is_finite()) {
                return Some((i, op_name(&n.kind)));
            }
        }
        None
    }

    /// Reverse pass: gradient of <cotangent, output> with respect to every
    /// parameter recorded on the tape. Parameters of `store` that the tape
    /// never touched get exact zeros.
    pub fn backward(&self, output: ValueId, cotangent: &[f64], store: &ParamStore) -> Result<GradStore> {
        if cotangent.len() != self.len_of(output) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!(
                    "cotangent has {} values, output has {}",
                    cotangent.len(),
                    self.len_of(output)
                ),
            });
        }
        let mut adj = vec![0.0f64; self.vals.len()];
        {
            let n = self.nodes[output.0 as usize];
            adj[n.off as usize..(n.off + n.len) as usize].copy_from_slice(cotangent);
        }

        for idx in (0..=output.0 as usize).rev() {
            let node = self.nodes[idx];
            let (off, len) = (node.off as usize, node.len as usize);
            // Skip nodes with no incoming adjoint.
            if adj[off..off + len].iter().all(|&a| a == 0.0) {
                continue;
            }
            match node.kind {
                Kind::Const | Kind::Param { .. } => {}
                Kind::Affine { w, x, b } => {
                    let (wn, xn, bn) = (
                        self.nodes[w.0 as usize],
                        self.nodes[x.0 as usize],
                        self.nodes[b.0 as usize],
                    );
                    let rows = len;
                    let cols = xn.len as usize;
                    for i in 0..rows {
                        let c = adj[off + i];
                        if c == 0.0 {
                            continue;
                        }
                        adj[bn.off as usize + i] += c;
                        let wrow = wn.off as usize + i * cols;
                        for j in 0..cols {
                            adj[wrow + j] += c * self.vals[xn.off as usize + j];
                        }
                    }
                    // dx_j = sum_i W_ij * c_i  (column walk, rows outer for cache)
                    for i in 0..rows {
                        let c = adj[off + i];
                        if c == 0.0 {
                            continue;
                        }
                        let wrow = wn.off as usize + i * cols;
                        for j in 0..cols {
                            adj[xn.off as usize + j] += self.vals[wrow + j] * c;
                        }
                    }
                }
                Kind::Tanh { x } => {
                    let xn = self.nodes[x.0 as usize];
                    for i in 0..len {
                        let y = self.vals[off + i];
                        adj[xn.off as usize + i] += adj[off + i] * (1.0 - y * y);
                    }
                }
                Kind::Exp { x } => {
                    let xn = self.nodes[x.0 as usize];
                    for i in 0..len {
                        adj[xn.off as usize + i] += adj[off + i] * self.vals[off + i];
                    }
                }
                Kind::Add { a, b } => {
                    let (an, bn) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for i in 0..len {
                        let c = adj[off + i];
                        adj[an.off as usize + i] += c;
                        adj[bn.off as usize + i] += c;
                    }
                }
                Kind::Mul { a, b } => {
                    let (an, bn) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for i in 0..len {
                        let c = adj[off + i];
                        adj[an.off as usize + i] += c * self.vals[bn.off as usize + i];
                        adj[bn.off as usize + i] += c * self.vals[an.off as usize + i];
                    }
                }
                Kind::Concat { first, count } => {
                    let mut cursor = off;
                    for k in 0..count {
                        let p = self.ids[(first + k) as usize];
                        let pn = self.nodes[p.0 as usize];
                        for i in 0..pn.len as usize {
                            adj[pn.off as usize + i] += adj[cursor + i];
                        }
                        cursor += pn.len as usize;
                    }
                }
                Kind::Slice { x, start } => {
                    let xn = self.nodes[x.0 as usize];
                    for i in 0..len {
                        adj[xn.off as usize + start as usize + i] += adj[off + i];
                    }
                }
                Kind::SquaredError { a, b } => {
                    let c = adj[off];
                    let (an, bn) = (self.nodes[a.0 as usize], self.nodes[b.0 as usize]);
                    for i in 0..an.len as usize {
                        let d = self.vals[an.off as usize + i] - self.vals[bn.off as usize + i];
                        adj[an.off as usize + i] += c * 2.0 * d;
                        adj[bn.off as usize + i] -= c * 2.0 * d;
                    }
                }
                Kind::Mean { first, count } => {
                    let c = adj[off] / count as f64;
                    for k in 0..count {
                        let p = self.ids[(first + k) as usize];
                        let pn = self.nodes[p.0 as usize];
                        adj[pn.off as usize] += c;
                    }
                }
                Kind::GaussLogPdf { mean, log_std, sample } => {
                    let c = adj[off];
                    let (mn, sn) = (self.nodes[mean.0 as usize], self.nodes[log_std.0 as usize]);
                    for i in 0..mn.len as usize {
                        let ls = self.vals[sn.off as usize + i];
                        let inv_sigma = (-ls).exp();
                        let z = (self.aux[sample as usize + i] - self.vals[mn.off as usize + i]) * inv_sigma;
                        adj[mn.off as usize + i] += c * z * inv_sigma;
                        adj[sn.off as usize + i] += c * (z * z - 1.0);
                    }
                }
                Kind::Clip { x, bounds } => {
                    let xn = self.nodes[x.0 as usize];
                    let lo = bounds as usize;
                    let hi = lo + len;
                    for i in 0..len {
                        let v = self.vals[xn.off as usize + i];
                        if v >= self.aux[lo + i] && v <= self.aux[hi + i] {
                            adj[xn.off as usize + i] += adj[off + i];
                        }
                    }
                }
            }
        }

        let mut grads = GradStore::zeros_like(store);
        for n in &self.nodes {
            if let Kind::Param { entry } = n.kind {
                grads
                    .grad_mut(entry as usize)
                    .copy_from_slice(&adj[n.off as usize..(n.off + n.len) as usize]);
            }
        }
        Ok(grads)
    }
}

fn op_name(kind: &Kind) -> &'static str {
    match kind {
        Kind::Const => "const",
        Kind::Param { .. } => "param",
        Kind::Affine { .. } => "affine",
        Kind::Tanh { .. } => "tanh",
        Kind::Exp { .. } => "exp",
        Kind::Add { .. } => "add",
        Kind::Mul { .. } => "mul",
        Kind::Concat { .. } => "concat",
        Kind::Slice { .. } => "slice",
        Kind::SquaredError { .. } => "squared_error",
        Kind::Mean { .. } => "mean",
        Kind::GaussLogPdf { .. } => "gauss_log_pdf",
        Kind::Clip { .. } => "clip",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::store::Shape;

    fn store_1d(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Shape::Vector(1), vec![v]).unwrap();
        s
    }

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let store = store_1d("x", 3.0);
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.scalar_value(y), 9.0);
        let g = t.backward(y, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("x").unwrap(), &[6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let store = store_1d("x", 0.0);
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        let y = t.tanh(x);
        let g = t.backward(y, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("x").unwrap(), &[1.0]);
    }

    #[test]
    fn affine_forward_and_gradient() {
        // y = a*x + b with a=2, b=1, x=3 -> y = 7
        let mut store = ParamStore::new();
        store.insert("a", Shape::Matrix(1, 1), vec![2.0]).unwrap();
        store.insert("b", Shape::Vector(1), vec![1.0]).unwrap();
        let mut t = Tape::new(&store);
        let a = t.param(&store, "a").unwrap();
        let b = t.param(&store, "b").unwrap();
        let x = t.constant(&[3.0]);
        let y = t.affine(a, x, b).unwrap();
        assert_eq!(t.scalar_value(y), 7.0);
        let g = t.backward(y, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("a").unwrap(), &[3.0]);
        assert_eq!(g.by_name("b").unwrap(), &[1.0]);
    }

    #[test]
    fn zero_weight_tanh_is_zero() {
        // y = tanh(0 * x) = 0 for any x
        let mut store = ParamStore::new();
        store.insert("w", Shape::Matrix(1, 1), vec![0.0]).unwrap();
        store.insert("b", Shape::Vector(1), vec![0.0]).unwrap();
        let mut t = Tape::new(&store);
        let w = t.param(&store, "w").unwrap();
        let b = t.param(&store, "b").unwrap();
        let x = t.constant(&[123.456]);
        let z = t.affine(w, x, b).unwrap();
        let y = t.tanh(z);
        assert_eq!(t.scalar_value(y), 0.0);
    }

    #[test]
    fn unused_param_gets_exact_zeros() {
        let mut store = ParamStore::new();
        store.insert("x", Shape::Vector(1), vec![3.0]).unwrap();
        store.insert("unused", Shape::Matrix(2, 2), vec![1.0; 4]).unwrap();
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("unused").unwrap(), &[0.0; 4]);
    }

    #[test]
    fn clip_kills_gradient_outside_bounds() {
        let store = store_1d("x", 2.0);
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        let y = t.clip_uniform(x, -1.0, 1.0).unwrap();
        assert_eq!(t.scalar_value(y), 1.0);
        let g = t.backward(y, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("x").unwrap(), &[0.0]);
    }

    #[test]
    fn gauss_log_pdf_at_mean() {
        // log N(mu | mu, sigma) = -1/2 * (log(2 pi) + 2 log sigma) per dim
        let mut store = ParamStore::new();
        store.insert("mu", Shape::Vector(2), vec![0.3, -0.7]).unwrap();
        store.insert("ls", Shape::Vector(2), vec![-0.5, -0.5]).unwrap();
        let mut t = Tape::new(&store);
        let mu = t.param(&store, "mu").unwrap();
        let ls = t.param(&store, "ls").unwrap();
        let lp = t.gauss_log_pdf(mu, ls, &[0.3, -0.7]).unwrap();
        let expected = -0.5 * 2.0 * (2.0 * std::f64::consts::PI).ln() - 2.0 * (-0.5);
        assert!((t.scalar_value(lp) - expected).abs() < 1e-12);
        let g = t.backward(lp, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("mu").unwrap(), &[0.0, 0.0]);
        // d/d log_std of (z^2 - 1) at z=0 is -1 per dim.
        assert_eq!(g.by_name("ls").unwrap(), &[-1.0, -1.0]);
    }

    #[test]
    fn concat_slice_roundtrip_gradients() {
        let mut store = ParamStore::new();
        store.insert("a", Shape::Vector(2), vec![1.0, 2.0]).unwrap();
        store.insert("b", Shape::Vector(3), vec![3.0, 4.0, 5.0]).unwrap();
        let mut t = Tape::new(&store);
        let a = t.param(&store, "a").unwrap();
        let b = t.param(&store, "b").unwrap();
        let c = t.concat(&[a, b]);
        let s = t.slice(c, 1, 3).unwrap(); // [2, 3, 4]
        assert_eq!(t.value(s), &[2.0, 3.0, 4.0]);
        let g = t.backward(s, &[1.0, 10.0, 100.0], &store).unwrap();
        assert_eq!(g.by_name("a").unwrap(), &[0.0, 1.0]);
        assert_eq!(g.by_name("b").unwrap(), &[10.0, 100.0, 0.0]);
    }

    #[test]
    fn mean_distributes_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", Shape::Vector(1), vec![2.0]).unwrap();
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        let sq = t.mul(x, x).unwrap();
        let c = t.scalar(10.0);
        let m = t.mean(&[sq, c]).unwrap();
        assert_eq!(t.scalar_value(m), 7.0);
        let g = t.backward(m, &[1.0], &store).unwrap();
        assert_eq!(g.by_name("x").unwrap(), &[2.0]); // 2x / 2
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let store = store_1d("x", 1.5);
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y, &[0.0], &store).unwrap();
        assert_eq!(g.by_name("x").unwrap(), &[0.0]);
    }

    #[test]
    fn cotangent_shape_mismatch_errors() {
        let store = store_1d("x", 1.5);
        let mut t = Tape::new(&store);
        let x = t.param(&store, "x").unwrap();
        assert!(t.backward(x, &[1.0, 2.0], &store).is_err());
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut store = ParamStore::new();
        store.insert("w", Shape::Matrix(3, 2), vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        store.insert("b", Shape::Vector(3), vec![0.01, 0.02, 0.03]).unwrap();
        let run = |store: &ParamStore| -> (Vec<f64>, Vec<f64>) {
            let mut t = Tape::new(store);
            let w = t.param(store, "w").unwrap();
            let b = t.param(store, "b").unwrap();
            let x = t.constant(&[0.7, -1.3]);
            let h = t.affine(w, x, b).unwrap();
            let y = t.tanh(h);
            let out = t.value(y).to_vec();
            let g = t.backward(y, &[1.0, 1.0, 1.0], store).unwrap();
            (out, g.by_name("w").unwrap().to_vec())
        };
        let (o1, g1) = run(&store);
        let (o2, g2) = run(&store);
        assert_eq!(o1, o2);
        assert_eq!(g1, g2);
    }
}
