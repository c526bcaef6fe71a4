//! Reverse-mode differentiation over a tape of vector-valued nodes.
//!
//! Every node stores its value in a shared arena. [`Graph::vjp`] walks the
//! tape backward and *records* each cotangent as ordinary nodes, so the
//! result of one backward pass is itself differentiable. Taking the
//! gradient of a network output with respect to its input and then the
//! gradient of a loss built from that input-gradient with respect to the
//! weights is therefore just two calls to [`Graph::grad`].
//!
//! Matrices are stored row-major as flat nodes; the shape travels with the
//! op that consumes them.

use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// `M x` with `M` of shape `rows x cols`.
    MatVec { m: Var, x: Var, rows: u32, cols: u32 },
    /// `M^T y` with `M` of shape `rows x cols`.
    MatTVec { m: Var, y: Var, rows: u32, cols: u32 },
    /// `a b^T`, flattened row-major.
    Outer { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`.
    Affine { x: Var, scale: f64 },
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    /// Repeat a length-1 node.
    Broadcast(Var),
    Slice { x: Var, start: u32 },
    /// Embed into zeros at `start`.
    Pad { x: Var, start: u32 },
    Concat(Var, Var),
}

impl Op {
    #[inline]
    fn for_each_input(&self, mut f: impl FnMut(Var)) {
        match *self {
            Op::Leaf => {}
            Op::MatVec { m, x, .. } => {
                f(m);
                f(x);
            }
            Op::MatTVec { m, y, .. } => {
                f(m);
                f(y);
            }
            Op::Outer { a, b } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => {
                f(a);
                f(b);
            }
            Op::Affine { x, .. }
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Sum(x)
            | Op::Broadcast(x)
            | Op::Slice { x, .. }
            | Op::Pad { x, .. } => f(x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    offset: usize,
    len: usize,
}

/// A recording of vector computations.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    data: Vec<f64>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop all nodes but keep the allocations for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.data.clear();
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.index()];
        &self.data[n.offset..n.offset + n.len]
    }

    #[inline]
    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.index()].len
    }

    /// Value of a length-1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar_value on node of length {}", val.len());
        val[0]
    }

    #[inline]
    fn span(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.index()];
        (n.offset, n.len)
    }

    /// Reserve a zeroed node. Returns its handle and the arena split point:
    /// every earlier node lives strictly below `offset`.
    #[inline]
    fn alloc(&mut self, op: Op, len: usize, fill: f64) -> (Var, usize) {
        let offset = self.data.len();
        self.data.resize(offset + len, fill);
        let idx = self.nodes.len();
        self.nodes.push(Node { op, offset, len });
        (Var(idx as u32), offset)
    }

    pub fn leaf(&mut self, values: &[f64]) -> Var {
        let offset = self.data.len();
        self.data.extend_from_slice(values);
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            offset,
            len: values.len(),
        });
        Var(idx as u32)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(&[v])
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.alloc(Op::Leaf, len, 0.0).0
    }

    pub fn ones(&mut self, len: usize) -> Var {
        self.alloc(Op::Leaf, len, 1.0).0
    }

    /// `M x` where `m` holds a `rows x cols` matrix.
    pub fn matvec(&mut self, m: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (mo, ml) = self.span(m);
        let (xo, xl) = self.span(x);
        assert!(ml == rows * cols && xl == cols, "matvec shape: m {ml} ({rows}x{cols}), x {xl}");
        let op = Op::MatVec {
            m,
            x,
            rows: rows as u32,
            cols: cols as u32,
        };
        let (v, off) = self.alloc(op, rows, 0.0);
        let (src, dst) = self.data.split_at_mut(off);
        let xs = &src[xo..xo + cols];
        for (r, out) in dst.iter_mut().enumerate() {
            let row = &src[mo + r * cols..mo + (r + 1) * cols];
            *out = dot(row, xs);
        }
        v
    }

    /// `M^T y` where `m` holds a `rows x cols` matrix.
    pub fn mat_t_vec(&mut self, m: Var, y: Var, rows: usize, cols: usize) -> Var {
        let (mo, ml) = self.span(m);
        let (yo, yl) = self.span(y);
        assert!(ml == rows * cols && yl == rows, "mat_t_vec shape: m {ml} ({rows}x{cols}), y {yl}");
        let op = Op::MatTVec {
            m,
            y,
            rows: rows as u32,
            cols: cols as u32,
        };
        let (v, off) = self.alloc(op, cols, 0.0);
        let (src, dst) = self.data.split_at_mut(off);
        for r in 0..rows {
            let yr = src[yo + r];
            if yr == 0.0 {
                continue;
            }
            let row = &src[mo + r * cols..mo + (r + 1) * cols];
            for (o, w) in dst.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
        v
    }

    /// `a b^T` flattened row-major (`len(a) x len(b)`).
    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        let (v, off) = self.alloc(Op::Outer { a, b }, al * bl, 0.0);
        let (src, dst) = self.data.split_at_mut(off);
        let bs = &src[bo..bo + bl];
        for i in 0..al {
            let ai = src[ao + i];
            for (o, bj) in dst[i * bl..(i + 1) * bl].iter_mut().zip(bs) {
                *o = ai * bj;
            }
        }
        v
    }

    #[inline]
    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "elementwise op on lengths {al} and {bl}");
        let (v, off) = self.alloc(op, al, 0.0);
        let (src, dst) = self.data.split_at_mut(off);
        let (xa, xb) = (&src[ao..ao + al], &src[bo..bo + bl]);
        for ((o, x), y) in dst.iter_mut().zip(xa).zip(xb) {
            *o = f(*x, *y);
        }
        v
    }

    #[inline]
    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let (ao, al) = self.span(a);
        let (v, off) = self.alloc(op, al, 0.0);
        let (src, dst) = self.data.split_at_mut(off);
        for (o, x) in dst.iter_mut().zip(&src[ao..ao + al]) {
            *o = f(*x);
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        if shift == 0.0 {
            self.unary(Op::Affine { x, scale }, x, |v| scale * v)
        } else {
            self.unary(Op::Affine { x, scale }, x, |v| scale * v + shift)
        }
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid(x), x, sigmoid)
    }

    /// Sum of all components, a length-1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let (xo, xl) = self.span(x);
        let (v, off) = self.alloc(Op::Sum(x), 1, 0.0);
        let s: f64 = self.data[xo..xo + xl].iter().sum();
        self.data[off] = s;
        v
    }

    /// Repeat a length-1 node `len` times.
    pub fn broadcast(&mut self, x: Var, len: usize) -> Var {
        let (xo, xl) = self.span(x);
        assert_eq!(xl, 1, "broadcast of length-{xl} node");
        let val = self.data[xo];
        self.alloc(Op::Broadcast(x), len, val).0
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (xo, xl) = self.span(x);
        assert!(start + len <= xl, "slice {start}+{len} of length {xl}");
        let (v, off) = self.alloc(
            Op::Slice {
                x,
                start: start as u32,
            },
            len,
            0.0,
        );
        self.data.copy_within(xo + start..xo + start + len, off);
        v
    }

    /// Place `x` at `start` inside a zero vector of length `total`.
    pub fn pad(&mut self, x: Var, start: usize, total: usize) -> Var {
        let (xo, xl) = self.span(x);
        assert!(start + xl <= total, "pad {start}+{xl} into length {total}");
        let (v, off) = self.alloc(
            Op::Pad {
                x,
                start: start as u32,
            },
            total,
            0.0,
        );
        self.data.copy_within(xo..xo + xl, off + start);
        v
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        let (v, off) = self.alloc(Op::Concat(a, b), al + bl, 0.0);
        self.data.copy_within(ao..ao + al, off);
        self.data.copy_within(bo..bo + bl, off + al);
        v
    }

    /// `sum(a * b)`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    /// `sum(x * x)`.
    pub fn sq_norm(&mut self, x: Var) -> Var {
        self.dot(x, x)
    }

    /// Gradient of a length-1 node with respect to each of `wrt`.
    ///
    /// The returned nodes are recorded on the graph and can be
    /// differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let len = self.len_of(output);
        if len != 1 {
            return Err(Error::ShapeMismatch(format!(
                "gradient requires a scalar output, got length {len}"
            )));
        }
        let seed = self.ones(1);
        self.vjp(output, seed, wrt)
    }

    /// Vector-Jacobian product: cotangent `seed` on `output` pulled back to
    /// each of `wrt`. Nodes of `wrt` that `output` does not depend on get a
    /// zero cotangent.
    pub fn vjp(&mut self, output: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let out = output.index();
        if out >= self.nodes.len() {
            return Err(Error::ShapeMismatch(format!("node {out} is not part of this graph")));
        }
        if self.len_of(seed) != self.len_of(output) {
            return Err(Error::ShapeMismatch(format!(
                "seed of length {} for output of length {}",
                self.len_of(seed),
                self.len_of(output)
            )));
        }
        let lo = match wrt.iter().map(|w| w.index()).filter(|&w| w <= out).min() {
            Some(lo) => lo,
            None => return Ok(wrt.iter().map(|w| self.zeros(self.len_of(*w))).collect()),
        };
        let n = out - lo + 1;

        // Nodes in [lo, out] that depend on some member of `wrt`.
        let mut depends = vec![false; n];
        for w in wrt {
            if w.index() <= out {
                depends[w.index() - lo] = true;
            }
        }
        for i in lo..=out {
            if depends[i - lo] {
                continue;
            }
            let mut hit = false;
            let mut cycle = false;
            self.nodes[i].op.for_each_input(|inp| {
                let j = inp.index();
                if j >= i {
                    cycle = true;
                } else if j >= lo && depends[j - lo] {
                    hit = true;
                }
            });
            if cycle {
                return Err(Error::GraphCycle(i));
            }
            depends[i - lo] = hit;
        }

        let mut cot: Vec<Option<Var>> = vec![None; n];
        cot[n - 1] = Some(seed);
        for i in (lo..=out).rev() {
            if !depends[i - lo] {
                continue;
            }
            let Some(g) = cot[i - lo] else { continue };
            let node = self.nodes[i];
            let wants = |v: Var| v.index() >= lo && depends[v.index() - lo];
            match node.op {
                Op::Leaf => {}
                Op::MatVec { m, x, rows, cols } => {
                    if wants(m) {
                        let c = self.outer(g, x);
                        self.accumulate(&mut cot, lo, m, c);
                    }
                    if wants(x) {
                        let c = self.mat_t_vec(m, g, rows as usize, cols as usize);
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::MatTVec { m, y, rows, cols } => {
                    if wants(m) {
                        let c = self.outer(y, g);
                        self.accumulate(&mut cot, lo, m, c);
                    }
                    if wants(y) {
                        let c = self.matvec(m, g, rows as usize, cols as usize);
                        self.accumulate(&mut cot, lo, y, c);
                    }
                }
                Op::Outer { a, b } => {
                    let (rows, cols) = (self.len_of(a), self.len_of(b));
                    if wants(a) {
                        let c = self.matvec(g, b, rows, cols);
                        self.accumulate(&mut cot, lo, a, c);
                    }
                    if wants(b) {
                        let c = self.mat_t_vec(g, a, rows, cols);
                        self.accumulate(&mut cot, lo, b, c);
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        self.accumulate(&mut cot, lo, a, g);
                    }
                    if wants(b) {
                        self.accumulate(&mut cot, lo, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        self.accumulate(&mut cot, lo, a, g);
                    }
                    if wants(b) {
                        let c = self.neg(g);
                        self.accumulate(&mut cot, lo, b, c);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let c = self.mul(g, b);
                        self.accumulate(&mut cot, lo, a, c);
                    }
                    if wants(b) {
                        let c = self.mul(g, a);
                        self.accumulate(&mut cot, lo, b, c);
                    }
                }
                Op::Affine { x, scale, .. } => {
                    if wants(x) {
                        let c = self.scale(g, scale);
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Tanh(x) => {
                    if wants(x) {
                        let y = Var(i as u32);
                        let y2 = self.mul(y, y);
                        let d = self.affine(y2, -1.0, 1.0);
                        let c = self.mul(g, d);
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Sigmoid(x) => {
                    if wants(x) {
                        let s = Var(i as u32);
                        let one_minus = self.affine(s, -1.0, 1.0);
                        let d = self.mul(s, one_minus);
                        let c = self.mul(g, d);
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Sum(x) => {
                    if wants(x) {
                        let c = self.broadcast(g, self.len_of(x));
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Broadcast(x) => {
                    if wants(x) {
                        let c = self.sum(g);
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Slice { x, start } => {
                    if wants(x) {
                        let c = self.pad(g, start as usize, self.len_of(x));
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Pad { x, start } => {
                    if wants(x) {
                        let c = self.slice(g, start as usize, self.len_of(x));
                        self.accumulate(&mut cot, lo, x, c);
                    }
                }
                Op::Concat(a, b) => {
                    let al = self.len_of(a);
                    if wants(a) {
                        let c = self.slice(g, 0, al);
                        self.accumulate(&mut cot, lo, a, c);
                    }
                    if wants(b) {
                        let c = self.slice(g, al, self.len_of(b));
                        self.accumulate(&mut cot, lo, b, c);
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                let w_idx = w.index();
                match (w_idx >= lo && w_idx <= out).then(|| cot[w_idx - lo]).flatten() {
                    Some(c) => c,
                    None => self.zeros(self.len_of(*w)),
                }
            })
            .collect())
    }

    #[inline]
    fn accumulate(&mut self, cot: &mut [Option<Var>], lo: usize, target: Var, c: Var) {
        let slot = &mut cot[target.index() - lo];
        *slot = Some(match *slot {
            Some(prev) => self.add(prev, c),
            None => c,
        });
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
