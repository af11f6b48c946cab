//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every primitive with its forward value. [`Tape::backward`]
//! replays the records in reverse. Constants never receive adjoints, which is
//! how non-spiking sentinel outputs end up with zero gradient.
//!
//! Kink conventions: `clip01` passes the gradient at the boundaries (interior
//! side), `relu` and `abs` use zero at the origin, and `min_select` routes the
//! gradient to the lowest index among ties.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::num;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Ln1p(Var),
    Abs(Var),
    Relu(Var),
    Clip01(Var),
    Exprel(Var),
    Log1pRel(Var),
    MatMul(Var, Var),
    Sum(Var),
    SumRows(Var),
    CumsumRows(Var),
    SuffixExclRows(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    Reshape(Var),
    MinSelect(Var, usize),
    LinRecur(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Ln1p(..) => "ln1p",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Clip01(..) => "clip01",
            Op::Exprel(..) => "exprel",
            Op::Log1pRel(..) => "log1p_rel",
            Op::MatMul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::CumsumRows(..) => "cumsum_rows",
            Op::SuffixExclRows(..) => "suffix_excl_rows",
            Op::Gather(..) => "gather",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::MinSelect(..) => "min_select",
            Op::LinRecur(..) => "lin_recur",
        }
    }

    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Const => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) | Op::LinRecur(a, b) => {
                vec![*a, *b]
            }
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Neg(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Ln1p(x)
            | Op::Abs(x)
            | Op::Relu(x)
            | Op::Clip01(x)
            | Op::Exprel(x)
            | Op::Log1pRel(x)
            | Op::Sum(x)
            | Op::SumRows(x)
            | Op::CumsumRows(x)
            | Op::SuffixExclRows(x)
            | Op::Gather(x, _)
            | Op::Reshape(x)
            | Op::MinSelect(x, _) => vec![*x],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node after a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Vec<f64>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when no path reaches it.
    pub fn wrt(&self, v: Var) -> Cow<'_, [f64]> {
        let a = &self.adj[v.0];
        if a.is_empty() {
            Cow::Owned(vec![0.0; self.lens[v.0]])
        } else {
            Cow::Borrowed(a)
        }
    }
}

#[inline]
fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    if a == b || b == (1, 1) {
        Some(a)
    } else if a == (1, 1) {
        Some(b)
    } else {
        None
    }
}

#[inline]
fn at(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Const => false,
            _ => op.operands().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { op, value, rows, cols, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(Op::Leaf, value, rows, cols)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(Op::Const, value, rows, cols)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (rows, cols) =
            broadcast_shape(sa, sb).ok_or_else(|| Error::Shape(format!("{} of {:?} and {:?}", op.name(), sa, sb)))?;
        let (va, vb) = (self.value(a), self.value(b));
        let value: Vec<f64> = (0..rows * cols).map(|i| f(at(va, i), at(vb, i))).collect();
        Ok(self.push(op, value, rows, cols))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (rows, cols) = self.shape(x);
        let value: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(op, value, rows, cols)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(i) = self.value(b).iter().position(|&d| d == 0.0) {
            return Err(Error::TapeDomain {
                node: self.nodes.len(),
                op: "div",
                detail: format!("division by zero at element {i}"),
            });
        }
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::MulScalar(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(i) = self.value(x).iter().position(|&v| !(v > 0.0)) {
            return Err(Error::TapeDomain {
                node: self.nodes.len(),
                op: "log",
                detail: format!("non-positive argument {} at element {i}", self.value(x)[i]),
            });
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    /// `ln(1 + x)`.
    pub fn ln1p(&mut self, x: Var) -> Result<Var> {
        if let Some(i) = self.value(x).iter().position(|&v| !(v > -1.0)) {
            return Err(Error::TapeDomain {
                node: self.nodes.len(),
                op: "ln1p",
                detail: format!("argument {} <= -1 at element {i}", self.value(x)[i]),
            });
        }
        Ok(self.unary(x, f64::ln_1p, Op::Ln1p(x)))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn clip01(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.clamp(0.0, 1.0), Op::Clip01(x))
    }

    /// `(1 - e^{-x}) / x`.
    pub fn exprel(&mut self, x: Var) -> Var {
        self.unary(x, num::exprel, Op::Exprel(x))
    }

    /// `ln(1 + y) / y`.
    pub fn log1p_rel(&mut self, x: Var) -> Var {
        self.unary(x, num::log1p_rel, Op::Log1pRel(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, m), (m2, p)) = (self.shape(a), self.shape(b));
        if m != m2 {
            return Err(Error::Shape(format!("matmul of {n}x{m} and {m2}x{p}")));
        }
        let value = num::matmul(self.value(a), self.value(b), n, m, p);
        Ok(self.push(Op::MatMul(a, b), value, n, p))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = 0.0;
        for &v in self.value(x) {
            acc += v;
        }
        self.push(Op::Sum(x), vec![acc], 1, 1)
    }

    /// Row sums as an `r x 1` node.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let vx = self.value(x);
        let value: Vec<f64> = (0..r)
            .map(|i| {
                let mut acc = 0.0;
                for &v in &vx[i * c..(i + 1) * c] {
                    acc += v;
                }
                acc
            })
            .collect();
        self.push(Op::SumRows(x), value, r, 1)
    }

    /// Inclusive running sum along each row.
    pub fn cumsum_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut value = self.value(x).to_vec();
        for i in 0..r {
            let mut acc = 0.0;
            for v in &mut value[i * c..(i + 1) * c] {
                acc += *v;
                *v = acc;
            }
        }
        self.push(Op::CumsumRows(x), value, r, c)
    }

    /// Exclusive suffix sum along each row: `y_k = sum_{q>k} x_q`.
    pub fn suffix_excl_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let vx = self.value(x);
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let mut acc = 0.0;
            for k in (0..c).rev() {
                value[i * c + k] = acc;
                acc += vx[i * c + k];
            }
        }
        self.push(Op::SuffixExclRows(x), value, r, c)
    }

    /// `out[o] = x[idx[o]]` over flat indices, reshaped to `rows x cols`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, rows: usize, cols: usize) -> Result<Var> {
        if idx.len() != rows * cols {
            return Err(Error::Shape(format!("gather of {} indices into {rows}x{cols}", idx.len())));
        }
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.len()) {
            return Err(Error::Shape(format!("gather index {bad} out of {}", vx.len())));
        }
        let value: Vec<f64> = idx.iter().map(|&i| vx[i]).collect();
        Ok(self.push(Op::Gather(x, idx), value, rows, cols))
    }

    /// Flat concatenation into a `1 x n` row.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut value = Vec::new();
        for &x in xs {
            value.extend_from_slice(self.value(x));
        }
        let n = value.len();
        self.push(Op::Concat(xs.to_vec()), value, 1, n)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).to_vec();
        if value.len() != rows * cols {
            return Err(Error::Shape(format!("reshape of {} entries to {rows}x{cols}", value.len())));
        }
        Ok(self.push(Op::Reshape(x), value, rows, cols))
    }

    /// Minimum over the entries flagged in `valid` (all when `None`).
    ///
    /// Returns the 1x1 node and the chosen flat index; ties go to the lowest index.
    pub fn min_select(&mut self, x: Var, valid: Option<&[bool]>) -> Option<(Var, usize)> {
        let vx = self.value(x);
        let mut best: Option<usize> = None;
        for (i, &v) in vx.iter().enumerate() {
            if valid.is_some_and(|m| !m[i]) {
                continue;
            }
            if best.is_none_or(|b| v < vx[b]) {
                best = Some(i);
            }
        }
        let i = best?;
        let value = vec![vx[i]];
        Some((self.push(Op::MinSelect(x, i), value, 1, 1), i))
    }

    /// Row-wise linear recurrence `y_0 = 0`, `y_{k+1} = a_k y_k + b_k`.
    ///
    /// The output has the same shape as `a`; the last column of `a` and `b` is unused.
    pub fn lin_recur(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (r, c) {
            return Err(Error::Shape(format!("lin_recur of {:?} and {:?}", (r, c), self.shape(b))));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let mut y = 0.0;
            for k in 0..c {
                value[i * c + k] = y;
                if k + 1 < c {
                    y = va[i * c + k] * y + vb[i * c + k];
                }
            }
        }
        Ok(self.push(Op::LinRecur(a, b), value, r, c))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        if self.nodes[seed.0].value.len() != 1 {
            return Err(Error::Shape("backward needs a scalar seed".into()));
        }
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        adj[seed.0] = vec![1.0];
        for id in (0..=seed.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || adj[id].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[id]);
            self.propagate(node, &g, &mut adj);
            adj[id] = g;
        }
        Ok(Gradients { adj, lens })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Vec<f64>]) {
        let acc = |v: Var, adj: &mut [Vec<f64>], f: &mut dyn FnMut(&mut [f64])| {
            if !self.wants(v) {
                return;
            }
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; self.nodes[v.0].value.len()];
            }
            f(slot);
        };
        // Adds `contrib(i)` into `x`, summing over broadcast positions when `x` is scalar.
        let reduce = |x: &mut [f64], n: usize, contrib: &dyn Fn(usize) -> f64| {
            if x.len() == 1 && n != 1 {
                let mut s = 0.0;
                for i in 0..n {
                    s += contrib(i);
                }
                x[0] += s;
            } else {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += contrib(i);
                }
            }
        };
        let n = g.len();
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                acc(*a, adj, &mut |x| reduce(x, n, &|i| g[i]));
                acc(*b, adj, &mut |x| reduce(x, n, &|i| g[i]));
            }
            Op::Sub(a, b) => {
                acc(*a, adj, &mut |x| reduce(x, n, &|i| g[i]));
                acc(*b, adj, &mut |x| reduce(x, n, &|i| -g[i]));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, adj, &mut |x| reduce(x, n, &|i| g[i] * at(vb, i)));
                acc(*b, adj, &mut |x| reduce(x, n, &|i| g[i] * at(va, i)));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, adj, &mut |x| reduce(x, n, &|i| g[i] / at(vb, i)));
                acc(*b, adj, &mut |x| {
                    reduce(x, n, &|i| {
                        let d = at(vb, i);
                        -g[i] * at(va, i) / (d * d)
                    })
                });
            }
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i])),
            Op::MulScalar(x, c) => acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i] * c)),
            Op::Neg(x) => acc(*x, adj, &mut |d| reduce(d, n, &|i| -g[i])),
            Op::Exp(x) => {
                let y = &node.value;
                acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i] * y[i]));
            }
            Op::Log(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i] / vx[i]));
            }
            Op::Ln1p(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i] / (1.0 + vx[i])));
            }
            Op::Abs(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| {
                    reduce(d, n, &|i| {
                        if vx[i] > 0.0 {
                            g[i]
                        } else if vx[i] < 0.0 {
                            -g[i]
                        } else {
                            0.0
                        }
                    })
                });
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| reduce(d, n, &|i| if vx[i] > 0.0 { g[i] } else { 0.0 }));
            }
            Op::Clip01(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| reduce(d, n, &|i| if (0.0..=1.0).contains(&vx[i]) { g[i] } else { 0.0 }));
            }
            Op::Exprel(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i] * num::exprel_deriv(vx[i])));
            }
            Op::Log1pRel(x) => {
                let vx = self.value(*x);
                acc(*x, adj, &mut |d| reduce(d, n, &|i| g[i] * num::log1p_rel_deriv(vx[i])));
            }
            Op::MatMul(a, b) => {
                let ((rn, m), (_, p)) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, adj, &mut |da| {
                    for i in 0..rn {
                        let grow = &g[i * p..(i + 1) * p];
                        for j in 0..m {
                            let brow = &vb[j * p..(j + 1) * p];
                            let mut s = 0.0;
                            for (gv, bv) in grow.iter().zip(brow) {
                                s += gv * bv;
                            }
                            da[i * m + j] += s;
                        }
                    }
                });
                acc(*b, adj, &mut |db| {
                    for i in 0..rn {
                        let grow = &g[i * p..(i + 1) * p];
                        for j in 0..m {
                            let aij = va[i * m + j];
                            if aij == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[j * p..(j + 1) * p].iter_mut().zip(grow) {
                                *d += aij * gv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, adj, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, adj, &mut |d| {
                    for i in 0..r {
                        for v in &mut d[i * c..(i + 1) * c] {
                            *v += g[i];
                        }
                    }
                });
            }
            Op::CumsumRows(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, adj, &mut |d| {
                    for i in 0..r {
                        let mut s = 0.0;
                        for k in (0..c).rev() {
                            s += g[i * c + k];
                            d[i * c + k] += s;
                        }
                    }
                });
            }
            Op::SuffixExclRows(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, adj, &mut |d| {
                    for i in 0..r {
                        let mut s = 0.0;
                        for k in 0..c {
                            d[i * c + k] += s;
                            s += g[i * c + k];
                        }
                    }
                });
            }
            Op::Gather(x, idx) => acc(*x, adj, &mut |d| {
                for (o, &i) in idx.iter().enumerate() {
                    d[i] += g[o];
                }
            }),
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.nodes[x.0].value.len();
                    acc(x, adj, &mut |d| {
                        for (k, v) in d.iter_mut().enumerate() {
                            *v += g[off + k];
                        }
                    });
                    off += len;
                }
            }
            Op::MinSelect(x, i) => acc(*x, adj, &mut |d| d[*i] += g[0]),
            Op::LinRecur(a, b) => {
                let (r, c) = self.shape(*a);
                let va = self.value(*a);
                let y = &node.value;
                // mu_k: total adjoint of y_k including its influence on later entries.
                let mut mu = vec![0.0; r * c];
                for i in 0..r {
                    let mut next = 0.0;
                    for k in (0..c).rev() {
                        let m = g[i * c + k] + if k + 1 < c { va[i * c + k] * next } else { 0.0 };
                        mu[i * c + k] = m;
                        next = m;
                    }
                }
                acc(*a, adj, &mut |d| {
                    for i in 0..r {
                        for k in 0..c.saturating_sub(1) {
                            d[i * c + k] += mu[i * c + k + 1] * y[i * c + k];
                        }
                    }
                });
                acc(*b, adj, &mut |d| {
                    for i in 0..r {
                        for k in 0..c.saturating_sub(1) {
                            d[i * c + k] += mu[i * c + k + 1];
                        }
                    }
                });
            }
        }
    }
}

/// Records `program` on a fresh tape with each input as a `1 x n` leaf.
pub fn forward_record<F>(program: F, inputs: &[Vec<f64>]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), 1, x.len())).collect();
    let out = program(&mut tape, &leaves)?;
    Ok((tape, leaves, out))
}

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input, element) with the largest relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Largest relative gap between the forward and backward second-order
    /// one-sided differences. Smooth functions give `O(h^2)`; a kink inside
    /// the stencil gives the size of the slope jump.
    pub max_asymmetry: f64,
}

/// Gradient magnitudes below this are compared in absolute terms.
pub const GRAD_CHECK_SCALE_FLOOR: f64 = 1e-6;

/// Five-point central-difference check of every input element with step `h`.
///
/// Relative error is `|a - n| / max(|a|, |n|, GRAD_CHECK_SCALE_FLOOR)`.
pub fn grad_check<F>(program: F, inputs: &[Vec<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, leaves, out) = forward_record(&program, inputs)?;
    let grads = tape.backward(out)?;
    let center = tape.scalar(out);
    let mut report =
        GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, worst: (0, 0), checked: 0, max_asymmetry: 0.0 };
    let mut work = inputs.to_vec();
    let mut eval_at = |a: usize, e: usize, x: f64| -> Result<f64> {
        let x0 = work[a][e];
        work[a][e] = x;
        let r = forward_record(&program, &work).map(|(t, _, o)| t.scalar(o));
        work[a][e] = x0;
        r
    };
    for (a, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).into_owned();
        for e in 0..inputs[a].len() {
            let x0 = inputs[a][e];
            let p1 = eval_at(a, e, x0 + h)?;
            let m1 = eval_at(a, e, x0 - h)?;
            let p2 = eval_at(a, e, x0 + 2.0 * h)?;
            let m2 = eval_at(a, e, x0 - 2.0 * h)?;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let fwd = (4.0 * p1 - 3.0 * center - p2) / (2.0 * h);
            let bwd = (3.0 * center - 4.0 * m1 + m2) / (2.0 * h);
            let asym = (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(GRAD_CHECK_SCALE_FLOOR);
            report.max_asymmetry = report.max_asymmetry.max(asym);
            let abs = (analytic[e] - numeric).abs();
            let rel = abs / analytic[e].abs().max(numeric.abs()).max(GRAD_CHECK_SCALE_FLOOR);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (a, e);
            }
        }
    }
    Ok(report)
}
