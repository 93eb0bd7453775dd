use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Sqrt,
    Square,
    Neg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Sum(Var),
    Dot(Var, Var),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Arc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward computation.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and a single reverse sweep visits each node once. Methods take
/// `&self` so calls can be nested freely.
#[derive(Debug)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
    record_grad: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow, floored at the smallest normal `f64` so
/// the result stays strictly positive.
pub(crate) fn softplus(x: f64) -> f64 {
    let y = if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(f64::MIN_POSITIVE)
}

fn apply_unary(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sqrt => x.sqrt(),
        Unary::Square => x * x,
        Unary::Neg => -x,
    }
}

/// Derivative of a unary op expressed through its input `x` and output `y`.
fn unary_grad(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Sqrt => 0.5 / y,
        Unary::Square => 2.0 * x,
        Unary::Neg => -1.0,
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            record_grad: true,
        }
    }

    /// A tape that never tracks gradients; used for inference.
    pub fn no_grad() -> Self {
        Self {
            record_grad: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.record_grad && inputs.iter().any(|v| nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            shape,
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn leaf(&self, shape: Vec<usize>, value: Arc<Vec<f64>>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.record_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Records a constant (no gradient).
    pub fn constant(&self, tensor: &Tensor) -> Var {
        self.leaf(tensor.shape().to_vec(), tensor.shared_values(), false)
    }

    /// Records a differentiable input that is not owned by a [`ParamStore`].
    pub fn variable(&self, tensor: &Tensor) -> Var {
        self.leaf(tensor.shape().to_vec(), tensor.shared_values(), true)
    }

    pub fn vector(&self, values: Vec<f64>) -> Var {
        self.leaf(vec![values.len()], Arc::new(values), false)
    }

    pub fn zeros(&self, len: usize) -> Var {
        self.vector(vec![0.0; len])
    }

    /// Pulls a parameter onto the tape. Repeated calls return the same leaf,
    /// so gradients from every use accumulate in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.leaf(t.shape().to_vec(), t.shared_values(), true);
        self.params.borrow_mut().insert(id, v);
        v
    }

    /// Same value, cut out of the gradient graph.
    pub fn detach(&self, v: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            (nodes[v.0].shape.clone(), Arc::clone(&nodes[v.0].value))
        };
        self.leaf(shape, value, false)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.to_vec()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn values(&self, v: Var) -> Arc<Vec<f64>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.values(a), self.values(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &bv[p * n..(p + 1) * n];
                for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Matrix `[m, k]` times vector `[k]`.
    pub fn matvec(&self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::Dimension {
                op: "matvec",
                left: sw,
                right: sx,
            });
        }
        let (m, k) = (sw[0], sw[1]);
        let (wv, xv) = (self.values(w), self.values(x));
        let out = (0..m)
            .map(|i| {
                wv[i * k..(i + 1) * k]
                    .iter()
                    .zip(xv.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(vec![m], out, Op::MatVec(w, x), &[w, x]))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op: name,
                left: sa,
                right: sb,
            });
        }
        let (av, bv) = (self.values(a), self.values(b));
        let out = av.iter().zip(bv.iter()).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(sa, out, op, &[a, b]))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.values(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a), out, Op::Scale(a, c), &[a])
    }

    /// Adds a constant to every entry.
    pub fn offset(&self, a: Var, c: f64) -> Var {
        let out = self.values(a).iter().map(|x| x + c).collect();
        self.push(self.shape(a), out, Op::Offset(a), &[a])
    }

    fn unary(&self, a: Var, kind: Unary) -> Var {
        let out = self
            .values(a)
            .iter()
            .map(|&x| apply_unary(kind, x))
            .collect();
        self.push(self.shape(a), out, Op::Unary(a, kind), &[a])
    }

    pub fn activation(&self, kind: Activation, x: Var) -> Var {
        match kind {
            Activation::Tanh => self.tanh(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Softplus => self.softplus(x),
        }
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }

    /// Concatenates rank-1 values.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return Err(Error::Dimension {
                    op: "concat",
                    left: s,
                    right: vec![],
                });
            }
            out.extend_from_slice(&self.values(p));
        }
        if out.is_empty() {
            return Err(Error::contract("concat of nothing"));
        }
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::Dimension {
                op: "slice",
                left: s,
                right: vec![start, len],
            });
        }
        let out = self.values(a)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice(a, start), &[a]))
    }

    /// Row `r` of a matrix, as a vector. Used for embedding lookup.
    pub fn row(&self, m: Var, r: usize) -> Result<Var> {
        let s = self.shape(m);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "row",
                left: s,
                right: vec![r],
            });
        }
        if r >= s[0] {
            return Err(Error::Index {
                what: "row",
                index: r,
                bound: s[0],
            });
        }
        let c = s[1];
        let out = self.values(m)[r * c..(r + 1) * c].to_vec();
        Ok(self.push(vec![c], out, Op::Row(m, r), &[m]))
    }

    pub fn sum(&self, a: Var) -> Var {
        let total = self.values(a).iter().sum();
        self.push(vec![1], vec![total], Op::Sum(a), &[a])
    }

    /// Sum of several scalars (or same-shaped values).
    pub fn add_all(&self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::contract("add_all of nothing"))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sa != sb {
            return Err(Error::Dimension {
                op: "dot",
                left: sa,
                right: sb,
            });
        }
        let d = self
            .values(a)
            .iter()
            .zip(self.values(b).iter())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(vec![1], vec![d], Op::Dot(a, b), &[a, b]))
    }

    /// `-log softmax(logits)[target]`, computed with max subtraction.
    pub fn softmax_xent(&self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(Error::Dimension {
                op: "softmax_xent",
                left: s,
                right: vec![],
            });
        }
        if target >= s[0] {
            return Err(Error::Index {
                what: "target token",
                index: target,
                bound: s[0],
            });
        }
        let logp = log_softmax(&self.values(logits));
        let loss = -logp[target];
        let probs = logp.iter().map(|l| l.exp()).collect();
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar. The tape itself is left untouched, so
    /// the same tape can be differentiated again from another root.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            propagate(&nodes, &mut grads, node, &g);
            grads[i] = Some(g);
        }

        let params = self.params.borrow().iter().map(|(&p, &v)| (p, v)).collect();
        Ok(Gradients { grads, params })
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                let bv = val(*b);
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] += (0..n).map(|j| g[i * n + j] * bv[p * n + j]).sum::<f64>();
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                let av = val(*a);
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += x * g[i * n + j];
                        }
                    }
                }
            }
        }
        Op::MatVec(w, x) => {
            let k = nodes[w.0].shape[1];
            if let Some(gw) = slot(nodes, grads, *w) {
                let xv = val(*x);
                for (i, gi) in g.iter().enumerate() {
                    if *gi == 0.0 {
                        continue;
                    }
                    for (o, xj) in gw[i * k..(i + 1) * k].iter_mut().zip(xv.iter()) {
                        *o += gi * xj;
                    }
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let wv = val(*w);
                for (i, gi) in g.iter().enumerate() {
                    for (o, wij) in gx.iter_mut().zip(&wv[i * k..(i + 1) * k]) {
                        *o += gi * wij;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = slot(nodes, grads, *v) {
                    gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (Arc::clone(val(*a)), Arc::clone(val(*b)));
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((o, x), y) in ga.iter_mut().zip(g).zip(bv.iter()) {
                    *o += x * y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for ((o, x), y) in gb.iter_mut().zip(g).zip(av.iter()) {
                    *o += x * y;
                }
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (Arc::clone(val(*a)), Arc::clone(val(*b)));
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((o, x), y) in ga.iter_mut().zip(g).zip(bv.iter()) {
                    *o += x / y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for (i, o) in gb.iter_mut().enumerate() {
                    *o -= g[i] * av[i] / (bv[i] * bv[i]);
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += c * x);
            }
        }
        Op::Offset(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }
        }
        Op::Unary(a, kind) => {
            let xv = Arc::clone(val(*a));
            let yv = &node.value;
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..ga.len() {
                    ga[i] += g[i] * unary_grad(*kind, xv[i], yv[i]);
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for p in parts {
                let n = nodes[p.0].value.len();
                if let Some(gp) = slot(nodes, grads, *p) {
                    gp.iter_mut().zip(&g[off..off + n]).for_each(|(o, x)| *o += x);
                }
                off += n;
            }
        }
        Op::Slice(a, start) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, x)| *o += x);
            }
        }
        Op::Row(m, r) => {
            let c = g.len();
            if let Some(gm) = slot(nodes, grads, *m) {
                gm[r * c..(r + 1) * c]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, x)| *o += x);
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Dot(a, b) => {
            let (av, bv) = (Arc::clone(val(*a)), Arc::clone(val(*b)));
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(bv.iter()).for_each(|(o, y)| *o += g[0] * y);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gb.iter_mut().zip(av.iter()).for_each(|(o, x)| *o += g[0] * x);
            }
        }
        Op::SoftmaxXent {
            logits,
            target,
            probs,
        } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (i, (o, p)) in gl.iter_mut().zip(probs).enumerate() {
                    let onehot = if i == *target { 1.0 } else { 0.0 };
                    *o += g[0] * (p - onehot);
                }
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when `v` does not influence the
    /// loss or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
}
