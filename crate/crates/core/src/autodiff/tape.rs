use std::cell::{OnceCell, RefCell};
use std::ops;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fixed linear map between flattened tensors, stored as triplets.
///
/// Used for the structural rearrangements (triangular packing, hat matrices)
/// that would otherwise take dozens of slice/concat nodes.
#[derive(Debug)]
pub struct SparseMap {
    in_shape: [usize; 2],
    out_shape: [usize; 2],
    entries: Vec<(usize, usize, f64)>,
    transposed: OnceCell<Rc<SparseMap>>,
}

impl SparseMap {
    /// `entries` are `(out_index, in_index, coefficient)` over flattened buffers.
    pub fn new(in_shape: [usize; 2], out_shape: [usize; 2], entries: Vec<(usize, usize, f64)>) -> Rc<Self> {
        let (n_in, n_out) = (in_shape[0] * in_shape[1], out_shape[0] * out_shape[1]);
        assert!(entries.iter().all(|&(o, i, _)| o < n_out && i < n_in), "sparse map entry out of range");
        Rc::new(Self { in_shape, out_shape, entries, transposed: OnceCell::new() })
    }

    pub fn in_shape(&self) -> [usize; 2] {
        self.in_shape
    }

    pub fn out_shape(&self) -> [usize; 2] {
        self.out_shape
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.len(), self.in_shape[0] * self.in_shape[1], "sparse map input size");
        let mut out = Tensor::zeros(self.out_shape);
        let (src, dst) = (x.data(), out.data_mut());
        for &(o, i, c) in &self.entries {
            dst[o] += c * src[i];
        }
        out
    }

    pub fn transpose(&self) -> Rc<SparseMap> {
        self.transposed
            .get_or_init(|| {
                let entries = self.entries.iter().map(|&(o, i, c)| (i, o, c)).collect();
                SparseMap::new(self.out_shape, self.in_shape, entries)
            })
            .clone()
    }
}

/// The algebra the backward rules are written in. Implemented for plain
/// values (first-order gradients) and for tape variables (gradients that are
/// themselves differentiable).
trait Alg: Clone {
    fn shape(&self) -> [usize; 2];
    fn add(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn matmul(&self, o: &Self) -> Self;
    fn transpose(&self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn offset(&self, c: f64) -> Self;
    fn reshape(&self, shape: [usize; 2]) -> Self;
    fn slice(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Self;
    fn pad(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Self;
    fn broadcast_to(&self, shape: [usize; 2]) -> Self;
    fn sum_to(&self, shape: [usize; 2]) -> Self;
    fn linear(&self, map: &Rc<SparseMap>) -> Self;
    fn sigmoid(&self) -> Self;
    fn recip(&self) -> Self;
    /// Heaviside step of the value, as a constant.
    fn step(&self) -> Self;
}

impl Alg for Rc<Tensor> {
    fn shape(&self) -> [usize; 2] {
        Tensor::shape(self)
    }
    fn add(&self, o: &Self) -> Self {
        Rc::new(Tensor::add(self, o).expect("shape"))
    }
    fn mul(&self, o: &Self) -> Self {
        Rc::new(Tensor::mul(self, o).expect("shape"))
    }
    fn matmul(&self, o: &Self) -> Self {
        Rc::new(Tensor::matmul(self, o).expect("shape"))
    }
    fn transpose(&self) -> Self {
        Rc::new(Tensor::transpose(self))
    }
    fn scale(&self, c: f64) -> Self {
        Rc::new(Tensor::scale(self, c))
    }
    fn offset(&self, c: f64) -> Self {
        Rc::new(self.map(|x| x + c))
    }
    fn reshape(&self, shape: [usize; 2]) -> Self {
        Rc::new(Tensor::reshape(self, shape).expect("shape"))
    }
    fn slice(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Self {
        Rc::new(Tensor::slice(self, r0, c0, shape).expect("shape"))
    }
    fn pad(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Self {
        Rc::new(Tensor::pad(self, r0, c0, shape).expect("shape"))
    }
    fn broadcast_to(&self, shape: [usize; 2]) -> Self {
        Rc::new(Tensor::broadcast_to(self, shape).expect("shape"))
    }
    fn sum_to(&self, shape: [usize; 2]) -> Self {
        Rc::new(Tensor::sum_to(self, shape).expect("shape"))
    }
    fn linear(&self, map: &Rc<SparseMap>) -> Self {
        Rc::new(map.apply(self))
    }
    fn sigmoid(&self) -> Self {
        Rc::new(self.map(sigmoid))
    }
    fn recip(&self) -> Self {
        Rc::new(self.map(|x| 1.0 / x))
    }
    fn step(&self) -> Self {
        Rc::new(self.map(heaviside))
    }
}

impl<'t> Alg for Var<'t> {
    fn shape(&self) -> [usize; 2] {
        Var::shape(self)
    }
    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn matmul(&self, o: &Self) -> Self {
        Var::matmul(*self, *o)
    }
    fn transpose(&self) -> Self {
        self.t()
    }
    fn scale(&self, c: f64) -> Self {
        Var::scale(*self, c)
    }
    fn offset(&self, c: f64) -> Self {
        Var::offset(*self, c)
    }
    fn reshape(&self, shape: [usize; 2]) -> Self {
        Var::reshape(*self, shape)
    }
    fn slice(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Self {
        Var::slice(*self, r0, c0, shape)
    }
    fn pad(&self, r0: usize, c0: usize, shape: [usize; 2]) -> Self {
        Var::pad(*self, r0, c0, shape)
    }
    fn broadcast_to(&self, shape: [usize; 2]) -> Self {
        Var::broadcast_to(*self, shape)
    }
    fn sum_to(&self, shape: [usize; 2]) -> Self {
        Var::sum_to(*self, shape)
    }
    fn linear(&self, map: &Rc<SparseMap>) -> Self {
        Var::linear(*self, map)
    }
    fn sigmoid(&self) -> Self {
        Var::sigmoid(*self)
    }
    fn recip(&self) -> Self {
        Var::recip(*self)
    }
    fn step(&self) -> Self {
        self.tape.leaf(self.value().as_ref().map(heaviside))
    }
}

fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    Offset(usize),
    Reshape(usize),
    Slice(usize, usize, usize),
    Pad(usize, usize, usize),
    Concat(Vec<usize>, usize),
    Linear(usize, Rc<SparseMap>),
    BroadcastTo(usize),
    SumTo(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Relu(usize),
    Sqrt(usize),
    Recip(usize),
    Exp(usize),
    Inverse(usize),
}

impl Op {
    fn any_input(&self, f: impl Fn(usize) -> bool) -> bool {
        use Op::*;
        match self {
            Leaf => false,
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => f(*a) || f(*b),
            Concat(xs, _) => xs.iter().any(|&x| f(x)),
            Transpose(a)
            | Scale(a, _)
            | Offset(a)
            | Reshape(a)
            | Slice(a, ..)
            | Pad(a, ..)
            | Linear(a, _)
            | BroadcastTo(a)
            | SumTo(a)
            | Tanh(a)
            | Sigmoid(a)
            | Softplus(a)
            | Relu(a)
            | Sqrt(a)
            | Recip(a)
            | Exp(a)
            | Inverse(a) => f(*a),
        }
    }
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape is single-threaded; parallel workers each own one.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value: Rc::new(value) });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records an input value. Any leaf can be differentiated against.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(x))
    }

    pub fn row(&self, values: &[f64]) -> Var<'_> {
        self.leaf(Tensor::row(values))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn op_of(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op.clone()
    }

    /// Marks nodes in `lo..=y` whose value depends on one of `wrt`.
    fn dependency_mask(&self, y: usize, wrt: &[usize]) -> (usize, Vec<bool>) {
        let lo = wrt.iter().copied().min().unwrap_or(y).min(y);
        let nodes = self.nodes.borrow();
        let mut needs = vec![false; y + 1 - lo];
        for &w in wrt {
            if w <= y {
                needs[w - lo] = true;
            }
        }
        for id in lo..=y {
            if needs[id - lo] {
                continue;
            }
            needs[id - lo] = nodes[id].op.any_input(|i| i >= lo && needs[i - lo]);
        }
        (lo, needs)
    }

    fn check_scalar(&self, y: Var<'_>) -> Result<()> {
        let s = y.shape();
        if s != [1, 1] {
            return Err(Error::NotScalar(s));
        }
        Ok(())
    }

    /// Generic reverse sweep. `seed` is the adjoint of `y`, `input_val` maps a
    /// node id to its representation in the algebra.
    fn sweep<A: Alg>(
        &self,
        y: usize,
        wrt: &[usize],
        seed: A,
        input_val: impl Fn(usize) -> A,
    ) -> Result<Vec<Option<A>>> {
        let (lo, needs) = self.dependency_mask(y, wrt);
        if !needs[y - lo] {
            return Err(Error::DetachedGraph);
        }
        let mut adj: Vec<Option<A>> = vec![None; y + 1 - lo];
        adj[y - lo] = Some(seed);
        for id in (lo..=y).rev() {
            if !needs[id - lo] {
                continue;
            }
            let Some(g) = adj[id - lo].clone() else { continue };
            let op = self.op_of(id);
            if matches!(op, Op::Leaf) {
                continue;
            }
            let contributions = backward_rule(&op, &g, id, &input_val);
            for (input, grad) in contributions {
                if input < lo || !needs[input - lo] {
                    continue;
                }
                let slot = &mut adj[input - lo];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.add(&grad),
                    None => grad,
                });
            }
        }
        Ok(wrt.iter().map(|&w| if w <= y { adj[w - lo].clone() } else { None }).collect())
    }

    /// Numeric gradients of scalar `y` with respect to each of `wrt`.
    ///
    /// Inputs that `y` does not depend on get zero gradients; if none of them
    /// is reachable the call fails with [`Error::DetachedGraph`].
    pub fn gradients(&self, y: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Tensor>> {
        self.check_scalar(y)?;
        let ids: Vec<usize> = wrt.iter().map(|v| v.id).collect();
        let seed = Rc::new(Tensor::scalar(1.0));
        let adj = self.sweep(y.id, &ids, seed, |id| self.value_of(id))?;
        Ok(adj
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| match g {
                Some(g) => Rc::try_unwrap(g).unwrap_or_else(|rc| (*rc).clone()),
                None => Tensor::zeros(w.shape()),
            })
            .collect())
    }

    /// Gradients recorded as new tape nodes, so they can be differentiated again.
    pub fn grad_graph<'t>(&'t self, y: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        self.check_scalar(y)?;
        let ids: Vec<usize> = wrt.iter().map(|v| v.id).collect();
        let seed = self.scalar(1.0);
        let adj = self.sweep(y.id, &ids, seed, |id| Var { tape: self, id })?;
        Ok(adj.into_iter().zip(wrt).map(|(g, w)| g.unwrap_or_else(|| self.leaf(Tensor::zeros(w.shape())))).collect())
    }
}

/// Vector-Jacobian products of one recorded op, as `(input_id, contribution)`.
fn backward_rule<A: Alg>(op: &Op, g: &A, out: usize, val: &impl Fn(usize) -> A) -> Vec<(usize, A)> {
    use Op::*;
    let input_shape = |id: usize| val(id).shape();
    match op {
        Leaf => vec![],
        Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
        Mul(a, b) => vec![(*a, g.mul(&val(*b))), (*b, g.mul(&val(*a)))],
        MatMul(a, b) => vec![(*a, g.matmul(&val(*b).transpose())), (*b, val(*a).transpose().matmul(g))],
        Transpose(a) => vec![(*a, g.transpose())],
        Scale(a, c) => vec![(*a, g.scale(*c))],
        Offset(a) => vec![(*a, g.clone())],
        Reshape(a) => vec![(*a, g.reshape(input_shape(*a)))],
        Slice(a, r0, c0) => vec![(*a, g.pad(*r0, *c0, input_shape(*a)))],
        Pad(a, r0, c0) => vec![(*a, g.slice(*r0, *c0, input_shape(*a)))],
        Concat(xs, axis) => {
            let mut offset = 0;
            xs.iter()
                .map(|&x| {
                    let s = input_shape(x);
                    let part = if *axis == 0 { g.slice(offset, 0, s) } else { g.slice(0, offset, s) };
                    offset += s[*axis];
                    (x, part)
                })
                .collect()
        }
        Linear(a, map) => vec![(*a, g.linear(&map.transpose()))],
        BroadcastTo(a) => vec![(*a, g.sum_to(input_shape(*a)))],
        SumTo(a) => vec![(*a, g.broadcast_to(input_shape(*a)))],
        Tanh(a) => {
            let y = val(out);
            vec![(*a, g.mul(&y.mul(&y).scale(-1.0).offset(1.0)))]
        }
        Sigmoid(a) => {
            let y = val(out);
            vec![(*a, g.mul(&y.mul(&y.scale(-1.0).offset(1.0))))]
        }
        Softplus(a) => vec![(*a, g.mul(&val(*a).sigmoid()))],
        Relu(a) => vec![(*a, g.mul(&val(*a).step()))],
        Sqrt(a) => vec![(*a, g.mul(&val(out).recip()).scale(0.5))],
        Recip(a) => {
            let y = val(out);
            vec![(*a, g.mul(&y.mul(&y)).scale(-1.0))]
        }
        Exp(a) => vec![(*a, g.mul(&val(out)))],
        Inverse(a) => {
            let bt = val(out).transpose();
            vec![(*a, bt.matmul(g).matmul(&bt).scale(-1.0))]
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, op: Op, value: Tensor) -> Self {
        self.tape.push(op, value)
    }

    fn check_same_tape(self, other: Self) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    pub fn matmul(self, other: Self) -> Self {
        self.check_same_tape(other);
        let v = self.value().as_ref().matmul(other.value().as_ref()).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::MatMul(self.id, other.id), v)
    }

    pub fn t(self) -> Self {
        let v = self.value().as_ref().transpose();
        self.unary(Op::Transpose(self.id), v)
    }

    pub fn scale(self, c: f64) -> Self {
        let v = self.value().as_ref().scale(c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn offset(self, c: f64) -> Self {
        let v = self.value().as_ref().map(|x| x + c);
        self.unary(Op::Offset(self.id), v)
    }

    pub fn reshape(self, shape: [usize; 2]) -> Self {
        let v = self.value().as_ref().reshape(shape).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::Reshape(self.id), v)
    }

    pub fn slice(self, r0: usize, c0: usize, shape: [usize; 2]) -> Self {
        let v = self.value().as_ref().slice(r0, c0, shape).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::Slice(self.id, r0, c0), v)
    }

    /// Columns `start..start + len` of a row vector.
    pub fn cols(self, start: usize, len: usize) -> Self {
        let rows = self.shape()[0];
        self.slice(0, start, [rows, len])
    }

    pub fn pad(self, r0: usize, c0: usize, shape: [usize; 2]) -> Self {
        let v = self.value().as_ref().pad(r0, c0, shape).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::Pad(self.id, r0, c0), v)
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Self {
        let first = parts[0];
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat(&refs, axis).unwrap_or_else(|e| panic!("{e}"));
        first.unary(Op::Concat(parts.iter().map(|p| p.id).collect(), axis), v)
    }

    pub fn linear(self, map: &Rc<SparseMap>) -> Self {
        let v = map.apply(&self.value());
        self.unary(Op::Linear(self.id, map.clone()), v)
    }

    pub fn broadcast_to(self, shape: [usize; 2]) -> Self {
        if self.shape() == shape {
            return self;
        }
        let v = self.value().as_ref().broadcast_to(shape).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::BroadcastTo(self.id), v)
    }

    pub fn sum_to(self, shape: [usize; 2]) -> Self {
        if self.shape() == shape {
            return self;
        }
        let v = self.value().as_ref().sum_to(shape).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::SumTo(self.id), v)
    }

    pub fn sum(self) -> Self {
        self.sum_to([1, 1])
    }

    /// Product with a `[1, 1]` variable.
    pub fn mul_scalar(self, s: Self) -> Self {
        self * s.broadcast_to(self.shape())
    }

    pub fn dot(self, other: Self) -> Self {
        (self * other).sum()
    }

    pub fn square_norm(self) -> Self {
        self.dot(self)
    }

    pub fn tanh(self) -> Self {
        let v = self.value().as_ref().map(f64::tanh);
        self.unary(Op::Tanh(self.id), v)
    }

    pub fn sigmoid(self) -> Self {
        let v = self.value().as_ref().map(sigmoid);
        self.unary(Op::Sigmoid(self.id), v)
    }

    pub fn softplus(self) -> Self {
        let v = self.value().as_ref().map(softplus);
        self.unary(Op::Softplus(self.id), v)
    }

    pub fn relu(self) -> Self {
        let v = self.value().as_ref().map(|x| x.max(0.0));
        self.unary(Op::Relu(self.id), v)
    }

    pub fn sqrt(self) -> Self {
        let v = self.value().as_ref().map(f64::sqrt);
        self.unary(Op::Sqrt(self.id), v)
    }

    pub fn recip(self) -> Self {
        let v = self.value().as_ref().map(|x| 1.0 / x);
        self.unary(Op::Recip(self.id), v)
    }

    pub fn exp(self) -> Self {
        let v = self.value().as_ref().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    /// Matrix inverse; fails on singular input.
    pub fn inverse(self) -> Result<Self> {
        let v = self.value().as_ref().inverse()?;
        Ok(self.unary(Op::Inverse(self.id), v))
    }

    /// Sum of the diagonal of a square matrix.
    pub fn trace(self) -> Self {
        let [n, m] = self.shape();
        assert_eq!(n, m, "trace of non-square matrix");
        let map = SparseMap::new([n, n], [1, 1], (0..n).map(|i| (0, i * n + i, 1.0)).collect());
        self.linear(&map)
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.check_same_tape(rhs);
        let v = self.value().as_ref().add(rhs.value().as_ref()).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::Add(self.id, rhs.id), v)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.check_same_tape(rhs);
        let v = self.value().as_ref().sub(rhs.value().as_ref()).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::Sub(self.id, rhs.id), v)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.check_same_tape(rhs);
        let v = self.value().as_ref().mul(rhs.value().as_ref()).unwrap_or_else(|e| panic!("{e}"));
        self.unary(Op::Mul(self.id, rhs.id), v)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}
