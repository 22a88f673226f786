//! Recording tape and differentiable arrays.
//!
//! Every array produced by an operation on a [`Var`] is appended to the
//! [`Tape`]. [`Tape::grad`] runs one reverse sweep. Vector-Jacobian products
//! are themselves built from tape operations, so with `create_graph = true`
//! the returned gradients are differentiable again (needed for input-gradient
//! penalties).
//!
//! Arrays are row-major. Two-dimensional operations treat the last dimension
//! as columns and fold the rest into rows. Low-level operations panic on
//! shape mismatches; the layer functions in [`super::nn`] validate shapes and
//! return errors instead.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::ops;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Gather/scatter index meaning "no source element" (reads as zero).
pub const ZERO_INDEX: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Softplus,
    Recip,
    Sqrt,
    /// `0.5 / x` for `x > 0`, else 0. Derivative factor of `Sqrt`.
    HalfRecip,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Unary::Recip => 1.0 / x,
            Unary::Sqrt => x.sqrt(),
            Unary::HalfRecip => {
                if x > 0.0 {
                    0.5 / x
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Unary(usize, Unary),
    Reshape(usize),
    Gather(usize, Rc<[usize]>),
    ScatterAdd(usize, Rc<[usize]>),
}

struct Node {
    value: Rc<[f64]>,
    shape: Rc<[usize]>,
    op: Op,
    tracked: bool,
}

/// A recorded computation. One tape per forward pass; not shared across threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_nonfinite: Cell<Option<usize>>,
}

/// Handle to an array recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

    fn push(&self, value: Vec<f64>, shape: &[usize], op: Op, tracked: bool) -> Var<'_> {
        debug_assert_eq!(value.len(), numel(shape), "value/shape mismatch");
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.first_nonfinite.get().is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_nonfinite.set(Some(id));
        }
        nodes.push(Node {
            value: value.into(),
            shape: shape.into(),
            op: if tracked { op } else { Op::Leaf },
            tracked,
        });
        Var { tape: self, id }
    }

    /// Untracked array; receives no gradient.
    pub fn constant(&self, value: Vec<f64>, shape: &[usize]) -> Var<'_> {
        assert_eq!(value.len(), numel(shape), "constant: {} values for shape {shape:?}", value.len());
        self.push(value, shape, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(vec![v], &[1])
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_> {
        self.constant(vec![0.0; numel(shape)], shape)
    }

    /// Tracked leaf: a parameter or a differentiable input.
    pub fn input(&self, value: Vec<f64>, shape: &[usize]) -> Var<'_> {
        assert_eq!(value.len(), numel(shape), "input: {} values for shape {shape:?}", value.len());
        self.push(value, shape, Op::Leaf, true)
    }

    /// Fails if any recorded value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite.get() {
            None => Ok(()),
            Some(id) => Err(Error::Numerical(format!("non-finite value produced at tape node {id}"))),
        }
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn unary(&self, x: usize, f: Unary) -> Var<'_> {
        let (value, shape, tracked) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x];
            (n.value.iter().map(|&v| f.apply(v)).collect(), n.shape.clone(), n.tracked)
        };
        self.push(value, &shape, Op::Unary(x, f), tracked)
    }

    fn binary(&self, a: usize, b: usize, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'_> {
        let (value, shape, tracked) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a], &nodes[b]);
            assert_eq!(na.shape, nb.shape, "{name}: shape mismatch");
            let v: Vec<f64> = na.value.iter().zip(nb.value.iter()).map(|(x, y)| f(*x, *y)).collect();
            (v, na.shape.clone(), na.tracked || nb.tracked)
        };
        self.push(value, &shape, op, tracked)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Entries of `wrt` must be tracked. With `create_graph` the returned
    /// gradients are recorded as differentiable functions of the tape.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        if output.len() != 1 {
            return Err(Error::Contract(format!(
                "gradient requested of a non-scalar of shape {:?}",
                output.shape()
            )));
        }
        if let Some(w) = wrt.iter().find(|w| !self.tracked(w.id)) {
            return Err(Error::Contract(format!(
                "tape node {} is not a tracked input; no gradient is recorded for it",
                w.id
            )));
        }

        let mut adj: Vec<Option<Var<'t>>> = vec![None; output.id + 1];
        adj[output.id] = Some(self.constant(vec![1.0], &output.shape()));
        let mut detached: HashMap<usize, Var<'t>> = HashMap::new();
        let mut operand = |id: usize| -> Var<'t> {
            let v = Var { tape: self, id };
            if create_graph {
                v
            } else {
                *detached.entry(id).or_insert_with(|| v.detach())
            }
        };

        for id in (0..=output.id).rev() {
            let Some(g) = adj[id] else { continue };
            let (op, tracked) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].tracked)
            };
            if !tracked {
                continue;
            }
            let mut contribs: Vec<(usize, Var<'t>)> = Vec::with_capacity(2);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    contribs.push((a, g));
                    contribs.push((b, g));
                }
                Op::Mul(a, b) => {
                    if self.tracked(a) {
                        contribs.push((a, g * operand(b)));
                    }
                    if self.tracked(b) {
                        contribs.push((b, g * operand(a)));
                    }
                }
                Op::Scale(a, c) => contribs.push((a, g.scale(c))),
                Op::Offset(a) => contribs.push((a, g)),
                Op::MatMul { a, b, m, k, n } => {
                    if self.tracked(a) {
                        let bt = operand(b).reshape(&[k, n]).transpose();
                        contribs.push((a, g.reshape(&[m, n]).matmul(bt)));
                    }
                    if self.tracked(b) {
                        let at = operand(a).reshape(&[m, k]).transpose();
                        contribs.push((b, at.matmul(g.reshape(&[m, n]))));
                    }
                }
                Op::Unary(x, f) => {
                    let y = operand(id);
                    let d = match f {
                        Unary::Exp => g * y,
                        Unary::Ln => g * operand(x).recip(),
                        Unary::Tanh => g - g * y * y,
                        Unary::Sigmoid => g * (y - y * y),
                        Unary::Softplus => g * operand(x).sigmoid(),
                        Unary::Recip => -(g * y * y),
                        Unary::Sqrt => g * self.unary(y.id, Unary::HalfRecip),
                        Unary::HalfRecip => {
                            let xv = operand(x);
                            // derivative of 0.5/x is -0.5/x^2 = -2 * (0.5/x)^2
                            (g * y * y).scale(-2.0) * xv.positive_mask()
                        }
                    };
                    contribs.push((x, d));
                }
                Op::Reshape(x) => {
                    let s = self.nodes.borrow()[x].shape.clone();
                    contribs.push((x, g.reshape(&s)));
                }
                Op::Gather(x, idx) => {
                    let s = self.nodes.borrow()[x].shape.clone();
                    contribs.push((x, g.scatter_add(idx, &s)));
                }
                Op::ScatterAdd(x, idx) => {
                    let s = self.nodes.borrow()[x].shape.clone();
                    contribs.push((x, g.gather(idx, &s)));
                }
            }
            for (p, c) in contribs {
                if !self.tracked(p) {
                    continue;
                }
                adj[p] = Some(match adj[p] {
                    None => c,
                    Some(e) => e + c,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.zeros(&w.shape()),
            })
            .collect())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Last dimension.
    pub fn cols(&self) -> usize {
        *self.tape.nodes.borrow()[self.id].shape.last().unwrap_or(&1)
    }

    /// Product of all but the last dimension.
    pub fn rows(&self) -> usize {
        self.len().checked_div(self.cols()).unwrap_or(0)
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.to_vec()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// The single element of a one-element array.
    pub fn item(&self) -> f64 {
        self.with_value(|v| {
            assert_eq!(v.len(), 1, "item() on an array of {} elements", v.len());
            v[0]
        })
    }

    /// Untracked copy of the current value.
    pub fn detach(&self) -> Var<'t> {
        let (v, s) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].value.to_vec(), nodes[self.id].shape.clone())
        };
        self.tape.constant(v, &s)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let (value, shape, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.iter().map(|v| v * c).collect(), n.shape.clone(), n.tracked)
        };
        self.tape.push(value, &shape, Op::Scale(self.id, c), tracked)
    }

    /// Add a constant to every element.
    pub fn offset(self, c: f64) -> Var<'t> {
        let (value, shape, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.iter().map(|v| v + c).collect(), n.shape.clone(), n.tracked)
        };
        self.tape.push(value, &shape, Op::Offset(self.id), tracked)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Ln)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Softplus)
    }

    pub fn recip(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Recip)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self.id, Unary::Sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// Constant 0/1 mask of strictly positive entries.
    pub fn positive_mask(&self) -> Var<'t> {
        let (v, s) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.value.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
                n.shape.clone(),
            )
        };
        self.tape.constant(v, &s)
    }

    pub fn relu(self) -> Var<'t> {
        self * self.positive_mask()
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let (value, cur, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.clone(), n.shape.clone(), n.tracked)
        };
        assert_eq!(numel(&cur), numel(shape), "reshape {cur:?} -> {shape:?}");
        if &*cur == shape {
            return self;
        }
        let mut nodes = self.tape.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            shape: shape.into(),
            op: if tracked { Op::Reshape(self.id) } else { Op::Leaf },
            tracked,
        });
        Var { tape: self.tape, id }
    }

    /// `out[i] = self[idx[i]]`, or zero where `idx[i] == ZERO_INDEX`.
    pub fn gather(self, idx: Rc<[usize]>, shape: &[usize]) -> Var<'t> {
        assert_eq!(idx.len(), numel(shape), "gather: index count vs output shape");
        let (value, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let v = idx
                .iter()
                .map(|&i| if i == ZERO_INDEX { 0.0 } else { n.value[i] })
                .collect();
            (v, n.tracked)
        };
        self.tape.push(value, shape, Op::Gather(self.id, idx), tracked)
    }

    /// `out[idx[i]] += self[i]` into a zero array of `shape`.
    pub fn scatter_add(self, idx: Rc<[usize]>, shape: &[usize]) -> Var<'t> {
        let (value, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            assert_eq!(idx.len(), n.value.len(), "scatter_add: index count vs input");
            let mut out = vec![0.0; numel(shape)];
            for (&i, &v) in idx.iter().zip(n.value.iter()) {
                if i != ZERO_INDEX {
                    out[i] += v;
                }
            }
            (out, n.tracked)
        };
        self.tape.push(value, shape, Op::ScatterAdd(self.id, idx), tracked)
    }

    /// `[m, k] x [k, n]`. Leading dimensions of `self` fold into `m`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (value, m, k, n, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let (na, nb) = (&nodes[self.id], &nodes[other.id]);
            let k = *na.shape.last().expect("matmul on a 0-d array");
            assert_eq!(nb.shape.len(), 2, "matmul: right operand must be 2-d, got {:?}", nb.shape);
            assert_eq!(nb.shape[0], k, "matmul: {:?} x {:?}", na.shape, nb.shape);
            let (m, n) = (na.value.len() / k.max(1), nb.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let a = na.value[i * k + p];
                    if a == 0.0 {
                        continue;
                    }
                    let brow = &nb.value[p * n..(p + 1) * n];
                    for (o, b) in row.iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
            (out, m, k, n, na.tracked || nb.tracked)
        };
        self.tape.push(
            value,
            &[m, n],
            Op::MatMul { a: self.id, b: other.id, m, k, n },
            tracked,
        )
    }

    /// Transpose of the 2-d view.
    pub fn transpose(self) -> Var<'t> {
        let (r, c) = (self.rows(), self.cols());
        let idx: Rc<[usize]> = (0..c).flat_map(|a| (0..r).map(move |b| b * c + a)).collect();
        self.gather(idx, &[c, r])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t> {
        let idx: Rc<[usize]> = vec![0; self.len()].into();
        self.scatter_add(idx, &[1])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over the last dimension: `[r, c]` to `[r, 1]`.
    pub fn sum_cols(self) -> Var<'t> {
        let (r, c) = (self.rows(), self.cols());
        let idx: Rc<[usize]> = (0..r * c).map(|i| i / c).collect();
        self.scatter_add(idx, &[r, 1])
    }

    /// Mean over the last dimension: `[r, c]` to `[r, 1]`.
    pub fn mean_cols(self) -> Var<'t> {
        let c = self.cols() as f64;
        self.sum_cols().scale(1.0 / c)
    }

    /// Sum over rows: `[r, c]` to `[1, c]`.
    pub fn sum_rows(self) -> Var<'t> {
        let (r, c) = (self.rows(), self.cols());
        let idx: Rc<[usize]> = (0..r * c).map(|i| i % c).collect();
        self.scatter_add(idx, &[1, c])
    }

    /// Repeat a `[c]`-element vector over `rows` rows.
    pub fn tile_rows(self, rows: usize) -> Var<'t> {
        let c = self.len();
        let idx: Rc<[usize]> = (0..rows * c).map(|i| i % c).collect();
        self.gather(idx, &[rows, c])
    }

    /// Repeat an `[r, 1]` column across `cols` columns.
    pub fn tile_cols(self, cols: usize) -> Var<'t> {
        let r = self.len();
        let idx: Rc<[usize]> = (0..r * cols).map(|i| i / cols).collect();
        self.gather(idx, &[r, cols])
    }

    /// Broadcast a one-element array to `shape`.
    pub fn broadcast(self, shape: &[usize]) -> Var<'t> {
        assert_eq!(self.len(), 1, "broadcast of a non-scalar");
        let idx: Rc<[usize]> = vec![0; numel(shape)].into();
        self.gather(idx, shape)
    }

    /// Add a `[c]` vector to every row.
    pub fn add_row(self, b: Var<'t>) -> Var<'t> {
        let shape = self.shape();
        self + b.tile_rows(self.rows()).reshape(&shape)
    }

    /// Multiply every row elementwise by a `[c]` vector.
    pub fn mul_row(self, b: Var<'t>) -> Var<'t> {
        let shape = self.shape();
        self * b.tile_rows(self.rows()).reshape(&shape)
    }

    /// Add an `[r, 1]` column to every column.
    pub fn add_col(self, b: Var<'t>) -> Var<'t> {
        let shape = self.shape();
        self + b.tile_cols(self.cols()).reshape(&shape)
    }

    /// Multiply every column elementwise by an `[r, 1]` column.
    pub fn mul_col(self, b: Var<'t>) -> Var<'t> {
        let shape = self.shape();
        self * b.tile_cols(self.cols()).reshape(&shape)
    }

    /// Columns `start..end` of the 2-d view.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let (r, c) = (self.rows(), self.cols());
        assert!(start <= end && end <= c, "slice_cols {start}..{end} of {c}");
        let w = end - start;
        let idx: Rc<[usize]> = (0..r).flat_map(|i| (start..end).map(move |j| i * c + j)).collect();
        self.gather(idx, &[r, w])
    }

    /// Rows `start..end` of the 2-d view.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let c = self.cols();
        assert!(start <= end && end <= self.rows(), "slice_rows {start}..{end}");
        let idx: Rc<[usize]> = (start * c..end * c).collect();
        self.gather(idx, &[end - start, c])
    }

    /// Concatenate along the last dimension.
    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        let (r, c1, c2) = (self.rows(), self.cols(), other.cols());
        assert_eq!(r, other.rows(), "concat_cols: row mismatch");
        let w = c1 + c2;
        let ia: Rc<[usize]> = (0..r * c1).map(|i| (i / c1) * w + i % c1).collect();
        let ib: Rc<[usize]> = (0..r * c2).map(|i| (i / c2) * w + c1 + i % c2).collect();
        self.scatter_add(ia, &[r, w]) + other.scatter_add(ib, &[r, w])
    }

    /// Stack 2-d arrays with equal column counts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = parts[0].cols();
        let total: usize = parts.iter().map(|p| p.rows()).sum();
        let mut offset = 0;
        let mut acc: Option<Var<'t>> = None;
        for p in parts {
            assert_eq!(p.cols(), c, "concat_rows: column mismatch");
            let n = p.len();
            let idx: Rc<[usize]> = (offset..offset + n).collect();
            let placed = p.scatter_add(idx, &[total, c]);
            acc = Some(match acc {
                None => placed,
                Some(a) => a + placed,
            });
            offset += n;
        }
        acc.unwrap()
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, "add", |a, b| a + b, Op::Add(self.id, rhs.id))
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self + (-rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, "mul", |a, b| a * b, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
