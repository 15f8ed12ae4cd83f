//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order, so the tape is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use aptm::numcore::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(&Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
//! let y = x.mul(&x).unwrap().sum().unwrap();
//! g.backward(&y).unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! A graph lives on one thread. Independent graphs can run in parallel over a
//! shared, read-only parameter set.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::scalar::{lit, Scalar};
use super::tensor::{validate_shape, Tensor};

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    DivScalar(usize, usize),
    Transpose(usize),
    Softmax { x: usize, outer: usize, n: usize, inner: usize },
    LogSoftmax { x: usize, outer: usize, n: usize, inner: usize },
    Sigmoid(usize),
    LogSigmoid(usize),
    Gelu(usize),
    Exp(usize),
    Log(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    GatherRows { x: usize, rows: Vec<usize> },
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    Reshape(usize),
    L2NormalizeRows { x: usize, norms: Vec<T> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Recording context for differentiable computation.
pub struct Graph<T: Scalar> {
    tape: Rc<RefCell<Tape<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            tape: Rc::clone(&self.tape),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph<{}>({} nodes)", T::NAME, self.len())
    }
}

/// Handle to a node of a [`Graph`].
pub struct Var<T: Scalar> {
    graph: Graph<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            tape: Rc::new(RefCell::new(Tape {
                nodes: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a tensor; it participates in gradients iff `tensor.requires_grad`.
    pub fn leaf(&self, tensor: &Tensor<T>) -> Var<T> {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad,
        )
    }

    pub fn constant(&self, tensor: &Tensor<T>) -> Var<T> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, false)
    }

    pub fn param(&self, tensor: &Tensor<T>) -> Var<T> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant_from(&self, shape: &[usize], data: Vec<T>) -> Result<Var<T>> {
        validate_shape(shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("constant data does not match its shape"));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn scalar(&self, value: T) -> Var<T> {
        self.push(vec![1], vec![value], Op::Leaf, false)
    }

    /// Clears every gradient so a second `backward` starts from zero.
    pub fn zero_grad(&self) {
        let mut tape = self.tape.borrow_mut();
        tape.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        tape.grads.push(None);
        Var {
            graph: self.clone(),
            id,
        }
    }

    fn same_graph(&self, other: &Var<T>) -> Result<()> {
        if Rc::ptr_eq(&self.tape, &other.graph.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands belong to different graphs"))
        }
    }

    /// Populates gradients of every participating node with respect to `root`.
    pub fn backward(&self, root: &Var<T>) -> Result<()> {
        self.same_graph(root)?;
        let mut tape = self.tape.borrow_mut();
        let Tape { nodes, grads } = &mut *tape;
        if nodes[root.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].shape
            )));
        }
        grads.iter_mut().for_each(|g| *g = None);
        grads[root.id] = Some(vec![T::one()]);
        for id in (0..=root.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(nodes, grads, id, &g);
            grads[id] = Some(g);
        }
        Ok(())
    }
}

fn add_with<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.len()]);
    f(slot);
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap();
    (shape.iter().product::<usize>() / cols, cols)
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = dims2(&nodes[*a].shape);
            let n = nodes[*b].shape[1];
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            // dA = G · Bᵀ
            add_with(nodes, grads, *a, |ga| {
                T::gemm(m, n, k, T::one(), g, n as isize, 1, bv, 1, n as isize, T::one(), ga, k as isize, 1)
            });
            // dB = Aᵀ · G
            add_with(nodes, grads, *b, |gb| {
                T::gemm(k, m, n, T::one(), av, 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1)
            });
        }
        Op::MatMulT(a, b) => {
            // y = A · Bᵀ with A[m×k], B[n×k]
            let (m, k) = dims2(&nodes[*a].shape);
            let n = nodes[*b].shape[0];
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            add_with(nodes, grads, *a, |ga| {
                T::gemm(m, n, k, T::one(), g, n as isize, 1, bv, k as isize, 1, T::one(), ga, k as isize, 1)
            });
            add_with(nodes, grads, *b, |gb| {
                T::gemm(n, m, k, T::one(), g, 1, n as isize, av, k as isize, 1, T::one(), gb, k as isize, 1)
            });
        }
        Op::Add(a, b) => {
            add_with(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
            add_with(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
        }
        Op::AddRow(a, b) => {
            add_with(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
            let n = nodes[*b].value.len();
            add_with(nodes, grads, *b, |gb| {
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(x, &d)| *x += d);
                }
            });
        }
        Op::Sub(a, b) => {
            add_with(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
            add_with(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x -= d));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if a == b {
                add_with(nodes, grads, *a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += lit::<T>(2.0) * g[i] * av[i];
                    }
                });
            } else {
                add_with(nodes, grads, *a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                add_with(nodes, grads, *b, |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
        }
        Op::Scale(a, c) => {
            add_with(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d * *c));
        }
        Op::DivScalar(a, s) => {
            let sv = nodes[*s].value[0];
            let y = &node.value;
            add_with(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d / sv));
            let gs = -g.iter().zip(y).map(|(&d, &yv)| d * yv).sum::<T>() / sv;
            add_with(nodes, grads, *s, |gsv| gsv[0] += gs);
        }
        Op::Transpose(a) => {
            let (m, n) = dims2(&nodes[*a].shape);
            add_with(nodes, grads, *a, |ga| {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            });
        }
        Op::Softmax { x, outer, n, inner } => {
            let y = &node.value;
            let (outer, n, inner) = (*outer, *n, *inner);
            add_with(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::LogSoftmax { x, outer, n, inner } => {
            let y = &node.value;
            let (outer, n, inner) = (*outer, *n, *inner);
            add_with(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let total: T = (0..n).map(|j| g[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] += g[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            add_with(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            });
        }
        Op::LogSigmoid(a) => {
            let xv = &nodes[*a].value;
            add_with(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * sigmoid(-xv[i]);
                }
            });
        }
        Op::Gelu(a) => {
            let xv = &nodes[*a].value;
            add_with(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * gelu_grad(xv[i]);
                }
            });
        }
        Op::Exp(a) => {
            let y = &node.value;
            add_with(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i];
                }
            });
        }
        Op::Log(a) => {
            let xv = &nodes[*a].value;
            add_with(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] / xv[i];
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let (m, n) = dims2(&nodes[*x].shape);
            let gv = &nodes[*gamma].value;
            let nf = T::from_usize(n).unwrap();
            add_with(nodes, grads, *x, |gx| {
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..n {
                        let d = gr[j] * gv[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    for j in 0..n {
                        let d = gr[j] * gv[j];
                        gx[r * n + j] += rstd[r] / nf * (nf * d - sum_d - xh[j] * sum_dx);
                    }
                }
            });
            add_with(nodes, grads, *gamma, |gg| {
                for r in 0..m {
                    for j in 0..n {
                        gg[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
            });
            add_with(nodes, grads, *beta, |gb| {
                for r in 0..m {
                    for j in 0..n {
                        gb[j] += g[r * n + j];
                    }
                }
            });
        }
        Op::Sum(a) => {
            add_with(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let scale = g[0] / T::from_usize(nodes[*a].value.len()).unwrap();
            add_with(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += scale));
        }
        Op::SumLast(a) => {
            let (_, n) = dims2(&nodes[*a].shape);
            add_with(nodes, grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i / n];
                }
            });
        }
        Op::GatherRows { x, rows } => {
            let (_, n) = dims2(&nodes[*x].shape);
            add_with(nodes, grads, *x, |gx| {
                for (out_row, &src) in rows.iter().enumerate() {
                    for j in 0..n {
                        gx[src * n + j] += g[out_row * n + j];
                    }
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                let slice = &g[offset..offset + len];
                add_with(nodes, grads, p, |gp| gp.iter_mut().zip(slice).for_each(|(x, &d)| *x += d));
                offset += len;
            }
        }
        Op::SliceCols { x, start } => {
            let (m, n) = dims2(&nodes[*x].shape);
            let w = *node.shape.last().unwrap();
            add_with(nodes, grads, *x, |gx| {
                for r in 0..m {
                    for j in 0..w {
                        gx[r * n + start + j] += g[r * w + j];
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let (m, total) = dims2(&node.shape);
            let mut offset = 0;
            for &p in parts {
                let w = *nodes[p].shape.last().unwrap();
                add_with(nodes, grads, p, |gp| {
                    for r in 0..m {
                        for j in 0..w {
                            gp[r * w + j] += g[r * total + offset + j];
                        }
                    }
                });
                offset += w;
            }
        }
        Op::Reshape(a) => {
            add_with(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
        }
        Op::L2NormalizeRows { x, norms } => {
            let (m, n) = dims2(&nodes[*x].shape);
            let y = &node.value;
            add_with(nodes, grads, *x, |gx| {
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        gx[r * n + j] += (gr[j] - yr[j] * dot) / norms[r];
                    }
                }
            });
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let u = lit::<T>(SQRT_2_OVER_PI) * (x + lit::<T>(GELU_COEF) * x * x * x);
    lit::<T>(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = lit::<T>(SQRT_2_OVER_PI);
    let k = lit::<T>(GELU_COEF);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = lit::<T>(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + lit::<T>(3.0) * k * x * x)
}

fn axis_geometry(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl<T: Scalar> Var<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id].shape.clone()
    }

    pub fn len(&self) -> usize {
        self.graph.tape.borrow().nodes[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tape.borrow().nodes[self.id].requires_grad
    }

    /// Copies the current value out as a plain tensor.
    pub fn value(&self) -> Tensor<T> {
        let tape = self.graph.tape.borrow();
        let node = &tape.nodes[self.id];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shapes are validated")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.graph.tape.borrow().nodes[self.id].value.clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        let tape = self.graph.tape.borrow();
        let v = &tape.nodes[self.id].value;
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        let tape = self.graph.tape.borrow();
        let g = tape.grads[self.id].as_ref()?;
        Some(Tensor::new(tape.nodes[self.id].shape.clone(), g.clone()).expect("grad shape"))
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(self)
    }

    fn unary(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var<T> {
        let rg = self.requires_grad();
        self.graph.push(shape, value, op, rg)
    }

    fn binary(&self, other: &Var<T>, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var<T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(shape, value, op, rg)
    }

    fn with_value<R>(&self, f: impl FnOnce(&[usize], &[T]) -> R) -> R {
        let tape = self.graph.tape.borrow();
        let node = &tape.nodes[self.id];
        f(&node.shape, &node.value)
    }

    fn with_pair<R>(&self, other: &Var<T>, f: impl FnOnce(&Node<T>, &Node<T>) -> R) -> Result<R> {
        self.graph.same_graph(other)?;
        let tape = self.graph.tape.borrow();
        Ok(f(&tape.nodes[self.id], &tape.nodes[other.id]))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.with_pair(other, |a, b| {
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::dim(format!("matmul {:?} × {:?}", a.shape, b.shape)));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), &a.value, k as isize, 1, &b.value, n as isize, 1, T::zero(), &mut out, n as isize, 1);
            Ok((vec![m, n], out))
        })??;
        Ok(self.binary(other, shape, value, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ` for `[m×k]` and `[n×k]`.
    pub fn matmul_t(&self, other: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.with_pair(other, |a, b| {
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[1] {
                return Err(Error::dim(format!("matmul_t {:?} × {:?}ᵀ", a.shape, b.shape)));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), &a.value, k as isize, 1, &b.value, 1, k as isize, T::zero(), &mut out, n as isize, 1);
            Ok((vec![m, n], out))
        })??;
        Ok(self.binary(other, shape, value, Op::MatMulT(self.id, other.id)))
    }

    fn zip_same(&self, other: &Var<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        self.with_pair(other, |a, b| {
            if a.shape != b.shape {
                return Err(Error::dim(format!("{what}: {:?} vs {:?}", a.shape, b.shape)));
            }
            Ok((a.shape.clone(), a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect()))
        })?
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, shape, value, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.zip_same(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, shape, value, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, shape, value, Op::Mul(self.id, other.id)))
    }

    /// Adds a vector of length `n` to every row of a `[.., n]` tensor.
    pub fn add_row(&self, row: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.with_pair(row, |a, b| {
            let n = *a.shape.last().unwrap();
            if b.value.len() != n {
                return Err(Error::dim(format!("add_row {:?} + {:?}", a.shape, b.shape)));
            }
            let value = a
                .value
                .chunks_exact(n)
                .flat_map(|r| r.iter().zip(&b.value).map(|(&x, &y)| x + y))
                .collect();
            Ok((a.shape.clone(), value))
        })??;
        Ok(self.binary(row, shape, value, Op::AddRow(self.id, row.id)))
    }

    pub fn scale(&self, c: T) -> Result<Var<T>> {
        let (shape, value) = self.with_value(|s, v| (s.to_vec(), v.iter().map(|&x| x * c).collect()));
        Ok(self.unary(shape, value, Op::Scale(self.id, c)))
    }

    pub fn neg(&self) -> Result<Var<T>> {
        self.scale(-T::one())
    }

    /// Divides every element by a one-element tensor (e.g. a learnable temperature).
    pub fn div_scalar(&self, s: &Var<T>) -> Result<Var<T>> {
        let (shape, value) = self.with_pair(s, |a, b| {
            if b.value.len() != 1 {
                return Err(Error::dim("div_scalar needs a one-element divisor"));
            }
            let d = b.value[0];
            if d == T::zero() || !d.is_finite() {
                return Err(Error::numeric("division by a zero or non-finite scalar"));
            }
            Ok((a.shape.clone(), a.value.iter().map(|&x| x / d).collect()))
        })??;
        Ok(self.binary(s, shape, value, Op::DivScalar(self.id, s.id)))
    }

    pub fn transpose(&self) -> Result<Var<T>> {
        let (shape, value) = self.with_value(|s, v| {
            if s.len() != 2 {
                return Err(Error::dim("transpose needs a 2-D tensor"));
            }
            let (m, n) = (s[0], s[1]);
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = v[i * n + j];
                }
            }
            Ok((vec![n, m], out))
        })?;
        Ok(self.unary(shape, value, Op::Transpose(self.id)))
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        self.with_value(|_, v| {
            if v.iter().any(|x| x.is_nan()) {
                Err(Error::numeric(format!("{what}: NaN input")))
            } else {
                Ok(())
            }
        })
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        self.check_finite("softmax")?;
        let (outer, n, inner) = self.with_value(|s, _| axis_geometry(s, axis))?;
        let (shape, value) = self.with_value(|s, v| {
            let mut out = vec![T::zero(); v.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let max = (0..n).map(|j| v[idx(j)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for j in 0..n {
                        let e = (v[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..n {
                        out[idx(j)] /= total;
                    }
                }
            }
            (s.to_vec(), out)
        });
        Ok(self.unary(shape, value, Op::Softmax { x: self.id, outer, n, inner }))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<T>> {
        self.check_finite("log_softmax")?;
        let (outer, n, inner) = self.with_value(|s, _| axis_geometry(s, axis))?;
        let (shape, value) = self.with_value(|s, v| {
            let mut out = vec![T::zero(); v.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let max = (0..n).map(|j| v[idx(j)]).fold(T::neg_infinity(), T::max);
                    let lse = max + (0..n).map(|j| (v[idx(j)] - max).exp()).sum::<T>().ln();
                    for j in 0..n {
                        out[idx(j)] = v[idx(j)] - lse;
                    }
                }
            }
            (s.to_vec(), out)
        });
        Ok(self.unary(shape, value, Op::LogSoftmax { x: self.id, outer, n, inner }))
    }

    fn elementwise(&self, f: impl Fn(T) -> T, op: Op<T>) -> Var<T> {
        let (shape, value) = self.with_value(|s, v| (s.to_vec(), v.iter().map(|&x| f(x)).collect()));
        self.unary(shape, value, op)
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        Ok(self.elementwise(sigmoid, Op::Sigmoid(self.id)))
    }

    /// `log σ(x)`, computed without forming σ(x).
    pub fn log_sigmoid(&self) -> Result<Var<T>> {
        Ok(self.elementwise(log_sigmoid, Op::LogSigmoid(self.id)))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Var<T>> {
        Ok(self.elementwise(gelu, Op::Gelu(self.id)))
    }

    pub fn exp(&self) -> Result<Var<T>> {
        Ok(self.elementwise(|x| x.exp(), Op::Exp(self.id)))
    }

    pub fn ln(&self) -> Result<Var<T>> {
        if self.with_value(|_, v| v.iter().any(|&x| x <= T::zero() || x.is_nan())) {
            return Err(Error::numeric("log of a non-positive value"));
        }
        Ok(self.elementwise(|x| x.ln(), Op::Log(self.id)))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        self.graph.same_graph(gamma)?;
        self.graph.same_graph(beta)?;
        let tape = self.graph.tape.borrow();
        let x = &tape.nodes[self.id];
        let (m, n) = dims2(&x.shape);
        let (gv, bv) = (&tape.nodes[gamma.id].value, &tape.nodes[beta.id].value);
        if gv.len() != n || bv.len() != n {
            return Err(Error::dim(format!("layer_norm over {n} features with gamma/beta of {}/{}", gv.len(), bv.len())));
        }
        let nf = T::from_usize(n).unwrap();
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &x.value[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv[j] + bv[j];
            }
        }
        let shape = x.shape.clone();
        let rg = x.requires_grad || tape.nodes[gamma.id].requires_grad || tape.nodes[beta.id].requires_grad;
        drop(tape);
        Ok(self.graph.push(
            shape,
            out,
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd },
            rg,
        ))
    }

    pub fn sum(&self) -> Result<Var<T>> {
        let total = self.with_value(|_, v| v.iter().copied().sum::<T>());
        Ok(self.unary(vec![1], vec![total], Op::Sum(self.id)))
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let mean = self.with_value(|_, v| v.iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap());
        Ok(self.unary(vec![1], vec![mean], Op::Mean(self.id)))
    }

    /// Sums over the last axis: `[.., n] -> [..]` (rank-1 input gives `[1]`).
    pub fn sum_last(&self) -> Result<Var<T>> {
        let (shape, value) = self.with_value(|s, v| {
            let n = *s.last().unwrap();
            let shape = if s.len() == 1 { vec![1] } else { s[..s.len() - 1].to_vec() };
            (shape, v.chunks_exact(n).map(|r| r.iter().copied().sum()).collect())
        });
        Ok(self.unary(shape, value, Op::SumLast(self.id)))
    }

    /// Selects rows (first axis of a 2-D tensor) by index; indices may repeat.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<T>> {
        if rows.is_empty() {
            return Err(Error::dim("gather_rows with no indices"));
        }
        let (shape, value) = self.with_value(|s, v| {
            if s.len() != 2 {
                return Err(Error::dim("gather_rows needs a 2-D tensor"));
            }
            let (m, n) = (s[0], s[1]);
            let mut out = Vec::with_capacity(rows.len() * n);
            for &r in rows {
                if r >= m {
                    return Err(Error::dim(format!("row {r} out of range for {m} rows")));
                }
                out.extend_from_slice(&v[r * n..(r + 1) * n]);
            }
            Ok((vec![rows.len(), n], out))
        })?;
        Ok(self.unary(shape, value, Op::GatherRows { x: self.id, rows: rows.to_vec() }))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<T>> {
        let rows: Vec<usize> = (start..start + len).collect();
        self.gather_rows(&rows)
    }

    pub fn row(&self, index: usize) -> Result<Var<T>> {
        self.gather_rows(&[index])
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows of nothing"))?;
        let g = first.graph.clone();
        let tape = g.tape.borrow();
        let cols = *tape.nodes[first.id].shape.last().unwrap();
        let mut rows = 0;
        let mut value = Vec::new();
        let mut rg = false;
        for p in parts {
            g.same_graph(p)?;
            let node = &tape.nodes[p.id];
            if node.shape.len() != 2 || node.shape[1] != cols {
                return Err(Error::dim(format!("concat_rows: {:?} with {cols} columns", node.shape)));
            }
            rows += node.shape[0];
            value.extend_from_slice(&node.value);
            rg |= node.requires_grad;
        }
        drop(tape);
        Ok(g.push(vec![rows, cols], value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), rg))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<T>> {
        let (shape, value) = self.with_value(|s, v| {
            if s.len() != 2 || start + len > s[1] || len == 0 {
                return Err(Error::dim(format!("slice_cols {start}..{} of {s:?}", start + len)));
            }
            let (m, n) = (s[0], s[1]);
            let mut out = Vec::with_capacity(m * len);
            for r in 0..m {
                out.extend_from_slice(&v[r * n + start..r * n + start + len]);
            }
            Ok((vec![m, len], out))
        })?;
        Ok(self.unary(shape, value, Op::SliceCols { x: self.id, start }))
    }

    pub fn concat_cols(parts: &[Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_cols of nothing"))?;
        let g = first.graph.clone();
        let tape = g.tape.borrow();
        let rows = tape.nodes[first.id].shape[0];
        let mut widths = Vec::with_capacity(parts.len());
        let mut rg = false;
        for p in parts {
            g.same_graph(p)?;
            let node = &tape.nodes[p.id];
            if node.shape.len() != 2 || node.shape[0] != rows {
                return Err(Error::dim(format!("concat_cols: {:?} with {rows} rows", node.shape)));
            }
            widths.push(node.shape[1]);
            rg |= node.requires_grad;
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&tape.nodes[p.id].value[r * w..(r + 1) * w]);
            }
        }
        drop(tape);
        Ok(g.push(vec![rows, total], value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        validate_shape(shape)?;
        let value = self.with_value(|s, v| {
            if shape.iter().product::<usize>() != v.len() {
                return Err(Error::dim(format!("cannot reshape {s:?} into {shape:?}")));
            }
            Ok(v.to_vec())
        })?;
        Ok(self.unary(shape.to_vec(), value, Op::Reshape(self.id)))
    }

    /// Scales every row to unit L2 norm.
    pub fn l2_normalize_rows(&self) -> Result<Var<T>> {
        let (shape, value, norms) = self.with_value(|s, v| {
            let n = *s.last().unwrap();
            let mut norms = Vec::with_capacity(v.len() / n);
            let mut out = Vec::with_capacity(v.len());
            for row in v.chunks_exact(n) {
                let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
                if !(norm > T::zero()) || !norm.is_finite() {
                    return Err(Error::numeric("cannot normalize a zero-norm vector"));
                }
                norms.push(norm);
                out.extend(row.iter().map(|&x| x / norm));
            }
            Ok((s.to_vec(), out, norms))
        })?;
        Ok(self.unary(shape, value, Op::L2NormalizeRows { x: self.id, norms }))
    }
}
