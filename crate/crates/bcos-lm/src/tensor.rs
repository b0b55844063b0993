//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are row-major `f32` buffers behind shared handles. Every non-leaf
//! tensor remembers the operation and operands that produced it, so the
//! computation graph doubles as the tape: [`Tensor::backward`] walks it in
//! reverse topological order, and [`ComputationTape`] re-executes it forward
//! for bit-for-bit replay checks.
//!
//! Scope is deliberately small: no views, no fusion, no higher-order
//! derivatives. Kernels are plain loops so that identical inputs always
//! produce identical bits.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Operation that produced a tensor. Leaf tensors carry `Leaf`.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Sign,
    Exp,
    Log,
    Sqrt,
    Erf,
    Tanh,
    PowConst(f32),
    ClampMin(f32),
    Sum { axis: Option<usize>, keepdim: bool },
    Mean { axis: Option<usize>, keepdim: bool },
    Max { axis: Option<usize>, keepdim: bool },
    Softmax { axis: usize },
    Transpose,
    Reshape,
    SliceCols { start: usize, end: usize },
    ConcatCols,
    GatherRows { indices: Vec<usize> },
    SelectRow { row: usize },
}

struct Inner {
    id: u64,
    data: Vec<f32>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
    op: Op,
    parents: Vec<Tensor>,
}

/// Shared handle to a tensor node. Cloning is cheap and aliases the node.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(id={}, shape={:?}, grad={})",
            inner.id,
            inner.shape,
            inner.requires_grad
        )
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_inner(data: Vec<f32>, shape: Vec<usize>, op: Op, parents: Vec<Tensor>) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.needs_grad());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data,
                shape,
                requires_grad,
                grad: None,
                op,
                parents,
            })),
        }
    }

    /// Leaf tensor from raw data; fails if the element count does not match.
    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::Dim(format!(
                "data length {} does not fit shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::from_inner(data, shape.to_vec(), Op::Leaf, vec![]))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_inner(vec![0.0; numel(shape)], shape.to_vec(), Op::Leaf, vec![])
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Tensor::from_inner(vec![value; numel(shape)], shape.to_vec(), Op::Leaf, vec![])
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::from_inner(vec![value], vec![], Op::Leaf, vec![])
    }

    /// Marks this leaf as trainable. Gradients accumulate into `grad`.
    pub fn requires_grad(self) -> Tensor {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    /// New leaf sharing a copy of this tensor's values, outside any graph.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_inner(inner.data.clone(), inner.shape.clone(), Op::Leaf, vec![])
    }

    pub fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Vec<f32> {
        self.inner.borrow().data.clone()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> f32 {
        let inner = self.inner.borrow();
        debug_assert_eq!(inner.data.len(), 1, "item() on non-scalar");
        inner.data[0]
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrites the stored values in place (same length). Used by the
    /// optimizer; never call on a tensor that participates in a live graph.
    pub fn set_data(&self, data: Vec<f32>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(Error::Dim(format!(
                "set_data length {} != {}",
                data.len(),
                inner.data.len()
            )));
        }
        inner.data = data;
        Ok(())
    }

    pub fn ptr_eq(a: &Tensor, b: &Tensor) -> bool {
        Rc::ptr_eq(&a.inner, &b.inner)
    }

    // ── op constructors ──────────────────────────────────────────────

    fn unary(&self, op: Op) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            (eval_unary(&op, &inner.data)?, inner.shape.clone())
        };
        Ok(Tensor::from_inner(data, shape, op, vec![self.clone()]))
    }

    fn binary(&self, other: &Tensor, op: Op) -> Result<Tensor> {
        let (data, shape) = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            let shape = broadcast_shape(&a.shape, &b.shape)?;
            let data = eval_binary(&op, &a.data, &a.shape, &b.data, &b.shape, &shape)?;
            (data, shape)
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            op,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(Op::Neg)
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(Op::Abs)
    }

    pub fn sign(&self) -> Result<Tensor> {
        self.unary(Op::Sign)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Op::Exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        self.unary(Op::Log)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(Op::Sqrt)
    }

    pub fn erf(&self) -> Result<Tensor> {
        self.unary(Op::Erf)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(Op::Tanh)
    }

    pub fn pow_const(&self, exponent: f32) -> Result<Tensor> {
        self.unary(Op::PowConst(exponent))
    }

    pub fn clamp_min(&self, min: f32) -> Result<Tensor> {
        self.unary(Op::ClampMin(min))
    }

    pub fn add_scalar(&self, value: f32) -> Result<Tensor> {
        self.add(&Tensor::scalar(value))
    }

    pub fn mul_scalar(&self, value: f32) -> Result<Tensor> {
        self.mul(&Tensor::scalar(value))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (data, shape) = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            if a.shape.len() != 2 || b.shape.len() != 2 {
                return Err(Error::Dim(format!(
                    "matmul expects rank-2 operands, got {:?} x {:?}",
                    a.shape, b.shape
                )));
            }
            if a.shape[1] != b.shape[0] {
                return Err(Error::Dim(format!(
                    "matmul inner dimensions disagree: {:?} x {:?}",
                    a.shape, b.shape
                )));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (matmul_kernel(&a.data, &b.data, m, k, n), vec![m, n])
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            Op::MatMul,
            vec![self.clone(), other.clone()],
        ))
    }

    fn reduce(&self, op: Op) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            let (axis, keepdim) = match op {
                Op::Sum { axis, keepdim }
                | Op::Mean { axis, keepdim }
                | Op::Max { axis, keepdim } => (axis, keepdim),
                _ => unreachable!(),
            };
            if let Some(ax) = axis {
                if ax >= inner.shape.len() {
                    return Err(Error::Dim(format!(
                        "reduce axis {} out of range for shape {:?}",
                        ax, inner.shape
                    )));
                }
                if inner.shape[ax] == 0 {
                    return Err(Error::Dim(format!(
                        "reduce over empty axis {} of shape {:?}",
                        ax, inner.shape
                    )));
                }
            } else if inner.data.is_empty() {
                return Err(Error::Dim("reduce over empty tensor".into()));
            }
            let shape = reduced_shape(&inner.shape, axis, keepdim);
            let data = eval_reduce(&op, &inner.data, &inner.shape)?;
            (data, shape)
        };
        Ok(Tensor::from_inner(data, shape, op, vec![self.clone()]))
    }

    pub fn sum(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        self.reduce(Op::Sum { axis, keepdim })
    }

    pub fn mean(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        self.reduce(Op::Mean { axis, keepdim })
    }

    pub fn max(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        self.reduce(Op::Max { axis, keepdim })
    }

    /// Population variance along an axis, composed from mean/sub/mul so the
    /// gradient falls out of the existing primitives.
    pub fn var(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        let mu = self.mean(axis, true)?;
        let centered = self.sub(&mu)?;
        centered.mul(&centered)?.mean(axis, keepdim)
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            if axis >= inner.shape.len() {
                return Err(Error::Dim(format!(
                    "softmax axis {} out of range for shape {:?}",
                    axis, inner.shape
                )));
            }
            (
                softmax_kernel(&inner.data, &inner.shape, axis),
                inner.shape.clone(),
            )
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            Op::Softmax { axis },
            vec![self.clone()],
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            if inner.shape.len() != 2 {
                return Err(Error::Dim(format!(
                    "transpose expects rank 2, got {:?}",
                    inner.shape
                )));
            }
            let (r, c) = (inner.shape[0], inner.shape[1]);
            (transpose_kernel(&inner.data, r, c), vec![c, r])
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            Op::Transpose,
            vec![self.clone()],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let inner = self.inner.borrow();
        if numel(shape) != inner.data.len() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} to {:?}",
                inner.shape, shape
            )));
        }
        let data = inner.data.clone();
        drop(inner);
        Ok(Tensor::from_inner(
            data,
            shape.to_vec(),
            Op::Reshape,
            vec![self.clone()],
        ))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            if inner.shape.len() != 2 {
                return Err(Error::Dim(format!(
                    "slice_cols expects rank 2, got {:?}",
                    inner.shape
                )));
            }
            let (r, c) = (inner.shape[0], inner.shape[1]);
            if start >= end || end > c {
                return Err(Error::Dim(format!(
                    "slice_cols {}..{} out of range for {} columns",
                    start, end, c
                )));
            }
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&inner.data[i * c + start..i * c + end]);
            }
            (data, vec![r, end - start])
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            Op::SliceCols { start, end },
            vec![self.clone()],
        ))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Dim("concat_cols of zero tensors".into()));
        }
        let rows = parts[0].shape()[0];
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::Dim(format!(
                    "concat_cols row mismatch: expected {} rows, got {:?}",
                    rows, s
                )));
            }
        }
        let datas: Vec<Vec<f32>> = parts.iter().map(|p| p.data()).collect();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (d, w) in datas.iter().zip(&widths) {
                data.extend_from_slice(&d[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor::from_inner(
            data,
            vec![rows, total],
            Op::ConcatCols,
            parts.to_vec(),
        ))
    }

    /// Row lookup into a rank-2 table; the gradient scatter-adds back.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            if inner.shape.len() != 2 {
                return Err(Error::Dim(format!(
                    "gather_rows expects rank-2 table, got {:?}",
                    inner.shape
                )));
            }
            let (rows, cols) = (inner.shape[0], inner.shape[1]);
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &ix in indices {
                if ix >= rows {
                    return Err(Error::Input(format!(
                        "gather index {} out of range for {} rows",
                        ix, rows
                    )));
                }
                data.extend_from_slice(&inner.data[ix * cols..(ix + 1) * cols]);
            }
            (data, vec![indices.len(), cols])
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![self.clone()],
        ))
    }

    /// Single row of a rank-2 tensor as a rank-1 tensor.
    pub fn select_row(&self, row: usize) -> Result<Tensor> {
        let (data, shape) = {
            let inner = self.inner.borrow();
            if inner.shape.len() != 2 {
                return Err(Error::Dim(format!(
                    "select_row expects rank 2, got {:?}",
                    inner.shape
                )));
            }
            let (r, c) = (inner.shape[0], inner.shape[1]);
            if row >= r {
                return Err(Error::Dim(format!("row {} out of range for {} rows", row, r)));
            }
            (inner.data[row * c..(row + 1) * c].to_vec(), vec![c])
        };
        Ok(Tensor::from_inner(
            data,
            shape,
            Op::SelectRow { row },
            vec![self.clone()],
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar. Every reachable `requires_grad`
    /// leaf accumulates `d self / d leaf` into its `grad`, adding across
    /// repeated uses and across successive `backward` calls.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.needs_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        let mut adjoint: HashMap<u64, Vec<f32>> = HashMap::new();
        adjoint.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let inner = node.inner.borrow();
            let out_grad = match adjoint.remove(&inner.id) {
                Some(g) => g,
                None => continue,
            };
            if matches!(inner.op, Op::Leaf) {
                drop(inner);
                let mut m = node.inner.borrow_mut();
                match &mut m.grad {
                    Some(g) => {
                        for (gi, oi) in g.iter_mut().zip(&out_grad) {
                            *gi += *oi;
                        }
                    }
                    None => m.grad = Some(out_grad),
                }
                continue;
            }
            let parent_grads = backward_op(&inner.op, &inner.parents, &inner.data, &inner.shape, &out_grad);
            for (parent, grad) in inner.parents.iter().zip(parent_grads) {
                let Some(grad) = grad else { continue };
                if !parent.needs_grad() {
                    continue;
                }
                let entry = adjoint
                    .entry(parent.id())
                    .or_insert_with(|| vec![0.0; parent.len()]);
                for (ei, gi) in entry.iter_mut().zip(&grad) {
                    *ei += *gi;
                }
            }
        }
        Ok(())
    }
}

/// Topological order (parents before children) of the graph below `root`.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    // Iterative DFS; stack entries are (node, child_cursor).
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id(), ());
    while let Some((node, cursor)) = stack.pop() {
        let parent = {
            let inner = node.inner.borrow();
            inner.parents.get(cursor).cloned()
        };
        match parent {
            Some(p) => {
                stack.push((node, cursor + 1));
                if !visited.contains_key(&p.id()) {
                    visited.insert(p.id(), ());
                    stack.push((p, 0));
                }
            }
            None => order.push(node),
        }
    }
    order
}

// ── forward kernels ──────────────────────────────────────────────────

/// Abramowitz–Stegun 7.1.26 rational approximation, |error| <= 1.5e-7.
pub fn erf_scalar(x: f32) -> f32 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs() as f64;
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let y = 1.0 - poly * (-x * x).exp();
    sign * y as f32
}

fn check_finite(op: &str, data: &[f32]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{} produced a non-finite value", op)));
    }
    Ok(())
}

fn eval_unary(op: &Op, x: &[f32]) -> Result<Vec<f32>> {
    let out: Vec<f32> = match op {
        Op::Neg => x.iter().map(|v| -v).collect(),
        Op::Abs => x.iter().map(|v| v.abs()).collect(),
        Op::Sign => x
            .iter()
            .map(|v| {
                if *v > 0.0 {
                    1.0
                } else if *v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        Op::Exp => {
            let out: Vec<f32> = x.iter().map(|v| v.exp()).collect();
            check_finite("exp", &out)?;
            out
        }
        Op::Log => {
            if x.iter().any(|v| *v <= 0.0) {
                return Err(Error::Domain("log of non-positive value".into()));
            }
            x.iter().map(|v| v.ln()).collect()
        }
        Op::Sqrt => {
            if x.iter().any(|v| *v < 0.0) {
                return Err(Error::Domain("sqrt of negative value".into()));
            }
            x.iter().map(|v| v.sqrt()).collect()
        }
        Op::Erf => x.iter().map(|v| erf_scalar(*v)).collect(),
        Op::Tanh => x.iter().map(|v| v.tanh()).collect(),
        Op::PowConst(p) => {
            if p.fract() != 0.0 && x.iter().any(|v| *v < 0.0) {
                return Err(Error::Domain(
                    "pow of negative base with fractional exponent".into(),
                ));
            }
            let out: Vec<f32> = x.iter().map(|v| v.powf(*p)).collect();
            check_finite("pow", &out)?;
            out
        }
        Op::ClampMin(m) => x.iter().map(|v| v.max(*m)).collect(),
        _ => unreachable!("not a unary op: {:?}", op),
    };
    Ok(out)
}

/// Numpy-style broadcast shape (right-aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Dim(format!(
                "shapes {:?} and {:?} are not broadcast-compatible",
                a, b
            )));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Row-major strides with 0 on broadcast (size-1) axes, padded to `rank`.
fn broadcast_strides(shape: &[usize], rank: usize, out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut s = 1usize;
    for i in (0..shape.len()).rev() {
        if shape[i] == out_shape[offset + i] && shape[i] != 1 {
            strides[offset + i] = s;
        } else if shape[i] == 1 {
            strides[offset + i] = 0;
        } else {
            strides[offset + i] = s;
        }
        s *= shape[i];
    }
    strides
}

fn eval_binary(
    op: &Op,
    a: &[f32],
    a_shape: &[usize],
    b: &[f32],
    b_shape: &[usize],
    out_shape: &[usize],
) -> Result<Vec<f32>> {
    if matches!(op, Op::Div) && b.iter().any(|v| *v == 0.0) {
        return Err(Error::Domain("division by zero".into()));
    }
    let rank = out_shape.len();
    let n = numel(out_shape);
    let sa = broadcast_strides(a_shape, rank, out_shape);
    let sb = broadcast_strides(b_shape, rank, out_shape);
    let mut out = vec![0.0f32; n];
    let mut coords = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for o in out.iter_mut() {
        let (x, y) = (a[ia], b[ib]);
        *o = match op {
            Op::Add => x + y,
            Op::Sub => x - y,
            Op::Mul => x * y,
            Op::Div => x / y,
            _ => unreachable!("not a binary op: {:?}", op),
        };
        // increment multi-index
        for d in (0..rank).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    if matches!(op, Op::Div) {
        check_finite("div", &out)?;
    }
    Ok(out)
}

/// Sums `grad` (shaped `grad_shape`) down to `target_shape` for broadcasting.
fn reduce_to_shape(grad: &[f32], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f32> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let st = broadcast_strides(target_shape, rank, grad_shape);
    let mut out = vec![0.0f32; numel(target_shape)];
    let mut coords = vec![0usize; rank];
    let mut it = 0usize;
    for g in grad {
        out[it] += *g;
        for d in (0..rank).rev() {
            coords[d] += 1;
            it += st[d];
            if coords[d] < grad_shape[d] {
                break;
            }
            coords[d] = 0;
            it -= st[d] * grad_shape[d];
        }
    }
    out
}

pub fn matmul_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn transpose_kernel(x: &[f32], r: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

fn reduced_shape(shape: &[usize], axis: Option<usize>, keepdim: bool) -> Vec<usize> {
    match axis {
        None => vec![],
        Some(ax) => {
            let mut s = shape.to_vec();
            if keepdim {
                s[ax] = 1;
            } else {
                s.remove(ax);
            }
            s
        }
    }
}

/// Iterates reduction cells: for each output cell, the slice of input
/// indices it reduces over, expressed as (outer, axis_len, inner strides).
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn eval_reduce(op: &Op, x: &[f32], shape: &[usize]) -> Result<Vec<f32>> {
    let (axis, _) = match op {
        Op::Sum { axis, keepdim } | Op::Mean { axis, keepdim } | Op::Max { axis, keepdim } => {
            (*axis, *keepdim)
        }
        _ => unreachable!(),
    };
    let out = match axis {
        None => {
            let v = match op {
                Op::Sum { .. } => x.iter().sum::<f32>(),
                Op::Mean { .. } => x.iter().sum::<f32>() / x.len() as f32,
                Op::Max { .. } => x.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
                _ => unreachable!(),
            };
            vec![v]
        }
        Some(ax) => {
            let (outer, len, inner) = axis_geometry(shape, ax);
            let mut out = vec![0.0f32; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let cell = match op {
                        Op::Sum { .. } => (0..len).map(|l| x[base + l * inner]).sum::<f32>(),
                        Op::Mean { .. } => {
                            (0..len).map(|l| x[base + l * inner]).sum::<f32>() / len as f32
                        }
                        Op::Max { .. } => (0..len)
                            .map(|l| x[base + l * inner])
                            .fold(f32::NEG_INFINITY, f32::max),
                        _ => unreachable!(),
                    };
                    out[o * inner + i] = cell;
                }
            }
            out
        }
    };
    Ok(out)
}

fn softmax_kernel(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = f32::NEG_INFINITY;
            for l in 0..len {
                m = m.max(x[base + l * inner]);
            }
            let mut z = 0.0f32;
            for l in 0..len {
                let e = (x[base + l * inner] - m).exp();
                out[base + l * inner] = e;
                z += e;
            }
            for l in 0..len {
                out[base + l * inner] /= z;
            }
        }
    }
    out
}

// ── backward kernels ─────────────────────────────────────────────────

/// Per-parent gradients for one op. `None` entries skip accumulation.
fn backward_op(
    op: &Op,
    parents: &[Tensor],
    out_data: &[f32],
    out_shape: &[usize],
    g: &[f32],
) -> Vec<Option<Vec<f32>>> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul => {
            let a = parents[0].inner.borrow();
            let b = parents[1].inner.borrow();
            let (m, k) = (a.shape[0], a.shape[1]);
            let n = b.shape[1];
            // dA = g @ B^T ; dB = A^T @ g
            let bt = transpose_kernel(&b.data, k, n);
            let da = matmul_kernel(g, &bt, m, n, k);
            let at = transpose_kernel(&a.data, m, k);
            let db = matmul_kernel(&at, g, k, m, n);
            vec![Some(da), Some(db)]
        }
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let a = parents[0].inner.borrow();
            let b = parents[1].inner.borrow();
            let rank = out_shape.len();
            let sa = broadcast_strides(&a.shape, rank, out_shape);
            let sb = broadcast_strides(&b.shape, rank, out_shape);
            let n = numel(out_shape);
            let mut ga = vec![0.0f32; n];
            let mut gb = vec![0.0f32; n];
            let mut coords = vec![0usize; rank];
            let (mut ia, mut ib) = (0usize, 0usize);
            for idx in 0..n {
                let go = g[idx];
                match op {
                    Op::Add => {
                        ga[idx] = go;
                        gb[idx] = go;
                    }
                    Op::Sub => {
                        ga[idx] = go;
                        gb[idx] = -go;
                    }
                    Op::Mul => {
                        ga[idx] = go * b.data[ib];
                        gb[idx] = go * a.data[ia];
                    }
                    Op::Div => {
                        let y = b.data[ib];
                        ga[idx] = go / y;
                        gb[idx] = -go * a.data[ia] / (y * y);
                    }
                    _ => unreachable!(),
                }
                for d in (0..rank).rev() {
                    coords[d] += 1;
                    ia += sa[d];
                    ib += sb[d];
                    if coords[d] < out_shape[d] {
                        break;
                    }
                    coords[d] = 0;
                    ia -= sa[d] * out_shape[d];
                    ib -= sb[d] * out_shape[d];
                }
            }
            vec![
                Some(reduce_to_shape(&ga, out_shape, &a.shape)),
                Some(reduce_to_shape(&gb, out_shape, &b.shape)),
            ]
        }
        Op::Neg => vec![Some(g.iter().map(|v| -v).collect())],
        Op::Abs => {
            let x = parents[0].inner.borrow();
            // subgradient at 0 is 0
            vec![Some(
                x.data
                    .iter()
                    .zip(g)
                    .map(|(v, go)| {
                        if *v > 0.0 {
                            *go
                        } else if *v < 0.0 {
                            -*go
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )]
        }
        Op::Sign => vec![Some(vec![0.0; g.len()])],
        Op::Exp => vec![Some(out_data.iter().zip(g).map(|(y, go)| y * go).collect())],
        Op::Log => {
            let x = parents[0].inner.borrow();
            vec![Some(x.data.iter().zip(g).map(|(v, go)| go / v).collect())]
        }
        Op::Sqrt => vec![Some(
            out_data
                .iter()
                .zip(g)
                .map(|(y, go)| if *y == 0.0 { 0.0 } else { go / (2.0 * y) })
                .collect(),
        )],
        Op::Erf => {
            let x = parents[0].inner.borrow();
            let c = 2.0 / std::f32::consts::PI.sqrt();
            vec![Some(
                x.data
                    .iter()
                    .zip(g)
                    .map(|(v, go)| go * c * (-v * v).exp())
                    .collect(),
            )]
        }
        Op::Tanh => vec![Some(
            out_data.iter().zip(g).map(|(y, go)| go * (1.0 - y * y)).collect(),
        )],
        Op::PowConst(p) => {
            let x = parents[0].inner.borrow();
            vec![Some(
                x.data
                    .iter()
                    .zip(g)
                    .map(|(v, go)| {
                        // d/dx x^p = p x^{p-1}; defined as 0 at x == 0 (used
                        // for the |cos|^{B-1} factor at the orthogonal point).
                        if *p == 0.0 || *v == 0.0 {
                            0.0
                        } else {
                            go * p * v.powf(p - 1.0)
                        }
                    })
                    .collect(),
            )]
        }
        Op::ClampMin(m) => {
            let x = parents[0].inner.borrow();
            vec![Some(
                x.data
                    .iter()
                    .zip(g)
                    .map(|(v, go)| if *v >= *m { *go } else { 0.0 })
                    .collect(),
            )]
        }
        Op::Sum { axis, .. } => {
            let x = parents[0].inner.borrow();
            vec![Some(spread_reduce_grad(g, &x.shape, *axis, |_, _| 1.0))]
        }
        Op::Mean { axis, .. } => {
            let x = parents[0].inner.borrow();
            let scale = match axis {
                None => 1.0 / x.data.len() as f32,
                Some(ax) => 1.0 / x.shape[*ax] as f32,
            };
            vec![Some(spread_reduce_grad(g, &x.shape, *axis, |_, _| scale))]
        }
        Op::Max { axis, .. } => {
            let x = parents[0].inner.borrow();
            let mut gx = vec![0.0f32; x.data.len()];
            match axis {
                None => {
                    // first maximum wins on ties
                    let mut best = 0usize;
                    for (i, v) in x.data.iter().enumerate() {
                        if *v > x.data[best] {
                            best = i;
                        }
                    }
                    gx[best] = g[0];
                }
                Some(ax) => {
                    let (outer, len, inner) = axis_geometry(&x.shape, *ax);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut best = 0usize;
                            for l in 0..len {
                                if x.data[base + l * inner] > x.data[base + best * inner] {
                                    best = l;
                                }
                            }
                            gx[base + best * inner] = g[o * inner + i];
                        }
                    }
                }
            }
            vec![Some(gx)]
        }
        Op::Softmax { axis } => {
            let (outer, len, inner) = axis_geometry(out_shape, *axis);
            let mut gx = vec![0.0f32; out_data.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0f32;
                    for l in 0..len {
                        dot += g[base + l * inner] * out_data[base + l * inner];
                    }
                    for l in 0..len {
                        let y = out_data[base + l * inner];
                        gx[base + l * inner] = y * (g[base + l * inner] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }
        Op::Transpose => {
            let (c, r) = (out_shape[0], out_shape[1]);
            vec![Some(transpose_kernel(g, c, r))]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::SliceCols { start, end } => {
            let x = parents[0].inner.borrow();
            let (r, c) = (x.shape[0], x.shape[1]);
            let w = end - start;
            let mut gx = vec![0.0f32; r * c];
            for i in 0..r {
                for j in 0..w {
                    gx[i * c + start + j] = g[i * w + j];
                }
            }
            vec![Some(gx)]
        }
        Op::ConcatCols => {
            let rows = out_shape[0];
            let total = out_shape[1];
            let mut grads = Vec::with_capacity(parents.len());
            let mut offset = 0usize;
            for p in parents {
                let w = p.shape()[1];
                let mut gp = vec![0.0f32; rows * w];
                for i in 0..rows {
                    gp[i * w..(i + 1) * w]
                        .copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                }
                grads.push(Some(gp));
                offset += w;
            }
            grads
        }
        Op::GatherRows { indices } => {
            let table = parents[0].inner.borrow();
            let cols = table.shape[1];
            let mut gt = vec![0.0f32; table.data.len()];
            for (row, &ix) in indices.iter().enumerate() {
                for j in 0..cols {
                    gt[ix * cols + j] += g[row * cols + j];
                }
            }
            vec![Some(gt)]
        }
        Op::SelectRow { row } => {
            let x = parents[0].inner.borrow();
            let (_, c) = (x.shape[0], x.shape[1]);
            let mut gx = vec![0.0f32; x.data.len()];
            gx[row * c..(row + 1) * c].copy_from_slice(g);
            vec![Some(gx)]
        }
    }
}

/// Expands a reduced gradient back over the reduction axis, scaled per cell.
fn spread_reduce_grad(
    g: &[f32],
    in_shape: &[usize],
    axis: Option<usize>,
    scale: impl Fn(usize, usize) -> f32,
) -> Vec<f32> {
    match axis {
        None => {
            let s = scale(0, 0);
            vec![g[0] * s; numel(in_shape)]
        }
        Some(ax) => {
            let (outer, len, inner) = axis_geometry(in_shape, ax);
            let mut out = vec![0.0f32; numel(in_shape)];
            for o in 0..outer {
                for i in 0..inner {
                    let go = g[o * inner + i];
                    for l in 0..len {
                        out[o * len * inner + l * inner + i] = go * scale(o, i);
                    }
                }
            }
            out
        }
    }
}

// ── tape replay ──────────────────────────────────────────────────────

/// Topologically ordered record of the operations below one output tensor.
/// Replaying recomputes every node's forward value from its operands with
/// the same kernels, which must reproduce the stored bits exactly.
pub struct ComputationTape {
    nodes: Vec<Tensor>,
}

impl ComputationTape {
    pub fn from_output(output: &Tensor) -> ComputationTape {
        ComputationTape {
            nodes: topo_order(output),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Recomputes every non-leaf node and checks the result against the
    /// stored data, bit for bit. Returns the index of the first divergence.
    pub fn replay_check(&self) -> Result<Option<usize>> {
        let mut recomputed: HashMap<u64, Vec<f32>> = HashMap::new();
        for (step, node) in self.nodes.iter().enumerate() {
            let inner = node.inner.borrow();
            let value: Vec<f32> = match &inner.op {
                Op::Leaf => inner.data.clone(),
                op => {
                    let parent_data: Vec<Vec<f32>> = inner
                        .parents
                        .iter()
                        .map(|p| recomputed[&p.id()].clone())
                        .collect();
                    let parent_shapes: Vec<Vec<usize>> =
                        inner.parents.iter().map(|p| p.shape()).collect();
                    replay_op(op, &parent_data, &parent_shapes, &inner.shape)?
                }
            };
            if value.len() != inner.data.len()
                || value
                    .iter()
                    .zip(&inner.data)
                    .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Ok(Some(step));
            }
            recomputed.insert(inner.id, value);
        }
        Ok(None)
    }
}

fn replay_op(
    op: &Op,
    parents: &[Vec<f32>],
    parent_shapes: &[Vec<usize>],
    out_shape: &[usize],
) -> Result<Vec<f32>> {
    match op {
        Op::Leaf => unreachable!(),
        Op::MatMul => {
            let (m, k) = (parent_shapes[0][0], parent_shapes[0][1]);
            let n = parent_shapes[1][1];
            Ok(matmul_kernel(&parents[0], &parents[1], m, k, n))
        }
        Op::Add | Op::Sub | Op::Mul | Op::Div => eval_binary(
            op,
            &parents[0],
            &parent_shapes[0],
            &parents[1],
            &parent_shapes[1],
            out_shape,
        ),
        Op::Sum { .. } | Op::Mean { .. } | Op::Max { .. } => {
            eval_reduce(op, &parents[0], &parent_shapes[0])
        }
        Op::Softmax { axis } => Ok(softmax_kernel(&parents[0], &parent_shapes[0], *axis)),
        Op::Transpose => {
            let (r, c) = (parent_shapes[0][0], parent_shapes[0][1]);
            Ok(transpose_kernel(&parents[0], r, c))
        }
        Op::Reshape => Ok(parents[0].clone()),
        Op::SliceCols { start, end } => {
            let (r, c) = (parent_shapes[0][0], parent_shapes[0][1]);
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&parents[0][i * c + start..i * c + end]);
            }
            Ok(data)
        }
        Op::ConcatCols => {
            let rows = out_shape[0];
            let mut data = Vec::with_capacity(numel(out_shape));
            for i in 0..rows {
                for (d, s) in parents.iter().zip(parent_shapes) {
                    let w = s[1];
                    data.extend_from_slice(&d[i * w..(i + 1) * w]);
                }
            }
            Ok(data)
        }
        Op::GatherRows { indices } => {
            let cols = parent_shapes[0][1];
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &ix in indices {
                data.extend_from_slice(&parents[0][ix * cols..(ix + 1) * cols]);
            }
            Ok(data)
        }
        Op::SelectRow { row } => {
            let c = parent_shapes[0][1];
            Ok(parents[0][row * c..(row + 1) * c].to_vec())
        }
        unary => eval_unary(unary, &parents[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f32], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let id = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let m = t(&[3.0, -1.0, 2.0, 5.0], &[2, 2]);
        let out = id.matmul(&m).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[1.0, 2.0], &[1, 2]);
        let b = t(&[3.0, 4.0], &[2, 1]);
        assert_eq!(a.matmul(&b).unwrap().data(), vec![11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(&[2, 3]);
        let m = t(&[1.0; 6], &[3, 2]);
        assert!(z.matmul(&m).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(Tensor::scalar(-2.5).abs().unwrap().item(), 2.5);
        assert_eq!(Tensor::scalar(0.0).erf().unwrap().item(), 0.0);
        assert_eq!(Tensor::scalar(0.6).pow_const(1.0).unwrap().item(), 0.6);
    }

    #[test]
    fn log_domain_error() {
        let x = t(&[1.0, 0.0], &[2]);
        assert!(matches!(x.log(), Err(Error::Domain(_))));
    }

    #[test]
    fn reduce_examples() {
        let x = t(&[1.0, 3.0], &[2]);
        assert_eq!(x.mean(None, false).unwrap().item(), 2.0);
        assert_eq!(x.var(None, false).unwrap().item(), 1.0);
        assert_eq!(Tensor::zeros(&[4]).sum(None, false).unwrap().item(), 0.0);
    }

    #[test]
    fn reduce_axis_out_of_range() {
        let x = t(&[1.0, 2.0], &[2]);
        assert!(matches!(x.sum(Some(1), false), Err(Error::Dim(_))));
    }

    #[test]
    fn softmax_examples() {
        let c = t(&[0.7, 0.7, 0.7], &[3]);
        for v in c.softmax(0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
        let x = t(&[0.0, (3.0f32).ln()], &[2]);
        let y = x.softmax(0).unwrap().data();
        assert!((y[0] - 0.25).abs() < 1e-6 && (y[1] - 0.75).abs() < 1e-6);
        let big = t(&[1000.0, 0.0], &[2]);
        let y = big.softmax(0).unwrap().data();
        assert!(y[0] > 1.0 - 1e-6 && y[1] < 1e-6 && y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[0.1, -2.0, 3.0, 0.5, 0.5, 0.5], &[2, 3]);
        let y = x.softmax(1).unwrap();
        let sums = y.sum(Some(1), false).unwrap().data();
        for s in sums {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = t(&[1.0, -2.0, 0.5, 7.0], &[2, 2]).requires_grad();
        let loss = x.sum(None, false).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_square_scalar() {
        let x = Tensor::scalar(3.0).requires_grad();
        let loss = x.mul(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_detached_has_no_grad() {
        let x = Tensor::scalar(2.0).requires_grad();
        let d = x.detach();
        let loss = d.mul(&d).unwrap();
        loss.backward().unwrap();
        assert!(x.grad().is_none());
        assert!(d.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = t(&[1.0, 2.0], &[2]).requires_grad();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let x = Tensor::scalar(2.0).requires_grad();
        // loss = x*x + x  =>  dloss/dx = 2x + 1 = 5
        let loss = x.mul(&x).unwrap().add(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
    }

    #[test]
    fn broadcast_binary_and_grad() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).requires_grad();
        let b = t(&[10.0, 20.0], &[2, 1]).requires_grad();
        let out = a.mul(&b).unwrap();
        assert_eq!(out.data(), vec![10.0, 20.0, 30.0, 80.0, 100.0, 120.0]);
        out.sum(None, false).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![10.0, 10.0, 10.0, 20.0, 20.0, 20.0]);
        assert_eq!(b.grad().unwrap(), vec![6.0, 15.0]);
    }

    #[test]
    fn gather_rows_scatter_grad() {
        let table = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).requires_grad();
        let picked = table.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(picked.data(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        picked.sum(None, false).unwrap().backward().unwrap();
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn slice_concat_roundtrip_grad() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]).requires_grad();
        let a = x.slice_cols(0, 1).unwrap();
        let b = x.slice_cols(1, 2).unwrap();
        let back = Tensor::concat_cols(&[a, b]).unwrap();
        assert_eq!(back.data(), x.data());
        back.sum(None, false).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn tape_replay_is_bit_exact() {
        let x = t(&[0.3, -1.2, 2.2, 0.9], &[2, 2]).requires_grad();
        let w = t(&[0.5, -0.25, 1.5, 0.75], &[2, 2]);
        let y = x
            .matmul(&w)
            .unwrap()
            .erf()
            .unwrap()
            .softmax(1)
            .unwrap()
            .sum(None, false)
            .unwrap();
        let tape = ComputationTape::from_output(&y);
        assert!(tape.len() >= 5);
        assert_eq!(tape.replay_check().unwrap(), None);
    }

    #[test]
    fn determinism_same_inputs_same_bits() {
        let run = || {
            let x = t(&[0.11, -0.7, 0.02, 1.9, -3.0, 0.5], &[2, 3]);
            let w = t(&[0.4, -0.1, 0.9, 0.33, -0.8, 0.05], &[3, 2]);
            x.matmul(&w)
                .unwrap()
                .softmax(1)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn erf_matches_reference_values() {
        // reference values from 64-bit math libraries
        let cases = [
            (0.5f32, 0.5204999f32),
            (1.0, 0.8427008),
            (2.0, 0.9953223),
            (-1.0, -0.8427008),
        ];
        for (x, want) in cases {
            assert!(
                (erf_scalar(x) - want).abs() <= 2e-7,
                "erf({x}) = {} != {want}",
                erf_scalar(x)
            );
        }
    }

    #[test]
    fn max_reduce_ties_first_index() {
        let x = t(&[1.0, 3.0, 3.0], &[3]).requires_grad();
        let m = x.max(None, false).unwrap();
        assert_eq!(m.item(), 3.0);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }
}
