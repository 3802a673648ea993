//! Tape-based reverse-mode differentiation over [`Array`] values.
//!
//! A [`Tape`] records one forward pass. Every primitive appends a node holding
//! its value and the rule needed to push gradients back to its parents.
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. A tape is meant to be built, used for one
//! `backward`, and dropped.

pub mod cases;
mod gradcheck;

pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckReport};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a primitive's local derivative rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Leaf,
    Constant,
    Matmul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sum,
    Mean,
    SumAll,
    Softmax,
    LogSoftmax,
    Exp,
    Gelu,
    Sigmoid,
    Tanh,
    SquaredError,
    Concat,
    Reshape,
    Transpose,
    GatherRows,
    AddRow,
    MulRow,
    MulCol,
    DivCol,
    Slice,
    LayerNorm,
}

impl Primitive {
    pub const DIFFERENTIABLE: [Primitive; 26] = [
        Primitive::Matmul,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::AddScalar,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::SumAll,
        Primitive::Softmax,
        Primitive::LogSoftmax,
        Primitive::Exp,
        Primitive::Gelu,
        Primitive::Sigmoid,
        Primitive::Tanh,
        Primitive::SquaredError,
        Primitive::Concat,
        Primitive::Reshape,
        Primitive::Transpose,
        Primitive::GatherRows,
        Primitive::AddRow,
        Primitive::MulRow,
        Primitive::MulCol,
        Primitive::DivCol,
        Primitive::Slice,
        Primitive::LayerNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::Constant => "constant",
            Primitive::Matmul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::AddScalar => "add_scalar",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumAll => "sum_all",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Exp => "exp",
            Primitive::Gelu => "gelu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::SquaredError => "squared_error",
            Primitive::Concat => "concat",
            Primitive::Reshape => "reshape",
            Primitive::Transpose => "transpose",
            Primitive::GatherRows => "gather_rows",
            Primitive::AddRow => "add_row",
            Primitive::MulRow => "mul_row",
            Primitive::MulCol => "mul_col",
            Primitive::DivCol => "div_col",
            Primitive::Slice => "slice",
            Primitive::LayerNorm => "layer_norm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::DIFFERENTIABLE
            .iter()
            .copied()
            .find(|p| p.name() == name)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Exp(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SquaredError(Var, Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Slice { x: Var, axis: usize, start: usize },
    LayerNorm { x: Var, inv_std: Vec<f64> },
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::Constant => Primitive::Constant,
            Op::Matmul(..) => Primitive::Matmul,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::Scale(..) => Primitive::Scale,
            Op::AddScalar(..) => Primitive::AddScalar,
            Op::Sum(..) => Primitive::Sum,
            Op::Mean(..) => Primitive::Mean,
            Op::SumAll(..) => Primitive::SumAll,
            Op::Softmax(..) => Primitive::Softmax,
            Op::LogSoftmax(..) => Primitive::LogSoftmax,
            Op::Exp(..) => Primitive::Exp,
            Op::Gelu(..) => Primitive::Gelu,
            Op::Sigmoid(..) => Primitive::Sigmoid,
            Op::Tanh(..) => Primitive::Tanh,
            Op::SquaredError(..) => Primitive::SquaredError,
            Op::Concat(..) => Primitive::Concat,
            Op::Reshape(..) => Primitive::Reshape,
            Op::Transpose(..) => Primitive::Transpose,
            Op::GatherRows(..) => Primitive::GatherRows,
            Op::AddRow(..) => Primitive::AddRow,
            Op::MulRow(..) => Primitive::MulRow,
            Op::MulCol(..) => Primitive::MulCol,
            Op::DivCol(..) => Primitive::DivCol,
            Op::Slice { .. } => Primitive::Slice,
            Op::LayerNorm { .. } => Primitive::LayerNorm,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Scales the backward contribution of one primitive. Only used to check
/// that the gradient checker catches broken derivative rules.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fault {
    pub primitive: Primitive,
    pub factor: f64,
}

/// Records a forward computation for a single reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient for `var`, if any flowed into it. Leaves always have one.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf. Panics for vars that never required a gradient.
    pub fn wrt(&self, var: Var) -> &Array {
        self.get(var).expect("no gradient recorded for this var")
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Option<Fault>) -> Self {
        Self {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn primitive(&self, v: Var) -> Primitive {
        self.nodes[v.0].op.primitive()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.needs(&[x]);
        self.push(value, Op::Scale(x, c), ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        let ng = self.needs(&[x]);
        self.push(value, Op::AddScalar(x), ng)
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x).sum_axis(axis)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Sum(x, axis), ng))
    }

    /// Mean along `axis`, keeping it with size 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = self.shape(x).get(axis).copied().unwrap_or(1) as f64;
        let value = self.value(x).sum_axis(axis)?.map(|v| v / len);
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Mean(x, axis), ng))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Array::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(value, Op::SumAll(x), ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x).softmax(axis)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax(x, axis), ng))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = xv.axis_split(axis, "log_softmax")?;
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len)
                    .map(|a| xv.data()[idx(a)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + libm::log(
                        (0..len)
                            .map(|a| libm::exp(xv.data()[idx(a)] - max))
                            .sum::<f64>(),
                    );
                for a in 0..len {
                    out[idx(a)] = xv.data()[idx(a)] - lse;
                }
            }
        }
        let value = Array::new(xv.shape().to_vec(), out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::LogSoftmax(x, axis), ng))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(libm::exp);
        let ng = self.needs(&[x]);
        self.push(value, Op::Exp(x), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        let ng = self.needs(&[x]);
        self.push(value, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let ng = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(libm::tanh);
        let ng = self.needs(&[x]);
        self.push(value, Op::Tanh(x), ng)
    }

    /// Mean of squared differences, as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("squared_error", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.len().max(1) as f64;
        let total: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Array::scalar(total / n), Op::SquaredError(a, b), ng))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {} for shape {:?}", axis, base),
            ));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} on axis {}", s, base, axis),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = self.needs(xs);
        Ok(self.push(Array::new(shape, data)?, Op::Concat(xs.to_vec(), axis), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(x)
            .reshape(shape.to_vec())
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {:?}", self.shape(x), shape)))?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Transpose(x), ng))
    }

    /// Selects rows of a rank-2 array; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.expect2("gather_rows")?;
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {} of {:?}", bad, xv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(xv.row(i));
        }
        let value = Array::new([rows.len(), c], data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::GatherRows(x, rows.to_vec()), ng))
    }

    fn row_operand(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self.value(x).expect2(op)?;
        if self.shape(row) != [1, c] {
            return Err(Error::shape(
                op,
                format!("{:?} with row {:?}", self.shape(x), self.shape(row)),
            ));
        }
        Ok((r, c))
    }

    fn col_operand(&self, op: &'static str, x: Var, col: Var) -> Result<(usize, usize)> {
        let (r, c) = self.value(x).expect2(op)?;
        if self.shape(col) != [r, 1] {
            return Err(Error::shape(
                op,
                format!("{:?} with column {:?}", self.shape(x), self.shape(col)),
            ));
        }
        Ok((r, c))
    }

    /// `x + row` with a `1 x c` row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_operand("add_row", x, row)?;
        let rv = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += rv[i % c];
        }
        let ng = self.needs(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), ng))
    }

    /// `x * row` with a `1 x c` row broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_operand("mul_row", x, row)?;
        let rv = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v *= rv[i % c];
        }
        let ng = self.needs(&[x, row]);
        Ok(self.push(value, Op::MulRow(x, row), ng))
    }

    /// `x * col` with an `r x 1` column broadcast over the columns of `x`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (_, c) = self.col_operand("mul_col", x, col)?;
        let cv = self.value(col).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v *= cv[i / c];
        }
        let ng = self.needs(&[x, col]);
        Ok(self.push(value, Op::MulCol(x, col), ng))
    }

    /// `x / col` with an `r x 1` column broadcast over the columns of `x`.
    pub fn div_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (_, c) = self.col_operand("div_col", x, col)?;
        let cv = self.value(col).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v /= cv[i / c];
        }
        let ng = self.needs(&[x, col]);
        Ok(self.push(value, Op::DivCol(x, col), ng))
    }

    /// Contiguous range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = xv.axis_split(axis, "slice")?;
        if start >= end || end > len {
            return Err(Error::shape(
                "slice",
                format!("{}..{} on axis of length {}", start, end, len),
            ));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            data.extend_from_slice(&xv.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = width;
        let ng = self.needs(&[x]);
        Ok(self.push(Array::new(shape, data)?, Op::Slice { x, axis, start }, ng))
    }

    /// Normalizes each row of a rank-2 array to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.expect2("layer_norm")?;
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let s = 1.0 / libm::sqrt(var + eps);
            for (j, v) in row.iter().enumerate() {
                out[i * c + j] = (v - mu) * s;
            }
            inv_std.push(s);
        }
        let value = Array::new([r, c], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::LayerNorm { x, inv_std }, ng))
    }

    /// Picks element `index` of a flat view of `x` as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).len();
        let col = self.reshape(x, &[n, 1])?;
        let row = self.gather_rows(col, &[index])?;
        self.reshape(row, &[])
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array::full(out.shape().to_vec(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let factor = match self.fault {
                Some(f) if f.primitive == node.op.primitive() => f.factor,
                _ => 1.0,
            };
            for (parent, contribution) in self.local_grads(node, &g)? {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                let contribution = if factor == 1.0 {
                    contribution
                } else {
                    contribution.map(|v| v * factor)
                };
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Array::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Array) -> Result<Vec<(Var, Array)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        Ok(match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Matmul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()?)?;
                let gb = val(*a).transpose()?.matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                vec![
                    (*a, g.zip_map(val(*b), |x, y| x * y)),
                    (*b, g.zip_map(val(*a), |x, y| x * y)),
                ]
            }
            Op::Scale(x, c) => {
                let c = *c;
                vec![(*x, g.map(|v| v * c))]
            }
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::Sum(x, axis) => {
                let len = val(*x).shape()[*axis];
                vec![(*x, g.broadcast_axis(*axis, len))]
            }
            Op::Mean(x, axis) => {
                let len = val(*x).shape()[*axis];
                let inv = 1.0 / len as f64;
                vec![(*x, g.broadcast_axis(*axis, len).map(|v| v * inv))]
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                vec![(*x, Array::full(val(*x).shape().to_vec(), gv))]
            }
            Op::Softmax(x, axis) => {
                let len = y.shape()[*axis];
                let gy = g.zip_map(y, |a, b| a * b);
                let dot = gy.sum_axis(*axis)?.broadcast_axis(*axis, len);
                let mut out = gy;
                for ((o, yv), d) in out.data_mut().iter_mut().zip(y.data()).zip(dot.data()) {
                    *o -= yv * d;
                }
                vec![(*x, out)]
            }
            Op::LogSoftmax(x, axis) => {
                let len = y.shape()[*axis];
                let total = g.sum_axis(*axis)?.broadcast_axis(*axis, len);
                let mut out = g.clone();
                for ((o, yv), t) in out.data_mut().iter_mut().zip(y.data()).zip(total.data()) {
                    *o -= libm::exp(*yv) * t;
                }
                vec![(*x, out)]
            }
            Op::Exp(x) => vec![(*x, g.zip_map(y, |a, b| a * b))],
            Op::Gelu(x) => vec![(*x, g.zip_map(val(*x), |a, b| a * gelu_grad(b)))],
            Op::Sigmoid(x) => vec![(*x, g.zip_map(y, |a, s| a * s * (1.0 - s)))],
            Op::Tanh(x) => vec![(*x, g.zip_map(y, |a, t| a * (1.0 - t * t)))],
            Op::SquaredError(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let scale = 2.0 * g.data()[0] / av.len().max(1) as f64;
                let ga = av.zip_map(bv, |x, y| scale * (x - y));
                let gb = ga.map(|v| -v);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Concat(xs, axis) => {
                let axis = *axis;
                let (outer, total, inner) = g.axis_split(axis, "concat")?;
                let mut out = Vec::with_capacity(xs.len());
                let mut offset = 0;
                for &x in xs {
                    let len = val(x).shape()[axis];
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    out.push((x, Array::new(val(x).shape().to_vec(), data)?));
                    offset += len;
                }
                out
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape().to_vec())?)],
            Op::Transpose(x) => vec![(*x, g.transpose()?)],
            Op::GatherRows(x, rows) => {
                let xv = val(*x);
                let c = xv.shape()[1];
                let mut out = Array::zeros(xv.shape().to_vec());
                for (k, &i) in rows.iter().enumerate() {
                    let src = g.row(k);
                    for (d, s) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                vec![(*x, out)]
            }
            Op::AddRow(x, row) => vec![(*x, g.clone()), (*row, g.sum_axis(0)?)],
            Op::MulRow(x, row) => {
                let (r, _) = g.expect2("mul_row")?;
                let rb = val(*row).broadcast_axis(0, r);
                let gx = g.zip_map(&rb, |a, b| a * b);
                let grow = g.zip_map(val(*x), |a, b| a * b).sum_axis(0)?;
                vec![(*x, gx), (*row, grow)]
            }
            Op::MulCol(x, col) => {
                let (_, c) = g.expect2("mul_col")?;
                let cb = val(*col).broadcast_axis(1, c);
                let gx = g.zip_map(&cb, |a, b| a * b);
                let gcol = g.zip_map(val(*x), |a, b| a * b).sum_axis(1)?;
                vec![(*x, gx), (*col, gcol)]
            }
            Op::DivCol(x, col) => {
                let (_, c) = g.expect2("div_col")?;
                let cv = val(*col);
                let cb = cv.broadcast_axis(1, c);
                let gx = g.zip_map(&cb, |a, b| a / b);
                let num = g.zip_map(val(*x), |a, b| a * b).sum_axis(1)?;
                let gcol = num.zip_map(cv, |n, d| -n / (d * d));
                vec![(*x, gx), (*col, gcol)]
            }
            Op::Slice { x, axis, start } => {
                let xv = val(*x);
                let (outer, len, inner) = xv.axis_split(*axis, "slice")?;
                let width = g.shape()[*axis];
                let mut out = Array::zeros(xv.shape().to_vec());
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src = o * width * inner;
                    out.data_mut()[dst..dst + width * inner]
                        .copy_from_slice(&g.data()[src..src + width * inner]);
                }
                vec![(*x, out)]
            }
            Op::LayerNorm { x, inv_std } => {
                let (r, c) = y.expect2("layer_norm")?;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let gy = g.row(i);
                    let yy = y.row(i);
                    let mean_g = gy.iter().sum::<f64>() / c as f64;
                    let mean_gy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        out[i * c + j] = inv_std[i] * (gy[j] - mean_g - yy[j] * mean_gy);
                    }
                }
                vec![(*x, Array::new([r, c], out)?)]
            }
        })
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: &[f64]) -> Array {
        Array::new([values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn square_via_mul_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Array::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), Some(6.0));
    }

    #[test]
    fn softmax_of_equal_values_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(vector(&[0.7, 0.7, 0.7]));
        let y = t.softmax(x, 0).unwrap();
        for v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradient_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Array::full([2, 3], 0.5));
        let b = t.leaf(Array::full([3, 4], -0.25));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 4]);
        let s = t.sum_all(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).shape(), &[2, 3]);
        assert_eq!(g.wrt(b).shape(), &[3, 4]);
    }

    #[test]
    fn linear_sum_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vector(&[1.0, -2.0, 5.0]));
        let y = t.scale(x, 2.0);
        let s = t.sum_all(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn squared_error_at_minimum_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vector(&[0.3, -1.0, 2.0, 4.0]));
        let y = t.squared_error(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vector(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vector(&[1.0, 2.0]));
        let unused = t.leaf(Array::full([2, 2], 1.0));
        let s = t.sum_all(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(unused), &Array::zeros([2, 2]));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let a = t.leaf(Array::zeros([2, 3]));
        let b = t.leaf(Array::zeros([2, 3]));
        match t.matmul(a, b) {
            Err(Error::ShapeMismatch { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("unexpected {:?}", other),
        }
        let c = t.leaf(Array::zeros([3, 2]));
        assert!(matches!(
            t.add(a, c),
            Err(Error::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vector(&[1.0]));
        let c = t.constant(vector(&[2.0]));
        let y = t.mul(x, c).unwrap();
        let s = t.sum_all(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn primitive_names_round_trip() {
        for p in Primitive::DIFFERENTIABLE {
            assert_eq!(Primitive::from_name(p.name()), Some(p));
        }
    }
}
