use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::ParamId;

/// Floor applied to `log` arguments and division denominators.
pub const DOMAIN_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    BroadcastRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Dropout(Var, Tensor),
    SqDist(Var, Var),
    NeighborMean(Var, Vec<Vec<usize>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::MeanRows(_) => "mean_rows",
            Op::MaxRows(..) => "max_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Dropout(..) => "dropout",
            Op::SqDist(..) => "sq_dist",
            Op::NeighborMean(..) => "neighbor_mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar loss keyed by parameter.
pub type GradMap = BTreeMap<ParamId, Tensor>;

/// Result of [`Graph::backward_full`]: parameter gradients plus the gradient of
/// every node that received one.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: GradMap,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` when the loss does not depend on it.
    pub fn of(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }
}

/// Append-only expression graph. Nodes are pushed in evaluation order, so the
/// node index is a topological order.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.rows, b.rows), dim(a.cols, b.cols)) {
        (Some(rows), Some(cols)) => Ok(Shape::new(rows, cols)),
        _ => Err(Error::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bget(t: &Tensor, i: usize, j: usize) -> f64 {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    t.get(r, c)
}

fn zip_broadcast(a: &Tensor, b: &Tensor, out: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == out && b.shape() == out {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(out.rows, out.cols, data).expect("shape checked");
    }
    Tensor::from_fn(out.rows, out.cols, |i, j| f(bget(a, i, j), bget(b, i, j)))
}

/// Sums `grad` down to `shape` over broadcast dimensions.
fn reduce_to(grad: Tensor, shape: Shape) -> Tensor {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Tensor::zeros(shape.rows, shape.cols);
    for i in 0..grad.rows() {
        for j in 0..grad.cols() {
            let r = if shape.rows == 1 { 0 } else { i };
            let c = if shape.cols == 1 { 0 } else { j };
            let v = out.get(r, c) + grad.get(i, j);
            out.set(r, c, v);
        }
    }
    out
}

fn guard_denominator(b: f64) -> f64 {
    if libm::fabs(b) >= DOMAIN_FLOOR {
        b
    } else if b < 0.0 {
        -DOMAIN_FLOOR
    } else {
        DOMAIN_FLOOR
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn row_softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - m);
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

fn row_log_softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>());
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Sum that does not depend on the order of `values`.
fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, value: Tensor, id: ParamId) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let out = broadcast_shape(op, self.shape(a), self.shape(b))?;
        Ok(zip_broadcast(self.value(a), self.value(b), out, f))
    }

    /// Elementwise sum; either operand may broadcast along a unit dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise quotient with the denominator held at least [`DOMAIN_FLOOR`] in magnitude.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / guard_denominator(y))?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k).expect("scalar broadcasts")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        self.push(v, Op::Exp(a))
    }

    /// Natural log of `max(x, DOMAIN_FLOOR)`.
    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| libm::log(x.max(DOMAIN_FLOOR)));
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.shape().len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Per-row sum: `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_fn(t.rows(), 1, |i, _| t.row_slice(i).iter().sum());
        self.push(v, Op::SumCols(a))
    }

    /// Per-column mean over rows: `n x m -> 1 x m`. Summation order is
    /// canonical, so the result is exactly invariant to row permutations.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows() as f64;
        let mut buf = Vec::with_capacity(t.rows());
        let v = Tensor::from_fn(1, t.cols(), |_, j| {
            buf.clear();
            buf.extend((0..t.rows()).map(|i| t.get(i, j)));
            canonical_sum(&mut buf) / n
        });
        self.push(v, Op::MeanRows(a))
    }

    /// Per-column max over rows: `n x m -> 1 x m`; ties go to the lowest row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut arg = vec![0usize; t.cols()];
        for (j, best) in arg.iter_mut().enumerate() {
            for i in 1..t.rows() {
                if t.get(i, j) > t.get(*best, j) {
                    *best = i;
                }
            }
        }
        let v = Tensor::from_fn(1, t.cols(), |_, j| t.get(arg[j], j));
        self.push(v, Op::MaxRows(a, arg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).rows;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.rows != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: s,
                });
            }
            cols += s.cols;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: s,
                rhs: Shape::new(s.rows, start + len),
            });
        }
        let t = self.value(a);
        let v = Tensor::from_fn(s.rows, len, |i, j| t.get(i, start + j));
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Repeats a `1 x m` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.rows != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                lhs: s,
                rhs: Shape::new(1, s.cols),
            });
        }
        let t = self.value(a);
        let v = Tensor::from_fn(rows, s.cols, |_, j| t.get(0, j));
        Ok(self.push(v, Op::BroadcastRows(a)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = row_softmax(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = row_log_softmax(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    /// Multiplies by an externally sampled mask, already scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        if mask.shape() != self.shape(a) {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                lhs: self.shape(a),
                rhs: mask.shape(),
            });
        }
        let v = zip_broadcast(self.value(a), mask, mask.shape(), |x, m| x * m);
        Ok(self.push(v, Op::Dropout(a, mask.clone())))
    }

    /// Pairwise squared Euclidean distances between rows: `(n x d, m x d) -> n x m`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.cols {
            return Err(Error::ShapeMismatch {
                op: "sq_dist",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = sq_dist_matrix(self.value(a), self.value(b));
        Ok(self.push(v, Op::SqDist(a, b)))
    }

    /// Row `n` of the output is the mean of the rows of `a` listed in
    /// `neighbors[n]`, accumulated in list order.
    pub fn neighbor_mean(&mut self, a: Var, neighbors: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let d = t.cols();
        let mut data = Vec::with_capacity(neighbors.len() * d);
        for list in &neighbors {
            if list.is_empty() || list.iter().any(|&m| m >= t.rows()) {
                return Err(crate::error::invalid!(
                    "neighbor_mean: bad neighbor list {:?} for {} rows",
                    list,
                    t.rows()
                ));
            }
            let k = list.len() as f64;
            for j in 0..d {
                let mut acc = 0.0;
                for &m in list {
                    acc += t.get(m, j);
                }
                data.push(acc / k);
            }
        }
        let v = Tensor::from_vec(neighbors.len(), d, data)?;
        Ok(self.push(v, Op::NeighborMean(a, neighbors)))
    }

    /// Reverse pass from a scalar `loss`; returns gradients for every parameter
    /// leaf that precedes it (zero when the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        Ok(self.backward_full(loss)?.params)
    }

    pub fn backward_full(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if s != Shape::SCALAR {
            return Err(Error::NonScalarLoss(s));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = GradMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                match params.get_mut(&id) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    None => {
                        params.insert(id, g);
                    }
                }
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.local_grads(node, &g);
            for (parent, pg) in contributions {
                if !pg.is_finite() {
                    return Err(Error::NonFiniteGradient { op: node.op.name() });
                }
                accumulate(&mut grads[parent.0], pg);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()).expect("matmul shapes");
                let gb = val(*a).transpose().matmul(g).expect("matmul shapes");
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![
                (*a, reduce_to(g.clone(), val(*a).shape())),
                (*b, reduce_to(g.clone(), val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g.clone(), val(*a).shape())),
                (*b, reduce_to(g.map(|x| -x), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = zip_broadcast(g, tb, g.shape(), |x, y| x * y);
                let gb = zip_broadcast(g, ta, g.shape(), |x, y| x * y);
                vec![(*a, reduce_to(ga, ta.shape())), (*b, reduce_to(gb, tb.shape()))]
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = zip_broadcast(g, tb, g.shape(), |x, d| x / guard_denominator(d));
                let num = zip_broadcast(g, ta, g.shape(), |x, n| x * n);
                let gb = zip_broadcast(&num, tb, g.shape(), |x, d| {
                    if libm::fabs(d) >= DOMAIN_FLOOR {
                        -x / (d * d)
                    } else {
                        0.0
                    }
                });
                vec![(*a, reduce_to(ga, ta.shape())), (*b, reduce_to(gb, tb.shape()))]
            }
            Op::Neg(a) => vec![(*a, g.map(|x| -x))],
            Op::Scale(a, c) => {
                let c = *c;
                vec![(*a, g.map(|x| x * c))]
            }
            Op::Relu(a) => vec![(
                *a,
                zip_broadcast(g, val(*a), g.shape(), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            )],
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                vec![(
                    *a,
                    zip_broadcast(g, val(*a), g.shape(), |gv, x| if x > 0.0 { gv } else { s * gv }),
                )]
            }
            Op::Softplus(a) => vec![(*a, zip_broadcast(g, val(*a), g.shape(), |gv, x| gv * sigmoid(x)))],
            Op::Exp(a) => vec![(*a, zip_broadcast(g, y, g.shape(), |gv, e| gv * e))],
            Op::Log(a) => vec![(
                *a,
                zip_broadcast(
                    g,
                    val(*a),
                    g.shape(),
                    |gv, x| {
                        if x > DOMAIN_FLOOR {
                            gv / x
                        } else {
                            0.0
                        }
                    },
                ),
            )],
            Op::Square(a) => vec![(*a, zip_broadcast(g, val(*a), g.shape(), |gv, x| 2.0 * x * gv))],
            Op::Sum(a) => {
                let s = val(*a).shape();
                vec![(*a, Tensor::full(s.rows, s.cols, g.data()[0]))]
            }
            Op::Mean(a) => {
                let s = val(*a).shape();
                vec![(*a, Tensor::full(s.rows, s.cols, g.data()[0] / s.len() as f64))]
            }
            Op::SumCols(a) => {
                let s = val(*a).shape();
                vec![(*a, Tensor::from_fn(s.rows, s.cols, |i, _| g.get(i, 0)))]
            }
            Op::MeanRows(a) => {
                let s = val(*a).shape();
                let n = s.rows as f64;
                vec![(*a, Tensor::from_fn(s.rows, s.cols, |_, j| g.get(0, j) / n))]
            }
            Op::MaxRows(a, arg) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s.rows, s.cols);
                for (j, &i) in arg.iter().enumerate() {
                    ga.set(i, j, g.get(0, j));
                }
                vec![(*a, ga)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let s = val(p).shape();
                    let o = offset;
                    out.push((p, Tensor::from_fn(s.rows, s.cols, |i, j| g.get(i, o + j))));
                    offset += s.cols;
                }
                out
            }
            Op::SliceCols(a, start) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s.rows, s.cols);
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        ga.set(i, start + j, g.get(i, j));
                    }
                }
                vec![(*a, ga)]
            }
            Op::BroadcastRows(a) => {
                let cols = g.cols();
                let ga = Tensor::from_fn(1, cols, |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
                vec![(*a, ga)]
            }
            Op::Softmax(a) => {
                let mut ga = g.clone();
                for i in 0..g.rows() {
                    let dot: f64 = g.row_slice(i).iter().zip(y.row_slice(i)).map(|(a, b)| a * b).sum();
                    for j in 0..g.cols() {
                        ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                vec![(*a, ga)]
            }
            Op::LogSoftmax(a) => {
                let mut ga = g.clone();
                for i in 0..g.rows() {
                    let gs: f64 = g.row_slice(i).iter().sum();
                    for j in 0..g.cols() {
                        ga.set(i, j, g.get(i, j) - libm::exp(y.get(i, j)) * gs);
                    }
                }
                vec![(*a, ga)]
            }
            Op::Dropout(a, mask) => vec![(*a, zip_broadcast(g, mask, g.shape(), |x, m| x * m))],
            Op::SqDist(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let d = ta.cols();
                let mut ga = Tensor::zeros(ta.rows(), d);
                let mut gb = Tensor::zeros(tb.rows(), d);
                for i in 0..ta.rows() {
                    for j in 0..tb.rows() {
                        let w = g.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            let diff = 2.0 * w * (ta.get(i, c) - tb.get(j, c));
                            ga.set(i, c, ga.get(i, c) + diff);
                            gb.set(j, c, gb.get(j, c) - diff);
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::NeighborMean(a, neighbors) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s.rows, s.cols);
                for (n, list) in neighbors.iter().enumerate() {
                    let k = list.len() as f64;
                    for &m in list {
                        for j in 0..s.cols {
                            ga.set(m, j, ga.get(m, j) + g.get(n, j) / k);
                        }
                    }
                }
                vec![(*a, ga)]
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Pairwise squared distances between the rows of `a` and `b`.
pub fn sq_dist_matrix(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.rows(), b.rows(), |i, j| {
        a.row_slice(i)
            .iter()
            .zip(b.row_slice(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(2, 1, &[1.0, 1.0]));
        let m = g.matmul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 7.0]);
        let r = g.constant(Tensor::row(&[-1.0, 0.0, 2.0]));
        let r = g.relu(r);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::row(&[0.0; 3]));
        let s = g.softmax(z);
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(Tensor::zeros(3, 2));
        assert!(g.add(a, c).is_err());
        assert!(g.broadcast_rows(a, 4).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
        assert!(g.dropout(a, &Tensor::zeros(3, 2)).is_err());
        assert!(g.neighbor_mean(a, vec![vec![]]).is_err());
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut set = ParamSet::new(0);
        let id = set.push("x", Tensor::row(&[1.0, 2.0, 3.0]));
        let mut g = Graph::new();
        let x = set.bind(&mut g)[0];
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[&id].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn log_softmax_pick_gradient() {
        let z = [0.3, -1.2, 2.0, 0.5];
        let mut set = ParamSet::new(0);
        let id = set.push("z", Tensor::row(&z));
        let mut g = Graph::new();
        let zv = set.bind(&mut g)[0];
        let ls = g.log_softmax(zv);
        let k = 2;
        let pick = g.slice_cols(ls, k, 1).unwrap();
        let loss = g.sum(pick);
        let grads = g.backward(loss).unwrap();
        let p = row_softmax(&Tensor::row(&z));
        for j in 0..4 {
            let want = if j == k { 1.0 } else { 0.0 } - p.get(0, j);
            assert!((grads[&id].get(0, j) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_loss_has_no_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(4.0));
        assert!(g.backward(c).unwrap().is_empty());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut set = ParamSet::new(1);
        let a = set.push("a", Tensor::scalar(2.0));
        let b = set.push("b", Tensor::row(&[1.0, 1.0]));
        let mut g = Graph::new();
        let v = set.bind(&mut g);
        let loss = g.square(v[0]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[&a].item().unwrap(), 4.0);
        assert_eq!(grads[&b].data(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        let mut set = ParamSet::new(0);
        let id = set.push("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let x = set.bind(&mut g)[0];
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads[&id].item().unwrap(), 7.0);
    }

    #[test]
    fn log_is_floored() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let l = g.log(z);
        assert_eq!(g.scalar(l).unwrap(), libm::log(DOMAIN_FLOOR));
    }
}
