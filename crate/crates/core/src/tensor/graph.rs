use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::params::ParameterStore;
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    graph: usize,
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// The kernel set exposed through [`Graph::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Add,
    MulElementwise,
    MatMul,
    ConcatRows,
    MaxOverColumns,
    Tanh,
    Relu,
    Scale(f64),
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::MulElementwise => "mul_elementwise",
            Primitive::MatMul => "matmul",
            Primitive::ConcatRows => "concat_rows",
            Primitive::MaxOverColumns => "max_over_columns",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Scale(_) => "scale",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Feedback { source: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddCol(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    TileCols(usize),
    Lookup { table: usize, indices: Vec<usize> },
    Unfold { input: usize, width: usize },
    MaxOverColumns { input: usize, argmax: Vec<usize> },
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Gelu(usize),
    Softmax { input: usize, axis: usize },
    CrossEntropy { logits: usize, target: usize, probs: Vec<f64> },
    Sum(usize),
    NormalizeCols { input: usize, inv_std: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Param => vec![],
            Feedback { source } => source.iter().copied().collect(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddCol(a, b) | AddRow(a, b) | MulCol(a, b)
            | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | Transpose(a) | SliceRows(a, _) | SliceCols(a, _) | TileCols(a)
            | Tanh(a) | Relu(a) | Sigmoid(a) | Gelu(a) | Sum(a) => vec![*a],
            ConcatRows(v) | ConcatCols(v) => v.clone(),
            Lookup { table, .. } => vec![*table],
            Unfold { input, .. }
            | MaxOverColumns { input, .. }
            | Softmax { input, .. }
            | NormalizeCols { input, .. } => vec![*input],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode computation graph.
///
/// Nodes are evaluated eagerly as they are recorded. Parameters enter
/// through [`Graph::param`], which resolves aliases so that every use of a
/// shared weight maps onto one leaf and its gradient is the sum over all
/// uses.
///
/// The only way to form a cycle is [`Graph::feedback`] followed by
/// [`Graph::connect`]; [`Graph::finalize`] rejects such graphs before any
/// gradient is propagated.
#[derive(Debug)]
pub struct Graph {
    id: usize,
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    grads: Vec<Option<Vec<f64>>>,
    has_feedback: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mat_shape(t: &Tensor) -> Vec<usize> {
    vec![t.rows(), t.cols()]
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
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

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Normalizes `values` in place over the positions `idx` with mask support.
/// Fully masked groups come out as zeros.
fn softmax_group(values: &mut [f64], idx: &[usize], mask: Option<&[bool]>) {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let max = idx
        .iter()
        .filter(|&&i| keep(i))
        .map(|&i| values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        for &i in idx {
            values[i] = 0.0;
        }
        return;
    }
    let mut total = 0.0;
    for &i in idx {
        if keep(i) {
            let e = (values[i] - max).exp();
            values[i] = e;
            total += e;
        } else {
            values[i] = 0.0;
        }
    }
    for &i in idx {
        values[i] /= total;
    }
}

fn softmax_groups(rows: usize, cols: usize, axis: usize) -> Vec<Vec<usize>> {
    if axis == 0 {
        (0..cols)
            .map(|c| (0..rows).map(|r| r * cols + c).collect())
            .collect()
    } else {
        (0..rows)
            .map(|r| (0..cols).map(|c| r * cols + c).collect())
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
            grads: Vec::new(),
            has_feedback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::UnknownNode(v.id));
        }
        Ok(v.id)
    }

    fn val(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = match &op {
            Op::Leaf | Op::Param => false,
            Op::Feedback { .. } => true,
            other => other.inputs().iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.push_with(op, value, requires_grad)
    }

    fn push_with(
        &mut self,
        op: Op,
        value: Tensor,
        requires_grad: bool,
    ) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var { graph: self.id, id }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.id)?.as_ref()?;
        let shape = mat_shape(self.value(v));
        Some(Tensor::new(shape, g.clone()).expect("gradient shape"))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.as_matrix();
        self.push_with(Op::Leaf, t, false)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        let t = t.as_matrix();
        self.push_with(Op::Leaf, t, true)
    }

    /// Leaf bound to a named parameter. Aliases resolve to their canonical
    /// entry, and repeated requests return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let canonical = store.resolve(name)?.to_string();
        if let Some(&id) = self.params.get(&canonical) {
            return Ok(Var { graph: self.id, id });
        }
        let value = store.get(&canonical)?.as_matrix();
        let requires_grad = store.requires_grad(&canonical)?;
        let v = self.push_with(Op::Param, value, requires_grad);
        self.params.insert(canonical, v.id);
        Ok(v)
    }

    /// Placeholder whose value is zero until [`Graph::connect`] routes
    /// another node into it. Used for recurrent-style wiring; connecting a
    /// node that depends on the placeholder creates a cycle.
    pub fn feedback(&mut self, rows: usize, cols: usize) -> Var {
        self.has_feedback = true;
        self.push_with(
            Op::Feedback { source: None },
            Tensor::zeros(vec![rows, cols]),
            true,
        )
    }

    pub fn connect(&mut self, placeholder: Var, source: Var) -> Result<()> {
        let p = self.check(placeholder)?;
        let s = self.check(source)?;
        match self.nodes[p].op {
            Op::Feedback { source: None } => {}
            _ => return Err(Error::invalid("connect", "target is not an open feedback node")),
        }
        if mat_shape(self.val(p)) != mat_shape(self.val(s)) {
            return Err(Error::Shape {
                op: "connect",
                lhs: mat_shape(self.val(p)),
                rhs: mat_shape(self.val(s)),
            });
        }
        self.nodes[p].op = Op::Feedback { source: Some(s) };
        Ok(())
    }

    // ---- primitives ---------------------------------------------------

    /// Applies one kernel of the primitive set by kind.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::invalid(
                    kind.name(),
                    format!("expected {n} inputs, got {}", inputs.len()),
                ));
            }
            Ok(())
        };
        match kind {
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::MulElementwise => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::ConcatRows => self.concat_rows(inputs),
            Primitive::MaxOverColumns => {
                arity(1)?;
                self.max_over_columns(inputs[0])
            }
            Primitive::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            Primitive::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            Primitive::Scale(s) => {
                arity(1)?;
                self.scale(inputs[0], s)
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (mat_shape(self.val(a)), mat_shape(self.val(b)));
        if sa != sb {
            return Err(Error::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(mat_shape(ta), data).expect("shape");
        self.push(op, value)
    }

    fn map(&mut self, op: Op, a: usize, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.val(a);
        let value = Tensor::new(mat_shape(ta), ta.data().iter().map(|x| f(*x)).collect())
            .expect("shape");
        self.push(op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape("mul_elementwise", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let a = self.check(a)?;
        Ok(self.map(Op::Scale(a, s), a, |x| x * s))
    }

    fn broadcast(&mut self, op: &'static str, a: Var, v: Var, by_row: bool, mul: bool) -> Result<Var> {
        let (a, v) = (self.check(a)?, self.check(v)?);
        let (ta, tv) = (self.val(a), self.val(v));
        let (r, c) = (ta.rows(), ta.cols());
        let ok = if by_row {
            tv.rows() == 1 && tv.cols() == c
        } else {
            tv.rows() == r && tv.cols() == 1
        };
        if !ok {
            return Err(Error::Shape {
                op,
                lhs: mat_shape(ta),
                rhs: mat_shape(tv),
            });
        }
        let mut data = ta.data().to_vec();
        let vd = tv.data();
        for i in 0..r {
            for j in 0..c {
                let b = if by_row { vd[j] } else { vd[i] };
                let x = &mut data[i * c + j];
                *x = if mul { *x * b } else { *x + b };
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        let node = match (by_row, mul) {
            (false, false) => Op::AddCol(a, v),
            (true, false) => Op::AddRow(a, v),
            (false, true) => Op::MulCol(a, v),
            (true, true) => unreachable!(),
        };
        Ok(self.push(node, value))
    }

    /// `a + v` with the column vector `v` added to every column.
    pub fn add_col(&mut self, a: Var, v: Var) -> Result<Var> {
        self.broadcast("add_col", a, v, false, false)
    }

    /// `a + v` with the row vector `v` added to every row.
    pub fn add_row(&mut self, a: Var, v: Var) -> Result<Var> {
        self.broadcast("add_row", a, v, true, false)
    }

    /// Row-wise scaling: `a[i, j] * v[i]`.
    pub fn mul_col(&mut self, a: Var, v: Var) -> Result<Var> {
        self.broadcast("mul_col", a, v, false, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(Error::Shape {
                op: "matmul",
                lhs: mat_shape(ta),
                rhs: mat_shape(tb),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// `w · x + b` with `b` broadcast over columns.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matmul(w, x)?;
        self.add_col(wx, b)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.val(a).transpose();
        Ok(self.push(Op::Transpose(a), value))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows", "no inputs"));
        }
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let cols = self.val(ids[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &ids {
            let t = self.val(i);
            if t.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: mat_shape(self.val(ids[0])),
                    rhs: mat_shape(t),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(ids), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols", "no inputs"));
        }
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let rows = self.val(ids[0]).rows();
        let mut cols = 0;
        for &i in &ids {
            let t = self.val(i);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: mat_shape(self.val(ids[0])),
                    rhs: mat_shape(t),
                });
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &ids {
                data.extend_from_slice(self.val(i).row_values(r));
            }
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatCols(ids), value))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        if len == 0 || start + len > t.rows() {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, mat_shape(t)),
            ));
        }
        let c = t.cols();
        let value = Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), value))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        if len == 0 || start + len > t.cols() {
            return Err(Error::invalid(
                "slice_cols",
                format!("cols {start}..{} of {:?}", start + len, mat_shape(t)),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_values(r)[start..start + len]);
        }
        let value = Tensor::new(vec![t.rows(), len], data)?;
        Ok(self.push(Op::SliceCols(a, start), value))
    }

    pub fn column(&mut self, a: Var, c: usize) -> Result<Var> {
        self.slice_cols(a, c, 1)
    }

    /// Repeats a column vector `n` times.
    pub fn tile_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        if t.cols() != 1 || n == 0 {
            return Err(Error::Shape {
                op: "tile_cols",
                lhs: mat_shape(t),
                rhs: vec![t.rows(), n],
            });
        }
        let data = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        let value = Tensor::new(vec![t.rows(), n], data)?;
        Ok(self.push(Op::TileCols(a), value))
    }

    /// Embedding lookup: rows `indices` of a `V × D` table, returned as the
    /// columns of a `D × T` matrix.
    pub fn lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tid = self.check(table)?;
        if indices.is_empty() {
            return Err(Error::Empty("lookup indices"));
        }
        let t = self.val(tid);
        let (v, d) = (t.rows(), t.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::IndexOutOfRange {
                what: "embedding",
                index: bad,
                bound: v,
            });
        }
        let n = indices.len();
        let mut data = vec![0.0; d * n];
        for (col, &idx) in indices.iter().enumerate() {
            for (k, &x) in t.row_values(idx).iter().enumerate() {
                data[k * n + col] = x;
            }
        }
        let value = Tensor::new(vec![d, n], data)?;
        Ok(self.push(
            Op::Lookup {
                table: tid,
                indices: indices.to_vec(),
            },
            value,
        ))
    }

    /// Sliding windows of `width` columns stacked into one column each:
    /// output `(width·c) × (L − width + 1)`, row `k·c + ch` of column `p`
    /// holding `input[ch, p + k]`.
    pub fn unfold(&mut self, a: Var, width: usize) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        let (c, l) = (t.rows(), t.cols());
        if width == 0 || width > l {
            return Err(Error::invalid("unfold", format!("width {width} over length {l}")));
        }
        let p = l - width + 1;
        let mut data = vec![0.0; width * c * p];
        for k in 0..width {
            for ch in 0..c {
                for q in 0..p {
                    data[(k * c + ch) * p + q] = t.at(ch, q + k);
                }
            }
        }
        let value = Tensor::new(vec![width * c, p], data)?;
        Ok(self.push(Op::Unfold { input: a, width }, value))
    }

    /// Row-wise maximum over columns, returned as an `r × 1` column.
    /// Ties go to the first maximal column.
    pub fn max_over_columns(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        let mut argmax = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row_values(r);
            let (j, m) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bj, bm), (j, &x)| if x > bm { (j, x) } else { (bj, bm) });
            argmax.push(j);
            data.push(m);
        }
        let value = Tensor::column(data);
        Ok(self.push(Op::MaxOverColumns { input: a, argmax }, value))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        Ok(self.map(Op::Tanh(a), a, f64::tanh))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        Ok(self.map(Op::Relu(a), a, |x| x.max(0.0)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        Ok(self.map(Op::Sigmoid(a), a, sigmoid))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        Ok(self.map(Op::Gelu(a), a, gelu))
    }

    /// Softmax along `axis` (0: each column sums to one, 1: each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Softmax restricted to entries whose mask is `true`; the rest get
    /// probability zero. A group with no admissible entry is all zeros.
    pub fn masked_softmax(&mut self, a: Var, axis: usize, mask: &[bool]) -> Result<Var> {
        self.softmax_impl(a, axis, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        if axis > 1 {
            return Err(Error::invalid("softmax", format!("axis {axis} on a matrix")));
        }
        if let Some(m) = mask {
            if m.len() != t.len() {
                return Err(Error::Shape {
                    op: "masked_softmax",
                    lhs: mat_shape(t),
                    rhs: vec![m.len()],
                });
            }
        }
        let admissible = |i: usize| mask.is_none_or(|m| m[i]);
        if t.data().iter().enumerate().any(|(i, v)| admissible(i) && !v.is_finite()) {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = t.data().to_vec();
        for group in softmax_groups(r, c, axis) {
            softmax_group(&mut data, &group, mask);
        }
        let value = Tensor::new(vec![r, c], data)?;
        let requires_grad = self.nodes[a].requires_grad;
        Ok(self.push_with(
            Op::Softmax { input: a, axis },
            value,
            requires_grad,
        ))
    }

    /// `−log softmax(logits)[target]` over all entries of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.cross_entropy_impl(logits, target, None)
    }

    /// Cross-entropy where only masked-in entries compete in the softmax.
    pub fn masked_cross_entropy(&mut self, logits: Var, target: usize, mask: &[bool]) -> Result<Var> {
        self.cross_entropy_impl(logits, target, Some(mask))
    }

    fn cross_entropy_impl(&mut self, logits: Var, target: usize, mask: Option<&[bool]>) -> Result<Var> {
        let l = self.check(logits)?;
        let t = self.val(l);
        let k = t.len();
        if target >= k {
            return Err(Error::IndexOutOfRange {
                what: "cross-entropy target",
                index: target,
                bound: k,
            });
        }
        if let Some(m) = mask {
            if m.len() != k {
                return Err(Error::Shape {
                    op: "masked_cross_entropy",
                    lhs: mat_shape(t),
                    rhs: vec![m.len()],
                });
            }
            if !m[target] {
                return Err(Error::invalid("cross_entropy", format!("target {target} is masked out")));
            }
        }
        let admissible = |i: usize| mask.is_none_or(|m| m[i]);
        if t.data().iter().enumerate().any(|(i, v)| admissible(i) && !v.is_finite()) {
            return Err(Error::NonFinite { op: "cross_entropy" });
        }
        let mut probs = t.data().to_vec();
        let all: Vec<usize> = (0..k).collect();
        softmax_group(&mut probs, &all, mask);
        // log-sum-exp form keeps the loss exact when the target probability underflows
        let max = all
            .iter()
            .filter(|&&i| admissible(i))
            .map(|&i| t.data()[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + all
                .iter()
                .filter(|&&i| admissible(i))
                .map(|&i| (t.data()[i] - max).exp())
                .sum::<f64>()
                .ln();
        let loss = lse - t.data()[target];
        let requires_grad = self.nodes[l].requires_grad;
        Ok(self.push_with(
            Op::CrossEntropy {
                logits: l,
                target,
                probs,
            },
            Tensor::scalar(loss),
            requires_grad,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let s = self.val(a).sum();
        Ok(self.push(Op::Sum(a), Tensor::scalar(s)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().ok_or(Error::Empty("add_all"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Per-column standardization `(x − mean) / sqrt(var + eps)` over rows.
    pub fn normalize_cols(&mut self, a: Var, eps: f64) -> Result<Var> {
        let a = self.check(a)?;
        let t = self.val(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(c);
        for j in 0..c {
            let mean = (0..r).map(|i| t.at(i, j)).sum::<f64>() / r as f64;
            let var = (0..r).map(|i| (t.at(i, j) - mean).powi(2)).sum::<f64>() / r as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..r {
                data[i * c + j] = (t.at(i, j) - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(Op::NormalizeCols { input: a, inv_std }, value))
    }

    // ---- backward -----------------------------------------------------

    /// Validates the graph and returns a topological order of all nodes
    /// (inputs before consumers). Fails with the node ids of a cycle if
    /// feedback wiring made the graph cyclic.
    pub fn finalize(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        if !self.has_feedback {
            return Ok((0..n).collect());
        }
        // iterative DFS over dependency edges; grey = on the current path
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut mark = vec![Mark::White; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if mark[root] != Mark::White {
                continue;
            }
            let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(root, self.nodes[root].op.inputs(), 0)];
            mark[root] = Mark::Grey;
            while let Some(top) = stack.last_mut() {
                if top.2 < top.1.len() {
                    let next = top.1[top.2];
                    top.2 += 1;
                    match mark[next] {
                        Mark::White => {
                            mark[next] = Mark::Grey;
                            let inputs = self.nodes[next].op.inputs();
                            stack.push((next, inputs, 0));
                        }
                        Mark::Grey => {
                            let pos = stack.iter().position(|f| f.0 == next).expect("grey node on stack");
                            let mut cycle: Vec<usize> = stack[pos..].iter().map(|f| f.0).collect();
                            cycle.sort_unstable();
                            return Err(Error::Cycle(cycle));
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[top.0] = Mark::Black;
                    order.push(top.0);
                    stack.pop();
                }
            }
        }
        Ok(order)
    }

    /// Populates gradients of every `requires_grad` ancestor of `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let l = self.check(loss)?;
        let shape = mat_shape(self.val(l));
        if shape != [1, 1] {
            return Err(Error::NotScalar(shape));
        }
        let order = self.finalize()?;
        self.grads = vec![None; self.nodes.len()];
        self.grads[l] = Some(vec![1.0]);
        for &id in order.iter().rev() {
            let Some(g) = self.grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g);
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let n = self.nodes[id].value.len();
        let slot = self.grads[id].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn accumulate_from(&mut self, id: usize, src: &[f64], scale: f64) {
        self.accumulate(id, |acc| {
            for (a, s) in acc.iter_mut().zip(src) {
                *a += scale * s;
            }
        });
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        let (rows, cols) = {
            let v = &self.nodes[id].value;
            (v.rows(), v.cols())
        };
        match op {
            Op::Leaf | Op::Param | Op::Feedback { source: None } => {}
            Op::Feedback { source: Some(s) } => self.accumulate_from(s, g, 1.0),
            Op::Add(a, b) => {
                self.accumulate_from(a, g, 1.0);
                self.accumulate_from(b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate_from(a, g, 1.0);
                self.accumulate_from(b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(a).data().to_vec(), self.val(b).data().to_vec());
                self.accumulate(a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * vb[i];
                    }
                });
                self.accumulate(b, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, s) => self.accumulate_from(a, g, s),
            Op::AddCol(a, v) => {
                self.accumulate_from(a, g, 1.0);
                self.accumulate(v, |acc| {
                    for i in 0..rows {
                        acc[i] += g[i * cols..(i + 1) * cols].iter().sum::<f64>();
                    }
                });
            }
            Op::AddRow(a, v) => {
                self.accumulate_from(a, g, 1.0);
                self.accumulate(v, |acc| {
                    for i in 0..rows {
                        for j in 0..cols {
                            acc[j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::MulCol(a, v) => {
                let va = self.val(a).data().to_vec();
                let vv = self.val(v).data().to_vec();
                self.accumulate(a, |acc| {
                    for i in 0..rows {
                        for j in 0..cols {
                            acc[i * cols + j] += g[i * cols + j] * vv[i];
                        }
                    }
                });
                self.accumulate(v, |acc| {
                    for i in 0..rows {
                        for j in 0..cols {
                            acc[i] += g[i * cols + j] * va[i * cols + j];
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k, n) = (self.val(a).rows(), self.val(a).cols(), self.val(b).cols());
                if self.nodes[a].requires_grad {
                    let bt = self.val(b).transpose();
                    self.accumulate(a, |acc| matmul_into(g, bt.data(), acc, m, n, k));
                }
                if self.nodes[b].requires_grad {
                    let at = self.val(a).transpose();
                    self.accumulate(b, |acc| matmul_into(at.data(), g, acc, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::new(vec![rows, cols], g.to_vec()).expect("shape").transpose();
                self.accumulate_from(a, gt.data(), 1.0);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.val(p).len();
                    let chunk = g[offset..offset + n].to_vec();
                    self.accumulate_from(p, &chunk, 1.0);
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.val(p).cols();
                    self.accumulate(p, |acc| {
                        for r in 0..rows {
                            for j in 0..pc {
                                acc[r * pc + j] += g[r * cols + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let c = cols;
                self.accumulate(a, |acc| {
                    for (x, y) in acc[start * c..(start + rows) * c].iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let ac = self.val(a).cols();
                self.accumulate(a, |acc| {
                    for r in 0..rows {
                        for j in 0..cols {
                            acc[r * ac + start + j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::TileCols(a) => {
                self.accumulate(a, |acc| {
                    for r in 0..rows {
                        acc[r] += g[r * cols..(r + 1) * cols].iter().sum::<f64>();
                    }
                });
            }
            Op::Lookup { table, indices } => {
                let d = self.val(table).cols();
                let n = indices.len();
                self.accumulate(table, |acc| {
                    for (col, &idx) in indices.iter().enumerate() {
                        for k in 0..d {
                            acc[idx * d + k] += g[k * n + col];
                        }
                    }
                });
            }
            Op::Unfold { input, width } => {
                let (c, l) = (self.val(input).rows(), self.val(input).cols());
                let p = l - width + 1;
                self.accumulate(input, |acc| {
                    for k in 0..width {
                        for ch in 0..c {
                            for q in 0..p {
                                acc[ch * l + q + k] += g[(k * c + ch) * p + q];
                            }
                        }
                    }
                });
            }
            Op::MaxOverColumns { input, argmax } => {
                let ic = self.val(input).cols();
                self.accumulate(input, |acc| {
                    for (r, &j) in argmax.iter().enumerate() {
                        acc[r * ic + j] += g[r];
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[id].value.data().to_vec();
                self.accumulate(a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.val(a).data().to_vec();
                self.accumulate(a, |acc| {
                    for i in 0..acc.len() {
                        if x[i] > 0.0 {
                            acc[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[id].value.data().to_vec();
                self.accumulate(a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.val(a).data().to_vec();
                self.accumulate(a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * gelu_grad(x[i]);
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let y = self.nodes[id].value.data().to_vec();
                let groups = softmax_groups(rows, cols, axis);
                self.accumulate(input, |acc| {
                    for group in groups {
                        let dot: f64 = group.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in &group {
                            acc[i] += y[i] * (g[i] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, target, probs } => {
                let upstream = g[0];
                self.accumulate(logits, |acc| {
                    for (i, p) in probs.iter().enumerate() {
                        let onehot = if i == target { 1.0 } else { 0.0 };
                        acc[i] += upstream * (p - onehot);
                    }
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                self.accumulate(a, |acc| acc.iter_mut().for_each(|x| *x += s));
            }
            Op::NormalizeCols { input, inv_std } => {
                let y = self.nodes[id].value.data().to_vec();
                let n = rows as f64;
                self.accumulate(input, |acc| {
                    for (j, &inv) in inv_std.iter().enumerate() {
                        let (mut sg, mut sgy) = (0.0, 0.0);
                        for i in 0..rows {
                            sg += g[i * cols + j];
                            sgy += g[i * cols + j] * y[i * cols + j];
                        }
                        for i in 0..rows {
                            let k = i * cols + j;
                            acc[k] += inv / n * (n * g[k] - sg - y[k] * sgy);
                        }
                    }
                });
            }
        }
    }

    /// Gradients of every parameter leaf, keyed by canonical name and
    /// shaped like the store entry. Parameters the loss does not reach get
    /// zeros.
    pub fn gradients(&self, store: &ParameterStore) -> Result<Gradients> {
        let mut map = BTreeMap::new();
        for (name, &id) in &self.params {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let shape = store.get(name)?.shape().to_vec();
            let n = self.nodes[id].value.len();
            let data = self
                .grads
                .get(id)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; n]);
            map.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(Gradients { map })
    }
}

/// Parameter gradients keyed by canonical name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.map.insert(name.into(), g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(mine) => {
                    if mine.shape() != g.shape() {
                        return Err(Error::Shape {
                            op: "accumulate",
                            lhs: mine.shape().to_vec(),
                            rhs: g.shape().to_vec(),
                        });
                    }
                    for (a, b) in mine.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.map.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::new();
        let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(m(&[&[5.0], &[6.0]]));
        let c = g.apply(Primitive::MatMul, &[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity_padding_reproduces_rows() {
        let mut g = Graph::new();
        let a = g.constant(m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]));
        let b = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(vec![3, 2]));
        let err = g.concat_rows(&[a, c]).unwrap_err().to_string();
        assert!(err.contains("concat_rows"), "{err}");
    }

    #[test]
    fn annihilator_gives_zero_value_and_grad() {
        let mut g = Graph::new();
        let x = g.input(Tensor::column(vec![1.5, -2.0, 3.0]));
        let z = g.constant(Tensor::zeros(vec![3, 1]));
        let y = g.apply(Primitive::MulElementwise, &[x, z]).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let y = g.softmax(x, 1).unwrap();
        for (got, want) in g.value(y).data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-4);
        }

        let x = g.constant(Tensor::row(vec![1000.0, 0.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![f64::NAN, 0.0]));
        assert!(matches!(g.softmax(x, 1), Err(Error::NonFinite { .. })));
        let x = g.constant(Tensor::row(vec![f64::INFINITY, 0.0]));
        assert!(matches!(g.softmax(x, 0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn masked_softmax_zeroes_excluded_and_empty_groups() {
        let mut g = Graph::new();
        let x = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let y = g.masked_softmax(x, 1, &[false, true, false, false]).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![30.0, -30.0]));
        let l = g.cross_entropy(x, 0).unwrap();
        assert!(g.value(l).data()[0] < 1e-20);

        let x = g.constant(Tensor::row(vec![0.7, 0.7]));
        let l = g.cross_entropy(x, 1).unwrap();
        assert_abs_diff_eq!(g.value(l).data()[0], std::f64::consts::LN_2, epsilon = 1e-12);

        assert!(matches!(g.cross_entropy(x, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g = Graph::new();
        let w = g.input(Tensor::column(vec![1.0, 2.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let w = g.input(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::NotScalar(_))));
    }

    #[test]
    fn foreign_vars_are_rejected() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let a = g1.constant(Tensor::scalar(1.0));
        assert!(matches!(g2.tanh(a), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn acyclic_feedback_passes_gradient_through() {
        let mut g = Graph::new();
        let x = g.input(Tensor::column(vec![1.0, -1.0]));
        let p = g.feedback(2, 1);
        let y = g.scale(x, 3.0).unwrap();
        g.connect(p, y).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn cyclic_feedback_is_reported() {
        let mut g = Graph::new();
        let x = g.input(Tensor::column(vec![1.0, -1.0]));
        let p = g.feedback(2, 1);
        let y = g.add(x, p).unwrap();
        let z = g.tanh(y).unwrap();
        g.connect(p, z).unwrap();
        let s = g.sum(z).unwrap();
        match g.backward(s) {
            Err(Error::Cycle(nodes)) => assert_eq!(nodes, vec![p.id(), y.id(), z.id()]),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn lookup_and_unfold_layout() {
        let mut g = Graph::new();
        let table = g.constant(m(&[&[0.0, 0.5], &[1.0, 1.5], &[2.0, 2.5]]));
        let e = g.lookup(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).shape(), &[2, 3]);
        assert_eq!(g.value(e).data(), &[2.0, 0.0, 2.0, 2.5, 0.5, 2.5]);
        assert!(g.lookup(table, &[3]).is_err());

        let x = g.constant(m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let u = g.unfold(x, 2).unwrap();
        assert_eq!(g.value(u).shape(), &[4, 2]);
        // column p = [x[:, p]; x[:, p+1]]
        assert_eq!(g.value(u).column_values(0), vec![1.0, 4.0, 2.0, 5.0]);
        assert_eq!(g.value(u).column_values(1), vec![2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn max_over_columns_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.input(m(&[&[1.0, 5.0, 2.0], &[7.0, 0.0, 7.0]]));
        let mx = g.max_over_columns(x).unwrap();
        assert_eq!(g.value(mx).data(), &[5.0, 7.0]);
        let s = g.sum(mx).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_param_leaf_accumulates() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::column(vec![2.0])).unwrap();
        store.alias("w_again", "w").unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w_again").unwrap();
        assert_eq!(a, b);
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        let grads = g.gradients(&store).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[4.0]);
        assert!(grads.get("w_again").is_none());
    }
}
