//! Dense 2-D tensors with a dynamic reverse-mode tape.
//!
//! Every operation records its inputs on a [`Tape`] at forward time.
//! [`Tape::backward`] walks the records in reverse and accumulates
//! gradients into every node that depends on a parameter. Broadcasting is
//! limited to adding a `1 × n` row to each row of a matrix.

mod gradcheck;
mod serialize;

pub use gradcheck::{check_gradients, GradCheckReport, FD_ABS_FLOOR, FD_REL_TOL, FD_STEP};
pub use serialize::{read_params, write_params, NamedTensor, PARAM_MAGIC, PARAM_VERSION};

use crate::{LearnError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major matrix of 64-bit scalars. Scalars are `1 × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(LearnError::Shape(format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LearnError::Shape("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(LearnError::Shape(format!("{}x{} is not a scalar", self.rows, self.cols)))
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Clip(Var, f64, f64),
    Minimum(Var, Var),
    MaskedFill(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
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

    /// A trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass, if `v` depends on a parameter.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let [r, c] = self.shape(v);
        self.grad(v).map(|g| Tensor { rows: r, cols: c, data: g.to_vec() })
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(LearnError::Shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let value = Tensor { rows: t.rows, cols: t.cols, data: t.data.iter().map(|&x| f(x)).collect() };
        self.record(value, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { rows: ta.rows, cols: ta.cols, data };
        Ok(self.record(value, op, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(LearnError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &self.value(a).data, false, &self.value(b).data, false, 0.0, &mut out);
        Ok(self.record(Tensor { rows: m, cols: n, data: out }, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let ([m, n], [br, bc]) = (self.shape(a), self.shape(bias));
        if br != 1 || bc != n {
            return Err(LearnError::Shape(format!("row bias {br}x{bc} for {m}x{n}")));
        }
        let b = self.value(bias).data.clone();
        let mut value = self.value(a).clone();
        for row in value.data.chunks_mut(n.max(1)) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.record(value, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    /// Row-wise softmax with max subtraction. Entries of `-inf` get
    /// probability zero as long as the row has a finite entry.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for row in value.data.chunks_mut(t.cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        self.record(value, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for row in value.data.chunks_mut(t.cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.record(value, Op::LogSoftmaxRows(a), &[a])
    }

    /// Per-row standardization over the last dimension followed by
    /// `gain ⊙ x̂ + bias`, with `ε = 1e-5` inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let [m, n] = self.shape(x);
        if n < 2 {
            return Err(LearnError::Shape(format!("layer norm over {n} columns")));
        }
        if self.shape(gain) != [1, n] || self.shape(bias) != [1, n] {
            return Err(LearnError::Shape("layer norm gain and bias must be 1 x n".into()));
        }
        let t = self.value(x);
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &t.data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..n {
                let h = (row[c] - mean) * inv;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor { rows: m, cols: n, data: out };
        Ok(self.record(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts.first().map(|&p| self.shape(p)[0]).ok_or_else(|| LearnError::Shape("empty concat".into()))?;
        if parts.iter().any(|&p| self.shape(p)[0] != m) {
            return Err(LearnError::Shape("concat_cols needs equal row counts".into()));
        }
        let n: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.record(Tensor { rows: m, cols: n, data }, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map(|&p| self.shape(p)[1]).ok_or_else(|| LearnError::Shape("empty concat".into()))?;
        if parts.iter().any(|&p| self.shape(p)[1] != n) {
            return Err(LearnError::Shape("concat_rows needs equal column counts".into()));
        }
        let m: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(m * n);
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        Ok(self.record(Tensor { rows: m, cols: n, data }, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `index[0], index[1], …` of `a`; repeats are allowed.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let [m, n] = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(LearnError::Shape(format!("row {bad} of {m}")));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        Ok(self.record(Tensor { rows: index.len(), cols: n, data }, Op::GatherRows(a, index.to_vec()), &[a]))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let [m, n] = self.shape(a);
        if start + width > n {
            return Err(LearnError::Shape(format!("columns {start}..{} of {n}", start + width)));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(m * width);
        for r in 0..m {
            data.extend_from_slice(&t.row(r)[start..start + width]);
        }
        Ok(self.record(Tensor { rows: m, cols: width, data }, Op::SliceCols(a, start), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows, t.cols);
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = t.data[r * n + c];
            }
        }
        self.record(Tensor { rows: n, cols: m, data }, Op::Transpose(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(LearnError::Shape("mean of an empty tensor".into()));
        }
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        Ok(self.record(Tensor::scalar(s), Op::Mean(a), &[a]))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamped.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clip(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Minimum(a, b), f64::min)
    }

    /// Replaces the entries where `mask` is true with `fill`; those entries
    /// pass no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(LearnError::Shape(format!("mask of {} for {} entries", mask.len(), t.len())));
        }
        let mut value = t.clone();
        for (x, &m) in value.data.iter_mut().zip(mask) {
            if m {
                *x = fill;
            }
        }
        Ok(self.record(value, Op::MaskedFill(a, mask.to_vec()), &[a]))
    }

    /// Populates gradients of every node that depends on a parameter. A tape
    /// supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(LearnError::State("backward already ran on this tape".into()));
        }
        if self.shape(loss) != [1, 1] {
            return Err(LearnError::Shape(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ([m, k], n) = (val(*a).shape(), val(*b).cols);
                acc(*a, &mut |da| gemm(m, n, k, 1.0, g, false, &val(*b).data, true, 1.0, da));
                acc(*b, &mut |db| gemm(k, m, n, 1.0, &val(*a).data, true, g, false, 1.0, db));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, gi)| *x -= gi));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |d| d.iter_mut().zip(g).zip(vb).for_each(|((x, gi), y)| *x += gi * y));
                acc(*b, &mut |d| d.iter_mut().zip(g).zip(va).for_each(|((x, gi), y)| *x += gi * y));
            }
            Op::AddRow(a, bias) => {
                acc(*a, &mut |d| add_into(d, g));
                let n = y.cols.max(1);
                acc(*bias, &mut |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, gi)| *x += s * gi)),
            Op::AddScalar(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Relu(a) => {
                let va = &val(*a).data;
                acc(*a, &mut |d| {
                    for ((x, gi), v) in d.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).zip(&y.data).for_each(|((x, gi), t)| *x += gi * (1.0 - t * t))
            }),
            Op::Exp(a) => acc(*a, &mut |d| d.iter_mut().zip(g).zip(&y.data).for_each(|((x, gi), e)| *x += gi * e)),
            Op::Ln(a) => {
                let va = &val(*a).data;
                acc(*a, &mut |d| d.iter_mut().zip(g).zip(va).for_each(|((x, gi), v)| *x += gi / v));
            }
            Op::SoftmaxRows(a) => {
                let n = y.cols.max(1);
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.data.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((x, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *x += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let n = y.cols.max(1);
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.data.chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for ((x, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *x += gi - yi.exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = y.cols;
                let gv = &val(*gain).data;
                acc(*gain, &mut |d| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            d[c] += gr[c] * hr[c];
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for gr in g.chunks(n) {
                        add_into(d, gr);
                    }
                });
                acc(*x, &mut |d| {
                    for (r, (gr, hr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / n as f64;
                        for c in 0..n {
                            d[r * n + c] += k * (n as f64 * dh[c] - s1 - hr[c] * s2);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = y.cols;
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols;
                    acc(p, &mut |d| {
                        for r in 0..y.rows {
                            add_into(&mut d[r * w..(r + 1) * w], &g[r * n + offset..r * n + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    acc(p, &mut |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows(a, index) => {
                let n = y.cols;
                acc(*a, &mut |d| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut d[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let (w, n) = (y.cols, val(*a).cols);
                acc(*a, &mut |d| {
                    for r in 0..y.rows {
                        add_into(&mut d[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (y.rows, y.cols);
                acc(*a, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[c * m + r] += g[r * n + c];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let k = g[0] / val(*a).len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += k));
            }
            Op::Clip(a, lo, hi) => {
                let va = &val(*a).data;
                acc(*a, &mut |d| {
                    for ((x, gi), v) in d.iter_mut().zip(g).zip(va) {
                        if v > lo && v < hi {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if va[i] <= vb[i] {
                            d[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        if va[i] > vb[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::MaskedFill(a, mask) => acc(*a, &mut |d| {
                for ((x, gi), &m) in d.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *x += gi;
                    }
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `c = alpha · op(a) · op(b) + beta · c` on row-major buffers, where
/// `op(a)` is `m × k` and `op(b)` is `k × n`. A transposed operand is stored
/// as its transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above bounds every index the strides can reach,
    // and `c` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
