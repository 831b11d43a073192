//! Dense 64-bit float matrices with tape-based reverse-mode differentiation.
//!
//! The engine supports exactly the operations the model composes: matrix
//! multiply, elementwise arithmetic, concatenation, row softmax, the gate
//! activations, LeakyReLU, dropout masks and scalar reductions. Every value
//! lives on a [`Graph`]; `backward` replays the tape once in reverse.

use rand::Rng;

use crate::error::{Error, Result};

/// A dense row-major matrix. Column vectors are `n x 1`, scalars `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn transposed(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn matmul_into(a: &Tensor, b: &Tensor, out: &mut Tensor, accumulate: bool) {
        debug_assert_eq!(a.cols, b.rows);
        debug_assert_eq!((out.rows, out.cols), (a.rows, b.cols));
        let beta = if accumulate { 1.0 } else { 0.0 };
        unsafe {
            matrixmultiply::dgemm(
                a.rows,
                a.cols,
                b.cols,
                1.0,
                a.data.as_ptr(),
                a.cols as isize,
                1,
                b.data.as_ptr(),
                b.cols as isize,
                1,
                beta,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
    }
}

/// Handle to a value on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    RowSoftmax(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    // Literal "clamp negatives to a constant" variant, kept for ablation.
    ClampNeg(NodeId),
    Elu(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Row(NodeId, usize),
    SliceRows(NodeId, usize, usize),
    OuterSum(NodeId, NodeId),
    WeightedCe {
        logits: NodeId,
        target: usize,
        weight: f64,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Append-only tape of operations. Nodes are topologically ordered by
/// construction; `backward` walks them once in reverse insertion order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` call with respect to `id`.
    /// Zero tensor if the node did not influence the loss.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.rows, n.value.cols))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.nodes[a.0].value.shape();
        let (br, bc) = self.nodes[b.0].value.shape();
        if ac != br {
            return Err(Error::Shape(format!(
                "matmul: {}x{} . {}x{}",
                ar, ac, br, bc
            )));
        }
        let mut out = Tensor::zeros(ar, bc);
        Tensor::matmul_into(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut out, false);
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a.0].value.transposed();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", sa, sb)));
        }
        let mut out = self.nodes[a.0].value.clone();
        for (o, v) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(Error::Shape(format!("mul: {:?} vs {:?}", sa, sb)));
        }
        let mut out = self.nodes[a.0].value.clone();
        for (o, v) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            *o *= c;
        }
        self.push(out, Op::Scale(a, c))
    }

    /// Concatenate along the column axis; all inputs share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let rows = self.nodes[parts[0].0].value.rows;
        let mut cols = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows != rows {
                return Err(Error::Shape(format!(
                    "concat: row mismatch {} vs {}",
                    v.rows, rows
                )));
            }
            cols += v.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + v.cols]
                    .copy_from_slice(&v.data[r * v.cols..(r + 1) * v.cols]);
            }
            off += v.cols;
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Softmax over each row with max subtraction. Masked-out entries (mask
    /// value 0) get probability zero; a fully masked row is an error.
    pub fn row_softmax(&mut self, a: NodeId, mask: Option<&Tensor>) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if let Some(m) = mask {
            if m.shape() != v.shape() {
                return Err(Error::Shape(format!(
                    "softmax mask {:?} vs input {:?}",
                    m.shape(),
                    v.shape()
                )));
            }
        }
        let (rows, cols) = v.shape();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let live = |c: usize| mask.map_or(true, |m| m.get(r, c) != 0.0);
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if live(c) {
                    max = max.max(v.get(r, c));
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Numeric(format!("softmax: row {} fully masked", r)));
            }
            let mut sum = 0.0;
            for c in 0..cols {
                if live(c) {
                    let e = (v.get(r, c) - max).exp();
                    out.set(r, c, e);
                    sum += e;
                }
            }
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        Ok(self.push(out, Op::RowSoftmax(a)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            *o = 1.0 / (1.0 + (-*o).exp());
        }
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            *o = o.tanh();
        }
        self.push(out, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o *= slope;
            }
        }
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// Replaces negatives with the constant `floor` (gradient 0 there).
    pub fn clamp_negatives(&mut self, a: NodeId, floor: f64) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o = floor;
            }
        }
        self.push(out, Op::ClampNeg(a))
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o = o.exp() - 1.0;
            }
        }
        self.push(out, Op::Elu(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push(out, Op::Relu(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.data.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Extract row `r` as a `1 x cols` tensor.
    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if r >= v.rows {
            return Err(Error::Shape(format!("row {} of {} rows", r, v.rows)));
        }
        let out = Tensor::from_vec(1, v.cols, v.data[r * v.cols..(r + 1) * v.cols].to_vec())?;
        Ok(self.push(out, Op::Row(a, r)))
    }

    /// Contiguous row range `[start, start + len)` as a `len x cols` tensor.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if start + len > v.rows {
            return Err(Error::Shape(format!(
                "slice rows {}..{} of {} rows",
                start,
                start + len,
                v.rows
            )));
        }
        let out = Tensor::from_vec(
            len,
            v.cols,
            v.data[start * v.cols..(start + len) * v.cols].to_vec(),
        )?;
        Ok(self.push(out, Op::SliceRows(a, start, len)))
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors a (n x 1) and b (m x 1).
    pub fn outer_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols != 1 || vb.cols != 1 {
            return Err(Error::Shape("outer_sum expects column vectors".into()));
        }
        let (n, m) = (va.rows, vb.rows);
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                out.data[i * m + j] = va.data[i] + vb.data[j];
            }
        }
        Ok(self.push(out, Op::OuterSum(a, b)))
    }

    /// Weighted cross entropy: `w[y] * (-logit[y] + logsumexp(logits))`.
    /// `logits` is a `C x 1` column.
    pub fn weighted_ce(&mut self, logits: NodeId, target: usize, weight: f64) -> Result<NodeId> {
        let v = &self.nodes[logits.0].value;
        if v.cols != 1 {
            return Err(Error::Shape("weighted_ce expects a column of logits".into()));
        }
        if target >= v.rows {
            return Err(Error::Numeric(format!(
                "class id {} out of range (C = {})",
                target, v.rows
            )));
        }
        if weight <= 0.0 {
            return Err(Error::Numeric("class weight must be positive".into()));
        }
        let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.data.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = weight * (-v.data[target] + lse);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedCe {
                logits,
                target,
                weight,
            },
        ))
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        let n = &mut self.nodes[id.0];
        match &mut n.grad {
            Some(g) => {
                for (gv, dv) in g.data.iter_mut().zip(&delta.data) {
                    *gv += dv;
                }
            }
            None => n.grad = Some(delta),
        }
    }

    /// Reverse pass from a scalar loss. Populates gradients for every leaf
    /// reachable from `loss`; intermediate gradients are freed afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Numeric(
                "backward called twice without reset".into(),
            ));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::Shape("backward expects a scalar loss".into()));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            // Enum of borrowed pieces keeps the match simple below.
            enum Step {
                None,
                One(NodeId, Tensor),
                Two(NodeId, Tensor, NodeId, Tensor),
                Many(Vec<(NodeId, Tensor)>),
            }
            let step = match &self.nodes[i].op {
                Op::Leaf => Step::None,
                Op::Matmul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let bt = vb.transposed();
                    let mut da = Tensor::zeros(va.rows, va.cols);
                    Tensor::matmul_into(&g, &bt, &mut da, false);
                    let at = va.transposed();
                    let mut db = Tensor::zeros(vb.rows, vb.cols);
                    Tensor::matmul_into(&at, &g, &mut db, false);
                    Step::Two(*a, da, *b, db)
                }
                Op::Transpose(a) => Step::One(*a, g.transposed()),
                Op::Add(a, b) => Step::Two(*a, g.clone(), *b, g.clone()),
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut da = g.clone();
                    for (d, v) in da.data.iter_mut().zip(&vb.data) {
                        *d *= v;
                    }
                    let mut db = g.clone();
                    for (d, v) in db.data.iter_mut().zip(&va.data) {
                        *d *= v;
                    }
                    Step::Two(*a, da, *b, db)
                }
                Op::Scale(a, c) => {
                    let mut da = g.clone();
                    for d in da.data.iter_mut() {
                        *d *= c;
                    }
                    Step::One(*a, da)
                }
                Op::ConcatCols(parts) => {
                    let mut out = Vec::with_capacity(parts.len());
                    let mut off = 0;
                    for p in parts {
                        let v = &self.nodes[p.0].value;
                        let mut dp = Tensor::zeros(v.rows, v.cols);
                        for r in 0..v.rows {
                            dp.data[r * v.cols..(r + 1) * v.cols]
                                .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + v.cols]);
                        }
                        off += v.cols;
                        out.push((*p, dp));
                    }
                    Step::Many(out)
                }
                Op::RowSoftmax(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let mut dot = 0.0;
                        for c in 0..y.cols {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..y.cols {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    Step::One(*a, da)
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = g.clone();
                    for (d, yv) in da.data.iter_mut().zip(&y.data) {
                        *d *= yv * (1.0 - yv);
                    }
                    Step::One(*a, da)
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = g.clone();
                    for (d, yv) in da.data.iter_mut().zip(&y.data) {
                        *d *= 1.0 - yv * yv;
                    }
                    Step::One(*a, da)
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = g.clone();
                    for (d, xv) in da.data.iter_mut().zip(&x.data) {
                        if *xv < 0.0 {
                            *d *= slope;
                        }
                    }
                    Step::One(*a, da)
                }
                Op::ClampNeg(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = g.clone();
                    for (d, xv) in da.data.iter_mut().zip(&x.data) {
                        if *xv < 0.0 {
                            *d = 0.0;
                        }
                    }
                    Step::One(*a, da)
                }
                Op::Elu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = g.clone();
                    for (d, xv) in da.data.iter_mut().zip(&x.data) {
                        if *xv < 0.0 {
                            *d *= xv.exp();
                        }
                    }
                    Step::One(*a, da)
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = g.clone();
                    for (d, xv) in da.data.iter_mut().zip(&x.data) {
                        if *xv < 0.0 {
                            *d = 0.0;
                        }
                    }
                    Step::One(*a, da)
                }
                Op::Sum(a) => {
                    let v = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(v.rows, v.cols);
                    let gv = g.item();
                    da.data.fill(gv);
                    Step::One(*a, da)
                }
                Op::Mean(a) => {
                    let v = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(v.rows, v.cols);
                    let gv = g.item() / v.data.len() as f64;
                    da.data.fill(gv);
                    Step::One(*a, da)
                }
                Op::Row(a, r) => {
                    let v = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(v.rows, v.cols);
                    da.data[r * v.cols..(r + 1) * v.cols].copy_from_slice(&g.data);
                    Step::One(*a, da)
                }
                Op::SliceRows(a, start, len) => {
                    let v = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(v.rows, v.cols);
                    da.data[start * v.cols..(start + len) * v.cols].copy_from_slice(&g.data);
                    Step::One(*a, da)
                }
                Op::OuterSum(a, b) => {
                    let (n, m) = g.shape();
                    let mut da = Tensor::zeros(n, 1);
                    let mut db = Tensor::zeros(m, 1);
                    for r in 0..n {
                        for c in 0..m {
                            da.data[r] += g.data[r * m + c];
                            db.data[c] += g.data[r * m + c];
                        }
                    }
                    Step::Two(*a, da, *b, db)
                }
                Op::WeightedCe {
                    logits,
                    target,
                    weight,
                } => {
                    let v = &self.nodes[logits.0].value;
                    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = v.data.iter().map(|x| (x - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let gv = g.item();
                    let mut da = Tensor::zeros(v.rows, 1);
                    for (j, e) in exps.iter().enumerate() {
                        let p = e / sum;
                        da.data[j] = gv * weight * (p - if j == *target { 1.0 } else { 0.0 });
                    }
                    Step::One(*logits, da)
                }
            };
            match step {
                Step::None => {}
                Step::One(a, da) => self.accumulate(a, da),
                Step::Two(a, da, b, db) => {
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Step::Many(parts) => {
                    for (p, dp) in parts {
                        self.accumulate(p, dp);
                    }
                }
            }
            if !matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = None;
            }
        }
        Ok(())
    }
}

/// Inverted-dropout mask: entries are `0` with probability `rate`, else
/// `1 / (1 - rate)`. In eval mode the mask is all ones regardless of rate.
pub fn dropout_mask<R: Rng>(
    rows: usize,
    cols: usize,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Numeric(format!("dropout rate {} not in [0, 1)", rate)));
    }
    let mut t = Tensor::zeros(rows, cols);
    if !training || rate == 0.0 {
        t.data.fill(1.0);
        return Ok(t);
    }
    let keep = 1.0 / (1.0 - rate);
    for v in t.data.iter_mut() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { keep };
    }
    Ok(t)
}
