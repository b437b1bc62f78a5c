use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean allow-mask over a `rows × cols` score matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Shape {
                op: "mask",
                msg: format!("{rows}x{cols} mask needs {} flags, got {}", rows * cols, allowed.len()),
            });
        }
        Ok(Mask {
            rows,
            cols,
            allowed,
        })
    }

    pub fn allow_all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.allowed[row * self.cols..(row + 1) * self.cols]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    CrossEntropySum {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of evaluated operations. Values are computed eagerly when an
/// operation is recorded; [`Graph::backward`] walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape {
            op,
            msg: format!("expected a matrix, got shape {:?}", t.shape()),
        }),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2("transpose", self.value(a))?;
        let data = transpose_raw(self.value(a).data(), r, c);
        let value = Tensor::new(vec![c, r], data)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("map keeps shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = dims2("add_bias", self.value(a))?;
        let tb = self.value(bias);
        if tb.numel() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let b = tb.data().to_vec();
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (x, bv) in row.iter_mut().zip(&b) {
                *x += bv;
            }
        }
        self.push("add_bias", value, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.map(a, |x| x * c);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.map(a, |x| x + c);
        self.push("add_scalar", value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |x| x.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, f64::exp);
        self.push("exp", value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain { op: "log", value: bad });
        }
        let value = self.map(a, f64::ln);
        self.push("log", value, Op::Log(a), &[a])
    }

    /// Row-wise softmax over the last dimension. Masked entries come out as
    /// exactly zero; a row with nothing unmasked is an error.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.matrix_dims();
        if let Some(m) = mask {
            if m.rows != rows || m.cols != cols {
                return Err(Error::Dimension {
                    op: "softmax_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![m.rows, m.cols],
                });
            }
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let x = t.row(r);
            let allowed = |j: usize| mask.is_none_or(|m| m.allows(r, j));
            let max = (0..cols)
                .filter(|&j| allowed(j))
                .map(|j| x[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateRow { row: r });
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for j in (0..cols).filter(|&j| allowed(j)) {
                o[j] = (x[j] - max).exp();
                sum += o[j];
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    /// Normalises each vector along the last dimension to zero mean and unit
    /// (population) variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (rows, d) = t.matrix_dims();
        if d < 2 {
            return Err(Error::Shape {
                op: "layer_norm",
                msg: format!("normalised dimension must be at least 2, got {d}"),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        for p in [gain, bias] {
            if self.value(p).numel() != d {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: t.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            input: x,
            gain,
            bias,
            normalized,
            inv_std,
        };
        self.push("layer_norm", value, op, &[x, gain, bias])
    }

    /// Selects rows of a `V × d` table, e.g. an embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2("gather_rows", self.value(table))?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocab { id, size: v });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let op = Op::GatherRows {
            table,
            ids: ids.to_vec(),
        };
        self.push("gather_rows", value, op, &[table])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape {
                op: "concat_cols",
                msg: "nothing to concatenate".into(),
            });
        };
        let (m, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.value(p))?;
            if r != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = dims2("slice_rows", self.value(a))?;
        if len == 0 || start + len > rows {
            return Err(Error::Shape {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of 0..{rows}", start + len),
            });
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(vec![len, cols], data)?;
        self.push("slice_rows", value, Op::SliceRows { input: a, start }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. `None` targets are skipped. Returns the sum and the number
    /// of scored positions.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<(Var, usize)> {
        let t = self.value(logits);
        let (rows, v) = dims2("cross_entropy", t)?;
        if targets.len() != rows {
            return Err(Error::Shape {
                op: "cross_entropy",
                msg: format!("{rows} logit rows but {} targets", targets.len()),
            });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let mut probs = vec![0.0; rows * v];
        let mut loss = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            if target >= v {
                return Err(Error::Vocab { id: target, size: v });
            }
            let x = t.row(r);
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|&xi| (xi - max).exp()).sum::<f64>().ln();
            for j in 0..v {
                probs[r * v + j] = (x[j] - lse).exp();
            }
            loss += lse - x[target];
        }
        let op = Op::CrossEntropySum {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        let var = self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])?;
        Ok((var, count))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(dout) = rest[0].as_deref() else { continue };
            self.backward_node(node, dout, before);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn backward_node(&self, node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Lazily allocates the input's gradient buffer and hands it to `f`,
        // skipping inputs that do not require gradients.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).matrix_dims();
                let n = self.value(*b).matrix_dims().1;
                let bt = transpose_raw(self.value(*b).data(), k, n);
                acc(*a, &mut |g| gemm_acc(dout, &bt, g, m, n, k));
                let at = transpose_raw(self.value(*a).data(), m, k);
                acc(*b, &mut |g| gemm_acc(&at, dout, g, k, m, n));
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).matrix_dims();
                let back = transpose_raw(dout, c, r);
                acc(*a, &mut |g| add_into(g, &back));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dout));
                acc(*b, &mut |g| add_into(g, dout));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for ((gi, d), y) in g.iter_mut().zip(dout).zip(vb) {
                        *gi += d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, d), x) in g.iter_mut().zip(dout).zip(va) {
                        *gi += d * x;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                acc(*a, &mut |g| add_into(g, dout));
                let n = self.value(*bias).numel();
                acc(*bias, &mut |g| {
                    for row in dout.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| {
                for (gi, d) in g.iter_mut().zip(dout) {
                    *gi += c * d;
                }
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |g| add_into(g, dout)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |g| {
                    for ((gi, d), xi) in g.iter_mut().zip(dout).zip(x) {
                        if *xi > 0.0 {
                            *gi += d;
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for ((gi, d), yi) in g.iter_mut().zip(dout).zip(y) {
                        *gi += d * yi;
                    }
                });
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |g| {
                    for ((gi, d), xi) in g.iter_mut().zip(dout).zip(x) {
                        *gi += d / xi;
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (_, cols) = node.value.matrix_dims();
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for ((gr, dr), yr) in g.chunks_mut(cols).zip(dout.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for j in 0..cols {
                            gr[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                acc(*gain, &mut |g| {
                    for (dr, xr) in dout.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            g[j] += dr[j] * xr[j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for dr in dout.chunks(d) {
                        add_into(g, dr);
                    }
                });
                acc(*input, &mut |g| {
                    for (r, ((gr, dr), xr)) in g.chunks_mut(d).zip(dout.chunks(d)).zip(normalized.chunks(d)).enumerate() {
                        let dxh: Vec<f64> = dr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
                        let mean_dxh_xh = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gr[j] += inv_std[r] * (dxh[j] - mean_dxh - xr[j] * mean_dxh_xh);
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = self.value(*table).matrix_dims().1;
                acc(*table, &mut |g| {
                    for (k, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * d..(id + 1) * d], &dout[k * d..(k + 1) * d]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.matrix_dims().1;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).matrix_dims().1;
                    acc(p, &mut |g| {
                        for (gr, dr) in g.chunks_mut(c).zip(dout.chunks(total)) {
                            add_into(gr, &dr[offset..offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceRows { input, start } => {
                let cols = node.value.matrix_dims().1;
                let from = start * cols;
                acc(*input, &mut |g| add_into(&mut g[from..from + dout.len()], dout));
            }
            Op::Sum(a) => acc(*a, &mut |g| {
                for gi in g.iter_mut() {
                    *gi += dout[0];
                }
            }),
            Op::CrossEntropySum { logits, targets, probs } => {
                let v = self.value(*logits).matrix_dims().1;
                acc(*logits, &mut |g| {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        for j in 0..v {
                            g[r * v + j] += dout[0] * probs[r * v + j];
                        }
                        g[r * v + t] -= dout[0];
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
