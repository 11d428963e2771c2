use std::borrow::Cow;

use super::tensor::{dims2, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boundary handling for [`Tape::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// `r` zeros on both sides; output `j` sees inputs `j-r..=j+r`.
    Centered,
    /// `2r` zeros on the left; output `j` sees inputs `j-2r..=j`.
    Causal,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    MaskRows(Var, Vec<bool>),
    Sum(Var),
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    AddBias(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        radius: usize,
        mode: ConvMode,
    },
    Glu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad_id: usize,
        probs: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    requires_grad: bool,
    op: Op,
}

/// Eager recording of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the computation graph. Leaves may borrow their
/// values (parameters are never copied onto the tape).
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forgets every node recorded after the first `len` and all gradients.
    /// Variables below `len` stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies a recorded value (and its gradient, if any) into a tensor.
    pub fn export(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor {
            shape: node.shape.clone(),
            values: node.value.to_vec(),
            requires_grad: node.requires_grad,
            grad: self.grad(v).map(<[f64]>::to_vec),
        }
    }

    /// Records a leaf that borrows its values from `t`.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape.clone(), Cow::Borrowed(&t.values), Op::Leaf, t.requires_grad)
    }

    /// Records an owned leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t.shape, Cow::Owned(t.values), Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        Ok(self.input(Tensor::new(shape, values)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), Cow::Owned(out), Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::Scale(x, c), rg)
    }

    /// Elementwise product with a constant (non-differentiated) array.
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(x).len() {
            return Err(Error::shape("mul_const", self.shape(x), &[factors.len()]));
        }
        let out: Vec<f64> = self.value(x).iter().zip(&factors).map(|(v, f)| v * f).collect();
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::MulConst(x, factors), rg))
    }

    /// Zeroes every row `i` with `keep[i] == false`.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (rows, cols) = dims2(self.shape(x));
        if keep.len() != rows {
            return Err(Error::shape("mask_rows", self.shape(x), &[keep.len()]));
        }
        let mut out = self.value(x).to_vec();
        for (row, &k) in out.chunks_mut(cols).zip(keep) {
            if !k {
                row.fill(0.0);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            self.shape(x).to_vec(),
            Cow::Owned(out),
            Op::MaskRows(x, keep.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(Vec::new(), Cow::Owned(vec![s]), Op::Sum(x), rg)
    }

    fn check_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    /// `a · b` for `a: n×p`, `b: p×q`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.linear_impl("matmul", a, b, None)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check_matrix("matmul_nt", a)?;
        let (n, k2) = self.check_matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatmulNt(a, b), rg))
    }

    /// Adds a bias row `b: q` to every row of `x: n×q`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, q) = self.check_matrix("add_bias", x)?;
        if self.value(b).len() != q {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(q) {
            add_into(row, bv);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::AddBias(x, b), rg))
    }

    /// `x · w + b` for `x: n×p`, `w: p×q`, `b: q`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.linear_impl("linear", x, w, Some(b))
    }

    fn linear_impl(&mut self, op: &'static str, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, p) = self.check_matrix(op, x)?;
        let (p2, q) = self.check_matrix(op, w)?;
        if p != p2 {
            return Err(Error::shape(op, self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.value(b).len() != q {
                return Err(Error::shape(op, self.shape(w), self.shape(b)));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; n * q];
        for i in 0..n {
            let orow = &mut out[i * q..(i + 1) * q];
            if let Some(b) = b {
                orow.copy_from_slice(self.value(b));
            }
            for (k, &xk) in xv[i * p..(i + 1) * p].iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                for (o, wv) in orow.iter_mut().zip(&wv[k * q..(k + 1) * q]) {
                    *o += xk * wv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let op = match b {
            Some(_) => Op::Linear { x, w, b },
            None => Op::Matmul(x, w),
        };
        Ok(self.push(vec![n, q], Cow::Owned(out), op, rg))
    }

    /// One-dimensional convolution over the row axis.
    ///
    /// `x: n×c_in`, `w: (2r+1)×c_in×c_out`, `b: c_out`. Output length is `n`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, mode: ConvMode) -> Result<Var> {
        let (n, c_in) = self.check_matrix("conv1d", x)?;
        let (k, wc_in, c_out) = match self.shape(w) {
            [k, ci, co] if k % 2 == 1 => (*k, *ci, *co),
            s => return Err(Error::shape("conv1d", self.shape(x), s)),
        };
        if wc_in != c_in {
            return Err(Error::shape("conv1d", self.shape(x), self.shape(w)));
        }
        if self.value(b).len() != c_out {
            return Err(Error::shape("conv1d", self.shape(w), self.shape(b)));
        }
        let radius = (k - 1) / 2;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![0.0; n * c_out];
        for j in 0..n {
            let orow = &mut out[j * c_out..(j + 1) * c_out];
            orow.copy_from_slice(bv);
            for tap in 0..k {
                let Some(src) = conv_source(j, tap, radius, n, mode) else {
                    continue;
                };
                let xrow = &xv[src * c_in..(src + 1) * c_in];
                for (c, &xc) in xrow.iter().enumerate() {
                    if xc == 0.0 {
                        continue;
                    }
                    let wrow = &wv[(tap * c_in + c) * c_out..(tap * c_in + c + 1) * c_out];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xc * wv;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            vec![n, c_out],
            Cow::Owned(out),
            Op::Conv1d { x, w, b, radius, mode },
            rg,
        ))
    }

    /// Gated linear unit: first half of the channels times the sigmoid of
    /// the second half.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let (n, c) = dims2(self.shape(x));
        if c % 2 != 0 || self.shape(x).is_empty() {
            return Err(Error::shape("glu", self.shape(x), &[c / 2 * 2]));
        }
        let k = c / 2;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * k);
        for row in xv.chunks(c) {
            let (a, g) = row.split_at(k);
            out.extend(a.iter().zip(g).map(|(a, g)| a * sigmoid(*g)));
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = k;
        let rg = self.rg(x);
        Ok(self.push(shape, Cow::Owned(out), Op::Glu(x), rg))
    }

    /// Row-wise softmax over the last axis. `valid[j] == false` forces column
    /// `j` to weight exactly zero in every row.
    pub fn softmax_masked(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        let (_, cols) = dims2(self.shape(x));
        if valid.len() != cols {
            return Err(Error::shape("softmax_masked", self.shape(x), &[valid.len()]));
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::DegenerateMask);
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(cols) {
            let max = row
                .iter()
                .zip(valid)
                .filter(|(_, &v)| v)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (x, &v) in row.iter_mut().zip(valid) {
                *x = if v { (*x - max).exp() } else { 0.0 };
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::Softmax(x), rg))
    }

    /// Concatenates matrices along the channel axis, in argument order.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::shape("concat", &[], &[]));
        };
        let (n, _) = self.check_matrix("concat", first)?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (rows, cols) = self.check_matrix("concat", x)?;
            if rows != n {
                return Err(Error::shape("concat", self.shape(first), self.shape(x)));
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[i * w..(i + 1) * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(vec![n, total], Cow::Owned(out), Op::Concat(xs.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.check_matrix("slice_cols", x)?;
        if start > end || end > c {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, end]));
        }
        let w = end - start;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, w], Cow::Owned(out), Op::SliceCols { x, start }, rg))
    }

    /// Row gather from an embedding table `V×d`.
    pub fn embed(&mut self, ids: &[usize], table: Var) -> Result<Var> {
        let (vocab, d) = self.check_matrix("embed", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Vocabulary {
                index: bad,
                size: vocab,
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            Cow::Owned(out),
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood over positions whose target is not `pad_id`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        self.nll(logits, targets, pad_id, true)
    }

    /// Summed negative log-likelihood over non-pad positions.
    pub fn nll_sum(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        self.nll(logits, targets, pad_id, false)
    }

    fn nll(&mut self, logits: Var, targets: &[usize], pad_id: usize, mean: bool) -> Result<Var> {
        let (m, v) = self.check_matrix("cross_entropy", logits)?;
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Vocabulary { index: bad, size: v });
        }
        let count = targets.iter().filter(|&&t| t != pad_id).count();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; m * v];
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t == pad_id {
                continue;
            }
            let row = &lv[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[t];
            for (p, x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        let rg = self.rg(logits);
        Ok(self.push(
            Vec::new(),
            Cow::Owned(vec![total * scale]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad_id,
                probs,
                scale,
            },
            rg,
        ))
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    /// Gradients accumulate additively across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[]));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(buf) = grad_buf(nodes, grads, v) {
                        add_into(buf, g);
                    }
                }
            }
            Op::AddBias(x, b) => {
                let q = nodes[x.0].shape[1];
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    add_into(buf, g);
                }
                if let Some(buf) = grad_buf(nodes, grads, *b) {
                    for grow in g.chunks(q) {
                        add_into(buf, grow);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    axpy(buf, *c, g);
                }
            }
            Op::MulConst(x, f) => {
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for ((d, gi), fi) in buf.iter_mut().zip(g).zip(f) {
                        *d += gi * fi;
                    }
                }
            }
            Op::MaskRows(x, keep) => {
                let (_, cols) = dims2(&nodes[x.0].shape);
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for ((drow, grow), &k) in buf.chunks_mut(cols).zip(g.chunks(cols)).zip(keep) {
                        if k {
                            add_into(drow, grow);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for d in buf.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Matmul(x, w) => backward_linear(nodes, grads, *x, *w, None, g),
            Op::Linear { x, w, b } => backward_linear(nodes, grads, *x, *w, *b, g),
            Op::MatmulNt(a, b) => {
                let (m, k) = dims2(&nodes[a.0].shape);
                let n = nodes[b.0].shape[0];
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(buf) = grad_buf(nodes, grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(&mut buf[i * k..(i + 1) * k], g[i * n + j], &bv[j * k..(j + 1) * k]);
                        }
                    }
                }
                if let Some(buf) = grad_buf(nodes, grads, *b) {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(&mut buf[j * k..(j + 1) * k], g[i * n + j], &av[i * k..(i + 1) * k]);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, radius, mode } => backward_conv(nodes, grads, (*x, *w, *b), *radius, *mode, g),
            Op::Glu(x) => {
                let (_, c) = dims2(&nodes[x.0].shape);
                let k = c / 2;
                let xv = &nodes[x.0].value;
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for ((drow, xrow), grow) in buf.chunks_mut(c).zip(xv.chunks(c)).zip(g.chunks(k)) {
                        for j in 0..k {
                            let a = xrow[j];
                            let s = sigmoid(xrow[k + j]);
                            drow[j] += grow[j] * s;
                            drow[k + j] += grow[j] * a * s * (1.0 - s);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let (_, cols) = dims2(&nodes[i].shape);
                let y = &nodes[i].value;
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for ((drow, yrow), grow) in buf.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let s = dot(yrow, grow);
                        for ((d, yj), gj) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += yj * (gj - s);
                        }
                    }
                }
            }
            Op::Concat(xs) => {
                let (n, total) = (nodes[i].shape[0], nodes[i].shape[1]);
                let mut offset = 0;
                for &x in xs {
                    let w = nodes[x.0].shape[1];
                    if let Some(buf) = grad_buf(nodes, grads, x) {
                        for r in 0..n {
                            let src = &g[r * total + offset..r * total + offset + w];
                            add_into(&mut buf[r * w..(r + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = nodes[x.0].shape[1];
                let (n, w) = (nodes[i].shape[0], nodes[i].shape[1]);
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for r in 0..n {
                        let dst = &mut buf[r * c + start..r * c + start + w];
                        add_into(dst, &g[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::Embed { table, ids } => {
                let d = nodes[table.0].shape[1];
                if let Some(buf) = grad_buf(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad_id,
                probs,
                scale,
            } => {
                let v = nodes[logits.0].shape[1];
                let coef = g[0] * scale;
                if let Some(buf) = grad_buf(nodes, grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *pad_id {
                            continue;
                        }
                        let drow = &mut buf[r * v..(r + 1) * v];
                        axpy(drow, coef, &probs[r * v..(r + 1) * v]);
                        drow[t] -= coef;
                    }
                }
            }
        }
    }
}

fn grad_buf<'g>(nodes: &[Node<'_>], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn backward_linear(nodes: &[Node<'_>], grads: &mut [Option<Vec<f64>>], x: Var, w: Var, b: Option<Var>, g: &[f64]) {
    let (n, p) = dims2(&nodes[x.0].shape);
    let q = nodes[w.0].shape[1];
    let xv = &nodes[x.0].value;
    let wv = &nodes[w.0].value;
    if let Some(buf) = grad_buf(nodes, grads, x) {
        for i in 0..n {
            let grow = &g[i * q..(i + 1) * q];
            for k in 0..p {
                buf[i * p + k] += dot(grow, &wv[k * q..(k + 1) * q]);
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, w) {
        for i in 0..n {
            let grow = &g[i * q..(i + 1) * q];
            for k in 0..p {
                let xk = xv[i * p + k];
                if xk != 0.0 {
                    axpy(&mut buf[k * q..(k + 1) * q], xk, grow);
                }
            }
        }
    }
    if let Some(buf) = b.and_then(|b| grad_buf(nodes, grads, b)) {
        for grow in g.chunks(q) {
            add_into(buf, grow);
        }
    }
}

fn backward_conv(
    nodes: &[Node<'_>],
    grads: &mut [Option<Vec<f64>>],
    (x, w, b): (Var, Var, Var),
    radius: usize,
    mode: ConvMode,
    g: &[f64],
) {
    let (n, c_in) = dims2(&nodes[x.0].shape);
    let c_out = nodes[w.0].shape[2];
    let k = 2 * radius + 1;
    let xv = &nodes[x.0].value;
    let wv = &nodes[w.0].value;
    if let Some(buf) = grad_buf(nodes, grads, x) {
        for j in 0..n {
            let grow = &g[j * c_out..(j + 1) * c_out];
            for tap in 0..k {
                let Some(src) = conv_source(j, tap, radius, n, mode) else {
                    continue;
                };
                for c in 0..c_in {
                    let wrow = &wv[(tap * c_in + c) * c_out..(tap * c_in + c + 1) * c_out];
                    buf[src * c_in + c] += dot(grow, wrow);
                }
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, w) {
        for j in 0..n {
            let grow = &g[j * c_out..(j + 1) * c_out];
            for tap in 0..k {
                let Some(src) = conv_source(j, tap, radius, n, mode) else {
                    continue;
                };
                for c in 0..c_in {
                    let xc = xv[src * c_in + c];
                    if xc != 0.0 {
                        let off = (tap * c_in + c) * c_out;
                        axpy(&mut buf[off..off + c_out], xc, grow);
                    }
                }
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, b) {
        for grow in g.chunks(c_out) {
            add_into(buf, grow);
        }
    }
}

fn conv_source(j: usize, tap: usize, radius: usize, n: usize, mode: ConvMode) -> Option<usize> {
    let shift = match mode {
        ConvMode::Centered => radius,
        ConvMode::Causal => 2 * radius,
    };
    let src = (j + tap).checked_sub(shift)?;
    (src < n).then_some(src)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, xi) in dst.iter_mut().zip(x) {
        *d += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
