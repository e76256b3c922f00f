use std::borrow::Cow;

use super::kernels::{self, Conv1dDims, Conv3dDims};
use super::{NumericsError, Tensor};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Permute { x: Var, source: Vec<usize> },
    Softmax { x: Var, cols: usize },
    Gather { x: Var, rows: Vec<Option<usize>>, row_len: usize },
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    Conv1d { seq: Var, kernel: Var, bias: Var, dims: Conv1dDims },
    Conv3d { input: Var, kernel: Var, bias: Var, dims: Conv3dDims },
    MaxPool { x: Var, argmax: Vec<usize> },
    Cosine { rows: Var, query: Var, valid: Vec<bool> },
    Threshold { x: Var, gamma: f64 },
    ScaleRows { x: Var, weights: Var },
    MaskFill { x: Var, keep: Vec<bool> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Leaves may borrow their values (parameters, cached encodings) for the
/// lifetime `'a`, so building a graph never copies model weights.
///
/// Besides values and gradients the graph keeps two measurements: a FLOP
/// counter for the dense ops, and the smallest distance of any recorded
/// non-smooth decision (ReLU sign, pooling argmax, gate threshold, top-K
/// cut) to its boundary, plus a hash of all those decisions.
pub struct Graph<'a> {
    values: Vec<Cow<'a, Tensor>>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    ops: Vec<Op>,
    backward_done: bool,
    flops: u64,
    margin: f64,
    pattern: u64,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            backward_done: false,
            flops: 0,
            margin: f64::INFINITY,
            pattern: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Smallest distance to a non-smooth boundary seen so far.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Records an externally computed boundary distance (e.g. a top-K cut).
    pub fn note_margin(&mut self, margin: f64) {
        self.margin = self.margin.min(margin);
    }

    /// Hash of every non-smooth decision taken so far. Two forward passes
    /// with equal patterns lie on the same smooth piece of the function.
    pub fn pattern(&self) -> u64 {
        self.pattern
    }

    /// Folds discrete decisions (e.g. selected indices) into [`Self::pattern`].
    pub fn note_pattern(&mut self, decisions: impl IntoIterator<Item = u64>) {
        for d in decisions {
            self.pattern = (self.pattern ^ d).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(t), true)
    }

    /// Non-trainable leaf borrowing its value.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Owned(t), requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of the loss w.r.t. `v`, available after [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        self.ops.push(Op::Leaf);
        Var(self.values.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(name));
        }
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        self.values.push(Cow::Owned(value));
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Ok(Var(self.values.len() - 1))
    }

    fn data(&self, v: Var) -> &[f64] {
        self.values[v.0].data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(self.data(a), self.data(b), m, k, n);
        self.flops += 2 * (m * k * n) as u64;
        let t = Tensor::from_parts(vec![m, n], out);
        self.push("matmul", t, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    /// Batched product of `[B×m×k]` and `[B×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(NumericsError::Shape(format!("bmm {sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(batch * m * n);
        for bi in 0..batch {
            out.extend(matmul_kernel(&da[bi * m * k..(bi + 1) * m * k], &db[bi * k * n..(bi + 1) * k * n], m, k, n));
        }
        self.flops += 2 * (batch * m * k * n) as u64;
        let t = Tensor::from_parts(vec![batch, m, n], out);
        self.push("bmm", t, Op::BatchMatMul { a, b, batch, m, k, n }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(NumericsError::Shape(format!("broadcast {sb:?} onto {sa:?}")));
        }
        let db = self.data(b);
        let out = self.data(a).iter().enumerate().map(|(i, x)| x + db[i % db.len()]).collect();
        let t = Tensor::from_parts(sa.to_vec(), out);
        self.push("add_broadcast", t, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x * c).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push("scale", t, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.data(a).to_vec())?;
        self.push("reshape", t, Op::Reshape(a), &[a])
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(NumericsError::Shape(format!("bad permutation {perm:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut in_strides = vec![1; nd];
        for i in (0..nd - 1).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let numel = self.value(x).numel();
        let mut source = Vec::with_capacity(numel);
        let mut idx = vec![0usize; nd];
        for _ in 0..numel {
            source.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let d = self.data(x);
        let out = source.iter().map(|&s| d[s]).collect();
        let t = Tensor::from_parts(out_shape, out);
        self.push("permute", t, Op::Permute { x, source }, &[x])
    }

    /// Softmax over the last axis. Masked (`false`) columns get exactly zero
    /// probability and zero gradient.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().unwrap();
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(NumericsError::Shape(format!("mask of {} for {cols} columns", m.len())));
            }
            if !m.iter().any(|&b| b) {
                return Err(NumericsError::Degenerate("softmax over fully masked input".into()));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let d = self.data(x);
        let mut out = vec![0.0; d.len()];
        for (row, o) in d.chunks(cols).zip(out.chunks_mut(cols)) {
            let mx = (0..cols).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in (0..cols).filter(|&j| keep(j)) {
                o[j] = (row[j] - mx).exp();
                total += o[j];
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax { x, cols }, &[x])
    }

    /// Row selection along axis 0; `None` yields a zero row.
    pub fn gather(&mut self, x: Var, rows: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if rows.is_empty() {
            return Err(NumericsError::Shape("gather of zero rows".into()));
        }
        let row_len: usize = shape[1..].iter().product();
        let d = self.data(x);
        let mut out = Vec::with_capacity(rows.len() * row_len);
        for r in rows {
            match *r {
                Some(i) if i >= shape[0] => return Err(NumericsError::Index { index: i, extent: shape[0] }),
                Some(i) => out.extend_from_slice(&d[i * row_len..(i + 1) * row_len]),
                None => out.extend(std::iter::repeat_n(0.0, row_len)),
            }
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let t = Tensor::from_parts(out_shape, out);
        self.push("gather", t, Op::Gather { x, rows: rows.to_vec(), row_len }, &[x])
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| NumericsError::Shape("stack of nothing".into()))?;
        let shape = self.shape(*first).to_vec();
        let mut out = Vec::with_capacity(xs.len() * self.value(*first).numel());
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(NumericsError::Shape(format!("stack {:?} with {shape:?}", self.shape(x))));
            }
            out.extend_from_slice(self.data(x));
        }
        let mut out_shape = vec![xs.len()];
        out_shape.extend(shape);
        let t = Tensor::from_parts(out_shape, out);
        self.push("stack", t, Op::Stack(xs.to_vec()), xs)
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(NumericsError::Shape("concat of nothing".into()));
        }
        let out: Vec<f64> = xs.iter().flat_map(|&x| self.data(x).iter().copied()).collect();
        let t = Tensor::from_parts(vec![out.len()], out);
        self.push("concat", t, Op::Concat(xs.to_vec()), xs)
    }

    /// Same-length dilated 1-D convolution followed by ReLU.
    ///
    /// `seq` is `[N×d_in]`, `kernel` is `[(2w+1)×d_in×f]`, `bias` is `[f]`;
    /// zero padding of `w·dilation` on each side keeps the length at `N`.
    pub fn conv1d_dilated(&mut self, seq: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (ss, sk, sb) = (self.shape(seq), self.shape(kernel), self.shape(bias));
        if dilation == 0 {
            return Err(NumericsError::Shape("dilation must be at least 1".into()));
        }
        if ss.len() != 2 || sk.len() != 3 || sb.len() != 1 || sk[1] != ss[1] || sk[2] != sb[0] || sk[0] % 2 == 0 {
            return Err(NumericsError::Shape(format!("conv1d seq {ss:?} kernel {sk:?} bias {sb:?}")));
        }
        let dims = Conv1dDims { len: ss[0], d_in: ss[1], filters: sk[2], taps: sk[0], dilation };
        let (pre, out) = kernels::conv1d_forward(self.data(seq), self.data(kernel), self.data(bias), dims);
        self.note_margin(pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        self.note_pattern(pre.iter().map(|&v| u64::from(v > 0.0)));
        self.flops += 2 * (dims.len * dims.taps * dims.d_in * dims.filters) as u64;
        let t = Tensor::from_parts(vec![dims.len, dims.filters], out);
        self.push("conv1d_dilated", t, Op::Conv1d { seq, kernel, bias, dims }, &[seq, kernel, bias])
    }

    /// Same-padded 3-D convolution followed by ReLU.
    ///
    /// `cube` is `[C_in×D×H×W]`, `kernel` is `[C_out×C_in×kd×kh×kw]` with odd
    /// kernel extents, `bias` is `[C_out]`.
    pub fn conv3d(&mut self, cube: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (sc, sk, sb) = (self.shape(cube), self.shape(kernel), self.shape(bias));
        if sc.len() != 4 || sk.len() != 5 || sb.len() != 1 || sk[1] != sc[0] || sk[0] != sb[0] {
            return Err(NumericsError::Shape(format!("conv3d cube {sc:?} kernel {sk:?} bias {sb:?}")));
        }
        if sk[2..].iter().any(|k| k % 2 == 0) {
            return Err(NumericsError::Shape(format!("conv3d kernel extents must be odd, got {sk:?}")));
        }
        let dims =
            Conv3dDims { c_in: sc[0], c_out: sk[0], spatial: [sc[1], sc[2], sc[3]], kernel: [sk[2], sk[3], sk[4]] };
        let (pre, out) = kernels::conv3d_forward(self.data(cube), self.data(kernel), self.data(bias), dims);
        // Exact zeros come from all-zero receptive fields (padding, gated-out
        // items) and stay zero under small perturbations, so they are not kinks.
        self.note_margin(pre.iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |m, v| m.min(v.abs())));
        self.note_pattern(pre.iter().map(|&v| u64::from(v > 0.0)));
        self.flops += kernels::conv3d_flops(dims);
        let mut shape = vec![dims.c_out];
        shape.extend(dims.spatial);
        let t = Tensor::from_parts(shape, out);
        self.push("conv3d", t, Op::Conv3d { input: cube, kernel, bias, dims }, &[cube, kernel, bias])
    }

    /// 3-D max pooling over `[C×D×H×W]`; trailing partial windows are kept.
    pub fn maxpool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || window.contains(&0) || stride.contains(&0) {
            return Err(NumericsError::Shape(format!("maxpool3d on {s:?}")));
        }
        let p = kernels::maxpool3d_forward(self.data(x), s[0], [s[1], s[2], s[3]], window, stride);
        self.note_margin(p.margin);
        self.note_pattern(p.argmax.iter().map(|&i| i as u64));
        self.flops += self.value(x).numel() as u64;
        let mut shape = vec![s[0]];
        shape.extend(p.out_spatial);
        let t = Tensor::from_parts(shape, p.values);
        self.push("maxpool3d", t, Op::MaxPool { x, argmax: p.argmax }, &[x])
    }

    /// Cosine similarity of each row of `[M×d]` with a `[d]` query.
    /// Invalid rows are set to −2; a zero norm gives 0.
    pub fn cosine_rows(&mut self, rows: Var, query: Var, valid: &[bool]) -> Result<Var> {
        let (sr, sq) = (self.shape(rows), self.shape(query));
        if sr.len() != 2 || sq != [sr[1]] || valid.len() != sr[0] {
            return Err(NumericsError::Shape(format!("cosine rows {sr:?} query {sq:?}")));
        }
        let (m, d) = (sr[0], sr[1]);
        let q = self.data(query);
        let qn = norm(q);
        let out = self
            .data(rows)
            .chunks(d)
            .zip(valid)
            .map(|(r, &ok)| {
                if !ok {
                    return INVALID_SCORE;
                }
                let rn = norm(r);
                if rn == 0.0 || qn == 0.0 {
                    0.0
                } else {
                    (dot(r, q) / (rn * qn)).clamp(-1.0, 1.0)
                }
            })
            .collect();
        self.flops += 3 * (m * d) as u64;
        let t = Tensor::from_parts(vec![m], out);
        self.push("cosine_rows", t, Op::Cosine { rows, query, valid: valid.to_vec() }, &[rows, query])
    }

    /// `x` where `x ≥ gamma`, else 0. Derivative is 1 above the threshold, 0 below.
    pub fn threshold(&mut self, x: Var, gamma: f64) -> Result<Var> {
        let d = self.data(x);
        let out: Vec<f64> = d.iter().map(|&v| if v < gamma { 0.0 } else { v }).collect();
        let margin = d.iter().fold(f64::INFINITY, |m, v| m.min((v - gamma).abs()));
        let gates: Vec<u64> = d.iter().map(|&v| u64::from(v >= gamma)).collect();
        self.note_margin(margin);
        self.note_pattern(gates);
        let t = Tensor::from_parts(self.shape(x).to_vec(), out);
        self.push("threshold", t, Op::Threshold { x, gamma }, &[x])
    }

    /// Multiplies each leading-axis slice of `x` by the matching entry of `weights`.
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(weights));
        if sw.len() != 1 || sx[0] != sw[0] {
            return Err(NumericsError::Shape(format!("scale_rows {sx:?} by {sw:?}")));
        }
        let row = self.value(x).numel() / sx[0];
        let w = self.data(weights);
        let out = self.data(x).iter().enumerate().map(|(i, v)| v * w[i / row]).collect();
        let t = Tensor::from_parts(sx.to_vec(), out);
        self.push("scale_rows", t, Op::ScaleRows { x, weights }, &[x, weights])
    }

    /// Replaces entries where `keep` is false with `fill` (no gradient there).
    pub fn mask_fill(&mut self, x: Var, keep: &[bool], fill: f64) -> Result<Var> {
        if keep.len() != self.value(x).numel() {
            return Err(NumericsError::Shape(format!("mask of {} for {:?}", keep.len(), self.shape(x))));
        }
        let out = self.data(x).iter().zip(keep).map(|(&v, &k)| if k { v } else { fill }).collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), out);
        self.push("mask_fill", t, Op::MaskFill { x, keep: keep.to_vec() }, &[x])
    }

    /// Negative log-softmax of `logits[target]`, stabilised by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let d = self.data(logits);
        if self.shape(logits).len() != 1 || target >= d.len() {
            return Err(NumericsError::Shape(format!("cross_entropy target {target} for {:?}", self.shape(logits))));
        }
        let mx = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = d.iter().map(|v| (v - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + mx - d[target];
        let probs = exps.iter().map(|e| e / total).collect();
        self.push("cross_entropy", Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, &[logits])
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::Shape(format!("{name} {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Accumulates d`loss`/d`v` into every node that requires a gradient.
    /// May run only once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(NumericsError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalar(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        if self.requires[loss.0] {
            self.grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        for i in 0..self.values.len() {
            if self.requires[i] && matches!(self.ops[i], Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(vec![0.0; self.values[i].numel()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let Graph { values, grads, requires, ops, .. } = self;
        let val = |v: Var| values[v.0].data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !requires[v.0] {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; values[v.0].numel()]);
            f(buf);
        };
        match &ops[i] {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (da, db) = (val(a), val(b));
                acc(a, &mut |ga| matmul_grad_a(g, db, ga, m, k, n));
                acc(b, &mut |gb| matmul_grad_b(g, da, gb, m, k, n));
            }
            &Op::BatchMatMul { a, b, batch, m, k, n } => {
                let (da, db) = (val(a), val(b));
                acc(a, &mut |ga| {
                    for bi in 0..batch {
                        matmul_grad_a(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &db[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                });
                acc(b, &mut |gb| {
                    for bi in 0..batch {
                        matmul_grad_b(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &da[bi * m * k..(bi + 1) * m * k],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| axpy(ga, g, 1.0));
                acc(b, &mut |gb| axpy(gb, g, 1.0));
            }
            &Op::AddBroadcast(a, b) => {
                acc(a, &mut |ga| axpy(ga, g, 1.0));
                acc(b, &mut |gb| {
                    let n = gb.len();
                    for (j, gv) in g.iter().enumerate() {
                        gb[j % n] += gv;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (da, db) = (val(a), val(b));
                acc(a, &mut |ga| ga.iter_mut().zip(g).zip(db).for_each(|((x, gv), y)| *x += gv * y));
                acc(b, &mut |gb| gb.iter_mut().zip(g).zip(da).for_each(|((x, gv), y)| *x += gv * y));
            }
            &Op::Scale(a, c) => acc(a, &mut |ga| axpy(ga, g, c)),
            &Op::Sum(a) => acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            &Op::Reshape(a) => acc(a, &mut |ga| axpy(ga, g, 1.0)),
            Op::Permute { x, source } => acc(*x, &mut |gx| {
                for (gv, &s) in g.iter().zip(source) {
                    gx[s] += gv;
                }
            }),
            &Op::Softmax { x, cols } => {
                let y = values[i].data();
                acc(x, &mut |gx| {
                    for ((yr, gr), xr) in y.chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let inner = dot(yr, gr);
                        for j in 0..cols {
                            xr[j] += yr[j] * (gr[j] - inner);
                        }
                    }
                });
            }
            Op::Gather { x, rows, row_len } => acc(*x, &mut |gx| {
                for (o, r) in rows.iter().enumerate() {
                    if let Some(r) = *r {
                        axpy(&mut gx[r * row_len..(r + 1) * row_len], &g[o * row_len..(o + 1) * row_len], 1.0);
                    }
                }
            }),
            Op::Stack(xs) | Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = values[x.0].numel();
                    acc(x, &mut |gx| axpy(gx, &g[offset..offset + n], 1.0));
                    offset += n;
                }
            }
            &Op::Conv1d { seq, kernel, bias, dims } => {
                let gp = relu_masked(g, values[i].data());
                let (ds, dk) = (val(seq), val(kernel));
                acc(seq, &mut |gs| kernels::conv1d_backward(ds, dk, &gp, dims, Some(gs), None, None));
                acc(kernel, &mut |gk| kernels::conv1d_backward(ds, dk, &gp, dims, None, Some(gk), None));
                acc(bias, &mut |gb| kernels::conv1d_backward(ds, dk, &gp, dims, None, None, Some(gb)));
            }
            &Op::Conv3d { input, kernel, bias, dims } => {
                let gp = relu_masked(g, values[i].data());
                let (di, dk) = (val(input), val(kernel));
                acc(input, &mut |gi| kernels::conv3d_backward(di, dk, &gp, dims, Some(gi), None, None));
                acc(kernel, &mut |gk| kernels::conv3d_backward(di, dk, &gp, dims, None, Some(gk), None));
                acc(bias, &mut |gb| kernels::conv3d_backward(di, dk, &gp, dims, None, None, Some(gb)));
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |gx| {
                for (gv, &a) in g.iter().zip(argmax) {
                    gx[a] += gv;
                }
            }),
            Op::Cosine { rows, query, valid } => {
                let (dr, dq) = (val(*rows), val(*query));
                let d = dq.len();
                let qn = norm(dq);
                let s = values[i].data();
                acc(*rows, &mut |gr| {
                    for (m, r) in dr.chunks(d).enumerate() {
                        let rn = norm(r);
                        if !valid[m] || rn == 0.0 || qn == 0.0 || g[m] == 0.0 {
                            continue;
                        }
                        let out = &mut gr[m * d..(m + 1) * d];
                        for j in 0..d {
                            out[j] += g[m] * (dq[j] / (rn * qn) - s[m] * r[j] / (rn * rn));
                        }
                    }
                });
                acc(*query, &mut |gq| {
                    if qn == 0.0 {
                        return;
                    }
                    for (m, r) in dr.chunks(d).enumerate() {
                        let rn = norm(r);
                        if !valid[m] || rn == 0.0 || g[m] == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            gq[j] += g[m] * (r[j] / (rn * qn) - s[m] * dq[j] / (qn * qn));
                        }
                    }
                });
            }
            &Op::Threshold { x, gamma } => {
                let dx = val(x);
                acc(x, &mut |gx| {
                    for j in 0..gx.len() {
                        if dx[j] >= gamma {
                            gx[j] += g[j];
                        }
                    }
                });
            }
            &Op::ScaleRows { x, weights } => {
                let (dx, dw) = (val(x), val(weights));
                let row = dx.len() / dw.len();
                acc(x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += g[j] * dw[j / row];
                    }
                });
                acc(weights, &mut |gw| {
                    for (k, w) in gw.iter_mut().enumerate() {
                        *w += dot(&g[k * row..(k + 1) * row], &dx[k * row..(k + 1) * row]);
                    }
                });
            }
            Op::MaskFill { x, keep } => acc(*x, &mut |gx| {
                for j in 0..gx.len() {
                    if keep[j] {
                        gx[j] += g[j];
                    }
                }
            }),
            Op::CrossEntropy { logits, target, probs } => acc(*logits, &mut |gl| {
                for (j, p) in probs.iter().enumerate() {
                    gl[j] += g[0] * (p - if j == *target { 1.0 } else { 0.0 });
                }
            }),
        }
    }
}

/// Score assigned to padding slots by [`Graph::cosine_rows`]; below any cosine.
pub const INVALID_SCORE: f64 = -2.0;

fn relu_masked(g: &[f64], out: &[f64]) -> Vec<f64> {
    g.iter().zip(out).map(|(&gv, &o)| if o > 0.0 { gv } else { 0.0 }).collect()
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                axpy(o, &b[p * n..(p + 1) * n], x);
            }
        }
    }
    out
}

fn matmul_grad_a(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            ga[i * k + p] += dot(gr, &b[p * n..(p + 1) * n]);
        }
    }
}

fn matmul_grad_b(g: &[f64], a: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                axpy(&mut gb[p * n..(p + 1) * n], gr, x);
            }
        }
    }
}
