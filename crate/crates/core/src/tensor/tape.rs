use std::collections::HashMap;

use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{bail, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A contiguous run of rows `[start, start + len)` holding one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    /// Segments for sequences of the given lengths laid out back to back.
    pub fn tile(lengths: impl IntoIterator<Item = usize>) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .into_iter()
            .map(|len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Gelu,
    Relu,
    Tanh,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Unary(Unary, Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    GatherRows { table: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    ScaleRows { x: Var, s: Var },
    SegmentMean { x: Var, segs: Vec<Segment> },
    Attention { q: Var, k: Var, v: Var, segs: Vec<Segment>, heads: usize, probs: Vec<f64> },
    Sum(Var),
    Mean(Var),
    MeanAxis(Var, usize),
    Kl(Var, Var),
    Reshape(Var),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Records operations of one forward pass for reverse-mode differentiation.
///
/// A tape is single-threaded and short-lived: build it, compute a loss, call
/// [`Tape::backward`], accumulate into the stores, drop it.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_bcast(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(());
    }
    // trailing-dimension expansion only: b's shape must be a suffix of a's
    if sb.len() < sa.len() && sa.ends_with(sb) && !b.is_empty() {
        return Ok(());
    }
    bail!(Shape, "{what}: cannot combine {:?} with {:?}", sa, sb)
}

fn reduce_bcast(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        for (o, x) in out.iter_mut().zip(chunk) {
            *o += x;
        }
    }
    out
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

fn check_segments(segs: &[Segment], rows: usize) -> Result<()> {
    let mut next = 0;
    for s in segs {
        if s.start != next || s.len == 0 {
            bail!(Shape, "segments must tile the rows back to back with non-zero lengths");
        }
        next += s.len;
    }
    if next != rows {
        bail!(Shape, "segments cover {next} rows, tensor has {rows}");
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), grad_enabled: true }
    }

    /// A tape for inference: nothing on it requires gradients.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op, requires_grad: requires_grad && self.grad_enabled });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A leaf that receives a gradient (used for inputs in gradient checks).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Put a stored parameter on the tape. Repeated calls return the same
    /// node, so a parameter used many times gets one summed gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let key = (store.uid(), id.index());
        if let Some(&v) = self.params.get(&key) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, !store.is_frozen(), store.name(id))?;
        self.params.insert(key, v);
        Ok(v)
    }

    pub(crate) fn param_leaves(&self, store_uid: u64) -> Vec<(usize, Var)> {
        self.params
            .iter()
            .filter(|((uid, _), _)| *uid == store_uid)
            .map(|((_, idx), v)| (*idx, *v))
            .collect()
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_bcast(ta, tb, name)?;
        let nb = tb.len();
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, tb.data()[i % nb])).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// `a + b`; `b` may match only the trailing dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg, "scale")
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            bail!(Shape, "matmul: {:?} x {:?}", ta.shape(), tb.shape());
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let f: fn(f64) -> f64 = match kind {
            Unary::Gelu => |x| gelu(x).0,
            Unary::Relu => |x| x.max(0.0),
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Unary(kind, a), rg, &format!("{kind:?}").to_lowercase())
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Gelu)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    /// Normalize each row over the last dimension, then `* gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let d = tx.cols();
        if self.nodes[gain.0].value.shape() != [d] || self.nodes[bias.0].value.shape() != [d] {
            bail!(Shape, "layer_norm: gain/bias must have shape [{d}]");
        }
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let rows = tx.rows();
        let mut out = vec![0.0; tx.len()];
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg, "layer_norm")
    }

    /// Softmax of `x / temperature` over the last dimension.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            bail!(InvalidArgument, "softmax temperature must be positive, got {temperature}");
        }
        let tx = &self.nodes[x.0].value;
        if !tx.is_finite() {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let d = tx.cols();
        let data: Vec<f64> = tx.data().chunks(d).flat_map(|r| super::softmax_slice(r, temperature)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x, temperature), rg, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            bail!(InvalidArgument, "log_softmax temperature must be positive, got {temperature}");
        }
        let tx = &self.nodes[x.0].value;
        let d = tx.cols();
        let mut data = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
            let lse = row.iter().map(|v| (v / temperature - max).exp()).sum::<f64>().ln() + max;
            data.extend(row.iter().map(|v| v / temperature - lse));
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSoftmax(x, temperature), rg, "log_softmax")
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; rows with `None` targets are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let tl = &self.nodes[logits.0].value;
        let c = tl.cols();
        if tl.rows() != targets.len() {
            bail!(Shape, "cross_entropy: {} rows, {} targets", tl.rows(), targets.len());
        }
        let mut probs = Vec::with_capacity(tl.len());
        let mut total = 0.0;
        let mut count = 0;
        for (row, t) in tl.data().chunks(c).zip(targets) {
            let p = super::softmax_slice(row, 1.0);
            if let Some(t) = *t {
                if t >= c {
                    bail!(InvalidArgument, "cross_entropy target {t} out of range {c}");
                }
                total -= p[t].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
            probs.extend(p);
        }
        if count == 0 {
            bail!(InvalidArgument, "cross_entropy: no targets");
        }
        let value = Tensor::scalar(total / count as f64);
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count };
        self.push(value, op, rg, "cross_entropy")
    }

    /// Rows of a 2-D `table` selected by `idx` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.shape().len() != 2 {
            bail!(Shape, "gather_rows needs a 2-D table, got {:?}", t.shape());
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                bail!(InvalidArgument, "row index {i} out of range {n}");
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![idx.len(), d], data)?;
        let rg = self.rg(&[table]);
        self.push(value, Op::GatherRows { table, idx: idx.to_vec() }, rg, "gather_rows")
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Stack 2-D tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else { bail!(InvalidArgument, "concat of nothing") };
        let d = self.nodes[first.0].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.shape().len() != 2 || t.cols() != d {
                bail!(Shape, "concat_rows: {:?} does not have {d} columns", t.shape());
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, d], data)?;
        let rg = self.rg(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    /// Multiply row `r` of `x` by `s[r]`; `s` has shape `[rows]` or `[rows, 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (&self.nodes[x.0].value, &self.nodes[s.0].value);
        if ts.len() != tx.rows() || ts.cols() > 1 && ts.shape().len() > 1 {
            bail!(Shape, "scale_rows: {:?} by {:?}", tx.shape(), ts.shape());
        }
        let d = tx.cols();
        let data = tx.data().iter().enumerate().map(|(i, v)| v * ts.data()[i / d]).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, s]);
        self.push(value, Op::ScaleRows { x, s }, rg, "scale_rows")
    }

    /// Mean over the rows of each segment: `[N, d] -> [segments, d]`.
    pub fn segment_mean(&mut self, x: Var, segs: &[Segment]) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        check_segments(segs, tx.rows())?;
        let d = tx.cols();
        let mut data = vec![0.0; segs.len() * d];
        for (si, s) in segs.iter().enumerate() {
            let out = &mut data[si * d..(si + 1) * d];
            for r in s.start..s.start + s.len {
                for (o, v) in out.iter_mut().zip(tx.row(r)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= s.len as f64);
        }
        let value = Tensor::new(vec![segs.len(), d], data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::SegmentMean { x, segs: segs.to_vec() }, rg, "segment_mean")
    }

    /// Multi-head scaled dot-product attention within each segment.
    ///
    /// `q`, `k`, `v` are `[N, d]` with heads laid out as contiguous column
    /// blocks of width `d / heads`. With `causal`, row `i` of a segment only
    /// attends to rows `<= i` of the same segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segs: &[Segment], heads: usize, causal: bool) -> Result<Var> {
        let (tq, tk, tv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        if tq.shape().len() != 2 || tq.shape() != tk.shape() || tq.shape() != tv.shape() {
            bail!(Shape, "attention: q {:?}, k {:?}, v {:?}", tq.shape(), tk.shape(), tv.shape());
        }
        let (n, d) = (tq.shape()[0], tq.shape()[1]);
        if heads == 0 || d % heads != 0 {
            bail!(Shape, "attention: width {d} not divisible by {heads} heads");
        }
        check_segments(segs, n)?;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::with_capacity(segs.iter().map(|s| s.len * s.len * heads).sum());
        let mut scores = Vec::new();
        for s in segs {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..s.len {
                    let qi = &qd[(s.start + i) * d + c0..(s.start + i) * d + c0 + dh];
                    let lim = if causal { i + 1 } else { s.len };
                    scores.clear();
                    for j in 0..lim {
                        let kj = &kd[(s.start + j) * d + c0..(s.start + j) * d + c0 + dh];
                        scores.push(qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale);
                    }
                    let p = super::softmax_slice(&scores, 1.0);
                    let orow = &mut out[(s.start + i) * d + c0..(s.start + i) * d + c0 + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vd[(s.start + j) * d + c0..(s.start + j) * d + c0 + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                    probs.extend_from_slice(&p);
                    probs.extend(std::iter::repeat(0.0).take(s.len - lim));
                }
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let rg = self.rg(&[q, k, v]);
        let op = Op::Attention { q, k, v, segs: segs.to_vec(), heads, probs };
        self.push(value, op, rg, "attention")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.is_empty() {
            bail!(InvalidArgument, "mean of empty tensor");
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg, "mean")
    }

    /// Mean of a 2-D tensor along `axis` (0: over rows, 1: over columns).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 || axis > 1 {
            bail!(Shape, "mean_axis({axis}) on {:?}", t.shape());
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let value = if axis == 0 {
            let mut m = vec![0.0; c];
            for row in t.data().chunks(c) {
                m.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            Tensor::vector(m.into_iter().map(|v| v / r as f64).collect())
        } else {
            Tensor::vector(t.data().chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect())
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanAxis(a, axis), rg, "mean_axis")
    }

    /// Batch-mean KL(p ‖ q) over rows of probability tensors.
    ///
    /// Rows must sum to one within 1e-6; `q` must be positive wherever `p` is.
    /// Entries with `p == 0` contribute nothing and pass no gradient to `p`.
    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var> {
        let (tp, tq) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
        if tp.shape() != tq.shape() {
            bail!(Shape, "kl_divergence: {:?} vs {:?}", tp.shape(), tq.shape());
        }
        let c = tp.cols();
        let mut total = 0.0;
        for (r, (pr, qr)) in tp.data().chunks(c).zip(tq.data().chunks(c)).enumerate() {
            for (name, row) in [("p", pr), ("q", qr)] {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 || row.iter().any(|&x| x < 0.0) {
                    bail!(InvalidArgument, "kl_divergence: row {r} of {name} is not a distribution (sum {s})");
                }
            }
            for (&pi, &qi) in pr.iter().zip(qr) {
                if pi > 0.0 {
                    if qi <= 0.0 {
                        bail!(InvalidArgument, "kl_divergence: q has zero mass where p does not (row {r})");
                    }
                    total += pi * (pi.ln() - qi.ln());
                }
            }
        }
        let value = Tensor::scalar(total / tp.rows() as f64);
        let rg = self.rg(&[p, q]);
        self.push(value, Op::Kl(p, q), rg, "kl_divergence")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Reshape(a), rg, "reshape")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 {
            bail!(Shape, "transpose needs 2-D, got {:?}", t.shape());
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg, "transpose")
    }

    /// Reverse-mode pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            bail!(InvalidArgument, "backward needs a scalar loss, got shape {:?}", lt.shape());
        }
        if !lt.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut add_to = |v: Var, delta: &[f64]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; delta.len()]);
            for (b, d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(*a, g);
                add_to(*b, &reduce_bcast(g, val(*b).len()));
            }
            Op::Sub(a, b) => {
                add_to(*a, g);
                let nb: Vec<f64> = reduce_bcast(g, val(*b).len()).iter().map(|x| -x).collect();
                add_to(*b, &nb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                let nb = tb.len();
                let ga: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * tb[k % nb]).collect();
                let gb_full: Vec<f64> = g.iter().zip(ta).map(|(gk, x)| gk * x).collect();
                add_to(*a, &ga);
                add_to(*b, &reduce_bcast(&gb_full, nb));
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                add_to(*a, &ga);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, 0.0, &mut ga);
                    add_to(*a, &ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, 0.0, &mut gb);
                    add_to(*b, &gb);
                }
            }
            Op::Unary(kind, a) => {
                let x = val(*a).data();
                let y = node.value.data();
                let ga: Vec<f64> = match kind {
                    Unary::Gelu => g.iter().zip(x).map(|(gk, &xk)| gk * gelu(xk).1).collect(),
                    Unary::Relu => g.iter().zip(x).map(|(gk, &xk)| if xk > 0.0 { *gk } else { 0.0 }).collect(),
                    Unary::Tanh => g.iter().zip(y).map(|(gk, yk)| gk * (1.0 - yk * yk)).collect(),
                    Unary::Exp => g.iter().zip(y).map(|(gk, yk)| gk * yk).collect(),
                    Unary::Log => g.iter().zip(x).map(|(gk, xk)| gk / xk).collect(),
                };
                add_to(*a, &ga);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = node.value.cols();
                let gv = val(*gain).data();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for (r, rs) in rstd.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gv[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                        gg[j] += gr[j] * xh[j];
                        gbias[j] += gr[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        gx[r * d + j] = rs * (gr[j] * gv[j] - m1 - xh[j] * m2);
                    }
                }
                add_to(*x, &gx);
                add_to(*gain, &gg);
                add_to(*bias, &gbias);
            }
            Op::Softmax(x, t) => {
                let y = node.value.data();
                let d = node.value.cols();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        out[j] = yr[j] * (gr[j] - dot) / t;
                    }
                }
                add_to(*x, &gx);
            }
            Op::LogSoftmax(x, t) => {
                let y = node.value.data();
                let d = node.value.cols();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..d {
                        out[j] = (gr[j] - yr[j].exp() * s) / t;
                    }
                }
                add_to(*x, &gx);
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let c = val(*logits).cols();
                let scale = g[0] / *count as f64;
                let mut gl = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for j in 0..c {
                            gl[r * c + j] = probs[r * c + j] * scale;
                        }
                        gl[r * c + t] -= scale;
                    }
                }
                add_to(*logits, &gl);
            }
            Op::GatherRows { table, idx } => {
                let d = node.value.cols();
                let mut gt = vec![0.0; val(*table).len()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[r * d + j];
                    }
                }
                add_to(*table, &gt);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    add_to(*p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::ScaleRows { x, s } => {
                let (tx, ts) = (val(*x), val(*s));
                let d = tx.cols();
                let gx: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * ts.data()[k / d]).collect();
                let gs: Vec<f64> = g
                    .chunks(d)
                    .zip(tx.data().chunks(d))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                    .collect();
                add_to(*x, &gx);
                add_to(*s, &gs);
            }
            Op::SegmentMean { x, segs } => {
                let d = node.value.cols();
                let mut gx = vec![0.0; val(*x).len()];
                for (si, s) in segs.iter().enumerate() {
                    let inv = 1.0 / s.len as f64;
                    for r in s.start..s.start + s.len {
                        for j in 0..d {
                            gx[r * d + j] = g[si * d + j] * inv;
                        }
                    }
                }
                add_to(*x, &gx);
            }
            Op::Attention { q, k, v, segs, heads, probs } => {
                let d = node.value.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut off = 0;
                let mut dp = Vec::new();
                for s in segs {
                    let l = s.len;
                    for h in 0..*heads {
                        let c0 = h * dh;
                        let p = &probs[off..off + l * l];
                        off += l * l;
                        let row = |base: usize, i: usize| (s.start + i) * d + base;
                        for i in 0..l {
                            let go = &g[row(c0, i)..row(c0, i) + dh];
                            let pi = &p[i * l..(i + 1) * l];
                            dp.clear();
                            for j in 0..l {
                                let vj = &vd[row(c0, j)..row(c0, j) + dh];
                                dp.push(go.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>());
                                if pi[j] != 0.0 {
                                    for (t, gvt) in gv[row(c0, j)..row(c0, j) + dh].iter_mut().enumerate() {
                                        *gvt += pi[j] * go[t];
                                    }
                                }
                            }
                            let dot: f64 = pi.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..l {
                                if pi[j] == 0.0 {
                                    continue;
                                }
                                let ds = pi[j] * (dp[j] - dot) * scale;
                                for t in 0..dh {
                                    gq[row(c0, i) + t] += ds * kd[row(c0, j) + t];
                                    gk[row(c0, j) + t] += ds * qd[row(c0, i) + t];
                                }
                            }
                        }
                    }
                }
                add_to(*q, &gq);
                add_to(*k, &gk);
                add_to(*v, &gv);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; val(*a).len()];
                add_to(*a, &ga);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let ga = vec![g[0] / n as f64; n];
                add_to(*a, &ga);
            }
            Op::MeanAxis(a, axis) => {
                let t = val(*a);
                let (r, c) = (t.shape()[0], t.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = if *axis == 0 { g[j] / r as f64 } else { g[i] / c as f64 };
                    }
                }
                add_to(*a, &ga);
            }
            Op::Kl(p, q) => {
                let (tp, tq) = (val(*p), val(*q));
                let n = tp.rows() as f64;
                let s = g[0] / n;
                let gp: Vec<f64> = tp
                    .data()
                    .iter()
                    .zip(tq.data())
                    .map(|(&pi, &qi)| if pi > 0.0 { s * (pi.ln() - qi.ln() + 1.0) } else { 0.0 })
                    .collect();
                let gq: Vec<f64> = tp
                    .data()
                    .iter()
                    .zip(tq.data())
                    .map(|(&pi, &qi)| if pi > 0.0 { -s * pi / qi } else { 0.0 })
                    .collect();
                add_to(*p, &gp);
                add_to(*q, &gq);
            }
            Op::Reshape(a) => add_to(*a, g),
            Op::Transpose(a) => {
                let t = val(*a);
                let (r, c) = (t.shape()[0], t.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                add_to(*a, &ga);
            }
        }
    }
}
