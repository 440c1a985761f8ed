//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of nodes built fresh for every forward pass. Each
//! node stores its value and the op that produced it; [`Graph::backward`]
//! walks the tape in reverse and returns a [`Gradients`] table. All tensors
//! are batch-first: `[B, features]` for dense layers and `[B, C, H, W]` for
//! convolutions.
//!
//! The spike firing op is a Heaviside step in [`FireMode::Hard`] and the
//! sigmoid `σ(k(m − V_th))` in [`FireMode::Relaxed`]. Its backward pass is the
//! sigmoid derivative in both modes, so a relaxed graph is exactly
//! differentiable and can be checked against finite differences.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{GroupTag, ParamGroup, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Forward semantics of the spike firing op.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FireMode {
    /// Emit hard `{0, 1}` spikes; backward uses the sigmoid surrogate.
    #[default]
    Hard,
    /// Emit `σ(k(m − V_th))`; forward and backward agree exactly.
    Relaxed,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    Linear { x: Var, w: Var },
    Conv2d { x: Var, w: Var, k: usize },
    BiasAdd { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Relu(Var),
    Mean(Var),
    Concat(Vec<Var>),
    ZeroPad { x: Var },
    SliceChannels { x: Var, start: usize },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
    SquaredError(Var, Var),
    Fire { m: Var, threshold: f64, slope: f64 },
    Quantize(Var),
    StraightThrough(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    BinaryEntropy(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::BiasAdd { .. } => "bias_add",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Mean(_) => "mean",
            Op::Concat(_) => "concat",
            Op::ZeroPad { .. } => "zero_pad",
            Op::SliceChannels { .. } => "slice_channels",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SquaredError(..) => "squared_error",
            Op::Fire { .. } => "fire",
            Op::Quantize(_) => "quantize",
            Op::StraightThrough(_) => "straight_through",
            Op::AvgPool2(_) => "avg_pool2",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Reshape(_) => "reshape",
            Op::BinaryEntropy(_) => "binary_entropy",
            Op::Clamp { .. } => "clamp",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Tape of differentiable operations.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(GroupTag, String, Var)>,
    fire_mode: FireMode,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary entropy in bits with `H(0) = H(1) = 0`.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

const ENTROPY_EPS: f64 = 1e-6;

impl Default for Graph {
    fn default() -> Self {
        Self::new(FireMode::Hard)
    }
}

impl Graph {
    pub fn new(fire_mode: FireMode) -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            params: Vec::new(),
            fire_mode,
        }
    }

    pub fn fire_mode(&self) -> FireMode {
        self.fire_mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forward {}", op.name())));
        }
        self.nodes.push(Node { shape, value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf (data, labels-as-tensors, masks).
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Input)
    }

    /// A trainable leaf taken from `group[id]`; its gradient is reported by
    /// [`Gradients::param_grads`].
    pub fn param(&mut self, group: &ParamGroup, id: &str) -> Result<Var> {
        let t = group.get(id).ok_or_else(|| {
            Error::Config(format!("parameter `{}.{}` not found", group.tag(), id))
        })?;
        let v = self.push(t.shape().to_vec(), t.values().to_vec(), Op::Param)?;
        self.params.push((group.tag(), id.to_string(), v));
        Ok(v)
    }

    /// `x [B, in] · wᵀ` with `w [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear", &xs, &ws));
        }
        let (b, n_in, n_out) = (xs[0], xs[1], ws[0]);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; b * n_out];
        for i in 0..b {
            let row = &xv[i * n_in..(i + 1) * n_in];
            for o in 0..n_out {
                let wr = &wv[o * n_in..(o + 1) * n_in];
                out[i * n_out + o] = row.iter().zip(wr).map(|(a, c)| a * c).sum();
            }
        }
        self.push(vec![b, n_out], out, Op::Linear { x, w })
    }

    /// Stride-1 "same" convolution; `w` is `[out, in, k, k]` with odd `k`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || ws[2] % 2 == 0
        {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        let (b, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, k) = (ws[0], ws[2]);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; b * c_out * h * wd];
        let taps = conv_taps(k, h, wd);
        for n in 0..b {
            for o in 0..c_out {
                let obase = ((n * c_out) + o) * h * wd;
                let oplane = &mut out[obase..obase + h * wd];
                for c in 0..c_in {
                    let ibase = ((n * c_in) + c) * h * wd;
                    let iplane = &xv[ibase..ibase + h * wd];
                    let wbase = ((o * c_in) + c) * k * k;
                    for tap in &taps {
                        let wgt = wv[wbase + tap.index];
                        for y in tap.y0..tap.y1 {
                            let orow = &mut oplane[y * wd + tap.x0..y * wd + tap.x1];
                            let iy = (y as isize + tap.dy) as usize;
                            let start = (iy * wd + tap.x0) as isize + tap.dx;
                            let irow = &iplane[start as usize..start as usize + orow.len()];
                            for (ov, iv) in orow.iter_mut().zip(irow) {
                                *ov += wgt * iv;
                            }
                        }
                    }
                }
            }
        }
        self.push(vec![b, c_out, h, wd], out, Op::Conv2d { x, w, k })
    }

    /// Adds `b [C]` along axis 1 of `x [B, C, ...]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::shape("bias_add", &xs, &bs));
        }
        let inner: usize = xs[2..].iter().product();
        let c = xs[1];
        let bv = self.value(b).to_vec();
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[(i / inner) % c])
            .collect();
        self.push(xs, out, Op::BiasAdd { x, b })
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(name, sa, sb));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.binary(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(s, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.binary(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(s, out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.binary(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(s, out, Op::Mul(a, b))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        self.push(s, out, Op::Affine { x, scale })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(s, out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(s, out, Op::Relu(x))
    }

    /// Mean over every element; returns shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::Degenerate("mean of empty tensor"));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![m], Op::Mean(x))
    }

    /// Concatenates along axis 1; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or(Error::Degenerate("concat of zero tensors"))?)
            .to_vec();
        if first.len() < 2 {
            return Err(Error::shape("concat", &first, &[]));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::shape("concat", &first, s));
            }
            channels += s[1];
        }
        let b = first[0];
        let inner: usize = first[2..].iter().product();
        let mut out = Vec::with_capacity(b * channels * inner);
        for n in 0..b {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[n * c * inner..(n + 1) * c * inner]);
            }
        }
        let mut shape = first;
        shape[1] = channels;
        self.push(shape, out, Op::Concat(parts.to_vec()))
    }

    /// Appends `extra` all-zero channels along axis 1.
    pub fn zero_pad(&mut self, x: Var, extra: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("zero_pad", &s, &[]));
        }
        let (b, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let mut out = vec![0.0; b * (c + extra) * inner];
        let xv = self.value(x);
        for n in 0..b {
            out[n * (c + extra) * inner..n * (c + extra) * inner + c * inner]
                .copy_from_slice(&xv[n * c * inner..(n + 1) * c * inner]);
        }
        let mut shape = s;
        shape[1] = c + extra;
        self.push(shape, out, Op::ZeroPad { x })
    }

    /// Channels `start..end` of axis 1.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || start >= end || end > s[1] {
            return Err(Error::shape("slice_channels", &s, &[start, end]));
        }
        let (b, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(b * (end - start) * inner);
        for n in 0..b {
            out.extend_from_slice(&xv[(n * c + start) * inner..(n * c + end) * inner]);
        }
        let mut shape = s;
        shape[1] = end - start;
        self.push(shape, out, Op::SliceChannels { x, start })
    }

    /// Batch-mean softmax cross-entropy of `logits [B, K]` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", &s, &[labels.len()]));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::OutOfRange {
                what: "class label",
                value: bad as f64,
            });
        }
        let lv = self.value(logits);
        let mut loss = 0.0;
        for (n, &label) in labels.iter().enumerate() {
            let row = &lv[n * k..(n + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        self.push(
            vec![1],
            vec![loss / b as f64],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Mean of `(a − b)²` over every element.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "squared_error")?;
        let n = self.value(a).len() as f64;
        let e = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(vec![1], vec![e], Op::SquaredError(a, b))
    }

    /// Spike firing: `1` where `m > threshold` (strict), with a sigmoid
    /// surrogate of steepness `slope` in the backward pass.
    pub fn fire(&mut self, m: Var, threshold: f64, slope: f64) -> Result<Var> {
        let s = self.shape(m).to_vec();
        let out = match self.fire_mode {
            FireMode::Hard => self
                .value(m)
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
            FireMode::Relaxed => self
                .value(m)
                .iter()
                .map(|&v| sigmoid(slope * (v - threshold)))
                .collect(),
        };
        self.push(
            s,
            out,
            Op::Fire {
                m,
                threshold,
                slope,
            },
        )
    }

    /// One-bit quantiser: `1` where `x > 0`, else `0`. The backward pass is the
    /// identity inside `[-1, 1]` and zero outside.
    pub fn quantize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        self.push(s, out, Op::Quantize(x))
    }

    /// Replaces `x` by `value` in the forward pass and passes gradients
    /// through unchanged. Used for the channel.
    pub fn straight_through(&mut self, x: Var, value: &[f64]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if value.len() != self.value(x).len() {
            return Err(Error::shape("straight_through", &s, &[value.len()]));
        }
        self.push(s, value.to_vec(), Op::StraightThrough(x))
    }

    /// 2×2 average pooling with stride 2 on `[B, C, H, W]` (even H, W).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::shape("avg_pool2", &s, &[2, 2]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = plane * h * w + 2 * y * w + 2 * xx;
                    out[plane * oh * ow + y * ow + xx] =
                        0.25 * (xv[i] + xv[i + 1] + xv[i + w] + xv[i + w + 1]);
                }
            }
        }
        self.push(vec![b, c, oh, ow], out, Op::AvgPool2(x))
    }

    /// Mean over spatial axes: `[B, C, H, W] → [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", &s, &[]));
        }
        let inner = s[2] * s[3];
        let out = self
            .value(x)
            .chunks(inner)
            .map(|c| c.iter().sum::<f64>() / inner as f64)
            .collect();
        self.push(vec![s[0], s[1]], out, Op::GlobalAvgPool(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if shape.iter().product::<usize>() != s.iter().product::<usize>() {
            return Err(Error::shape("reshape", s, shape));
        }
        let out = self.value(x).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(x))
    }

    /// `[B, ...] → [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let rest = s[1..].iter().product();
        self.reshape(x, &[s[0], rest])
    }

    /// Binary entropy (bits) of a scalar frequency `q ∈ [0, 1]`.
    pub fn binary_entropy(&mut self, q: Var) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if s != [1] {
            return Err(Error::shape("binary_entropy", &s, &[1]));
        }
        let qv = self.value(q)[0];
        if !(0.0..=1.0).contains(&qv) {
            return Err(Error::OutOfRange {
                what: "spike frequency",
                value: qv,
            });
        }
        self.push(vec![1], vec![binary_entropy(qv)], Op::BinaryEntropy(q))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(s, out, Op::Clamp { x, lo, hi })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1] {
            return Err(Error::shape("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if gout.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("backward {}", node.op.name())));
            }
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let val = |v: Var| self.value(v);
        let len = |v: Var| self.nodes[v.0].value.len();

        match &node.op {
            Op::Input | Op::Param => {}
            Op::Linear { x, w } => {
                let xs = self.shape(*x);
                let (b, n_in) = (xs[0], xs[1]);
                let n_out = self.shape(*w)[0];
                let (xv, wv) = (val(*x), val(*w));
                let gx = acc(grads, *x, len(*x));
                for i in 0..b {
                    for o in 0..n_out {
                        let g = gout[i * n_out + o];
                        if g == 0.0 {
                            continue;
                        }
                        let wr = &wv[o * n_in..(o + 1) * n_in];
                        for (d, wj) in gx[i * n_in..(i + 1) * n_in].iter_mut().zip(wr) {
                            *d += g * wj;
                        }
                    }
                }
                let gw = acc(grads, *w, len(*w));
                for i in 0..b {
                    let row = &xv[i * n_in..(i + 1) * n_in];
                    for o in 0..n_out {
                        let g = gout[i * n_out + o];
                        if g == 0.0 {
                            continue;
                        }
                        for (d, xj) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(row) {
                            *d += g * xj;
                        }
                    }
                }
            }
            Op::Conv2d { x, w, k } => {
                let xs = self.shape(*x);
                let (b, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let c_out = self.shape(*w)[0];
                let k = *k;
                let (xv, wv) = (val(*x), val(*w));
                let mut gx = vec![0.0; xv.len()];
                let mut gw = vec![0.0; wv.len()];
                let taps = conv_taps(k, h, wd);
                for n in 0..b {
                    for o in 0..c_out {
                        let obase = ((n * c_out) + o) * h * wd;
                        let gplane = &gout[obase..obase + h * wd];
                        for c in 0..c_in {
                            let ibase = ((n * c_in) + c) * h * wd;
                            let iplane = &xv[ibase..ibase + h * wd];
                            let wbase = ((o * c_in) + c) * k * k;
                            for tap in &taps {
                                let wgt = wv[wbase + tap.index];
                                let mut gsum = 0.0;
                                for y in tap.y0..tap.y1 {
                                    let grow = &gplane[y * wd + tap.x0..y * wd + tap.x1];
                                    let iy = (y as isize + tap.dy) as usize;
                                    let start = ((iy * wd + tap.x0) as isize + tap.dx) as usize;
                                    let irow = &iplane[start..start + grow.len()];
                                    let gxrow = &mut gx[ibase + start..ibase + start + grow.len()];
                                    for ((g, iv), d) in grow.iter().zip(irow).zip(gxrow.iter_mut()) {
                                        gsum += g * iv;
                                        *d += g * wgt;
                                    }
                                }
                                gw[wbase + tap.index] += gsum;
                            }
                        }
                    }
                }
                add_into(acc(grads, *x, gx.len()), &gx);
                add_into(acc(grads, *w, gw.len()), &gw);
            }
            Op::BiasAdd { x, b } => {
                add_into(acc(grads, *x, gout.len()), gout);
                let xs = self.shape(*x);
                let c = xs[1];
                let inner: usize = xs[2..].iter().product();
                let gb = acc(grads, *b, c);
                for (i, g) in gout.iter().enumerate() {
                    gb[(i / inner) % c] += g;
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, gout.len()), gout);
                add_into(acc(grads, *b, gout.len()), gout);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, gout.len()), gout);
                let gb = acc(grads, *b, gout.len());
                for (d, g) in gb.iter_mut().zip(gout) {
                    *d -= g;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                let ga = acc(grads, *a, gout.len());
                for ((d, g), y) in ga.iter_mut().zip(gout).zip(&bv) {
                    *d += g * y;
                }
                let gb = acc(grads, *b, gout.len());
                for ((d, g), x) in gb.iter_mut().zip(gout).zip(&av) {
                    *d += g * x;
                }
            }
            Op::Affine { x, scale } => {
                let gx = acc(grads, *x, gout.len());
                for (d, g) in gx.iter_mut().zip(gout) {
                    *d += scale * g;
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let gx = acc(grads, *x, gout.len());
                for ((d, g), s) in gx.iter_mut().zip(gout).zip(y) {
                    *d += g * s * (1.0 - s);
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let gx = acc(grads, *x, gout.len());
                for ((d, g), v) in gx.iter_mut().zip(gout).zip(xv) {
                    if *v > 0.0 {
                        *d += g;
                    }
                }
            }
            Op::Mean(x) => {
                let n = len(*x);
                let g = gout[0] / n as f64;
                acc(grads, *x, n).iter_mut().for_each(|d| *d += g);
            }
            Op::Concat(parts) => {
                let b = node.shape[0];
                let inner: usize = node.shape[2..].iter().product();
                let total_c = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    let gp = acc(grads, p, len(p));
                    for n in 0..b {
                        let src = &gout[(n * total_c + offset) * inner..(n * total_c + offset + c) * inner];
                        add_into(&mut gp[n * c * inner..(n + 1) * c * inner], src);
                    }
                    offset += c;
                }
            }
            Op::ZeroPad { x } => {
                let xs = self.shape(*x);
                let (b, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let total_c = node.shape[1];
                let gx = acc(grads, *x, len(*x));
                for n in 0..b {
                    add_into(
                        &mut gx[n * c * inner..(n + 1) * c * inner],
                        &gout[n * total_c * inner..(n * total_c + c) * inner],
                    );
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(*x);
                let (b, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let width = node.shape[1];
                let gx = acc(grads, *x, len(*x));
                for n in 0..b {
                    add_into(
                        &mut gx[(n * c + start) * inner..(n * c + start + width) * inner],
                        &gout[n * width * inner..(n + 1) * width * inner],
                    );
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let k = self.shape(*logits)[1];
                let b = labels.len();
                let lv = val(*logits).to_vec();
                let gl = acc(grads, *logits, lv.len());
                for (n, &label) in labels.iter().enumerate() {
                    let row = &lv[n * k..(n + 1) * k];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..k {
                        let p = (row[j] - max).exp() / z;
                        let t = if j == label { 1.0 } else { 0.0 };
                        gl[n * k + j] += gout[0] * (p - t) / b as f64;
                    }
                }
            }
            Op::SquaredError(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                let n = av.len() as f64;
                let diff: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| 2.0 * gout[0] * (x - y) / n).collect();
                add_into(acc(grads, *a, diff.len()), &diff);
                let gb = acc(grads, *b, diff.len());
                for (d, g) in gb.iter_mut().zip(&diff) {
                    *d -= g;
                }
            }
            Op::Fire {
                m,
                threshold,
                slope,
            } => {
                let mv = val(*m).to_vec();
                let gm = acc(grads, *m, mv.len());
                for ((d, g), v) in gm.iter_mut().zip(gout).zip(&mv) {
                    *d += g * surrogate_derivative(*v - threshold, *slope);
                }
            }
            Op::Quantize(x) => {
                let xv = val(*x).to_vec();
                let gx = acc(grads, *x, xv.len());
                for ((d, g), v) in gx.iter_mut().zip(gout).zip(&xv) {
                    if v.abs() <= 1.0 {
                        *d += g;
                    }
                }
            }
            Op::StraightThrough(x) | Op::Reshape(x) => {
                add_into(acc(grads, *x, gout.len()), gout);
            }
            Op::AvgPool2(x) => {
                let xs = self.shape(*x);
                let (h, w) = (xs[2], xs[3]);
                let (oh, ow) = (h / 2, w / 2);
                let planes = xs[0] * xs[1];
                let gx = acc(grads, *x, planes * h * w);
                for plane in 0..planes {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let g = 0.25 * gout[plane * oh * ow + y * ow + xx];
                            let i = plane * h * w + 2 * y * w + 2 * xx;
                            gx[i] += g;
                            gx[i + 1] += g;
                            gx[i + w] += g;
                            gx[i + w + 1] += g;
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let inner = xs[2] * xs[3];
                let gx = acc(grads, *x, xs.iter().product());
                for (plane, g) in gout.iter().enumerate() {
                    let gi = g / inner as f64;
                    gx[plane * inner..(plane + 1) * inner]
                        .iter_mut()
                        .for_each(|d| *d += gi);
                }
            }
            Op::BinaryEntropy(q) => {
                let qv = val(*q)[0].clamp(ENTROPY_EPS, 1.0 - ENTROPY_EPS);
                let d = ((1.0 - qv) / qv).log2();
                acc(grads, *q, 1)[0] += gout[0] * d;
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x).to_vec();
                let gx = acc(grads, *x, xv.len());
                for ((d, g), v) in gx.iter_mut().zip(gout).zip(&xv) {
                    if v >= lo && v <= hi {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// One kernel offset with the output rows/columns it touches.
struct Tap {
    index: usize,
    dy: isize,
    dx: isize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

fn conv_taps(k: usize, h: usize, w: usize) -> Vec<Tap> {
    let pad = (k / 2) as isize;
    let mut taps = Vec::with_capacity(k * k);
    for ky in 0..k {
        for kx in 0..k {
            let dy = ky as isize - pad;
            let dx = kx as isize - pad;
            let y0 = (-dy).max(0) as usize;
            let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
            let x0 = (-dx).max(0) as usize;
            let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
            if y0 < y1 && x0 < x1 {
                taps.push(Tap {
                    index: ky * k + kx,
                    dy,
                    dx,
                    y0,
                    y1,
                    x0,
                    x1,
                });
            }
        }
    }
    taps
}

/// Derivative of `σ(slope · z)` with respect to `z`.
pub fn surrogate_derivative(z: f64, slope: f64) -> f64 {
    let s = sigmoid(slope * z);
    slope * s * (1.0 - s)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients from one reverse pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(GroupTag, String, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Per-parameter gradients keyed by `(group, layer id)`. A parameter
    /// registered more than once has its gradients summed.
    pub fn param_grads(&self) -> BTreeMap<(GroupTag, String), Vec<f64>> {
        let mut out: BTreeMap<(GroupTag, String), Vec<f64>> = BTreeMap::new();
        for (tag, id, v) in &self.params {
            let Some(g) = self.grads[v.0].as_ref() else {
                continue;
            };
            match out.get_mut(&(*tag, id.clone())) {
                Some(existing) => add_into(existing, g),
                None => {
                    out.insert((*tag, id.clone()), g.clone());
                }
            }
        }
        out
    }

    /// Adds this pass's gradients into the `grad` buffers of matching groups.
    pub fn accumulate_into(&self, groups: &mut [&mut ParamGroup]) {
        for ((tag, id), g) in self.param_grads() {
            if let Some(group) = groups.iter_mut().find(|p| p.tag() == tag) {
                if let Some(t) = group.get_mut(&id) {
                    add_into(t.grad_mut(), &g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn squared_error_scalar_derivative() {
        let mut g = Graph::default();
        let x = g.input(&t(&[1], &[3.0])).unwrap();
        let c = g.input(&t(&[1], &[1.0])).unwrap();
        let loss = g.squared_error(x, c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[4.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let z = [0.3, -1.2, 2.0, 0.5];
        let mut g = Graph::default();
        let logits = g.input(&t(&[1, 4], &z)).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[2]).unwrap();
        let grads = g.backward(loss).unwrap();
        let zsum: f64 = z.iter().map(|v| v.exp()).sum();
        for (j, gj) in grads.get(logits).unwrap().iter().enumerate() {
            let p = z[j].exp() / zsum;
            let target = if j == 2 { 1.0 } else { 0.0 };
            assert!((gj - (p - target)).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::default();
        let a = g.input(&Tensor::zeros(&[2, 3])).unwrap();
        let b = g.input(&Tensor::zeros(&[3, 2])).unwrap();
        match g.add(a, b) {
            Err(Error::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("expected shape mismatch, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::default();
        let a = g.input(&t(&[1], &[1e308])).unwrap();
        assert!(matches!(g.affine(a, 10.0, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn fire_is_strict_and_surrogate_peaks_at_threshold() {
        let mut g = Graph::default();
        let m = g.input(&t(&[3], &[0.5, 1.0, 1.5])).unwrap();
        let s = g.fire(m, 1.0, 4.0).unwrap();
        assert_eq!(g.value(s), &[0.0, 0.0, 1.0]);
        assert_eq!(surrogate_derivative(0.0, 4.0), 4.0 * 0.25);
        assert!(surrogate_derivative(1e3, 4.0) < 1e-300);
        assert!(surrogate_derivative(-1e3, 4.0) < 1e-300);
    }

    #[test]
    fn conv_1x1_is_per_position_linear() {
        let mut g = Graph::default();
        let x = g.input(&t(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let w = g.input(&t(&[1, 2, 1, 1], &[10.0, 100.0])).unwrap();
        let y = g.conv2d(x, w).unwrap();
        assert_eq!(g.value(y), &[310.0, 420.0]);
    }

    #[test]
    fn entropy_of_half_is_one() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.25) - 0.811_278_124_459_132_8).abs() < 1e-12);
    }
}
