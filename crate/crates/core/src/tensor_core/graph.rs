//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for the backward rule. Nodes only reference earlier nodes, so the
//! tape index order is a topological order and backward is a single reverse
//! sweep.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor_core::{ParamSet, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: Var,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    FlattenConcat {
        parts: Vec<Var>,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A recording of executed primitives.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    consumed: bool,
    pattern: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn fnv_mix(state: u64, word: u64) -> u64 {
    (state ^ word).wrapping_mul(FNV_PRIME)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            pattern: FNV_OFFSET,
            ..Self::default()
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Usage(format!("variable {} is not on this graph", v.0)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; gradients flow into it but are not reported.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named parameter whose gradient [`Graph::backward`] reports.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Usage(format!("parameter `{name}` registered twice")));
        }
        let v = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Registers every entry of `params`, in order.
    pub fn params(&mut self, params: &ParamSet) -> Result<Vec<Var>> {
        params
            .iter()
            .map(|(n, t)| self.param(n, t.clone()))
            .collect()
    }

    /// Hash of every ReLU on/off decision and max-pool argmax taken so far.
    ///
    /// Two evaluations with equal patterns lie in the same piecewise-smooth
    /// region of the network; the gradient checker uses this to skip
    /// finite-difference probes that straddle a kink.
    pub fn activation_pattern(&self) -> u64 {
        self.pattern
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = conv2d_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
            stride,
            padding,
        )?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        let mut out = x.clone();
        let mut pattern = self.pattern;
        let mut word = 0u64;
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            word = (word << 1) | on as u64;
            if i % 64 == 63 {
                pattern = fnv_mix(pattern, word);
                word = 0;
            }
        }
        self.pattern = fnv_mix(pattern, word);
        Ok(self.push(out, Op::Relu { input }))
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let (value, argmax) = maxpool2d_forward(&self.node(input)?.value, k, stride)?;
        for &a in &argmax {
            self.pattern = fnv_mix(self.pattern, a as u64);
        }
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let value = linear_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
        )?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Flattens each `[N, ...]` part to `[N, d_i]` and concatenates along axis 1.
    pub fn flatten_concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("flatten_concat needs at least one part"))?;
        let n = *self
            .node(*first)?
            .value
            .shape()
            .first()
            .ok_or_else(|| Error::shape("flatten_concat part has no batch axis"))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = &self.node(p)?.value;
            if t.shape().first() != Some(&n) {
                return Err(Error::shape(format!(
                    "flatten_concat batch mismatch: {:?} vs leading dimension {n}",
                    t.shape()
                )));
            }
            widths.push(t.numel() / n);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.nodes[p.0].value.data();
            for row in 0..n {
                out[row * total + offset..row * total + offset + w]
                    .copy_from_slice(&src[row * w..(row + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![n, total], out)?;
        Ok(self.push(
            value,
            Op::FlattenConcat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Elementwise product of two equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "mul of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.node(input)?.value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input }))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = &self.node(logits)?.value;
        let (loss, probs) = softmax_cross_entropy_forward(t, labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Propagates d(loss)/d(node) back through the tape.
    ///
    /// Returns one gradient per registered parameter, in registration order.
    /// Parameters the loss does not depend on get zero tensors. The tape can be
    /// replayed only once.
    pub fn backward(&mut self, loss: Var) -> Result<ParamSet> {
        if self.consumed {
            return Err(Error::Usage("backward called on a consumed tape".into()));
        }
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (dx, dw, db) = conv2d_backward(x, w, &dy, *stride, *padding);
                    accumulate(&mut grads, *input, &dx);
                    accumulate(&mut grads, *weight, &dw);
                    accumulate(&mut grads, *bias, &db);
                }
                Op::Relu { input } => {
                    let x = self.nodes[input.0].value.data();
                    let dx: Vec<f64> = x
                        .iter()
                        .zip(&dy)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *input, &dx);
                }
                Op::MaxPool2d { input, argmax } => {
                    let mut dx = vec![0.0; self.nodes[input.0].value.numel()];
                    for (&src, &g) in argmax.iter().zip(&dy) {
                        dx[src] += g;
                    }
                    accumulate(&mut grads, *input, &dx);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (dx, dw, db) = linear_backward(x, w, &dy);
                    accumulate(&mut grads, *input, &dx);
                    accumulate(&mut grads, *weight, &dw);
                    accumulate(&mut grads, *bias, &db);
                }
                Op::FlattenConcat { parts } => {
                    let total = node.value.shape()[1];
                    let n = node.value.shape()[0];
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.numel() / n;
                        let mut dp = Vec::with_capacity(n * w);
                        for row in 0..n {
                            dp.extend_from_slice(
                                &dy[row * total + offset..row * total + offset + w],
                            );
                        }
                        accumulate(&mut grads, p, &dp);
                        offset += w;
                    }
                }
                Op::Mul { a, b } => {
                    let va = self.nodes[a.0].value.data();
                    let vb = self.nodes[b.0].value.data();
                    let da: Vec<f64> = vb.iter().zip(&dy).map(|(y, g)| y * g).collect();
                    let db: Vec<f64> = va.iter().zip(&dy).map(|(x, g)| x * g).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Sum { input } => {
                    let n = self.nodes[input.0].value.numel();
                    accumulate(&mut grads, *input, &vec![dy[0]; n]);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let scale = dy[0] / n as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (row, &label) in labels.iter().enumerate() {
                        dl[row * k + label] -= scale;
                    }
                    accumulate(&mut grads, *logits, &dl);
                }
            }
        }

        let mut seen = HashSet::new();
        let entries = self
            .params
            .iter()
            .map(|(name, v)| {
                seen.insert(v.0);
                let shape = self.nodes[v.0].value.shape().to_vec();
                let g = match grads.get_mut(v.0).and_then(Option::take) {
                    Some(data) => Tensor::new(shape, data)?,
                    None => Tensor::zeros(&shape),
                };
                Ok((name.clone(), g))
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::new(entries)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Output spatial size of a strided window sweep.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `lo..hi` whose tap at kernel offset `k` lands inside the input.
fn tap_range(out_len: usize, in_len: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let shift = k as isize - padding as isize;
    let s = stride as isize;
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let last = in_len as isize - 1 - shift;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
    (lo as usize, hi.max(lo) as usize)
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(format!(
            "{what} must be 4-D, got shape {:?}",
            t.shape()
        ))),
    }
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
    if stride == 0 {
        return Err(Error::config("conv2d stride must be positive"));
    }
    let [n, c, h, wd] = dims4(x, "conv2d input")?;
    let [f, wc, kh, kw] = dims4(w, "conv2d weight")?;
    if wc != c {
        return Err(Error::shape(format!(
            "conv2d input {:?} has {c} channels but weight {:?} expects {wc}",
            x.shape(),
            w.shape()
        )));
    }
    if b.shape() != [f] {
        return Err(Error::shape(format!(
            "conv2d bias {:?} does not match weight {:?}",
            b.shape(),
            w.shape()
        )));
    }
    let (Some(ho), Some(wo)) = (
        conv_output_len(h, kh, stride, padding),
        conv_output_len(wd, kw, stride, padding),
    ) else {
        return Err(Error::shape(format!(
            "conv2d kernel {:?} larger than padded input {:?} (padding {padding})",
            w.shape(),
            x.shape()
        )));
    };
    Ok(ConvGeometry {
        n,
        c,
        h,
        w: wd,
        f,
        kh,
        kw,
        ho,
        wo,
    })
}

/// Direct 2-D cross-correlation with zero padding.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geometry(x, w, b, stride, padding)?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let plane = g.ho * g.wo;
    let mut y = vec![0.0; g.n * g.f * plane];
    for n in 0..g.n {
        for f in 0..g.f {
            let yo = (n * g.f + f) * plane;
            let out = &mut y[yo..yo + plane];
            out.fill(bd[f]);
            for c in 0..g.c {
                let xo = (n * g.c + c) * g.h * g.w;
                for a in 0..g.kh {
                    let (ilo, ihi) = tap_range(g.ho, g.h, a, stride, padding);
                    for bb in 0..g.kw {
                        let wv = wd[((f * g.c + c) * g.kh + a) * g.kw + bb];
                        let (jlo, jhi) = tap_range(g.wo, g.w, bb, stride, padding);
                        for i in ilo..ihi {
                            let xrow = xo + (i * stride + a - padding) * g.w;
                            let orow = &mut out[i * g.wo..(i + 1) * g.wo];
                            for j in jlo..jhi {
                                orow[j] += wv * xd[xrow + j * stride + bb - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.f, g.ho, g.wo], y)
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n_, c_, h, wdt] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [f_, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (wdt + 2 * padding - kw) / stride + 1;
    let plane = ho * wo;
    let (xd, wd) = (x.data(), w.data());
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wd.len()];
    let mut db = vec![0.0; f_];
    for n in 0..n_ {
        for f in 0..f_ {
            let go = (n * f_ + f) * plane;
            let gout = &dy[go..go + plane];
            db[f] += gout.iter().sum::<f64>();
            for c in 0..c_ {
                let xo = (n * c_ + c) * h * wdt;
                for a in 0..kh {
                    let (ilo, ihi) = tap_range(ho, h, a, stride, padding);
                    for bb in 0..kw {
                        let widx = ((f * c_ + c) * kh + a) * kw + bb;
                        let wv = wd[widx];
                        let (jlo, jhi) = tap_range(wo, wdt, bb, stride, padding);
                        let mut acc = 0.0;
                        for i in ilo..ihi {
                            let xrow = xo + (i * stride + a - padding) * wdt;
                            let grow = &gout[i * wo..(i + 1) * wo];
                            for j in jlo..jhi {
                                let xi = xrow + j * stride + bb - padding;
                                acc += xd[xi] * grow[j];
                                dx[xi] += wv * grow[j];
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max over `k x k` windows; also returns the flat input index of each maximum.
///
/// Ties resolve to the lowest flat index (first in row-major window order).
pub fn maxpool2d_forward(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if k == 0 || stride == 0 {
        return Err(Error::config("maxpool2d window and stride must be positive"));
    }
    let [n, c, h, w] = dims4(x, "maxpool2d input")?;
    if h < k || w < k {
        return Err(Error::shape(format!(
            "maxpool2d window {k}x{k} larger than input {:?}",
            x.shape()
        )));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best_idx = base + i * stride * w + j * stride;
                let mut best = xd[best_idx];
                for a in 0..k {
                    let row = base + (i * stride + a) * w + j * stride;
                    for b in 0..k {
                        let v = xd[row + b];
                        if v > best {
                            best = v;
                            best_idx = row + b;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

/// `x[N,D] . w[D,K] + b[K]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ([n, d], [wd, k]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(format!(
            "linear expects 2-D input and weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    };
    let (n, d, k) = (*n, *d, *k);
    if *wd != d || b.shape() != [k] {
        return Err(Error::shape(format!(
            "linear input {:?} incompatible with weight {:?} and bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let mut y = Vec::with_capacity(n * k);
    for row in 0..n {
        y.extend_from_slice(bd);
        let out = &mut y[row * k..(row + 1) * k];
        for (dd, &xv) in xd[row * d..(row + 1) * d].iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&wdat[dd * k..(dd + 1) * k]) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![n, k], y)
}

fn linear_backward(x: &Tensor, w: &Tensor, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let (xd, wd) = (x.data(), w.data());
    let mut dx = vec![0.0; n * d];
    let mut dw = vec![0.0; d * k];
    let mut db = vec![0.0; k];
    for row in 0..n {
        let g = &dy[row * k..(row + 1) * k];
        for (o, &gv) in db.iter_mut().zip(g) {
            *o += gv;
        }
        for dd in 0..d {
            let xv = xd[row * d + dd];
            let wrow = &wd[dd * k..(dd + 1) * k];
            dx[row * d + dd] = wrow.iter().zip(g).map(|(a, b)| a * b).sum();
            for (o, &gv) in dw[dd * k..(dd + 1) * k].iter_mut().zip(g) {
                *o += xv * gv;
            }
        }
    }
    (dx, dw, db)
}

/// Mean cross-entropy and the row-wise softmax probabilities.
pub fn softmax_cross_entropy_forward(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let [n, k] = *logits.shape() else {
        return Err(Error::shape(format!(
            "logits must be [N, K], got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::data(format!(
                "label {label} in row {row} outside [0, {k})"
            )));
        }
        let z = &logits.data()[row * k..(row + 1) * k];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        total += log_sum - (z[label] - max);
        probs.extend(z.iter().map(|v| (v - max).exp() / sum));
    }
    Ok((total / n as f64, probs))
}
