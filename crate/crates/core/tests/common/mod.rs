//! Helpers shared by the integration tests: a one-parameter stub learner, a
//! mask-recording wrapper, a tiny architecture, independent forward oracles
//! and the gradient-check suite.
#![allow(dead_code)]

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metafed::data::{AlignedSample, Labeled};
use metafed::federated::{Learner, StepOutput};
use metafed::model::{ArchSpec, BranchSpec, ConvSpec, InputShape, Modality, ModalityMask, MultimodalNet, NUM_CLASSES};
use metafed::tensor_core::{grad_check, Evaluation, GradCheckReport, Graph};
use metafed::{ParamSet, Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// Scalar stub: f_theta(x) = theta, loss (theta - y)^2.

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub id: usize,
    pub y: f64,
    pub label: usize,
}

impl Labeled for Point {
    fn label(&self) -> usize {
        self.label
    }
}

pub fn points(ys: &[f64], labels: &[usize]) -> Vec<Point> {
    ys.iter()
        .zip(labels)
        .enumerate()
        .map(|(id, (&y, &label))| Point { id, y, label })
        .collect()
}

/// Mean squared error of a single shared scalar `theta`.
pub struct Scalar {
    pub init: f64,
}

pub fn theta(v: f64) -> ParamSet {
    ParamSet::new(vec![("theta".into(), Tensor::scalar(v))]).unwrap()
}

pub fn theta_of(p: &ParamSet) -> f64 {
    p.get("theta").unwrap().item().unwrap()
}

/// Closed-form gradient of the stub loss on `ys` at `t`.
pub fn scalar_grad(t: f64, ys: &[f64]) -> f64 {
    ys.iter().map(|y| 2.0 * (t - y)).sum::<f64>() / ys.len() as f64
}

impl Learner for Scalar {
    type Sample = Point;

    fn init_params(&self, _seed: u64) -> ParamSet {
        theta(self.init)
    }

    fn loss_and_grad(&self, params: &ParamSet, batch: &[&Point], mask: ModalityMask) -> Result<StepOutput> {
        let t = theta_of(params);
        let n = batch.len() as f64;
        let loss = batch.iter().map(|p| (t - p.y).powi(2)).sum::<f64>() / n;
        let ys: Vec<f64> = batch.iter().map(|p| p.y).collect();
        let logits = self.logits(params, batch, mask)?;
        let correct = logits
            .data()
            .chunks(2)
            .zip(batch)
            .filter(|(row, p)| metafed::federated::argmax(row) == p.label)
            .count();
        Ok(StepOutput { loss, correct, grad: theta(scalar_grad(t, &ys)) })
    }

    /// Two classes: class 1 wins when `theta > 0`.
    fn logits(&self, params: &ParamSet, batch: &[&Point], _mask: ModalityMask) -> Result<Tensor> {
        let t = theta_of(params);
        Tensor::new(vec![batch.len(), 2], batch.iter().flat_map(|_| [0.0, t]).collect())
    }
}

// ---------------------------------------------------------------------------
// Mask-usage log.

#[derive(Clone, Debug, PartialEq)]
pub enum Call {
    Step { mask: ModalityMask, ids: Vec<usize> },
    Logits { mask: ModalityMask, ids: Vec<usize> },
}

/// Wraps a learner and records which samples every call saw under which mask.
pub struct Recording<L> {
    pub inner: L,
    pub log: Mutex<Vec<Call>>,
}

pub trait HasId {
    fn id(&self) -> usize;
}

impl HasId for Point {
    fn id(&self) -> usize {
        self.id
    }
}

impl<L> Recording<L> {
    pub fn new(inner: L) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<Call> {
        self.log.lock().unwrap().clone()
    }
}

impl<L> Learner for Recording<L>
where
    L: Learner,
    L::Sample: HasId,
{
    type Sample = L::Sample;

    fn init_params(&self, seed: u64) -> ParamSet {
        self.inner.init_params(seed)
    }

    fn loss_and_grad(&self, params: &ParamSet, batch: &[&L::Sample], mask: ModalityMask) -> Result<StepOutput> {
        let ids = batch.iter().map(|s| s.id()).collect();
        self.log.lock().unwrap().push(Call::Step { mask, ids });
        self.inner.loss_and_grad(params, batch, mask)
    }

    fn logits(&self, params: &ParamSet, batch: &[&L::Sample], mask: ModalityMask) -> Result<Tensor> {
        let ids = batch.iter().map(|s| s.id()).collect();
        self.log.lock().unwrap().push(Call::Logits { mask, ids });
        self.inner.logits(params, batch, mask)
    }
}

// ---------------------------------------------------------------------------
// Architectures and data.

/// Smallest architecture with the full layer structure: 1x8x8 inputs,
/// two channels per conv, six hidden units.
pub fn tiny_arch() -> ArchSpec {
    let two = |n| (0..n).map(|i| ConvSpec::same3(2, i + 2 >= n)).collect::<Vec<_>>();
    let input = InputShape::new(1, 8, 8);
    ArchSpec {
        image: BranchSpec { input, convs: two(2) },
        spectrogram: BranchSpec { input, convs: two(4) },
        sign: BranchSpec { input, convs: two(2) },
        hidden: 6,
        classes: NUM_CLASSES,
    }
}

pub fn random_samples(arch: &ArchSpec, n: usize, seed: u64) -> Vec<AlignedSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let mut t = |m: Modality| random_tensor(&mut r, &arch.input_shape(m).dims());
            AlignedSample {
                image: t(Modality::Image),
                spectrogram: t(Modality::Spectrogram),
                sign: t(Modality::Sign),
                label: i % NUM_CLASSES,
            }
        })
        .collect()
}

/// Randomizes every parameter, biases included, so no gradient is trivially zero.
pub fn random_params(net: &MultimodalNet, seed: u64) -> ParamSet {
    let mut r = rng(seed);
    let entries = net
        .param_shapes()
        .iter()
        .map(|(name, shape)| (name.clone(), Tensor::from_fn(shape, |_| r.gen_range(-0.5..0.5))))
        .collect();
    ParamSet::new(entries).unwrap()
}

// ---------------------------------------------------------------------------
// Straight-line forward oracle, written independently of the tape.

fn at(t: &Tensor, idx: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]]
}

pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[fi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += at(x, [ni, ci, iy as usize, ix as usize]) * at(w, [fi, ci, ky, kx]);
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

pub fn naive_relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect()).unwrap()
}

pub fn naive_pool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            best = best.max(at(x, [ni, ci, oy * stride + dy, ox * stride + dx]));
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// `x [N, D] . w [D, K] + b`.
pub fn naive_linear(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let (d, k) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..k)
                .map(|j| b.data()[j] + (0..d).map(|i| row[i] * w.data()[i * k + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn naive_forward(arch: &ArchSpec, params: &ParamSet, samples: &[AlignedSample], mask: ModalityMask) -> Vec<Vec<f64>> {
    let p = |name: String| params.get(&name).unwrap().clone();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); samples.len()];
    for m in Modality::ALL {
        let branch = arch.branch(m);
        let prefix = ArchSpec::branch_prefix(m);
        let parts: Vec<&Tensor> = samples.iter().map(|s| s.modality(m)).collect();
        let mut x = Tensor::stack(&parts).unwrap();
        for (i, conv) in branch.convs.iter().enumerate() {
            let w = p(format!("{prefix}conv{i}.weight"));
            let b = p(format!("{prefix}conv{i}.bias"));
            x = naive_relu(&naive_conv(&x, &w, &b, conv.stride, conv.padding));
            if let Some(pool) = conv.pool {
                x = naive_pool(&x, pool.size, pool.stride);
            }
        }
        let width = x.numel() / samples.len();
        for (ni, row) in rows.iter_mut().enumerate() {
            if mask.is_on(m) {
                row.extend_from_slice(&x.data()[ni * width..(ni + 1) * width]);
            } else {
                row.extend(std::iter::repeat_n(0.0, width));
            }
        }
    }
    let hidden: Vec<Vec<f64>> = naive_linear(&rows, &p("head.fc0.weight".into()), &p("head.fc0.bias".into()))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    naive_linear(&hidden, &p("head.fc1.weight".into()), &p("head.fc1.bias".into()))
}

// ---------------------------------------------------------------------------
// Gradient suite.

pub const GRAD_H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;

/// Builds `sum(op(params) * weights)` so every output element gets a distinct
/// upstream gradient, and runs the finite-difference check on it.
pub fn check_op<F>(params: ParamSet, weight_seed: u64, op: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[metafed::tensor_core::Var]) -> Result<metafed::tensor_core::Var>,
{
    let eval = |p: &ParamSet| -> Result<Evaluation> {
        let mut g = Graph::new();
        let vars = g.params(p)?;
        let y = op(&mut g, &vars)?;
        let shape = g.value(y).shape().to_vec();
        let mut r = rng(weight_seed);
        let w = g.input(random_tensor(&mut r, &shape));
        let prod = g.mul(y, w)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).item()?;
        let pattern = g.activation_pattern();
        Ok(Evaluation { loss: value, grad: g.backward(loss)?, pattern })
    };
    grad_check(eval, &params, GRAD_H, GRAD_TOL).unwrap()
}

fn named(entries: Vec<(&str, Tensor)>) -> ParamSet {
    ParamSet::new(entries.into_iter().map(|(n, t)| (n.to_string(), t)).collect()).unwrap()
}

/// One randomized case per primitive for `seed`; returns `(primitive, report)`.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let (n, c, f) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
    let k = r.gen_range(1..4);
    let stride = r.gen_range(1..3);
    let pad = r.gen_range(0..k);
    let (h, w) = (r.gen_range(k..k + 5), r.gen_range(k..k + 5));
    let p = named(vec![
        ("x", random_tensor(&mut r, &[n, c, h, w])),
        ("w", random_tensor(&mut r, &[f, c, k, k])),
        ("b", random_tensor(&mut r, &[f])),
    ]);
    out.push(("conv2d", check_op(p, seed, move |g, v| g.conv2d(v[0], v[1], v[2], stride, pad))));

    let shape = [r.gen_range(1..4), r.gen_range(1..6)];
    let p = named(vec![("x", random_tensor(&mut r, &shape))]);
    out.push(("relu", check_op(p, seed, |g, v| g.relu(v[0]))));

    let (pk, ps) = (r.gen_range(1..4), r.gen_range(1..3));
    let (h, w) = (r.gen_range(pk..pk + 5), r.gen_range(pk..pk + 5));
    let shape = [r.gen_range(1..3), r.gen_range(1..3), h, w];
    let p = named(vec![("x", random_tensor(&mut r, &shape))]);
    out.push(("maxpool2d", check_op(p, seed, move |g, v| g.maxpool2d(v[0], pk, ps))));

    let (n, d, kk) = (r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6));
    let p = named(vec![
        ("x", random_tensor(&mut r, &[n, d])),
        ("w", random_tensor(&mut r, &[d, kk])),
        ("b", random_tensor(&mut r, &[kk])),
    ]);
    out.push(("linear", check_op(p, seed, |g, v| g.linear(v[0], v[1], v[2]))));

    let (n, c, d) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..5));
    let p = named(vec![
        ("a", random_tensor(&mut r, &[n, c, 2, 2])),
        ("b", random_tensor(&mut r, &[n, d])),
    ]);
    out.push(("flatten_concat", check_op(p, seed, |g, v| g.flatten_concat(&[v[0], v[1]]))));

    let shape = [r.gen_range(1..4), r.gen_range(1..4)];
    let p = named(vec![("a", random_tensor(&mut r, &shape)), ("b", random_tensor(&mut r, &shape))]);
    out.push(("mul", check_op(p, seed, |g, v| g.mul(v[0], v[1]))));

    let shape = [r.gen_range(1..4), r.gen_range(1..5)];
    let p = named(vec![("x", random_tensor(&mut r, &shape))]);
    out.push(("sum", check_op(p, seed, |g, v| g.sum(v[0]))));

    let (n, classes) = (r.gen_range(1..5), r.gen_range(2..6));
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
    let p = named(vec![("z", Tensor::from_fn(&[n, classes], |_| r.gen_range(-3.0..3.0)))]);
    out.push(("softmax_cross_entropy", check_op(p, seed, move |g, v| g.softmax_cross_entropy(v[0], &labels))));

    out
}

/// Finite-difference check of the whole network's mean cross-entropy under `mask`.
pub fn network_case(seed: u64, mask: ModalityMask) -> GradCheckReport {
    let arch = tiny_arch();
    let net = MultimodalNet::new(arch.clone()).unwrap();
    let samples = random_samples(&arch, 3, seed);
    let refs: Vec<&AlignedSample> = samples.iter().collect();
    let batch = metafed::model::Batch::from_samples(&refs).unwrap();
    let params = random_params(&net, seed ^ 0x5eed);
    let eval = |p: &ParamSet| -> Result<Evaluation> {
        let out = net.loss_and_grad(p, &batch, mask)?;
        Ok(Evaluation { loss: out.loss, grad: out.grad, pattern: out.pattern })
    };
    grad_check(eval, &params, GRAD_H, GRAD_TOL).unwrap()
}

// ---------------------------------------------------------------------------
// Nearest-template classifier.

/// Label of the template closest to `x` in squared Euclidean distance.
pub fn nearest_template(x: &Tensor, templates: &[Tensor]) -> usize {
    let d = |t: &Tensor| x.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (0..templates.len())
        .min_by(|&a, &b| d(&templates[a]).total_cmp(&d(&templates[b])))
        .unwrap()
}
