//! The three-branch classifier.

use rand::Rng;

use crate::data::AlignedSample;
use crate::error::{Error, Result};
use crate::model::{ArchSpec, Modality, ModalityMask};
use crate::rng::{rng_for, TAG_INIT};
use crate::tensor_core::{Graph, ParamSet, Tensor, Var};

/// A mini-batch with one stacked `[N, C, H, W]` tensor per modality.
#[derive(Clone, Debug)]
pub struct Batch {
    pub image: Tensor,
    pub spectrogram: Tensor,
    pub sign: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[&AlignedSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("empty batch"));
        }
        let stack = |m: Modality| {
            let parts: Vec<&Tensor> = samples.iter().map(|s| s.modality(m)).collect();
            Tensor::stack(&parts).map_err(|e| Error::shape(format!("{m} modality: {e}")))
        };
        Ok(Self {
            image: stack(Modality::Image)?,
            spectrogram: stack(Modality::Spectrogram)?,
            sign: stack(Modality::Sign)?,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modality(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Image => &self.image,
            Modality::Spectrogram => &self.spectrogram,
            Modality::Sign => &self.sign,
        }
    }

    pub fn modality_mut(&mut self, m: Modality) -> &mut Tensor {
        match m {
            Modality::Image => &mut self.image,
            Modality::Spectrogram => &mut self.spectrogram,
            Modality::Sign => &mut self.sign,
        }
    }
}

/// Loss, logits and parameter gradients of one forward/backward pass.
#[derive(Clone, Debug)]
pub struct NetOutput {
    pub loss: f64,
    pub logits: Tensor,
    pub grad: ParamSet,
    /// Activation pattern of the pass, see [`Graph::activation_pattern`].
    pub pattern: u64,
}

#[derive(Clone, Debug)]
pub struct MultimodalNet {
    spec: ArchSpec,
    shapes: Vec<(String, Vec<usize>)>,
    widths: [usize; 3],
}

impl MultimodalNet {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let widths = [
            spec.branch_width(Modality::Image)?,
            spec.branch_width(Modality::Spectrogram)?,
            spec.branch_width(Modality::Sign)?,
        ];
        Ok(Self {
            spec,
            shapes,
            widths,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn param_shapes(&self) -> &[(String, Vec<usize>)] {
        &self.shapes
    }

    /// Glorot-uniform weights, `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases. For a conv kernel `[F, C, k, k]` the fans are `C k^2`
    /// and `F k^2`; for a dense `[D, K]` weight they are `D` and `K`.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = rng_for(seed, &[TAG_INIT]);
        let entries = self
            .shapes
            .iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    let (fan_in, fan_out) = match shape.as_slice() {
                        [f, c, kh, kw] => (c * kh * kw, f * kh * kw),
                        [d, k] => (*d, *k),
                        _ => unreachable!("weights are 2-D or 4-D"),
                    };
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn(shape, |_| rng.gen_range(-s..s))
                };
                (name.clone(), t)
            })
            .collect();
        ParamSet::new(entries).expect("parameter names are unique")
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.shapes.len()
            || params
                .iter()
                .zip(&self.shapes)
                .any(|((n, t), (sn, ss))| n != sn || t.shape() != ss.as_slice())
        {
            return Err(Error::shape(
                "parameter set does not match the architecture".to_string(),
            ));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = batch.len();
        for m in Modality::ALL {
            let mut want = vec![n];
            want.extend_from_slice(&self.spec.input_shape(m).dims());
            let got = batch.modality(m).shape();
            if got != want.as_slice() {
                return Err(Error::shape(format!(
                    "{m} input has shape {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `g` and returns the logits node.
    pub fn build(&self, g: &mut Graph, params: &ParamSet, batch: &Batch, mask: ModalityMask) -> Result<Var> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let vars = g.params(params)?;
        let mut cursor = 0;
        let mut features = Vec::with_capacity(3);
        for (bi, m) in Modality::ALL.into_iter().enumerate() {
            let branch = self.spec.branch(m);
            let layer_vars = &vars[cursor..cursor + 2 * branch.convs.len()];
            cursor += layer_vars.len();
            if !mask.is_on(m) {
                features.push(g.input(Tensor::zeros(&[batch.len(), self.widths[bi]])));
                continue;
            }
            let mut x = g.input(batch.modality(m).clone());
            for (conv, wb) in branch.convs.iter().zip(layer_vars.chunks(2)) {
                x = g.conv2d(x, wb[0], wb[1], conv.stride, conv.padding)?;
                x = g.relu(x)?;
                if let Some(p) = conv.pool {
                    x = g.maxpool2d(x, p.size, p.stride)?;
                }
            }
            features.push(x);
        }
        let fused = g.flatten_concat(&features)?;
        let head = &vars[cursor..];
        let hidden = g.linear(fused, head[0], head[1])?;
        let hidden = g.relu(hidden)?;
        g.linear(hidden, head[2], head[3])
    }

    /// Logits `[N, classes]` without recording gradients for later use.
    pub fn forward(&self, params: &ParamSet, batch: &Batch, mask: ModalityMask) -> Result<Tensor> {
        let mut g = Graph::new();
        let logits = self.build(&mut g, params, batch, mask)?;
        Ok(g.value(logits).clone())
    }

    /// Mean cross-entropy on `batch` and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, params: &ParamSet, batch: &Batch, mask: ModalityMask) -> Result<NetOutput> {
        let mut g = Graph::new();
        let logits = self.build(&mut g, params, batch, mask)?;
        let loss = g.softmax_cross_entropy(logits, &batch.labels)?;
        let loss_value = g.value(loss).item()?;
        let logits_value = g.value(logits).clone();
        let pattern = g.activation_pattern();
        let grad = g.backward(loss)?;
        Ok(NetOutput {
            loss: loss_value,
            logits: logits_value,
            grad,
            pattern,
        })
    }
}
