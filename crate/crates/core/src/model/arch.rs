//! Architecture description and validation.

use crate::error::{Error, Result};
use crate::model::Modality;
use crate::tensor_core::conv_output_len;

/// Number of output classes of the head.
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Max-pool applied after the ReLU, if any.
    pub pool: Option<PoolSpec>,
}

impl ConvSpec {
    /// 3x3, stride 1, padding 1; optionally followed by a 2x2/2 max-pool.
    pub const fn same3(out_channels: usize, pooled: bool) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool: if pooled {
                Some(PoolSpec { size: 2, stride: 2 })
            } else {
                None
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub input: InputShape,
    pub convs: Vec<ConvSpec>,
}

impl BranchSpec {
    /// Output `[channels, height, width]` of the branch, or an error naming the
    /// first layer that does not fit.
    pub fn output_dims(&self, modality: Modality) -> Result<[usize; 3]> {
        let [mut c, mut h, mut w] = self.input.dims();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "{modality} branch input {:?} has a zero dimension",
                self.input
            )));
        }
        for (i, conv) in self.convs.iter().enumerate() {
            if conv.out_channels == 0 || conv.kernel == 0 {
                return Err(Error::config(format!(
                    "{modality} conv{i}: channels and kernel must be positive"
                )));
            }
            let (Some(nh), Some(nw)) = (
                conv_output_len(h, conv.kernel, conv.stride, conv.padding),
                conv_output_len(w, conv.kernel, conv.stride, conv.padding),
            ) else {
                return Err(Error::config(format!(
                    "{modality} conv{i}: kernel {} stride {} does not fit {h}x{w}",
                    conv.kernel, conv.stride
                )));
            };
            (c, h, w) = (conv.out_channels, nh, nw);
            if let Some(p) = conv.pool {
                if p.size == 0 || p.stride == 0 || h < p.size || w < p.size {
                    return Err(Error::config(format!(
                        "{modality} conv{i}: pool {}x{} does not fit {h}x{w}",
                        p.size, p.size
                    )));
                }
                h = (h - p.size) / p.stride + 1;
                w = (w - p.size) / p.stride + 1;
            }
        }
        Ok([c, h, w])
    }
}

/// Full description of the three-branch classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub image: BranchSpec,
    pub spectrogram: BranchSpec,
    pub sign: BranchSpec,
    /// Width of the first fully connected layer of the head.
    pub hidden: usize,
    pub classes: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl ArchSpec {
    /// Image 1x28x28, spectrogram and sign 1x64x64, all convolutions 3x3/1/1,
    /// image and sign 1->8->16 with a 2x2 pool after each layer, spectrogram
    /// 1->8->8->16->16 pooled after the last two layers, hidden width 128.
    pub fn standard() -> Self {
        Self {
            image: BranchSpec {
                input: InputShape::new(1, 28, 28),
                convs: vec![ConvSpec::same3(8, true), ConvSpec::same3(16, true)],
            },
            spectrogram: BranchSpec {
                input: InputShape::new(1, 64, 64),
                convs: vec![
                    ConvSpec::same3(8, false),
                    ConvSpec::same3(8, false),
                    ConvSpec::same3(16, true),
                    ConvSpec::same3(16, true),
                ],
            },
            sign: BranchSpec {
                input: InputShape::new(1, 64, 64),
                convs: vec![ConvSpec::same3(8, true), ConvSpec::same3(16, true)],
            },
            hidden: 128,
            classes: NUM_CLASSES,
        }
    }

    /// Same layer structure as [`ArchSpec::standard`] on 1x16x16 inputs with
    /// 4/8 channels and a 32-wide hidden layer; sized for quick experiments.
    pub fn compact() -> Self {
        Self {
            image: BranchSpec {
                input: InputShape::new(1, 16, 16),
                convs: vec![ConvSpec::same3(4, true), ConvSpec::same3(8, true)],
            },
            spectrogram: BranchSpec {
                input: InputShape::new(1, 16, 16),
                convs: vec![
                    ConvSpec::same3(4, false),
                    ConvSpec::same3(4, false),
                    ConvSpec::same3(8, true),
                    ConvSpec::same3(8, true),
                ],
            },
            sign: BranchSpec {
                input: InputShape::new(1, 16, 16),
                convs: vec![ConvSpec::same3(4, true), ConvSpec::same3(8, true)],
            },
            hidden: 32,
            classes: NUM_CLASSES,
        }
    }

    /// Looks up a preset by name (`standard` or `compact`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard()),
            "compact" => Ok(Self::compact()),
            other => Err(Error::config(format!(
                "unknown architecture preset `{other}` (expected standard or compact)"
            ))),
        }
    }

    pub fn branch(&self, m: Modality) -> &BranchSpec {
        match m {
            Modality::Image => &self.image,
            Modality::Spectrogram => &self.spectrogram,
            Modality::Sign => &self.sign,
        }
    }

    pub fn input_shape(&self, m: Modality) -> InputShape {
        self.branch(m).input
    }

    /// Checks the branch layer counts and pooling placement and that every
    /// layer fits its input.
    pub fn validate(&self) -> Result<()> {
        let pooled = |b: &BranchSpec| b.convs.iter().map(|c| c.pool.is_some()).collect::<Vec<_>>();
        for m in [Modality::Image, Modality::Sign] {
            if pooled(self.branch(m)) != [true, true] {
                return Err(Error::config(format!(
                    "{m} branch must have exactly 2 conv layers, each followed by max-pooling"
                )));
            }
        }
        if pooled(&self.spectrogram) != [false, false, true, true] {
            return Err(Error::config(
                "spectrogram branch must have exactly 4 conv layers with max-pooling after the last two only",
            ));
        }
        if self.classes != NUM_CLASSES {
            return Err(Error::config(format!(
                "head must produce {NUM_CLASSES} classes, got {}",
                self.classes
            )));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        for m in Modality::ALL {
            self.branch(m).output_dims(m)?;
        }
        Ok(())
    }

    /// Flattened output width of one branch.
    pub fn branch_width(&self, m: Modality) -> Result<usize> {
        Ok(self.branch(m).output_dims(m)?.iter().product())
    }

    /// Width of the concatenated feature vector fed to the head.
    pub fn fused_width(&self) -> Result<usize> {
        Modality::ALL
            .iter()
            .map(|&m| self.branch_width(m))
            .sum()
    }

    /// Names and shapes of every parameter, in the canonical order:
    /// image, spectrogram and sign convolutions, then the two head layers.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut out = Vec::new();
        for m in Modality::ALL {
            let b = self.branch(m);
            let mut c = b.input.channels;
            for (i, conv) in b.convs.iter().enumerate() {
                out.push((
                    format!("{m}.conv{i}.weight"),
                    vec![conv.out_channels, c, conv.kernel, conv.kernel],
                ));
                out.push((format!("{m}.conv{i}.bias"), vec![conv.out_channels]));
                c = conv.out_channels;
            }
        }
        let fused = self.fused_width()?;
        out.push(("head.fc0.weight".into(), vec![fused, self.hidden]));
        out.push(("head.fc0.bias".into(), vec![self.hidden]));
        out.push(("head.fc1.weight".into(), vec![self.hidden, self.classes]));
        out.push(("head.fc1.bias".into(), vec![self.classes]));
        Ok(out)
    }

    /// Parameter-name prefix owned by a branch.
    pub fn branch_prefix(m: Modality) -> String {
        format!("{m}.")
    }
}

/// Total number of scalar parameters of `spec`.
pub fn param_count(spec: &ArchSpec) -> Result<usize> {
    Ok(spec
        .param_shapes()?
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum())
}

/// Scalar parameters of one dense layer `d -> k` with bias.
pub fn linear_param_count(d: usize, k: usize) -> usize {
    d * k + k
}
