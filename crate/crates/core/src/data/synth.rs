//! Synthetic aligned dataset: per-class templates plus Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{AlignedDataset, AlignedSample, Manifest};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, Modality};
use crate::rng::rng_for;
use crate::tensor_core::Tensor;

const TAG_TEMPLATE: u64 = 20;
const TAG_NOISE: u64 = 21;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Upper end of image intensities.
    pub image_scale: f64,
}

/// Default image intensity range. Images are left unnormalized while the
/// other two modalities are standardized, so the modalities differ in scale
/// the way raw sources do.
pub const IMAGE_INTENSITY_SCALE: f64 = 20.0;

impl SynthConfig {
    pub fn new(per_class: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            classes: crate::model::NUM_CLASSES,
            per_class,
            noise_sigma,
            seed,
            image_scale: IMAGE_INTENSITY_SCALE,
        }
    }
}

/// Class template of one modality, drawn from a stream keyed by
/// `(seed, modality, class)`. Images are raw intensities in
/// `[0, image_scale)`; spectrogram and sign templates are standardized
/// `N(0, 1)` patterns.
pub fn class_template(arch: &ArchSpec, m: Modality, class: usize, cfg: &SynthConfig) -> Tensor {
    let shape = arch.input_shape(m).dims();
    let mut rng = rng_for(cfg.seed, &[TAG_TEMPLATE, m as u64, class as u64]);
    match m {
        Modality::Image => Tensor::from_fn(&shape, |_| cfg.image_scale * rng.gen::<f64>()),
        Modality::Spectrogram | Modality::Sign => {
            Tensor::from_fn(&shape, |_| rng.sample::<f64, _>(StandardNormal))
        }
    }
}

/// Generates `classes * per_class` aligned samples shaped for `arch`,
/// grouped by class. Each modality is its class template plus i.i.d.
/// `N(0, noise_sigma^2)` noise.
pub fn synth_generate(arch: &ArchSpec, cfg: &SynthConfig) -> Result<AlignedDataset> {
    if cfg.per_class == 0 || cfg.classes == 0 {
        return Err(Error::config("synthetic dataset needs at least one class and one sample per class"));
    }
    if !(cfg.image_scale > 0.0 && cfg.image_scale.is_finite()) {
        return Err(Error::config(format!("image scale must be positive, got {}", cfg.image_scale)));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma must be >= 0, got {}", cfg.noise_sigma)));
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut samples = Vec::with_capacity(cfg.classes * cfg.per_class);
    for class in 0..cfg.classes {
        let templates = Modality::ALL.map(|m| class_template(arch, m, class, cfg));
        for i in 0..cfg.per_class {
            let mut rng = rng_for(cfg.seed, &[TAG_NOISE, class as u64, i as u64]);
            let mut noisy = |t: &Tensor| {
                let mut out = t.clone();
                if cfg.noise_sigma > 0.0 {
                    out.data_mut()
                        .iter_mut()
                        .for_each(|v| *v += noise.sample(&mut rng));
                }
                out
            };
            samples.push(AlignedSample {
                image: noisy(&templates[0]),
                spectrogram: noisy(&templates[1]),
                sign: noisy(&templates[2]),
                label: class,
            });
        }
    }
    let mut manifest = Manifest::new();
    manifest.set("aligned", "true");
    manifest.set("source", "synthetic");
    manifest.set("synth.classes", cfg.classes);
    manifest.set("synth.per_class", cfg.per_class);
    manifest.set("synth.noise_sigma", cfg.noise_sigma);
    manifest.set("synth.seed", cfg.seed);
    manifest.set("synth.image_scale", cfg.image_scale);
    for m in Modality::ALL {
        let s = arch.input_shape(m);
        manifest.set(format!("shape.{m}"), format!("{}x{}x{}", s.channels, s.height, s.width));
    }
    for class in 0..cfg.classes {
        manifest.set(format!("count.{class}"), cfg.per_class);
    }
    manifest.set("samples", samples.len());
    Ok(AlignedDataset { samples, manifest })
}
