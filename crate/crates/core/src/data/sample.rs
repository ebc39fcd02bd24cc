use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Modality;
use crate::tensor_core::Tensor;

/// Anything that carries a class label.
pub trait Labeled {
    fn label(&self) -> usize;
}

/// One single-modality record from a source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTensor {
    pub tensor: Tensor,
    pub label: usize,
}

impl Labeled for LabeledTensor {
    fn label(&self) -> usize {
        self.label
    }
}

/// One multimodal data point; all three modalities share `label`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSample {
    pub image: Tensor,
    pub spectrogram: Tensor,
    pub sign: Tensor,
    pub label: usize,
}

impl AlignedSample {
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

impl Labeled for AlignedSample {
    fn label(&self) -> usize {
        self.label
    }
}

/// Ordered `key = value` record describing where a dataset came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let n = self.warnings().count();
        self.set(format!("warning.{n}"), msg.into());
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with("warning."))
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("manifest line {}: expected `key = value`", i + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }
}

/// Label-aligned multimodal dataset plus its provenance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignedDataset {
    pub samples: Vec<AlignedSample>,
    pub manifest: Manifest,
}

impl AlignedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples per label, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        for s in &self.samples {
            if counts.len() <= s.label {
                counts.resize(s.label + 1, 0);
            }
            counts[s.label] += 1;
        }
        counts
    }
}
