//! On-disk dataset layout.
//!
//! A dataset directory holds, per modality, `<modality>.mmtf` (one tensor per
//! record, in order) and `<modality>.labels` (one integer per line, same
//! order), plus `manifest.txt`. When the manifest says `aligned = true` the
//! three files are already paired row by row; otherwise they are independent
//! sources and get aligned by label on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{align_by_label, read_tensor_file, write_tensor_file, AlignedDataset, AlignedSample, LabeledTensor, Manifest};
use crate::error::{Error, Result};
use crate::model::Modality;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| {
                Error::data(format!("{}: line {}: `{}` is not a label", path.display(), i + 1, l.trim()))
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        let _ = writeln!(s, "{l}");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads `<modality>.mmtf` and `<modality>.labels` from `dir`.
pub fn read_source(dir: &Path, m: Modality) -> Result<Vec<LabeledTensor>> {
    let tensors = read_tensor_file(dir.join(format!("{m}.mmtf")))?;
    let labels = read_labels(dir.join(format!("{m}.labels")))?;
    if tensors.len() != labels.len() {
        return Err(Error::data(format!(
            "{m}: {} tensors but {} labels",
            tensors.len(),
            labels.len()
        )));
    }
    Ok(tensors
        .into_iter()
        .zip(labels)
        .map(|((_, tensor), label)| LabeledTensor { tensor, label })
        .collect())
}

pub fn save_dataset(dir: impl AsRef<Path>, dataset: &AlignedDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
    for m in Modality::ALL {
        let entries: Vec<_> = dataset
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("{i}"), s.modality(m).clone()))
            .collect();
        write_tensor_file(dir.join(format!("{m}.mmtf")), &entries)?;
        write_labels(dir.join(format!("{m}.labels")), &labels)?;
    }
    let mut manifest = dataset.manifest.clone();
    manifest.set("aligned", "true");
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(())
}

/// Loads a dataset directory, aligning by label with `align_seed` if the
/// sources are not already paired.
pub fn load_dataset(dir: impl AsRef<Path>, align_seed: u64) -> Result<AlignedDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Manifest::parse(&fs::read_to_string(&manifest_path)?)?
    } else {
        Manifest::new()
    };
    let [img, sp, sign] = Modality::ALL.map(|m| read_source(dir, m));
    let (img, sp, sign) = (img?, sp?, sign?);

    if manifest.get("aligned") == Some("true") {
        if img.len() != sp.len() || img.len() != sign.len() {
            return Err(Error::data("aligned dataset has modality files of different lengths"));
        }
        let samples = img
            .into_iter()
            .zip(sp)
            .zip(sign)
            .enumerate()
            .map(|(row, ((a, b), c))| {
                if a.label != b.label || a.label != c.label {
                    return Err(Error::data(format!("aligned row {row} has mismatched labels")));
                }
                Ok(AlignedSample {
                    image: a.tensor,
                    spectrogram: b.tensor,
                    sign: c.tensor,
                    label: a.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = manifest;
        manifest.set("path", dir.display());
        return Ok(AlignedDataset { samples, manifest });
    }

    let mut aligned = align_by_label(&img, &sp, &sign, align_seed)?;
    for m in Modality::ALL {
        aligned
            .manifest
            .set(format!("source.{m}"), dir.join(format!("{m}.mmtf")).display());
    }
    Ok(aligned)
}
