use rand::seq::SliceRandom;

use crate::data::{AlignedDataset, AlignedSample, LabeledTensor, Manifest};
use crate::error::{Error, Result};
use crate::model::{Modality, NUM_CLASSES};
use crate::rng::rng_for;

const TAG_ALIGN: u64 = 10;

/// Pairs records of the three single-modality sources that share a label.
///
/// For each class the three per-class lists are shuffled with `seed` and
/// zipped, so the class contributes `min(count_image, count_spectrogram,
/// count_sign)` samples; the surplus of the larger sources is dropped.
/// Samples come out grouped by class in ascending label order.
pub fn align_by_label(
    images: &[LabeledTensor],
    spectrograms: &[LabeledTensor],
    signs: &[LabeledTensor],
    seed: u64,
) -> Result<AlignedDataset> {
    let sources = [images, spectrograms, signs];
    let mut by_class: [Vec<Vec<&LabeledTensor>>; 3] = Default::default();
    for (mi, (src, m)) in sources.iter().zip(Modality::ALL).enumerate() {
        by_class[mi] = vec![Vec::new(); NUM_CLASSES];
        for (row, rec) in src.iter().enumerate() {
            if rec.label >= NUM_CLASSES {
                return Err(Error::data(format!(
                    "{m} record {row} has label {} outside [0, {NUM_CLASSES})",
                    rec.label
                )));
            }
            by_class[mi][rec.label].push(rec);
        }
    }

    let mut manifest = Manifest::new();
    manifest.set("aligned", "true");
    manifest.set("align_seed", seed);
    for (src, m) in sources.iter().zip(Modality::ALL) {
        manifest.set(format!("source_records.{m}"), src.len());
    }

    let mut samples = Vec::new();
    for class in 0..NUM_CLASSES {
        let counts: Vec<usize> = by_class.iter().map(|c| c[class].len()).collect();
        let take = counts.iter().copied().min().unwrap_or(0);
        manifest.set(format!("count.{class}"), take);
        if take == 0 {
            manifest.warn(format!(
                "label {class} skipped: per-source counts image={} spectrogram={} sign={}",
                counts[0], counts[1], counts[2]
            ));
            continue;
        }
        let mut lists: Vec<Vec<&LabeledTensor>> = by_class.iter().map(|c| c[class].clone()).collect();
        for (mi, list) in lists.iter_mut().enumerate() {
            list.shuffle(&mut rng_for(seed, &[TAG_ALIGN, class as u64, mi as u64]));
        }
        for i in 0..take {
            samples.push(AlignedSample {
                image: lists[0][i].tensor.clone(),
                spectrogram: lists[1][i].tensor.clone(),
                sign: lists[2][i].tensor.clone(),
                label: class,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::data("no label is present in all three sources"));
    }
    manifest.set("samples", samples.len());
    Ok(AlignedDataset { samples, manifest })
}
