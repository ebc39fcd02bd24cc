mod common;

use std::collections::HashSet;

use common::nearest_template;
use metafed::data::*;
use metafed::model::{ArchSpec, Modality, ModalityMask, NUM_CLASSES};
use metafed::tensor_core::Tensor;
use proptest::prelude::*;

#[derive(Clone, Debug, PartialEq)]
struct Item {
    id: usize,
    label: usize,
}

impl Labeled for Item {
    fn label(&self) -> usize {
        self.label
    }
}

fn items(labels: &[usize]) -> Vec<Item> {
    labels.iter().enumerate().map(|(id, &label)| Item { id, label }).collect()
}

fn ids(xs: &[Item]) -> Vec<usize> {
    xs.iter().map(|x| x.id).collect()
}

fn assert_partition(n: usize, parts: &[Vec<usize>]) {
    let mut seen = vec![false; n];
    for p in parts {
        for &i in p {
            assert!(!seen[i], "id {i} appears twice");
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "some id is missing");
}

// Source record whose single value encodes (modality, label, index).
fn record(m: usize, label: usize, idx: usize) -> LabeledTensor {
    LabeledTensor { tensor: Tensor::scalar((m * 1_000_000 + label * 1_000 + idx) as f64), label }
}

fn decode(t: &Tensor) -> (usize, usize, usize) {
    let v = t.item().unwrap() as usize;
    (v / 1_000_000, (v / 1_000) % 1_000, v % 1_000)
}

fn sources(counts: &[[usize; NUM_CLASSES]; 3]) -> Vec<Vec<LabeledTensor>> {
    counts
        .iter()
        .enumerate()
        .map(|(m, per)| {
            let mut v = Vec::new();
            for (label, &c) in per.iter().enumerate() {
                v.extend((0..c).map(|i| record(m, label, i)));
            }
            v
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn partition_is_disjoint_exhaustive_and_balanced(n in 1usize..300, clients in 1usize..12, seed: u64) {
        prop_assume!(clients <= n);
        let xs = items(&vec![0; n]);
        let parts = partition_clients(&xs, clients, seed).unwrap();
        prop_assert_eq!(parts.len(), clients);
        let id_parts: Vec<Vec<usize>> = parts.iter().map(|p| ids(p)).collect();
        assert_partition(n, &id_parts);
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(parts, partition_clients(&xs, clients, seed).unwrap());
    }

    #[test]
    fn support_query_split_sizes(n in 3usize..400, seed: u64) {
        let xs = items(&vec![0; n]);
        let (support, query) = split_support_query(&xs, 0.2, seed).unwrap();
        let want = (0.2 * n as f64).round() as usize;
        prop_assert_eq!(support.len(), want);
        prop_assert_eq!(query.len(), n - want);
        assert_partition(n, &[ids(&support), ids(&query)]);
    }

    #[test]
    fn shards_split_every_partition(n in 30usize..300, clients in 1usize..6, seed: u64) {
        let xs = items(&vec![0; n]);
        let shards = make_shards(partition_clients(&xs, clients, seed).unwrap(), 0.2, seed).unwrap();
        let shards = apply_scenario(shards, ScenarioId::Sign);
        let mut all = Vec::new();
        for (c, s) in shards.iter().enumerate() {
            prop_assert_eq!(s.client_id, c);
            prop_assert_eq!(s.mask, ScenarioId::Sign.available());
            prop_assert_eq!(s.support.len(), (0.2 * s.len() as f64).round() as usize);
            all.push(ids(&s.support));
            all.push(ids(&s.query));
        }
        assert_partition(n, &all);
    }

    #[test]
    fn stratified_split_keeps_class_shares(
        labels in prop::collection::vec(0usize..NUM_CLASSES, 2..300),
        fraction in 0.05f64..0.95,
        seed: u64,
    ) {
        let mut counts = [0usize; NUM_CLASSES];
        labels.iter().for_each(|&l| counts[l] += 1);
        prop_assume!(counts.iter().all(|&c| c != 1));
        let xs = items(&labels);
        let (train, test) = train_test_split(&xs, fraction, seed).unwrap();
        assert_partition(xs.len(), &[ids(&train), ids(&test)]);
        for (class, &n_c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            let want = ((fraction * n_c as f64).round() as usize).clamp(1, n_c - 1);
            prop_assert_eq!(test.iter().filter(|x| x.label == class).count(), want);
        }
        prop_assert!(train.windows(2).all(|w| w[0].id < w[1].id));
        prop_assert!(test.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn alignment_is_label_consistent(
        counts in prop::array::uniform3(prop::array::uniform10(0usize..8)),
        seed: u64,
    ) {
        let src = sources(&counts);
        let got = align_by_label(&src[0], &src[1], &src[2], seed);
        let mins: Vec<usize> = (0..NUM_CLASSES).map(|c| counts.iter().map(|m| m[c]).min().unwrap()).collect();
        if mins.iter().all(|&k| k == 0) {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let data = got.unwrap();
        for (class, &k) in mins.iter().enumerate() {
            prop_assert_eq!(data.samples.iter().filter(|s| s.label == class).count(), k);
        }
        let mut used = HashSet::new();
        for s in &data.samples {
            for (m, modality) in Modality::ALL.into_iter().enumerate() {
                let (mm, label, idx) = decode(s.modality(modality));
                prop_assert_eq!(mm, m);
                prop_assert_eq!(label, s.label);
                prop_assert!(used.insert((m, label, idx)), "record reused");
            }
        }
        prop_assert!(data.samples.windows(2).all(|w| w[0].label <= w[1].label));
        let again = align_by_label(&src[0], &src[1], &src[2], seed).unwrap();
        prop_assert_eq!(again.samples, data.samples);
    }
}

#[test]
fn min_rule_example() {
    let mut counts = [[0usize; NUM_CLASSES]; 3];
    counts[0][4] = 5;
    counts[1][4] = 3;
    counts[2][4] = 4;
    let src = sources(&counts);
    let data = align_by_label(&src[0], &src[1], &src[2], 1).unwrap();
    assert_eq!(data.len(), 3);
    assert!(data.samples.iter().all(|s| s.label == 4));
}

#[test]
fn ten_classes_of_twenty_align_to_two_hundred() {
    let counts = [[20usize; NUM_CLASSES]; 3];
    let src = sources(&counts);
    let data = align_by_label(&src[0], &src[1], &src[2], 9).unwrap();
    // Counting oracle: every class contributes min(20, 20, 20).
    let oracle: usize = (0..NUM_CLASSES).map(|c| counts.iter().map(|m| m[c]).min().unwrap()).sum();
    assert_eq!(data.len(), oracle);
    assert_eq!(data.len(), 200);
}

#[test]
fn stratified_example_gives_four_per_class() {
    let labels: Vec<usize> = (0..200).map(|i| i % NUM_CLASSES).collect();
    let (train, test) = train_test_split(&items(&labels), 0.2, 5).unwrap();
    assert_eq!(train.len(), 160);
    for class in 0..NUM_CLASSES {
        assert_eq!(test.iter().filter(|x| x.label == class).count(), 4);
    }
}

#[test]
fn singleton_class_cannot_be_stratified() {
    assert!(train_test_split(&items(&[0, 0, 1]), 0.2, 0).is_err());
}

#[test]
fn synthetic_set_is_separable_by_nearest_template() {
    for arch in [ArchSpec::compact(), ArchSpec::standard()] {
        let cfg = SynthConfig::new(20, 0.05, 3);
        let data = synth_generate(&arch, &cfg).unwrap();
        assert_eq!(data.len(), 200);
        assert_eq!(data.class_counts(), vec![20; NUM_CLASSES]);
        for m in Modality::ALL {
            let templates: Vec<Tensor> = (0..NUM_CLASSES).map(|c| class_template(&arch, m, c, &cfg)).collect();
            let hits = data.samples.iter().filter(|s| nearest_template(s.modality(m), &templates) == s.label).count();
            assert_eq!(hits, data.len(), "{m} on {arch:?}");
        }
    }
}

#[test]
fn scenario_masks_mute_the_named_modalities() {
    let cases = [
        (ScenarioId::Full, [true, true, true]),
        (ScenarioId::Img, [true, false, false]),
        (ScenarioId::Sp, [false, true, false]),
        (ScenarioId::Sign, [false, false, true]),
        (ScenarioId::ImgSp, [true, true, false]),
        (ScenarioId::SpSign, [false, true, true]),
        (ScenarioId::ImgSign, [true, false, true]),
    ];
    for (s, on) in cases {
        let mask = s.available();
        for (m, want) in Modality::ALL.into_iter().zip(on) {
            assert_eq!(mask.is_on(m), want, "{s:?} {m}");
        }
    }
    assert_eq!(ScenarioId::Full.available(), ModalityMask::FULL);
}
