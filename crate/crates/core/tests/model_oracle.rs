mod common;

use common::*;
use metafed::data::{AlignedSample, ScenarioId};
use rand::Rng;
use metafed::model::{ArchSpec, Batch, Modality, ModalityMask, MultimodalNet};

fn batch(samples: &[AlignedSample]) -> Batch {
    let refs: Vec<&AlignedSample> = samples.iter().collect();
    Batch::from_samples(&refs).unwrap()
}

#[test]
fn forward_matches_naive_oracle() {
    for (arch, seeds) in [(tiny_arch(), 0..6u64), (ArchSpec::compact(), 0..2u64)] {
        let net = MultimodalNet::new(arch.clone()).unwrap();
        for seed in seeds {
            let samples = random_samples(&arch, 3, seed);
            let params = random_params(&net, seed + 100);
            for mask in ModalityMask::all() {
                let got = net.forward(&params, &batch(&samples), mask).unwrap();
                let want = naive_forward(&arch, &params, &samples, mask);
                assert_eq!(got.shape(), &[3, 10]);
                for (row, want_row) in got.data().chunks(10).zip(&want) {
                    for (a, b) in row.iter().zip(want_row) {
                        assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "seed {seed} mask {mask}: {a} vs {b}");
                    }
                }
            }
        }
    }
}

#[test]
fn masked_inputs_do_not_reach_logits_or_gradients() {
    for arch in [tiny_arch(), ArchSpec::compact()] {
        let net = MultimodalNet::new(arch.clone()).unwrap();
        let params = random_params(&net, 9);
        for (k, scenario) in ScenarioId::MISSING.into_iter().enumerate() {
            let mask = scenario.available();
            let samples = random_samples(&arch, 4, k as u64);
            let mut perturbed = samples.clone();
            let mut r = rng(50 + k as u64);
            for s in &mut perturbed {
                for m in Modality::ALL.into_iter().filter(|m| !mask.is_on(*m)) {
                    let shape = s.modality(m).shape().to_vec();
                    *s.modality_mut(m) = metafed::Tensor::from_fn(&shape, |_| r.gen_range(-1e3..1e3));
                }
            }
            let a = net.loss_and_grad(&params, &batch(&samples), mask).unwrap();
            let b = net.loss_and_grad(&params, &batch(&perturbed), mask).unwrap();
            assert!(a.logits.bit_eq(&b.logits), "{scenario}: logits moved");
            assert!(a.grad.bit_eq(&b.grad), "{scenario}: gradients moved");
            for m in Modality::ALL.into_iter().filter(|m| !mask.is_on(*m)) {
                let prefix = ArchSpec::branch_prefix(m);
                for (name, g) in a.grad.iter().filter(|(n, _)| n.starts_with(&prefix)) {
                    assert!(g.data().iter().all(|v| v.to_bits() == 0), "{scenario}: {name} has a gradient");
                }
            }
            for m in Modality::ALL.into_iter().filter(|m| mask.is_on(*m)) {
                let prefix = ArchSpec::branch_prefix(m);
                assert!(
                    a.grad.iter().filter(|(n, _)| n.starts_with(&prefix)).any(|(_, g)| g.data().iter().any(|v| *v != 0.0)),
                    "{scenario}: live branch {m} has no gradient"
                );
            }
        }
    }
}

#[test]
fn muting_everything_leaves_only_the_head() {
    let arch = tiny_arch();
    let net = MultimodalNet::new(arch.clone()).unwrap();
    let params = random_params(&net, 2);
    let samples = random_samples(&arch, 2, 2);
    let logits = net.forward(&params, &batch(&samples), ModalityMask::NONE).unwrap();
    // Zero features: logits = relu(b0) . W1 + b1, identical for every sample.
    let hidden: Vec<Vec<f64>> = vec![params.get("head.fc0.bias").unwrap().data().iter().map(|v| v.max(0.0)).collect()];
    let want = naive_linear(&hidden, params.get("head.fc1.weight").unwrap(), params.get("head.fc1.bias").unwrap());
    for row in logits.data().chunks(10) {
        for (a, b) in row.iter().zip(&want[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn initialization_is_seeded_glorot() {
    let net = MultimodalNet::new(ArchSpec::compact()).unwrap();
    let a = net.init_params(5);
    assert!(a.bit_eq(&net.init_params(5)));
    assert!(!a.bit_eq(&net.init_params(6)));
    for (name, t) in a.iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|v| *v == 0.0));
            continue;
        }
        let s = t.shape();
        let (fan_in, fan_out) = if s.len() == 4 { (s[1] * s[2] * s[3], s[0] * s[2] * s[3]) } else { (s[0], s[1]) };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < bound), "{name}");
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.5 * bound, "{name}: values do not fill the range");
    }
}
