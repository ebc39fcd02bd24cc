//! Seeded splits and client partitioning.

use rand::seq::SliceRandom;

use crate::data::{Labeled, ScenarioId};
use crate::error::{Error, Result};
use crate::model::ModalityMask;
use crate::rng::{rng_for, TAG_PARTITION, TAG_SUPPORT_SPLIT, TAG_TEST_SPLIT};

/// `round(fraction * n)` with halves rounded away from zero.
pub fn split_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}

fn check_fraction(fraction: f64, what: &str) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} fraction must lie in (0, 1), got {fraction}")))
    }
}

fn shuffled_indices(n: usize, seed: u64, path: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, path));
    idx
}

/// Shuffles `samples` and sends the first `round(fraction * n)` to the
/// support side and the rest to the query side.
pub fn split_support_query<T: Clone>(samples: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    check_fraction(fraction, "support")?;
    let n = samples.len();
    let k = split_size(n, fraction);
    if k == 0 || k == n {
        return Err(Error::config(format!(
            "support fraction {fraction} of {n} samples leaves one side empty"
        )));
    }
    let idx = shuffled_indices(n, seed, &[TAG_SUPPORT_SPLIT]);
    let support = idx[..k].iter().map(|&i| samples[i].clone()).collect();
    let query = idx[k..].iter().map(|&i| samples[i].clone()).collect();
    Ok((support, query))
}

/// IID partition: shuffle, then cut into `clients` contiguous pieces whose
/// sizes differ by at most one (larger pieces first).
pub fn partition_clients<T: Clone>(samples: &[T], clients: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    let n = samples.len();
    if clients == 0 {
        return Err(Error::config("client count must be at least 1"));
    }
    if clients > n {
        return Err(Error::config(format!("{clients} clients but only {n} samples")));
    }
    let idx = shuffled_indices(n, seed, &[TAG_PARTITION]);
    let (base, extra) = (n / clients, n % clients);
    let mut out = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let len = base + usize::from(c < extra);
        out.push(idx[start..start + len].iter().map(|&i| samples[i].clone()).collect());
        start += len;
    }
    Ok(out)
}

/// One client's local data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard<T> {
    pub client_id: usize,
    /// Inner-loop (adaptation) data, seen through `mask`.
    pub support: Vec<T>,
    /// Outer-loop data, always seen with every modality.
    pub query: Vec<T>,
    /// Modalities available on the support side.
    pub mask: ModalityMask,
}

impl<T> ClientShard<T> {
    pub fn query_mask(&self) -> ModalityMask {
        ModalityMask::FULL
    }

    pub fn len(&self) -> usize {
        self.support.len() + self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty() && self.query.is_empty()
    }
}

/// Splits every partition into support and query sets, each client with its
/// own derived seed. Masks start full.
pub fn make_shards<T: Clone>(partitions: Vec<Vec<T>>, support_fraction: f64, seed: u64) -> Result<Vec<ClientShard<T>>> {
    partitions
        .into_iter()
        .enumerate()
        .map(|(client_id, part)| {
            let client_seed = crate::rng::derive_seed(seed, &[TAG_SUPPORT_SPLIT, client_id as u64]);
            let (support, query) = split_support_query(&part, support_fraction, client_seed)
                .map_err(|e| Error::config(format!("client {client_id}: {e}")))?;
            Ok(ClientShard {
                client_id,
                support,
                query,
                mask: ModalityMask::FULL,
            })
        })
        .collect()
}

/// Gives every client's support side the scenario's modalities.
pub fn apply_scenario<T>(mut shards: Vec<ClientShard<T>>, scenario: ScenarioId) -> Vec<ClientShard<T>> {
    for s in &mut shards {
        s.mask = scenario.available();
    }
    shards
}

/// Stratified split: within each class, `round(fraction * n_c)` samples
/// (clamped to `1..n_c`) go to the test side. Both sides keep input order.
pub fn train_test_split<T: Clone + Labeled>(samples: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    check_fraction(fraction, "test")?;
    let classes = samples.iter().map(|s| s.label() + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in samples.iter().enumerate() {
        members[s.label()].push(i);
    }
    let mut is_test = vec![false; samples.len()];
    for (label, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::config(format!(
                "class {label} has {} sample(s); a stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_for(seed, &[TAG_TEST_SPLIT, label as u64]));
        let k = split_size(idx.len(), fraction).clamp(1, idx.len() - 1);
        for &i in &idx[..k] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in samples.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct L(usize, usize);
    impl Labeled for L {
        fn label(&self) -> usize {
            self.1
        }
    }

    #[test]
    fn support_sizes() {
        let v: Vec<u32> = (0..100).collect();
        let (s, q) = split_support_query(&v, 0.2, 1).unwrap();
        assert_eq!((s.len(), q.len()), (20, 80));
        let (s, q) = split_support_query(&v[..10], 0.2, 1).unwrap();
        assert_eq!((s.len(), q.len()), (2, 8));
        let (s, q) = split_support_query(&v[..7], 0.2, 1).unwrap();
        assert_eq!((s.len(), q.len()), (1, 6));
    }

    #[test]
    fn support_errors() {
        let v: Vec<u32> = (0..10).collect();
        assert!(split_support_query(&v, 0.0, 1).is_err());
        assert!(split_support_query(&v, 1.0, 1).is_err());
        assert!(split_support_query(&v[..2], 0.2, 1).is_err());
        assert!(split_support_query(&v[..1], 0.5, 1).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(split_size(5, 0.5), 3);
        assert_eq!(split_size(15, 0.1), 2);
        assert_eq!(split_size(12, 0.125), 2);
    }

    #[test]
    fn partition_sizes() {
        let v: Vec<u32> = (0..10).collect();
        let p = partition_clients(&v, 3, 0).unwrap();
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        let one = partition_clients(&v, 1, 0).unwrap();
        let mut sorted = one[0].clone();
        sorted.sort();
        assert_eq!(sorted, v);
        assert!(partition_clients(&v, 11, 0).is_err());
        assert!(partition_clients(&v, 0, 0).is_err());
    }

    #[test]
    fn scenario_masks_support_only() {
        let v: Vec<u32> = (0..30).collect();
        let shards = make_shards(partition_clients(&v, 3, 2).unwrap(), 0.2, 2).unwrap();
        let shards = apply_scenario(shards, ScenarioId::SpSign);
        for s in &shards {
            assert_eq!(s.mask, ModalityMask::new(false, true, true));
            assert_eq!(s.query_mask(), ModalityMask::FULL);
            assert_eq!(s.support.len(), 2);
        }
        let full = apply_scenario(shards, ScenarioId::Full);
        assert!(full.iter().all(|s| s.mask == ModalityMask::FULL));
        let img = apply_scenario(full, ScenarioId::Img);
        assert!(img.iter().all(|s| s.mask == ModalityMask::new(true, false, false)));
    }

    #[test]
    fn stratified_test_split() {
        let v: Vec<L> = (0..200).map(|i| L(i, i % 10)).collect();
        let (train, test) = train_test_split(&v, 0.2, 5).unwrap();
        assert_eq!(test.len(), 40);
        assert_eq!(train.len(), 160);
        for c in 0..10 {
            assert_eq!(test.iter().filter(|s| s.1 == c).count(), 4);
        }
        assert_eq!(train_test_split(&v, 0.2, 5).unwrap(), (train, test));
        let lonely = vec![L(0, 0), L(1, 0), L(2, 1)];
        assert!(train_test_split(&lonely, 0.2, 0).is_err());
    }
}
