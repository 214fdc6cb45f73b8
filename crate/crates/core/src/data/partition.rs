//! Pathological and partial non-IID partitioners.
//!
//! The pathological split sorts examples by label (stable, so ties keep their
//! original order) and cuts the sorted list into `K` contiguous chunks. The
//! partial split shuffles first, deals a `1 - x` fraction round-robin and cuts
//! the label-sorted remainder into chunks sized so every learner ends with an
//! equal share.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Shard};
use crate::scheduler::LearnerId;

/// Sizes of `k` near-equal parts of `n`: the first `n % k` parts get one extra.
pub fn balanced_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|j| n / k + usize::from(j < n % k)).collect()
}

fn check_k(n: usize, k: usize) -> Result<(), DataError> {
    if k == 0 || k > n {
        return Err(DataError::TooManyLearners { n, k });
    }
    Ok(())
}

/// Stable sort of `order` by label, then contiguous chunks of the given sizes.
fn chunk_by_label(dataset: &Dataset, mut order: Vec<usize>, sizes: &[usize]) -> Vec<Vec<usize>> {
    order.sort_by_key(|&i| dataset.labels()[i]);
    let mut rest = order.as_slice();
    sizes
        .iter()
        .map(|&s| {
            let (head, tail) = rest.split_at(s);
            rest = tail;
            head.to_vec()
        })
        .collect()
}

fn into_shards(parts: Vec<Vec<usize>>) -> Vec<Shard> {
    parts
        .into_iter()
        .enumerate()
        .map(|(j, indices)| Shard { owner: LearnerId::from_index(j), indices })
        .collect()
}

/// Label-sorted contiguous split. `_seed` is unused; the split is fully determined by the labels.
pub fn partition_noniid(dataset: &Dataset, k: usize, _seed: u64) -> Result<Vec<Shard>, DataError> {
    let n = dataset.len();
    check_k(n, k)?;
    Ok(into_shards(chunk_by_label(dataset, (0..n).collect(), &balanced_sizes(n, k))))
}

/// Shuffled split where only `noniid_fraction` of the data is label-sorted.
pub fn partition_partial(
    dataset: &Dataset,
    k: usize,
    noniid_fraction: f64,
    seed: u64,
) -> Result<Vec<Shard>, DataError> {
    let n = dataset.len();
    check_k(n, k)?;
    if !(0.0..=1.0).contains(&noniid_fraction) {
        return Err(DataError::Invalid(format!("noniid_fraction {noniid_fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let iid_count = ((1.0 - noniid_fraction) * n as f64).round() as usize;
    let (iid, skewed) = order.split_at(iid_count);

    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &i) in iid.iter().enumerate() {
        parts[pos % k].push(i);
    }
    let targets = balanced_sizes(n, k);
    let chunk_sizes: Vec<usize> = targets.iter().zip(&parts).map(|(t, p)| t - p.len()).collect();
    for (part, chunk) in parts.iter_mut().zip(chunk_by_label(dataset, skewed.to_vec(), &chunk_sizes)) {
        part.extend(chunk);
    }
    Ok(into_shards(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labelled(labels: &[usize], classes: usize) -> Dataset {
        Dataset::new(labels.iter().map(|&l| l as f64).collect(), labels.to_vec(), 1, classes).unwrap()
    }

    fn label_sets(d: &Dataset, shards: &[Shard]) -> Vec<Vec<usize>> {
        shards.iter().map(|s| s.label_set(d)).collect()
    }

    #[test]
    fn sorted_chunks_one_label_each() {
        let d = labelled(&[0, 0, 1, 1, 2, 2], 3);
        let shards = partition_noniid(&d, 3, 0).unwrap();
        assert_eq!(label_sets(&d, &shards), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(shards[0].owner, LearnerId::new(1));
        assert_eq!(shards[2].owner, LearnerId::new(3));
    }

    #[test]
    fn interleaved_labels_are_grouped() {
        let d = labelled(&[0, 1, 0, 1], 2);
        let shards = partition_noniid(&d, 2, 0).unwrap();
        assert_eq!(shards[0].indices, vec![0, 2]);
        assert_eq!(shards[1].indices, vec![1, 3]);
    }

    #[test]
    fn hundred_classes_thirty_learners_span_at_most_four_labels() {
        let labels: Vec<usize> = (0..100).flat_map(|c| std::iter::repeat_n(c, 600)).collect();
        let d = labelled(&labels, 100);
        let shards = partition_noniid(&d, 30, 0).unwrap();
        for s in &shards {
            let n = s.label_set(&d).len();
            assert!((3..=4).contains(&n), "{n} labels");
        }
    }

    #[test]
    fn too_many_learners() {
        let d = labelled(&[0, 1], 2);
        assert!(matches!(partition_noniid(&d, 3, 0), Err(DataError::TooManyLearners { n: 2, k: 3 })));
        assert!(partition_partial(&d, 3, 0.5, 0).is_err());
        assert!(partition_partial(&d, 2, 1.5, 0).is_err());
    }

    #[test]
    fn noniid_ignores_seed() {
        let d = labelled(&[2, 0, 1, 0, 2, 1, 1], 3);
        assert_eq!(partition_noniid(&d, 3, 1).unwrap(), partition_noniid(&d, 3, 99).unwrap());
    }

    #[test]
    fn fully_skewed_partial_matches_noniid_on_shuffled_order() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let d = labelled(&labels, 6);
        let partial = partition_partial(&d, 4, 1.0, 5).unwrap();
        let direct = partition_noniid(&d, 4, 5).unwrap();
        assert_eq!(label_sets(&d, &partial), label_sets(&d, &direct));
        for (p, q) in partial.iter().zip(&direct) {
            assert_eq!(d.label_histogram(p.indices.iter().copied()), d.label_histogram(q.indices.iter().copied()));
        }
    }

    #[test]
    fn half_skewed_split_counts_match_independent_recount() {
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let d = labelled(&labels, 2);
        let seed = 17;
        let shards = partition_partial(&d, 2, 0.5, seed).unwrap();

        // recount the IID half by replaying the shuffle
        let mut order: Vec<usize> = (0..40).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut iid_hist = [[0usize; 2]; 2];
        for (pos, &i) in order[..20].iter().enumerate() {
            iid_hist[pos % 2][labels[i]] += 1;
        }
        for (k, s) in shards.iter().enumerate() {
            let from_iid = s.indices[..10].iter().fold([0usize; 2], |mut h, &i| {
                h[labels[i]] += 1;
                h
            });
            assert_eq!(from_iid, iid_hist[k]);
            assert_eq!(s.len(), 20);
        }
        // the skewed half is label-sorted: learner 1 takes its zeros first
        let skew_first: Vec<usize> = shards[0].indices[10..].iter().map(|&i| labels[i]).collect();
        assert!(skew_first.windows(2).all(|w| w[0] <= w[1]));
    }

    proptest! {
        #[test]
        fn partitions_are_exact(
            labels in prop::collection::vec(0usize..5, 1..200),
            k in 1usize..12,
            frac in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let d = labelled(&labels, 5);
            let n = d.len();
            prop_assume!(k <= n);
            for shards in [partition_noniid(&d, k, seed).unwrap(), partition_partial(&d, k, frac, seed).unwrap()] {
                prop_assert_eq!(shards.len(), k);
                let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                for s in &shards {
                    prop_assert!((s.len() as f64 - n as f64 / k as f64).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn small_shards_touch_at_most_two_labels(classes in 2usize..8, per_class in 5usize..40, extra in 0usize..4) {
            let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
            let d = labelled(&labels, classes);
            let n = d.len();
            // K >= classes with n / K <= per_class
            let k = (classes + extra).min(n);
            prop_assume!(n.div_ceil(k) <= per_class);
            for s in partition_noniid(&d, k, 0).unwrap() {
                prop_assert!(s.label_set(&d).len() <= 2);
            }
        }
    }
}
