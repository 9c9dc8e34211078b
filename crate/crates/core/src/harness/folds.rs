//! Stratified k-fold planning over user indices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Index splits for one fold. Indices refer to the caller's dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Stratified k-fold split. Per class, a seed-fixed shuffle is chunked into
/// `k` test groups (sizes differ by at most one); per fold, the validation
/// split takes ~a tenth of each class's remainder, the rest trains.
/// Deterministic for a given `(labels, k, seed)`.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan, HarnessError> {
    if labels.len() < 2 * k {
        return Err(HarnessError::TooFewUsers {
            have: labels.len(),
            need: 2 * k,
        });
    }
    let classes: Vec<u8> = {
        let mut c: Vec<u8> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() < 2 {
        return Err(HarnessError::SingleClass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Shuffled member lists per class, in ascending class order so the
    // generator stream is consumed in a fixed sequence.
    let mut shuffled: Vec<(u8, Vec<usize>)> = Vec::with_capacity(classes.len());
    for &class in &classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect();
        members.shuffle(&mut rng);
        shuffled.push((class, members));
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = Vec::new();
        let mut val = Vec::new();
        let mut train = Vec::new();
        for (_, members) in &shuffled {
            let n = members.len();
            let base = n / k;
            let extra = n % k;
            let start = f * base + f.min(extra);
            let len = base + usize::from(f < extra);
            test.extend_from_slice(&members[start..start + len]);
            let rest: Vec<usize> = members[..start]
                .iter()
                .chain(&members[start + len..])
                .copied()
                .collect();
            let n_val = if rest.len() >= 2 {
                (rest.len() / 10).max(1)
            } else {
                0
            };
            val.extend(&rest[..n_val]);
            train.extend(&rest[n_val..]);
        }
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, val, test });
    }
    Ok(FoldPlan { seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_labels(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i % 2) as u8).collect()
    }

    #[test]
    fn balanced_hundred_users() {
        let labels = balanced_labels(100);
        let plan = kfold_split(&labels, 5, 7).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 20);
            let per_class = fold.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(per_class, 10);
            // Remainder 80: 8 validation per class would be 16; here it's
            // 10% of each class's 40.
            assert_eq!(fold.val.len(), 8);
            assert_eq!(fold.train.len(), 72);
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let labels = balanced_labels(50);
        assert_eq!(kfold_split(&labels, 5, 3).unwrap(), kfold_split(&labels, 5, 3).unwrap());
        assert_ne!(kfold_split(&labels, 5, 3).unwrap(), kfold_split(&labels, 5, 4).unwrap());
    }

    #[test]
    fn test_folds_partition_dataset() {
        let labels: Vec<u8> = (0..53).map(|i| (i % 3 == 0) as u8).collect();
        let plan = kfold_split(&labels, 5, 11).unwrap();
        let mut seen: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        seen.sort_unstable();
        let all: Vec<usize> = (0..labels.len()).collect();
        assert_eq!(seen, all, "test folds must partition the dataset");
    }

    #[test]
    fn splits_within_a_fold_are_disjoint() {
        let labels = balanced_labels(40);
        let plan = kfold_split(&labels, 5, 2).unwrap();
        for fold in &plan.folds {
            let mut union: Vec<usize> = fold
                .train
                .iter()
                .chain(&fold.val)
                .chain(&fold.test)
                .copied()
                .collect();
            let total = union.len();
            union.sort_unstable();
            union.dedup();
            assert_eq!(union.len(), total, "overlapping splits");
            assert_eq!(total, labels.len(), "every user lands in exactly one split");
        }
    }

    #[test]
    fn stratification_tracks_global_ratio() {
        // 30/70 imbalance: per-fold test ratio within one user of global.
        let labels: Vec<u8> = (0..100).map(|i| (i < 30) as u8).collect();
        let plan = kfold_split(&labels, 5, 13).unwrap();
        for fold in &plan.folds {
            let ones = fold.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones, 6);
            assert_eq!(fold.test.len(), 20);
        }
    }

    #[test]
    fn rejects_small_or_single_class_inputs() {
        assert!(matches!(
            kfold_split(&balanced_labels(9), 5, 0),
            Err(HarnessError::TooFewUsers { have: 9, need: 10 })
        ));
        assert!(matches!(
            kfold_split(&[1u8; 20], 5, 0),
            Err(HarnessError::SingleClass)
        ));
    }

    #[test]
    fn validation_never_empties_a_trainable_class() {
        // 10 users, 5 per class: rest per class is 4, val takes 1, train 3.
        let labels = balanced_labels(10);
        let plan = kfold_split(&labels, 5, 5).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.val.len(), 2);
            assert_eq!(fold.train.len(), 6);
            assert_eq!(fold.test.len(), 2);
        }
    }
}
