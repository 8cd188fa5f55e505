use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const REFERENCE_TRIALS_PER_SUBJECT: usize = 294;
pub const REFERENCE_VAL_TRIALS: usize = 30;
pub const REFERENCE_TEST_TRIALS: usize = 30;

/// Disjoint trial-index partitions of one subject. Each set is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Validation/test share for `trial_count` trials: 30 of 294 scaled
/// proportionally, rounded to nearest, at least one each. Training gets the
/// remainder. Returns `(train, val, test)`.
pub fn proportional_split_sizes(trial_count: usize) -> Result<(usize, usize, usize)> {
    if trial_count < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 trials for a train/val/test split, got {trial_count}"
        )));
    }
    let share = |k: usize| {
        let scaled = (trial_count * k) as f64 / REFERENCE_TRIALS_PER_SUBJECT as f64;
        (scaled.round() as usize).max(1)
    };
    let val = share(REFERENCE_VAL_TRIALS);
    let test = share(REFERENCE_TEST_TRIALS);
    Ok((trial_count - val - test, val, test))
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// Seeded 234/30/30 partition (proportional for other trial counts).
pub fn split_subject_dependent(trial_count: usize, seed: u64) -> Result<SplitPlan> {
    let (train, val, _) = proportional_split_sizes(trial_count)?;
    let idx = shuffled(trial_count, seed);
    Ok(SplitPlan {
        train: sorted(idx[..train].to_vec()),
        val: sorted(idx[train..train + val].to_vec()),
        test: sorted(idx[train + val..].to_vec()),
        seed,
    })
}

/// Training subject's contribution to a LOSO fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectPartition {
    pub subject_id: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoFold {
    pub test_subject: String,
    /// Every trial of the held-out subject.
    pub test_trials: Vec<usize>,
    pub train_subjects: Vec<SubjectPartition>,
}

impl LosoFold {
    pub fn val_trials_per_subject(&self) -> Vec<usize> {
        self.train_subjects.iter().map(|p| p.val.len()).collect()
    }
}

/// Per-subject seed so a subject's train/val assignment does not depend on
/// which other subject is held out.
fn subject_seed(seed: u64, subject_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(subject_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Leave-one-subject-out fold. `subjects` pairs each id with its trial count.
/// The held-out subject contributes every trial to test; each other subject
/// contributes 264 train + 30 val trials (proportional for other counts).
pub fn split_loso(subjects: &[(String, usize)], held_out_id: &str, seed: u64) -> Result<LosoFold> {
    if subjects.len() < 2 {
        return Err(Error::Argument(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    for (i, (id, _)) in subjects.iter().enumerate() {
        if subjects[..i].iter().any(|(other, _)| other == id) {
            return Err(Error::Argument(format!("subject {id:?} listed twice")));
        }
    }
    let (_, held_count) = subjects
        .iter()
        .find(|(id, _)| id == held_out_id)
        .ok_or_else(|| Error::Argument(format!("unknown held-out subject {held_out_id:?}")))?;
    let mut train_subjects = Vec::with_capacity(subjects.len() - 1);
    for (id, count) in subjects.iter().filter(|(id, _)| id != held_out_id) {
        let (_, val, _) = proportional_split_sizes(*count)?;
        let idx = shuffled(*count, subject_seed(seed, id));
        train_subjects.push(SubjectPartition {
            subject_id: id.clone(),
            train: sorted(idx[..count - val].to_vec()),
            val: sorted(idx[count - val..].to_vec()),
        });
    }
    Ok(LosoFold {
        test_subject: held_out_id.to_string(),
        test_trials: (0..*held_count).collect(),
        train_subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn reference_sizes() {
        let plan = split_subject_dependent(294, 7).unwrap();
        assert_eq!((plan.train.len(), plan.val.len(), plan.test.len()), (234, 30, 30));
        assert_eq!(plan, split_subject_dependent(294, 7).unwrap());
    }

    #[test]
    fn small_counts_scale_proportionally() {
        // Oracle: round(29 * 30 / 294) = round(2.959) = 3, remainder to train.
        assert_eq!(proportional_split_sizes(29).unwrap(), (23, 3, 3));
        assert_eq!(proportional_split_sizes(3).unwrap(), (1, 1, 1));
        assert!(proportional_split_sizes(2).is_err());
    }

    #[test]
    fn different_seeds_differ() {
        let a = split_subject_dependent(294, 1).unwrap();
        for seed in 2..20 {
            assert_ne!(a, split_subject_dependent(294, seed).unwrap());
        }
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_cover(n in 3usize..400, seed in any::<u64>()) {
            let plan = split_subject_dependent(n, seed).unwrap();
            let all: BTreeSet<usize> =
                plan.train.iter().chain(&plan.val).chain(&plan.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(plan.train.len() + plan.val.len() + plan.test.len(), n);
        }
    }

    fn corpus(n: usize, trials: usize) -> Vec<(String, usize)> {
        (1..=n).map(|i| (format!("S{i:02}"), trials)).collect()
    }

    #[test]
    fn loso_twelve_subjects() {
        let subjects = corpus(12, 294);
        let fold = split_loso(&subjects, "S04", 3).unwrap();
        assert_eq!(fold.test_subject, "S04");
        assert_eq!(fold.test_trials.len(), 294);
        assert_eq!(fold.train_subjects.len(), 11);
        for p in &fold.train_subjects {
            assert_eq!((p.train.len(), p.val.len()), (264, 30));
            assert_ne!(p.subject_id, "S04");
        }
    }

    #[test]
    fn loso_each_subject_tested_once() {
        let subjects = corpus(12, 294);
        let mut tested = Vec::new();
        for (id, _) in &subjects {
            let fold = split_loso(&subjects, id, 9).unwrap();
            assert!(fold.train_subjects.iter().all(|p| p.subject_id != fold.test_subject));
            tested.push(fold.test_subject);
        }
        let ids: Vec<String> = subjects.iter().map(|(id, _)| id.clone()).collect();
        assert_eq!(tested, ids);
    }

    #[test]
    fn loso_two_subjects_and_errors() {
        let fold = split_loso(&corpus(2, 294), "S02", 0).unwrap();
        assert_eq!(fold.train_subjects.len(), 1);
        assert_eq!(fold.train_subjects[0].train.len(), 264);
        assert_eq!(fold.test_trials.len(), 294);
        assert!(split_loso(&corpus(2, 294), "S09", 0).is_err());
        assert!(split_loso(&corpus(1, 294), "S01", 0).is_err());
    }

    #[test]
    fn loso_assignment_independent_of_held_out() {
        let subjects = corpus(4, 50);
        let a = split_loso(&subjects, "S01", 5).unwrap();
        let b = split_loso(&subjects, "S02", 5).unwrap();
        let pa = a.train_subjects.iter().find(|p| p.subject_id == "S03").unwrap();
        let pb = b.train_subjects.iter().find(|p| p.subject_id == "S03").unwrap();
        assert_eq!(pa, pb);
    }
}
