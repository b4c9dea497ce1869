use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        }
    }
}

pub const MIN_SUBJECTS: usize = 8;

/// `(train, val)` counts for `n` subjects under a 5 : 1 : 2.4 ratio: train
/// and validation are rounded half-up, test takes the remainder.
pub fn split_counts(n: usize) -> (usize, usize) {
    // n * 5 / 8.4 = 25n / 42 and n / 8.4 = 5n / 42, in exact integer arithmetic
    ((50 * n + 42) / 84, (10 * n + 42) / 84)
}

/// Subject-independent partition, deterministic in `seed` and independent of
/// the input order.
pub fn split_subjects(subject_ids: &[u32], seed: u64) -> Result<(Vec<u32>, Vec<u32>, Vec<u32>)> {
    let mut ids = subject_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != subject_ids.len() {
        return Err(Error::invalid("subject ids must be unique"));
    }
    if ids.len() < MIN_SUBJECTS {
        return Err(Error::invalid(format!("need at least {MIN_SUBJECTS} subjects, got {}", ids.len())));
    }
    ids.shuffle(&mut seed::rng(seed, &[seed::SPLIT]));
    let (n_train, n_val) = split_counts(ids.len());
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    let mut parts = (ids, val, test);
    parts.0.sort_unstable();
    parts.1.sort_unstable();
    parts.2.sort_unstable();
    Ok(parts)
}
