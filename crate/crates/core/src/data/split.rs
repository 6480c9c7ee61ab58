//! Train/validation/test partitions over sample indices.

use crate::error::{Error, Result};
use crate::rng::PortableRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitPolicy {
    /// Shuffled split; the test share is what remains after train and val.
    Ratio { train: f64, val: f64, seed: u64 },
    /// Shuffled `k` folds: fold `fold` is test, fold `(fold + 1) % k` is
    /// validation, the rest is training.
    KFold { k: usize, fold: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    PortableRng::new(seed).shuffle(&mut idx);
    idx
}

pub fn split(n: usize, policy: SplitPolicy) -> Result<Split> {
    match policy {
        SplitPolicy::Ratio { train, val, seed } => {
            if !(train > 0.0 && val >= 0.0 && train + val <= 1.0 + 1e-12) {
                return Err(Error::Config(format!("invalid split ratios train={train} val={val}")));
            }
            let n_train = ((n as f64 * train).round() as usize).min(n);
            let n_val = ((n as f64 * val).round() as usize).min(n - n_train);
            if n_train == 0 {
                return Err(Error::Config(format!("{n} samples leave an empty training set")));
            }
            let idx = permutation(n, seed);
            Ok(Split {
                train: idx[..n_train].to_vec(),
                val: idx[n_train..n_train + n_val].to_vec(),
                test: idx[n_train + n_val..].to_vec(),
            })
        }
        SplitPolicy::KFold { k, fold, seed } => {
            if k < 3 {
                return Err(Error::Config(format!("k-fold needs k >= 3, got {k}")));
            }
            if fold >= k {
                return Err(Error::Config(format!("fold index {fold} out of range for {k} folds")));
            }
            if n < k {
                return Err(Error::Config(format!("{n} samples cannot fill {k} folds")));
            }
            let idx = permutation(n, seed);
            // Fold f holds positions [f·n/k, (f+1)·n/k).
            let bounds = |f: usize| (f * n / k, (f + 1) * n / k);
            let val_fold = (fold + 1) % k;
            let mut s = Split {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for f in 0..k {
                let (lo, hi) = bounds(f);
                let part = &idx[lo..hi];
                if f == fold {
                    s.test.extend_from_slice(part);
                } else if f == val_fold {
                    s.val.extend_from_slice(part);
                } else {
                    s.train.extend_from_slice(part);
                }
            }
            Ok(s)
        }
    }
}
