use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_FOLDS};

/// Assignment of labeled rows to `K` equal folds.
///
/// Rows are shuffled, the last `n mod K` rows of the shuffled order are
/// dropped, and the remaining `n' = K * floor(n / K)` rows are cut into `K`
/// contiguous blocks. `retained[t]` is a row index of the labeled dataset and
/// `fold_of[t]` is its fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    k: usize,
    retained: Vec<usize>,
    fold_of: Vec<usize>,
    n_total: usize,
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPartition> {
    if k == 0 {
        return Err(Error::InvalidConfig("fold count must be positive".into()));
    }
    if n < 2 * k {
        return Err(Error::InvalidConfig(format!(
            "need n >= 2K labeled rows for K={k} folds, got n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_FOLDS));
    let size = n / k;
    order.truncate(size * k);
    let fold_of = (0..size * k).map(|t| t / size).collect();
    Ok(FoldPartition {
        k,
        retained: order,
        fold_of,
        n_total: n,
    })
}

impl FoldPartition {
    pub fn k(&self) -> usize {
        self.k
    }

    /// `n'`, the number of retained rows.
    pub fn n_retained(&self) -> usize {
        self.retained.len()
    }

    /// Row count of the dataset the partition was built for.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn fold_size(&self) -> usize {
        self.retained.len() / self.k
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Rows of fold `j`.
    pub fn fold(&self, j: usize) -> &[usize] {
        let m = self.fold_size();
        &self.retained[j * m..(j + 1) * m]
    }

    /// Retained rows outside fold `j`: the training set of model `j`.
    pub fn training_rows(&self, j: usize) -> Vec<usize> {
        let m = self.fold_size();
        self.retained[..j * m]
            .iter()
            .chain(&self.retained[(j + 1) * m..])
            .copied()
            .collect()
    }

    pub fn dropped(&self) -> usize {
        self.n_total - self.retained.len()
    }
}
