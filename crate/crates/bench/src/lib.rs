//! Shared fixtures for the criterion benchmarks.

use crossfit_core::sim::Dgp;
use crossfit_core::{LabeledDataset, UnlabeledDataset};

/// The mean design at `R² = 0.5` with the usual `μ = σ_Y² = 4`.
pub fn mean_data(n: usize, big_n: usize, seed: u64) -> (LabeledDataset, UnlabeledDataset) {
    Dgp::MeanQuantile { mu: 4.0, sigma2_y: 4.0, r2: 0.5 }.sample(n, big_n, seed)
}
