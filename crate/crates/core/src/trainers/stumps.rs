//! L2 gradient boosting with depth-1 regression trees.
//!
//! A sum of stumps is additive in the features, so after training the
//! ensemble is folded into one step function per feature and prediction
//! costs one binary search per feature instead of one comparison per round.

use crate::data::LabeledDataset;

/// One fitted split: `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

impl Stump {
    fn apply(&self, x: f64) -> f64 {
        if x <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

/// Step function of one feature: `values[k]` applies when exactly `k`
/// thresholds lie strictly below the input.
#[derive(Debug, Clone, PartialEq)]
struct StepFunction {
    feature: usize,
    thresholds: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StumpEnsemble {
    base: f64,
    steps: Vec<StepFunction>,
    n_stumps: usize,
}

impl StumpEnsemble {
    /// Number of boosting rounds that produced a split.
    pub fn n_stumps(&self) -> usize {
        self.n_stumps
    }

    pub(super) fn predict_row(&self, row: &[f64]) -> f64 {
        let mut out = self.base;
        for step in &self.steps {
            let x = row[step.feature];
            let k = step.thresholds.partition_point(|&t| t < x);
            out += step.values[k];
        }
        out
    }

    fn compile(base: f64, stumps: &[Stump], n_features: usize) -> Self {
        let mut steps = Vec::new();
        for feature in 0..n_features {
            let mut mine: Vec<&Stump> = stumps.iter().filter(|s| s.feature == feature).collect();
            if mine.is_empty() {
                continue;
            }
            mine.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
            let mut thresholds: Vec<f64> = Vec::new();
            let mut jumps: Vec<f64> = Vec::new();
            for s in &mine {
                if thresholds.last() == Some(&s.threshold) {
                    *jumps.last_mut().unwrap() += s.right - s.left;
                } else {
                    thresholds.push(s.threshold);
                    jumps.push(s.right - s.left);
                }
            }
            let mut values = Vec::with_capacity(thresholds.len() + 1);
            let mut acc: f64 = mine.iter().map(|s| s.left).sum();
            values.push(acc);
            for j in jumps {
                acc += j;
                values.push(acc);
            }
            steps.push(StepFunction {
                feature,
                thresholds,
                values,
            });
        }
        Self {
            base,
            steps,
            n_stumps: stumps.len(),
        }
    }
}

/// One feature's rows in ascending order and the admissible split
/// positions, fixed for the whole boosting run.
/// The first `t` sorted rows go left.
#[derive(Clone, Copy)]
struct Cut {
    t: usize,
    threshold: f64,
    inv_left: f64,
    inv_right: f64,
}

struct SortedColumn {
    order: Vec<usize>,
    cuts: Vec<Cut>,
}

impl SortedColumn {
    fn new(col: &[f64], min_leaf: usize) -> Self {
        let n = col.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        let cuts = (min_leaf.max(1)..=n.saturating_sub(min_leaf))
            .filter(|&t| t < n)
            .filter_map(|t| {
                let (lo, hi) = (col[order[t - 1]], col[order[t]]);
                if lo == hi {
                    return None;
                }
                let mut threshold = lo + 0.5 * (hi - lo);
                if threshold >= hi {
                    threshold = lo;
                }
                Some(Cut {
                    t,
                    threshold,
                    inv_left: 1.0 / t as f64,
                    inv_right: 1.0 / (n - t) as f64,
                })
            })
            .collect();
        Self { order, cuts }
    }
}

/// Best SSE split of `residuals` over all features, or `None` when no
/// feature has a threshold leaving `min_leaf` rows on each side.
fn best_split(columns: &[SortedColumn], residuals: &[f64], prefix: &mut Vec<f64>) -> Option<Stump> {
    let n = residuals.len();
    let total: f64 = residuals.iter().sum();
    // (gain, feature, t, threshold)
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for (feature, column) in columns.iter().enumerate() {
        prefix.resize(n + 1, 0.0);
        let mut acc = 0.0;
        for (slot, &i) in prefix[1..].iter_mut().zip(&column.order) {
            acc += residuals[i];
            *slot = acc;
        }
        for cut in &column.cuts {
            let left_sum = prefix[cut.t];
            let right_sum = total - left_sum;
            // SSE = Σr² − (S_L²/n_L + S_R²/n_R); maximize the subtracted part.
            let gain = left_sum * left_sum * cut.inv_left + right_sum * right_sum * cut.inv_right;
            if best.is_none_or(|(g, ..)| gain > g) {
                best = Some((gain, feature, cut.t, cut.threshold));
            }
        }
    }
    best.map(|(_, feature, t, threshold)| {
        let left_sum = columns[feature].order[..t].iter().map(|&i| residuals[i]).sum::<f64>();
        Stump {
            feature,
            threshold,
            left: left_sum / t as f64,
            right: (total - left_sum) / (n - t) as f64,
        }
    })
}

pub(super) fn fit(
    data: &LabeledDataset,
    rounds: usize,
    learning_rate: f64,
    min_leaf: usize,
) -> StumpEnsemble {
    let (base, stumps) = fit_stumps(data, rounds, learning_rate, min_leaf);
    StumpEnsemble::compile(base, &stumps, data.n_features())
}

fn fit_stumps(
    data: &LabeledDataset,
    rounds: usize,
    learning_rate: f64,
    min_leaf: usize,
) -> (f64, Vec<Stump>) {
    let x = data.features();
    let (n, p) = x.shape();
    let y = data.labels().as_slice();
    let columns: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).iter().copied().collect()).collect();
    let sorted: Vec<SortedColumn> = columns.iter().map(|c| SortedColumn::new(c, min_leaf)).collect();
    let mut prefix = Vec::with_capacity(n + 1);

    let base = crate::linalg::mean(y);
    let mut fitted = vec![base; n];
    let mut residuals = vec![0.0; n];
    let mut stumps = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        for i in 0..n {
            residuals[i] = y[i] - fitted[i];
        }
        let Some(split) = best_split(&sorted, &residuals, &mut prefix) else {
            break;
        };
        let stump = Stump {
            left: split.left * learning_rate,
            right: split.right * learning_rate,
            ..split
        };
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += stump.apply(columns[stump.feature][i]);
        }
        stumps.push(stump);
    }
    (base, stumps)
}
