use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Exact k-nearest-neighbour regressor (Euclidean distance, ties broken by
/// lower training-row index).
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    p: usize,
    rows: Vec<f64>,
    labels: Vec<f64>,
    /// Training rows ordered by their first coordinate, for pruning.
    by_first: Vec<usize>,
    first_sorted: Vec<f64>,
}

pub(super) fn fit(data: &LabeledDataset, k: usize) -> Result<KnnModel> {
    if k > data.len() {
        return Err(Error::InvalidConfig(format!(
            "k={k} exceeds the {} training rows",
            data.len()
        )));
    }
    let x = data.features();
    let (n, p) = x.shape();
    let mut rows: Vec<f64> = Vec::with_capacity(n * p);
    for i in 0..n {
        rows.extend(x.row(i).iter());
    }
    let mut by_first: Vec<usize> = (0..n).collect();
    if p > 0 {
        by_first.sort_by(|&a, &b| rows[a * p].total_cmp(&rows[b * p]).then(a.cmp(&b)));
    }
    let first_sorted = if p > 0 { by_first.iter().map(|&i| rows[i * p]).collect() } else { vec![0.0; n] };
    Ok(KnnModel {
        k,
        p,
        rows,
        labels: data.labels().iter().copied().collect(),
        by_first,
        first_sorted,
    })
}

impl KnnModel {
    pub(super) fn predict_row(&self, query: &[f64]) -> f64 {
        let dist = |i: usize| -> f64 {
            self.rows[i * self.p..(i + 1) * self.p]
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let n = self.labels.len();
        if self.k == n {
            return crate::linalg::mean(&self.labels);
        }
        // Walk outward from the query's first coordinate in both directions.
        // The squared gap in that coordinate is the first term of the
        // distance sum and so bounds it from below. A side stops once the gap
        // exceeds the current k-th distance. Equal gaps are still visited so
        // that lower-index ties win.
        let q0 = query.first().copied().unwrap_or(0.0);
        let start = self.first_sorted.partition_point(|&x| x < q0);
        // sorted by (distance, index)
        let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        let offer = |nearest: &mut Vec<(f64, usize)>, i: usize| {
            let cand = (dist(i), i);
            let full = nearest.len() == self.k;
            if full && !lex_less(cand, nearest[self.k - 1]) {
                return;
            }
            let pos = nearest.partition_point(|&e| lex_less(e, cand));
            nearest.insert(pos, cand);
            nearest.truncate(self.k);
        };
        let bound = |nearest: &Vec<(f64, usize)>| {
            if nearest.len() == self.k { nearest[self.k - 1].0 } else { f64::INFINITY }
        };
        let (mut lo, mut hi) = (start, start);
        loop {
            let gap_lo = (lo > 0).then(|| (q0 - self.first_sorted[lo - 1]) * (q0 - self.first_sorted[lo - 1]));
            let gap_hi = (hi < n).then(|| (self.first_sorted[hi] - q0) * (self.first_sorted[hi] - q0));
            let b = bound(&nearest);
            let take_lo = gap_lo.filter(|&g| g <= b);
            let take_hi = gap_hi.filter(|&g| g <= b);
            match (take_lo, take_hi) {
                (None, None) => break,
                (Some(gl), Some(gh)) if gl <= gh => {
                    lo -= 1;
                    offer(&mut nearest, self.by_first[lo]);
                }
                (Some(_), None) => {
                    lo -= 1;
                    offer(&mut nearest, self.by_first[lo]);
                }
                _ => {
                    offer(&mut nearest, self.by_first[hi]);
                    hi += 1;
                }
            }
        }
        nearest.iter().map(|&(_, i)| self.labels[i]).sum::<f64>() / self.k as f64
    }
}

fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}
