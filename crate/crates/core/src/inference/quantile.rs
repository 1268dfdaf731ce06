//! Quantile inference by inverting a test of the population subgradient.
//!
//! For the pinball loss the gradient at θ is `F(θ) − q`, so the set
//! `{θ : |F̃(θ) − Δ(θ) − q| ≤ z · se(θ)}` is a confidence set. It is
//! evaluated exactly on the grid of every prediction and label, where the
//! debiased CDF can change value.

use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::data::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::estimators::{CrossFitBundle, ImputedObjective};

use super::{z_critical, BootstrapPredictions};

/// Where the per-θ variance of the imputed indicators comes from.
pub(crate) enum ImputedIndicators<'a> {
    /// One prediction per unlabeled row.
    Single(&'a [f64]),
    /// Several predictions per row, averaged as indicators.
    Grouped(Vec<&'a [f64]>),
}

impl ImputedIndicators<'_> {
    fn n_rows(&self) -> usize {
        match self {
            Self::Single(p) => p.len(),
            Self::Grouped(sets) => sets.first().map_or(0, |p| p.len()),
        }
    }
}

pub(crate) struct QuantileSetInputs<'a> {
    /// Supplies the debiased CDF.
    pub point: ImputedObjective<'a>,
    pub imputed: ImputedIndicators<'a>,
    /// Prediction/label pairs for the debiasing variance.
    pub pair_preds: &'a [f64],
    pub pair_labels: &'a [f64],
    pub n_eff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileSet {
    pub lower: f64,
    pub upper: f64,
    pub grid_points: usize,
    pub accepted_points: usize,
    /// False when accepted grid points are separated by rejected ones; the
    /// reported set is then the hull.
    pub contiguous: bool,
}

fn count_le(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&x| x <= t)
}

fn sorted(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Sample variance of `1{f ≤ θ} − 1{y ≤ θ}` over pairs, for ascending θ.
struct PairIndicatorVariance {
    preds: Vec<f64>,
    labels: Vec<f64>,
    maxima: Vec<f64>,
}

impl PairIndicatorVariance {
    fn new(preds: &[f64], labels: &[f64]) -> Self {
        Self {
            preds: sorted(preds.iter().copied()),
            labels: sorted(labels.iter().copied()),
            maxima: sorted(preds.iter().zip(labels).map(|(a, b)| a.max(*b))),
        }
    }

    fn at(&self, t: f64) -> f64 {
        let m = self.preds.len();
        if m < 2 {
            return 0.0;
        }
        let both = count_le(&self.maxima, t);
        // pairs contributing +1 and −1
        let plus = (count_le(&self.preds, t) - both) as f64;
        let minus = (count_le(&self.labels, t) - both) as f64;
        let mf = m as f64;
        (((plus + minus) - (plus - minus).powi(2) / mf) / (mf - 1.0)).max(0.0)
    }
}

/// Variance over rows of the imputed indicator, evaluated along an
/// ascending grid.
enum ImputedSweep {
    Single(Vec<f64>),
    Grouped {
        events: Vec<(f64, usize)>,
        next: usize,
        counts: Vec<u32>,
        sum: f64,
        sum_sq: f64,
        sets: f64,
    },
}

impl ImputedSweep {
    fn new(src: &ImputedIndicators<'_>) -> Self {
        match src {
            ImputedIndicators::Single(p) => Self::Single(sorted(p.iter().copied())),
            ImputedIndicators::Grouped(sets) => {
                let n = sets.first().map_or(0, |p| p.len());
                let mut events: Vec<(f64, usize)> = sets
                    .iter()
                    .flat_map(|p| p.iter().copied().enumerate().map(|(i, v)| (v, i)))
                    .collect();
                events.sort_by(|a, b| a.0.total_cmp(&b.0));
                Self::Grouped {
                    events,
                    next: 0,
                    counts: vec![0; n],
                    sum: 0.0,
                    sum_sq: 0.0,
                    sets: sets.len() as f64,
                }
            }
        }
    }

    /// Must be called with non-decreasing `t`.
    fn advance(&mut self, t: f64) -> f64 {
        match self {
            Self::Single(v) => {
                let n = v.len() as f64;
                if n < 2.0 {
                    return 0.0;
                }
                let p = count_le(v, t) as f64 / n;
                p * (1.0 - p) * n / (n - 1.0)
            }
            Self::Grouped {
                events,
                next,
                counts,
                sum,
                sum_sq,
                sets,
            } => {
                while *next < events.len() && events[*next].0 <= t {
                    let c = &mut counts[events[*next].1];
                    *sum_sq += 2.0 * *c as f64 + 1.0;
                    *sum += 1.0;
                    *c += 1;
                    *next += 1;
                }
                let n = counts.len() as f64;
                if n < 2.0 {
                    return 0.0;
                }
                ((*sum_sq - *sum * *sum / n) / (n - 1.0) / (*sets * *sets)).max(0.0)
            }
        }
    }
}

/// Grid points θ with `|F̃(θ) − Δ(θ) − q| ≤ z sqrt(r σ̂²_θ + σ̂²_Δ) / sqrt(n_eff)`.
pub(crate) fn gradient_test_set(q: f64, inputs: &QuantileSetInputs<'_>, alpha: f64) -> Result<QuantileSet> {
    let z = z_critical(alpha, 1)?;
    let big_n = inputs.imputed.n_rows();
    if big_n == 0 || inputs.n_eff == 0 {
        return Err(Error::InvalidConfig("quantile set needs data".into()));
    }
    let ratio = inputs.n_eff as f64 / big_n as f64;
    let grid = inputs.point.quantile_grid();
    let curve = inputs.point.debiased_cdf(&grid);
    let pairs = PairIndicatorVariance::new(inputs.pair_preds, inputs.pair_labels);
    let mut sweep = ImputedSweep::new(&inputs.imputed);

    let mut first: Option<usize> = None;
    let mut last = 0;
    let mut accepted = 0;
    let mut closest = (f64::INFINITY, f64::NAN);
    for (g, &t) in grid.iter().enumerate() {
        let var = ratio * sweep.advance(t) + pairs.at(t);
        let half = z * var.sqrt() / (inputs.n_eff as f64).sqrt();
        let gap = (curve.value(g) - q).abs();
        if gap <= half {
            first.get_or_insert(g);
            last = g;
            accepted += 1;
        } else {
            let r = gap / half;
            if r < closest.0 || closest.1.is_nan() {
                closest = (r, t);
            }
        }
    }
    match first {
        None => Err(Error::EmptyConfidenceSet {
            closest_theta: closest.1,
            closest_ratio: closest.0,
        }),
        Some(f) => Ok(QuantileSet {
            lower: grid[f],
            upper: grid[last],
            grid_points: grid.len(),
            accepted_points: accepted,
            contiguous: last - f + 1 == accepted,
        }),
    }
}

/// Cross-prediction quantile set: the debiased CDF from the fold models,
/// standard errors from the bootstrap artifacts.
pub fn confset_quantile(
    q: f64,
    bundle: &CrossFitBundle,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    boot: &BootstrapPredictions,
    alpha: f64,
) -> Result<QuantileSet> {
    let inputs = QuantileSetInputs {
        point: bundle.objective(labeled, unlabeled, true),
        imputed: ImputedIndicators::Single(&boot.fbar_unlabeled),
        pair_preds: &boot.pair_preds,
        pair_labels: &boot.pair_labels,
        n_eff: bundle.n_retained(),
    };
    gradient_test_set(q, &inputs, alpha)
}

/// Distribution-free interval `[y_(l), y_(u)]` for the `q`-quantile from
/// binomial tail bounds on the number of labels below it. Returns the bounds
/// and the 1-based ranks.
pub fn order_statistic_interval(labels: &[f64], q: f64, alpha: f64) -> Result<(f64, f64, usize, usize)> {
    super::check_alpha(alpha)?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no labels".into()));
    }
    let ys = sorted(labels.iter().copied());
    let binom = Binomial::new(q, n as u64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    // P(B < l) ≤ α/2 with l as large as possible
    let mut l = 1;
    for k in 1..=n {
        if binom.cdf(k as u64 - 1) <= alpha / 2.0 {
            l = k;
        } else {
            break;
        }
    }
    // P(B ≥ u) ≤ α/2 with u as small as possible
    let mut u = n;
    for k in 1..=n {
        if 1.0 - binom.cdf(k as u64 - 1) <= alpha / 2.0 {
            u = k;
            break;
        }
    }
    Ok((ys[l - 1], ys[u - 1], l, u))
}
