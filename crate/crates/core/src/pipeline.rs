//! End-to-end interval construction for each method on one dataset pair.

use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{validate_pair, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::estimators::{
    build_bundle, classical_objective, estimate_classical, estimate_cross_general,
    estimate_nodebias, estimate_nofolds, estimate_ppi, CrossFitBundle, ImputedObjective,
    SingleModelFit,
};
use crate::folds::make_folds;
use crate::inference::{
    bootstrap_models, check_alpha, confint_clt, confset_quantile, estimate_variance_general,
    gradient_test_set, order_statistic_interval, sandwich_variance, BootstrapConfig,
    BootstrapPredictions, ImputedIndicators, QuantileSetInputs, Resampling, VarianceReport,
};
use crate::report::{IntervalReport, Method, VarianceDiagnostics};
use crate::trainers::{train_fold_models, TrainerSpec};

/// Settings shared by every method in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSettings {
    pub folds: usize,
    pub bootstrap: usize,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub resample_size: Option<usize>,
    pub alpha: f64,
    pub trainer: TrainerSpec,
}

impl MethodSettings {
    pub fn new(folds: usize, bootstrap: usize, alpha: f64, trainer: TrainerSpec) -> Self {
        Self {
            folds,
            bootstrap,
            resampling: Resampling::WithoutReplacement,
            resample_size: None,
            alpha,
            trainer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "cross-prediction needs at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.bootstrap < 1 {
            return Err(Error::InvalidConfig("bootstrap replicates must be positive".into()));
        }
        self.trainer.validate()
    }
}

/// Shared state for one dataset pair: the cross-fitting bundle is built at
/// most once and reused by every method that needs it.
struct Run<'a> {
    spec: &'a EstimandSpec,
    labeled: &'a LabeledDataset,
    unlabeled: &'a UnlabeledDataset,
    settings: &'a MethodSettings,
    seed: u64,
    bundle: OnceLock<Result<CrossFitBundle>>,
}

/// Runs each method on the same data. The outer error is a configuration
/// problem; inner errors are per-method failures.
pub fn run_methods(
    spec: &EstimandSpec,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    methods: &[Method],
    settings: &MethodSettings,
    seed: u64,
) -> Result<Vec<Result<IntervalReport>>> {
    validate_pair(labeled, unlabeled)?;
    spec.validate(Some(labeled.n_features()))?;
    settings.validate()?;
    let run = Run {
        spec,
        labeled,
        unlabeled,
        settings,
        seed,
        bundle: OnceLock::new(),
    };
    Ok(methods.iter().map(|m| run.method(*m)).collect())
}

/// [`run_methods`] for a single method.
pub fn run_method(
    spec: &EstimandSpec,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    method: Method,
    settings: &MethodSettings,
    seed: u64,
) -> Result<IntervalReport> {
    run_methods(spec, labeled, unlabeled, &[method], settings, seed)?
        .pop()
        .expect("one method")
}

impl Run<'_> {
    fn bundle(&self) -> Result<&CrossFitBundle> {
        self.bundle
            .get_or_init(|| {
                let folds = make_folds(self.labeled.len(), self.settings.folds, self.seed)?;
                let models =
                    train_fold_models(&self.settings.trainer, self.labeled, &folds, self.seed)?;
                build_bundle(models, self.labeled, self.unlabeled, &folds)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn report(
        &self,
        method: Method,
        estimate: DVector<f64>,
        bounds: (DVector<f64>, DVector<f64>),
        diagnostics: VarianceDiagnostics,
        warnings: Vec<String>,
    ) -> IntervalReport {
        IntervalReport {
            method,
            estimate,
            lower: bounds.0,
            upper: bounds.1,
            coordinate: self.spec.report_coordinate(),
            alpha: self.settings.alpha,
            diagnostics,
            seed: self.seed,
            warnings,
        }
    }

    fn clt(
        &self,
        method: Method,
        estimate: DVector<f64>,
        variance: VarianceReport,
        warnings: Vec<String>,
    ) -> Result<IntervalReport> {
        // one reported coordinate, so no Bonferroni inflation
        let bounds = confint_clt(&estimate, &variance, self.settings.alpha, 1)?;
        Ok(self.report(method, estimate, bounds, VarianceDiagnostics::Clt(variance), warnings))
    }

    fn quantile_report(
        &self,
        method: Method,
        estimate: DVector<f64>,
        set: crate::inference::QuantileSet,
        mut warnings: Vec<String>,
    ) -> IntervalReport {
        if !set.contiguous {
            warnings.push("quantile acceptance region is not contiguous; reporting its hull".into());
        }
        let bounds = (
            DVector::from_element(1, set.lower),
            DVector::from_element(1, set.upper),
        );
        self.report(method, estimate, bounds, VarianceDiagnostics::QuantileSet(set), warnings)
    }

    fn method(&self, method: Method) -> Result<IntervalReport> {
        match method {
            Method::CrossPrediction => self.cross(method),
            Method::Classical => self.classical(method),
            Method::Ppi { train_fraction } => {
                let fit = estimate_ppi(
                    self.spec,
                    self.labeled,
                    self.unlabeled,
                    train_fraction,
                    &self.settings.trainer,
                    self.seed,
                )?;
                let m = fit.debias_rows.len();
                self.single_model(method, fit, m)
            }
            Method::NoFolds => {
                let fit = estimate_nofolds(
                    self.spec,
                    self.labeled,
                    self.unlabeled,
                    &self.settings.trainer,
                    self.seed,
                )?;
                self.single_model(method, fit, self.labeled.len())
            }
            Method::NoDebias => self.nodebias(method),
        }
    }

    fn cross(&self, method: Method) -> Result<IntervalReport> {
        let bundle = self.bundle()?;
        let point = estimate_cross_general(self.spec, bundle, self.labeled, self.unlabeled)?;
        let config = BootstrapConfig {
            replicates: self.settings.bootstrap,
            resample_size: self.settings.resample_size,
            seed: self.seed,
            resampling: self.settings.resampling,
        };
        let boot = bootstrap_models(&self.settings.trainer, self.labeled, bundle.folds(), &config)?;
        let boot = BootstrapPredictions::new(&boot, self.labeled, self.unlabeled)?;
        match self.spec {
            EstimandSpec::Quantile { q } => {
                let set = confset_quantile(
                    *q,
                    bundle,
                    self.labeled,
                    self.unlabeled,
                    &boot,
                    self.settings.alpha,
                )?;
                Ok(self.quantile_report(method, point.theta, set, point.warnings))
            }
            _ => {
                let variance = estimate_variance_general(
                    self.spec,
                    &point.theta,
                    &boot,
                    self.labeled,
                    self.unlabeled,
                    bundle.n_retained(),
                )?;
                self.clt(method, point.theta, variance, point.warnings)
            }
        }
    }

    fn classical(&self, method: Method) -> Result<IntervalReport> {
        let theta = estimate_classical(self.spec, self.labeled)?;
        let labels = self.labeled.labels().as_slice();
        match self.spec {
            EstimandSpec::Quantile { q } => {
                let (lo, hi, lower_rank, upper_rank) =
                    order_statistic_interval(labels, *q, self.settings.alpha)?;
                Ok(self.report(
                    method,
                    theta,
                    (DVector::from_element(1, lo), DVector::from_element(1, hi)),
                    VarianceDiagnostics::OrderStatistic {
                        lower_rank,
                        upper_rank,
                    },
                    Vec::new(),
                ))
            }
            _ => {
                let obj = classical_objective(self.labeled.features(), labels);
                let variance = sandwich_variance(self.spec, &theta, &obj, self.labeled.len())?;
                self.clt(method, theta, variance, Vec::new())
            }
        }
    }

    /// PPI and the no-folds heuristic: one model, the two sums treated as
    /// independent given it.
    fn single_model(&self, method: Method, fit: SingleModelFit, n_eff: usize) -> Result<IntervalReport> {
        let obj = fit.objective(self.labeled, self.unlabeled);
        match self.spec {
            EstimandSpec::Quantile { q } => {
                let inputs = QuantileSetInputs {
                    point: obj,
                    imputed: ImputedIndicators::Single(&fit.unlabeled_preds),
                    pair_preds: &fit.debias_preds,
                    pair_labels: &fit.debias_labels,
                    n_eff,
                };
                let set = gradient_test_set(*q, &inputs, self.settings.alpha)?;
                Ok(self.quantile_report(method, fit.estimate.theta.clone(), set, fit.estimate.warnings.clone()))
            }
            _ => {
                let variance = sandwich_variance(self.spec, &fit.estimate.theta, &obj, n_eff)?;
                self.clt(method, fit.estimate.theta.clone(), variance, fit.estimate.warnings.clone())
            }
        }
    }

    /// Conditional on the fold models, the imputed term is an average of
    /// `N` independent rows.
    fn nodebias(&self, method: Method) -> Result<IntervalReport> {
        let bundle = self.bundle()?;
        let point = estimate_nodebias(self.spec, bundle, self.labeled, self.unlabeled)?;
        let n_big = self.unlabeled.len();
        match self.spec {
            EstimandSpec::Quantile { q } => {
                let inputs = QuantileSetInputs {
                    point: bundle.objective(self.labeled, self.unlabeled, false),
                    imputed: ImputedIndicators::Grouped(
                        bundle.unlabeled_preds().iter().map(Vec::as_slice).collect(),
                    ),
                    pair_preds: &[],
                    pair_labels: &[],
                    n_eff: n_big,
                };
                let set = gradient_test_set(*q, &inputs, self.settings.alpha)?;
                Ok(self.quantile_report(method, point.theta, set, point.warnings))
            }
            _ => {
                let averaged = bundle.objective(self.labeled, self.unlabeled, false).averaged_preds();
                let obj = ImputedObjective {
                    imputed_features: self.unlabeled.features(),
                    imputed_preds: vec![&averaged],
                    debias_features: self.labeled.features(),
                    debias_rows: &[],
                    debias_preds: &[],
                    debias_labels: &[],
                };
                let variance = sandwich_variance(self.spec, &point.theta, &obj, n_big)?;
                self.clt(method, point.theta, variance, point.warnings)
            }
        }
    }
}
