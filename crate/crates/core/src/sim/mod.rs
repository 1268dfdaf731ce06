//! Monte Carlo coverage experiments on the synthetic designs.

mod csvio;
mod dgp;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::inference::Resampling;
use crate::linalg::{mean, sample_sd};
use crate::pipeline::{run_method, run_methods, MethodSettings};
use crate::report::Method;
use crate::trainers::TrainerSpec;

pub use csvio::{read_trials_csv, write_summary_csv, write_trials_csv, SUMMARY_HEADER, TRIALS_HEADER};
pub use dgp::{sample_linear_dgp, sample_mean_quantile_dgp, Dgp};

/// How many unlabeled rows each trial gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "convention", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnlabeledSize {
    /// `N` is fixed whatever `n` is.
    Fixed { size: usize },
    /// A pool of `pool` rows is drawn and the `N = pool − n` not labeled are
    /// unlabeled.
    Remainder { pool: usize },
}

impl UnlabeledSize {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let big_n = match *self {
            UnlabeledSize::Fixed { size } => size,
            UnlabeledSize::Remainder { pool } => pool.saturating_sub(n),
        };
        if big_n < 2 {
            return Err(Error::InvalidConfig(format!(
                "scenario leaves {big_n} unlabeled rows; at least 2 are needed"
            )));
        }
        Ok(big_n)
    }
}

fn default_ppi_fraction() -> f64 {
    Method::DEFAULT_PPI_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dgp: Dgp,
    pub estimand: EstimandSpec,
    pub n: usize,
    pub unlabeled: UnlabeledSize,
    pub folds: usize,
    pub bootstrap: usize,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub resample_size: Option<usize>,
    pub alpha: f64,
    pub trainer: TrainerSpec,
    /// Used by method tags written as a bare `ppi`.
    #[serde(default = "default_ppi_fraction")]
    pub ppi_train_fraction: f64,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub methods: Vec<String>,
    /// Wall-clock seconds per record. Off by default so that outputs are
    /// byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ScenarioConfig {
    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        self.methods
            .iter()
            .map(|m| Method::parse_with_default(m, self.ppi_train_fraction))
            .collect()
    }

    pub fn settings(&self) -> MethodSettings {
        MethodSettings {
            folds: self.folds,
            bootstrap: self.bootstrap,
            resampling: self.resampling,
            resample_size: self.resample_size,
            alpha: self.alpha,
            trainer: self.trainer.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        self.dgp.validate()?;
        self.estimand.validate(Some(self.dgp.n_features()))?;
        self.dgp.truth(&self.estimand)?;
        self.settings().validate()?;
        self.methods()?;
        self.unlabeled.resolve(self.n)?;
        if self.n < 2 * self.folds {
            return Err(Error::InvalidConfig(format!(
                "n={} is too small for {} folds",
                self.n, self.folds
            )));
        }
        Ok(())
    }

    /// Hash of everything but the base seed.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.base_seed = 0;
        let digest = Sha256::digest(format!("{canonical:?}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scenario: String,
    pub trial: usize,
    pub method: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub width: f64,
    pub seconds: Option<f64>,
    /// Hash of the labeled and unlabeled data the method consumed; absent
    /// for records read back from CSV.
    pub data_hash: Option<[u8; 32]>,
}

/// A method run that produced no interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: String,
    pub trials: usize,
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
    /// Sample standard deviations across trials; absent below two trials.
    pub sd_lower: Option<f64>,
    pub sd_upper: Option<f64>,
    /// Trials in which the method failed; unknown when the summary was
    /// rebuilt from records alone.
    pub failures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<MethodSummary>,
    pub failures: Vec<TrialFailure>,
    pub config_hash: String,
    pub truth: f64,
}

fn data_hash(lab: &crate::LabeledDataset, unl: &crate::UnlabeledDataset) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(lab.content_hash());
    h.update(unl.content_hash());
    h.finalize().into()
}

/// Runs every trial (in parallel, on `jobs` threads when given) and merges
/// the results in trial order.
pub fn run_scenario(config: &ScenarioConfig, jobs: Option<usize>) -> Result<ScenarioOutcome> {
    config.validate()?;
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| run_trials(config)),
        None => run_trials(config),
    }
}

type TrialOutput = (Vec<TrialRecord>, Vec<TrialFailure>);

fn run_trials(config: &ScenarioConfig) -> Result<ScenarioOutcome> {
    let methods = config.methods()?;
    let settings = config.settings();
    let truth = config.dgp.truth(&config.estimand)?;
    let big_n = config.unlabeled.resolve(config.n)?;
    let per_trial: Vec<TrialOutput> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &methods, &settings, truth, big_n, t))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_trial {
        records.extend(r);
        failures.extend(f);
    }
    let mut failure_counts: BTreeMap<String, usize> = BTreeMap::new();
    for f in &failures {
        *failure_counts.entry(f.method.clone()).or_default() += 1;
    }
    let mut summary = summarize(&records);
    // methods that failed in every trial still get a row
    for m in &methods {
        let tag = m.to_string();
        if !summary.iter().any(|s| s.method == tag) {
            summary.push(MethodSummary {
                scenario: config.name.clone(),
                method: tag,
                trials: 0,
                coverage: None,
                mean_width: None,
                sd_lower: None,
                sd_upper: None,
                failures: None,
            });
        }
    }
    let order: Vec<String> = methods.iter().map(Method::to_string).collect();
    summary.sort_by_key(|s| order.iter().position(|m| *m == s.method));
    for s in &mut summary {
        s.failures = Some(failure_counts.get(&s.method).copied().unwrap_or(0));
    }
    Ok(ScenarioOutcome {
        records,
        summary,
        failures,
        config_hash: config.config_hash(),
        truth,
    })
}

fn run_trial(
    config: &ScenarioConfig,
    methods: &[Method],
    settings: &MethodSettings,
    truth: f64,
    big_n: usize,
    t: usize,
) -> Result<TrialOutput> {
    let seed = config.base_seed.wrapping_add(t as u64);
    let (lab, unl) = config.dgp.sample(config.n, big_n, seed);
    let hash = data_hash(&lab, &unl);
    // timing needs one call per method; otherwise share the fold bundle
    let results: Vec<(crate::Result<crate::IntervalReport>, Option<f64>)> = if config.record_wall_time {
        methods
            .iter()
            .map(|&m| {
                let start = Instant::now();
                let r = run_method(&config.estimand, &lab, &unl, m, settings, seed);
                (r, Some(start.elapsed().as_secs_f64()))
            })
            .collect()
    } else {
        run_methods(&config.estimand, &lab, &unl, methods, settings, seed)?
            .into_iter()
            .map(|r| (r, None))
            .collect()
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (m, (result, seconds)) in methods.iter().zip(results) {
        match result {
            Ok(report) => {
                let (estimate, lower, upper) = report.primary();
                records.push(TrialRecord {
                    scenario: config.name.clone(),
                    trial: t,
                    method: m.to_string(),
                    estimate,
                    lower,
                    upper,
                    covered: report.covers(truth),
                    width: upper - lower,
                    seconds,
                    data_hash: Some(hash),
                });
            }
            Err(e) => failures.push(TrialFailure {
                trial: t,
                method: m.to_string(),
                message: e.to_string(),
            }),
        }
    }
    Ok((records, failures))
}

/// Per-(scenario, method) metrics in order of first appearance. Failure
/// counts are unknown here.
pub fn summarize(records: &[TrialRecord]) -> Vec<MethodSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut groups: Vec<Vec<&TrialRecord>> = Vec::new();
    for r in records {
        let key = (r.scenario.clone(), r.method.clone());
        match keys.iter().position(|k| *k == key) {
            Some(g) => groups[g].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    keys.into_iter()
        .zip(groups)
        .map(|((scenario, method), rs)| {
            let lower: Vec<f64> = rs.iter().map(|r| r.lower).collect();
            let upper: Vec<f64> = rs.iter().map(|r| r.upper).collect();
            let widths: Vec<f64> = rs.iter().map(|r| r.width).collect();
            let covered = rs.iter().filter(|r| r.covered).count();
            let sd = |v: &[f64]| (v.len() >= 2).then(|| sample_sd(v));
            MethodSummary {
                scenario,
                method,
                trials: rs.len(),
                coverage: Some(covered as f64 / rs.len() as f64),
                mean_width: Some(mean(&widths)),
                sd_lower: sd(&lower),
                sd_upper: sd(&upper),
                failures: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(trials: usize) -> ScenarioConfig {
        ScenarioConfig {
            name: "tiny".into(),
            dgp: Dgp::MeanQuantile { mu: 4.0, sigma2_y: 4.0, r2: 0.5 },
            estimand: EstimandSpec::Mean,
            n: 60,
            unlabeled: UnlabeledSize::Fixed { size: 300 },
            folds: 5,
            bootstrap: 5,
            resampling: Resampling::WithoutReplacement,
            resample_size: None,
            alpha: 0.1,
            trainer: TrainerSpec::boosted_stumps(30, 0.2, 3),
            ppi_train_fraction: 0.5,
            trials,
            base_seed: 11,
            methods: vec!["cross".into(), "classical".into(), "ppi".into()],
            record_wall_time: false,
        }
    }

    #[test]
    fn single_trial_has_no_endpoint_sd() {
        let out = run_scenario(&tiny(1), Some(2)).unwrap();
        assert_eq!(out.records.len(), 3);
        for s in &out.summary {
            assert_eq!(s.trials, 1);
            assert!(s.sd_lower.is_none() && s.sd_upper.is_none());
        }
    }

    #[test]
    fn trials_share_data_across_methods() {
        let out = run_scenario(&tiny(4), None).unwrap();
        for t in 0..4 {
            let hashes: Vec<_> = out.records.iter().filter(|r| r.trial == t).map(|r| r.data_hash).collect();
            assert_eq!(hashes.len(), 3);
            assert!(hashes.windows(2).all(|w| w[0] == w[1]));
        }
        let first: Vec<_> = out.records.iter().filter(|r| r.trial == 0).collect();
        let second: Vec<_> = out.records.iter().filter(|r| r.trial == 1).collect();
        assert_ne!(first[0].data_hash, second[0].data_hash);
    }

    #[test]
    fn coverage_is_recount_of_covered_flags() {
        let out = run_scenario(&tiny(12), Some(3)).unwrap();
        for s in &out.summary {
            let rs: Vec<_> = out.records.iter().filter(|r| r.method == s.method).collect();
            let recount = rs.iter().filter(|r| r.covered).count() as f64 / rs.len() as f64;
            assert_eq!(s.coverage, Some(recount));
            assert!(rs.iter().all(|r| (r.width - (r.upper - r.lower)).abs() == 0.0 && r.width >= 0.0));
        }
    }

    #[test]
    fn base_seed_changes_data_not_config_hash() {
        let a = tiny(2);
        let mut b = tiny(2);
        b.base_seed = 12345;
        assert_eq!(a.config_hash(), b.config_hash());
        let ra = run_scenario(&a, None).unwrap();
        let rb = run_scenario(&b, None).unwrap();
        assert_ne!(ra.records[0].data_hash, rb.records[0].data_hash);
        let mut c = tiny(2);
        c.n = 70;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn job_count_does_not_change_results() {
        let a = run_scenario(&tiny(6), Some(1)).unwrap();
        let b = run_scenario(&tiny(6), Some(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wall_time_is_optional() {
        let mut cfg = tiny(2);
        let out = run_scenario(&cfg, None).unwrap();
        assert!(out.records.iter().all(|r| r.seconds.is_none()));
        cfg.record_wall_time = true;
        let timed = run_scenario(&cfg, None).unwrap();
        assert!(timed.records.iter().all(|r| r.seconds.is_some()));
        // same intervals either way
        for (a, b) in out.records.iter().zip(&timed.records) {
            assert_eq!((a.lower, a.upper), (b.lower, b.upper));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny(0);
        assert!(run_scenario(&cfg, None).is_err());
        cfg.trials = 1;
        cfg.methods = vec!["cross".into(), "bogus".into()];
        let err = run_scenario(&cfg, None).unwrap_err().to_string();
        assert!(err.contains("bogus"));
        cfg.methods = vec!["cross".into()];
        cfg.unlabeled = UnlabeledSize::Remainder { pool: 61 };
        assert!(run_scenario(&cfg, None).is_err());
        cfg.unlabeled = UnlabeledSize::Remainder { pool: 500 };
        assert!(run_scenario(&cfg, None).is_ok());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = tiny(3);
        let text = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let bad = text.replace("trials = 3", "trials = 3\nunknown_key = 1");
        let err = toml::from_str::<ScenarioConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("unknown_key"), "{err}");
    }
}
