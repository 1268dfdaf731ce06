//! Simulation config files.
//!
//! ```toml
//! schema_version = 1
//!
//! [defaults]          # merged into every scenario; scenario keys win
//! trials = 100
//!
//! [[scenario]]
//! name = "mean"
//! sweep_n = [100, 1000]   # optional: one scenario per value
//! sweep_r2 = [0.0, 1.0]   # optional, mean_quantile designs only
//! sweep_r0 = [0.0, 1.0]   # optional, linear designs only
//! ...                     # every other key is a ScenarioConfig field
//! ```

use anyhow::{anyhow, bail, Context, Result};
use crossfit_core::sim::{Dgp, ScenarioConfig};
use toml::{Table, Value};

pub const SCHEMA_VERSION: i64 = 1;

const TOP_LEVEL_KEYS: [&str; 3] = ["schema_version", "defaults", "scenario"];

/// Parses and expands a config into concrete, validated scenarios.
pub fn parse_config(text: &str) -> Result<Vec<ScenarioConfig>> {
    let root: Table = text.parse().context("config is not valid TOML")?;
    if let Some(key) = root.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        bail!("unknown top-level key `{key}`");
    }
    match root.get("schema_version") {
        Some(Value::Integer(SCHEMA_VERSION)) => {}
        Some(other) => bail!("unsupported schema_version {other}; this build reads version {SCHEMA_VERSION}"),
        None => bail!("missing key `schema_version`"),
    }
    let defaults = match root.get("defaults") {
        Some(Value::Table(t)) => t.clone(),
        Some(_) => bail!("`defaults` must be a table"),
        None => Table::new(),
    };
    let entries = match root.get("scenario") {
        Some(Value::Array(a)) if !a.is_empty() => a,
        _ => bail!("config must contain at least one [[scenario]]"),
    };
    let mut scenarios = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let Value::Table(own) = entry else {
            bail!("scenario #{} is not a table", i + 1);
        };
        let mut merged = defaults.clone();
        merged.extend(own.clone());
        let label = merged
            .get("name")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{}", i + 1));
        let expanded = expand(merged).with_context(|| format!("scenario `{label}`"))?;
        scenarios.extend(expanded);
    }
    let mut names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate scenario name `{}`", w[0]);
    }
    Ok(scenarios)
}

fn take_sweep<T: serde::de::DeserializeOwned>(table: &mut Table, key: &str) -> Result<Option<Vec<T>>> {
    match table.remove(key) {
        None => Ok(None),
        Some(v) => {
            let values: Vec<T> = v.try_into().with_context(|| format!("`{key}` must be an array"))?;
            if values.is_empty() {
                bail!("`{key}` must not be empty");
            }
            Ok(Some(values))
        }
    }
}

fn expand(mut table: Table) -> Result<Vec<ScenarioConfig>> {
    let sweep_n: Option<Vec<usize>> = take_sweep(&mut table, "sweep_n")?;
    let sweep_r2: Option<Vec<f64>> = take_sweep(&mut table, "sweep_r2")?;
    let sweep_r0: Option<Vec<f64>> = take_sweep(&mut table, "sweep_r0")?;
    if sweep_n.is_some() {
        table.entry("n").or_insert(Value::Integer(0));
    }
    let base: ScenarioConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| anyhow!("{}", e.message()))?;

    let ns: Vec<Option<usize>> = match sweep_n {
        Some(v) => v.into_iter().map(Some).collect(),
        None => vec![None],
    };
    let shares: Vec<Option<(&str, f64)>> = match (sweep_r2, sweep_r0, base.dgp) {
        (Some(_), Some(_), _) => bail!("use at most one of `sweep_r2` and `sweep_r0`"),
        (Some(v), None, Dgp::MeanQuantile { .. }) => v.into_iter().map(|x| Some(("r2", x))).collect(),
        (None, Some(v), Dgp::Linear { .. }) => v.into_iter().map(|x| Some(("r0", x))).collect(),
        (Some(_), None, _) => bail!("`sweep_r2` applies only to mean_quantile designs"),
        (None, Some(_), _) => bail!("`sweep_r0` applies only to linear designs"),
        (None, None, _) => vec![None],
    };

    let mut out = Vec::new();
    for share in &shares {
        for n in &ns {
            let mut cfg = base.clone();
            let mut suffix = String::new();
            if let Some((key, x)) = *share {
                match &mut cfg.dgp {
                    Dgp::MeanQuantile { r2, .. } => *r2 = x,
                    Dgp::Linear { r0, .. } => *r0 = x,
                }
                suffix.push_str(&format!("_{key}={x}"));
            }
            if let Some(n) = *n {
                cfg.n = n;
                suffix.push_str(&format!("_n={n}"));
            }
            cfg.name.push_str(&suffix);
            cfg.validate().map_err(|e| anyhow!("{}: {e}", cfg.name))?;
            out.push(cfg);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1

[defaults]
estimand = "mean"
unlabeled = { convention = "fixed", size = 500 }
folds = 5
bootstrap = 5
alpha = 0.1
trainer = { kind = "ridge", lambda = 0.0 }
trials = 2
methods = ["cross", "classical"]

[[scenario]]
name = "m"
dgp = { kind = "mean_quantile", mu = 4.0, sigma2_y = 4.0, r2 = 0.5 }
n = 50
"#;

    #[test]
    fn defaults_merge() {
        let s = parse_config(BASE).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].folds, 5);
        assert_eq!(s[0].ppi_train_fraction, 0.5);
    }

    #[test]
    fn sweeps_expand_grid() {
        let text = BASE.replace("n = 50", "sweep_n = [50, 60, 70]\nsweep_r2 = [0.0, 1.0]");
        let s = parse_config(&text).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[0].name, "m_r2=0_n=50");
        assert_eq!(s[5].n, 70);
        assert!(matches!(s[5].dgp, Dgp::MeanQuantile { r2, .. } if r2 == 1.0));
        let bad = BASE.replace("n = 50", "n = 50\nsweep_r0 = [1.0]");
        assert!(format!("{:#}", parse_config(&bad).unwrap_err()).contains("sweep_r0"));
    }

    #[test]
    fn schema_errors_name_the_key() {
        let err = |t: &str| format!("{:#}", parse_config(t).unwrap_err());
        assert!(err(&BASE.replace("schema_version = 1", "")).contains("schema_version"));
        assert!(err(&BASE.replace("schema_version = 1", "schema_version = 7")).contains("schema_version"));
        assert!(err(&BASE.replace("n = 50", "n = 50\ntrails = 3")).contains("trails"));
        assert!(err(&BASE.replace("trials = 2", "trials = 0")).contains("trials"));
        assert!(err(&BASE.replace("\"classical\"]", "\"classicl\"]")).contains("classicl"));
        assert!(err(&format!("{BASE}\nextra = 1")).contains("extra"));
        assert!(err(&format!("{BASE}\n[[scenario]]\nname = \"m\"\ndgp = {{ kind = \"linear\", r0 = 1.0, sigma2_y = 4.0 }}\nn = 50\n")).contains("duplicate"));
    }
}
