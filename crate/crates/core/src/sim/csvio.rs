use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{MethodSummary, TrialRecord};

pub const TRIALS_HEADER: [&str; 9] = [
    "scenario", "trial", "method", "estimate", "lower", "upper", "covered", "width", "seconds",
];
pub const SUMMARY_HEADER: [&str; 7] = [
    "scenario", "method", "coverage", "mean_width", "sd_lower", "sd_upper", "failures",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(e.to_string())
}

/// Floats are written with the shortest representation that round-trips,
/// so reading the file back reproduces every value bit for bit.
pub fn write_trials_csv<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIALS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.trial.to_string(),
            r.method.clone(),
            r.estimate.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.covered.to_string(),
            r.width.to_string(),
            opt(r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, summary: &[MethodSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for s in summary {
        w.write_record([
            s.scenario.clone(),
            s.method.clone(),
            opt(s.coverage),
            opt(s.mean_width),
            opt(s.sd_lower),
            opt(s.sd_upper),
            s.failures.map(|f| f.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}

/// Parses a trials file. Row numbers in errors count the header as row 1.
pub fn read_trials_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() {
        return Err(Error::Input("empty trials file".into()));
    }
    if header.iter().ne(TRIALS_HEADER) {
        return Err(Error::Input(format!(
            "row 1: expected header `{}`, found `{}`",
            TRIALS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Input(format!("row {line}: {e}")))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c).trim().parse::<f64>().map_err(|_| {
                Error::Input(format!(
                    "row {line}: column `{}` is not a number: `{}`",
                    TRIALS_HEADER[c],
                    field(c)
                ))
            })
        };
        let trial = field(1).trim().parse::<usize>().map_err(|_| {
            Error::Input(format!("row {line}: trial index `{}` is not an integer", field(1)))
        })?;
        let covered = match field(6).trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Input(format!(
                    "row {line}: covered must be true or false, found `{other}`"
                )))
            }
        };
        let seconds = if field(8).trim().is_empty() { None } else { Some(num(8)?) };
        let (lower, upper, width) = (num(4)?, num(5)?, num(7)?);
        if !(width >= 0.0 && lower <= upper) {
            return Err(Error::Input(format!(
                "row {line}: interval [{lower}, {upper}] with width {width} is not valid"
            )));
        }
        records.push(TrialRecord {
            scenario: field(0).to_string(),
            trial,
            method: field(2).to_string(),
            estimate: num(3)?,
            lower,
            upper,
            covered,
            width,
            seconds,
            data_hash: None,
        });
    }
    if records.is_empty() {
        return Err(Error::Input("trials file has a header but no rows".into()));
    }
    Ok(records)
}
