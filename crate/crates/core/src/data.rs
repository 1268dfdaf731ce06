//! Labeled and unlabeled sample containers.
//!
//! Both types reject non-finite entries at construction, so everything
//! downstream may assume finite inputs.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn check_finite(features: &DMatrix<f64>, dataset: &'static str) -> Result<()> {
    // Scan row-major so the reported position is the first bad row.
    for row in 0..features.nrows() {
        for column in 0..features.ncols() {
            if !features[(row, column)].is_finite() {
                return Err(Error::NonFinite {
                    dataset,
                    row,
                    column,
                });
            }
        }
    }
    Ok(())
}

/// Feature/label pairs `(X_i, Y_i)`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "labeled features have {} rows but {} labels were given",
                features.nrows(),
                labels.len()
            )));
        }
        check_finite(&features, "labeled")?;
        if let Some(row) = labels.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFinite {
                dataset: "labeled",
                row,
                column: features.ncols(),
            });
        }
        Ok(Self { features, labels })
    }

    /// Builds a dataset from row slices; convenient in tests and generators.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self> {
        let features = matrix_from_rows(rows)?;
        Self::new(features, DVector::from_column_slice(labels))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    /// Copy of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
        }
    }

    /// Stable content hash used to show that all methods in a trial saw the
    /// same sample.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hash_matrix(&mut hasher, &self.features);
        for y in self.labels.iter() {
            hasher.update(y.to_bits().to_le_bytes());
        }
        hasher.finalize().into()
    }

    /// Reads a headered CSV with columns `x1..xp,y`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Input(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let (header, rows) = read_numeric_csv(reader)?;
        let p = header.len().checked_sub(1).filter(|p| *p > 0).ok_or_else(|| {
            Error::Input("labeled CSV needs at least one feature column and a y column".into())
        })?;
        check_feature_header(&header[..p])?;
        if header[p] != "y" {
            return Err(Error::Input(format!(
                "last labeled column must be named 'y', found '{}'",
                header[p]
            )));
        }
        let labels: Vec<f64> = rows.iter().map(|r| r[p]).collect();
        let features: Vec<Vec<f64>> = rows.into_iter().map(|mut r| {
            r.truncate(p);
            r
        })
        .collect();
        let features = if features.is_empty() {
            DMatrix::zeros(0, p)
        } else {
            matrix_from_rows(&features)?
        };
        Self::new(features, DVector::from_vec(labels))
    }
}

/// Feature rows `X̃_i`, `i = 0..N`, without labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    features: DMatrix<f64>,
}

impl UnlabeledDataset {
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        check_finite(&features, "unlabeled")?;
        Ok(Self { features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hash_matrix(&mut hasher, &self.features);
        hasher.finalize().into()
    }

    /// Reads a headered CSV with columns `x1..xp`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Input(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let (header, rows) = read_numeric_csv(reader)?;
        if header.is_empty() {
            return Err(Error::Input("unlabeled CSV has no columns".into()));
        }
        check_feature_header(&header)?;
        let features = if rows.is_empty() {
            DMatrix::zeros(0, header.len())
        } else {
            matrix_from_rows(&rows)?
        };
        Self::new(features)
    }
}

/// A labeled/unlabeled pair known to agree on feature dimension.
#[derive(Debug, Clone, Copy)]
pub struct CheckedPair<'a> {
    pub labeled: &'a LabeledDataset,
    pub unlabeled: &'a UnlabeledDataset,
}

/// Checks that both halves of the semi-supervised sample are compatible.
///
/// Finiteness is already guaranteed by the constructors; this only has to
/// compare shapes.
pub fn validate_pair<'a>(
    labeled: &'a LabeledDataset,
    unlabeled: &'a UnlabeledDataset,
) -> Result<CheckedPair<'a>> {
    if labeled.n_features() != unlabeled.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "labeled data has {} feature columns, unlabeled data has {}",
            labeled.n_features(),
            unlabeled.n_features()
        )));
    }
    Ok(CheckedPair { labeled, unlabeled })
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn hash_matrix(hasher: &mut Sha256, m: &DMatrix<f64>) {
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        hasher.update(v.to_bits().to_le_bytes());
    }
}

fn check_feature_header(names: &[String]) -> Result<()> {
    for (j, name) in names.iter().enumerate() {
        let expected = format!("x{}", j + 1);
        if *name != expected {
            return Err(Error::Input(format!(
                "feature column {} must be named '{expected}', found '{name}'",
                j + 1
            )));
        }
    }
    Ok(())
}

fn read_numeric_csv(reader: impl Read) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Input(format!("CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("CSV row {}: {e}", i + 1)))?;
        if record.len() != header.len() {
            return Err(Error::Input(format!(
                "CSV row {} has {} fields, header has {}",
                i + 1,
                record.len(),
                header.len()
            )));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::Input(format!(
                        "CSV row {}, column '{}': cannot parse '{field}' as a number",
                        i + 1,
                        header[j]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
