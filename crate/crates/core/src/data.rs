//! Observed-data records and the dataset container.
//!
//! A [`Dataset`] loaded from CSV may contain rows with missing entries. Those
//! rows are tracked by a per-row mask and removed by
//! [`complete_case_filter`]; every estimation routine rejects a dataset that
//! still carries missing rows.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell values treated as missing when reading CSV.
pub const MISSING_MARKERS: [&str; 2] = ["", "NA"];

/// One unit `(X, A, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub covariates: Vec<f64>,
    pub exposure: u8,
    pub outcome: u8,
}

impl Observation {
    pub fn new(covariates: Vec<f64>, exposure: u8, outcome: u8) -> Result<Self> {
        if exposure > 1 || outcome > 1 {
            return Err(Error::InvalidArgument(format!(
                "exposure and outcome must be 0 or 1 (got {exposure}, {outcome})"
            )));
        }
        Ok(Self {
            covariates,
            exposure,
            outcome,
        })
    }

    #[inline]
    pub fn a(&self) -> f64 {
        f64::from(self.exposure)
    }

    #[inline]
    pub fn y(&self) -> f64 {
        f64::from(self.outcome)
    }
}

/// Simulated potential outcomes for one unit. `y0 <= y1` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomeRecord {
    pub y1: u8,
    pub y0: u8,
    pub true_gamma: f64,
}

/// Immutable collection of observations sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    covariate_names: Vec<String>,
    observations: Vec<Observation>,
    missing: Vec<bool>,
}

impl Dataset {
    /// Builds a complete dataset (no missing rows).
    pub fn new(covariate_names: Vec<String>, observations: Vec<Observation>) -> Result<Self> {
        let missing = vec![false; observations.len()];
        Self::with_missing(covariate_names, observations, missing)
    }

    /// Builds a dataset where `missing[i]` marks row `i` as incomplete.
    pub fn with_missing(
        covariate_names: Vec<String>,
        observations: Vec<Observation>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let d = covariate_names.len();
        if missing.len() != observations.len() {
            return Err(Error::DimensionMismatch {
                expected: observations.len(),
                got: missing.len(),
            });
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.covariates.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: obs.covariates.len(),
                });
            }
            if obs.exposure > 1 || obs.outcome > 1 {
                return Err(Error::Parse {
                    row: i + 1,
                    message: "exposure and outcome must be binary".into(),
                });
            }
            if !missing[i] && obs.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: i + 1,
                    message: "non-finite covariate in a row not marked missing".into(),
                });
            }
        }
        Ok(Self {
            covariate_names,
            observations,
            missing,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    /// Fails unless the dataset is non-empty and complete.
    pub fn ensure_ready(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset("no observations".into()));
        }
        if !self.is_complete() {
            return Err(Error::MissingValues);
        }
        Ok(())
    }

    pub fn exposures(&self) -> Vec<f64> {
        self.observations.iter().map(Observation::a).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.observations.iter().map(Observation::y).collect()
    }

    /// Row-major `n x d` covariate matrix.
    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.observations
            .iter()
            .map(|o| o.covariates.clone())
            .collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Keeps rows for which `keep` returns true (user eligibility filters).
    pub fn filter_rows<F>(&self, mut keep: F) -> Dataset
    where
        F: FnMut(usize, &Observation) -> bool,
    {
        let mut observations = Vec::new();
        let mut missing = Vec::new();
        for (i, obs) in self.observations.iter().enumerate() {
            if keep(i, obs) {
                observations.push(obs.clone());
                missing.push(self.missing[i]);
            }
        }
        Dataset {
            covariate_names: self.covariate_names.clone(),
            observations,
            missing,
        }
    }

    /// Rows at the given indices, in the given order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            covariate_names: self.covariate_names.clone(),
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
            missing: indices.iter().map(|&i| self.missing[i]).collect(),
        }
    }

    /// Projects onto a subset of covariate columns by name.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                covariates: idx.iter().map(|&j| o.covariates[j]).collect(),
                exposure: o.exposure,
                outcome: o.outcome,
            })
            .collect();
        Ok(Dataset {
            covariate_names: idx.iter().map(|&j| self.covariate_names[j].clone()).collect(),
            observations,
            missing: self.missing.clone(),
        })
    }

    /// Opt-in centering and scaling of every covariate column.
    ///
    /// Returns the transformed dataset together with the column means and
    /// standard deviations used. Constant columns are centered only.
    pub fn standardized(&self) -> Result<(Dataset, Vec<f64>, Vec<f64>)> {
        self.ensure_ready()?;
        let n = self.len() as f64;
        let d = self.dim();
        let mut means = vec![0.0; d];
        for o in &self.observations {
            for (m, v) in means.iter_mut().zip(&o.covariates) {
                *m += v / n;
            }
        }
        let mut sds = vec![0.0; d];
        for o in &self.observations {
            for j in 0..d {
                sds[j] += (o.covariates[j] - means[j]).powi(2) / n;
            }
        }
        for s in &mut sds {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                covariates: (0..d).map(|j| (o.covariates[j] - means[j]) / sds[j]).collect(),
                exposure: o.exposure,
                outcome: o.outcome,
            })
            .collect();
        let ds = Dataset {
            covariate_names: self.covariate_names.clone(),
            observations,
            missing: self.missing.clone(),
        };
        Ok((ds, means, sds))
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_MARKERS.contains(&t)
}

fn parse_binary(cell: &str, row: usize, col: &str) -> Result<Option<u8>> {
    if is_missing(cell) {
        return Ok(None);
    }
    match cell.trim() {
        "0" | "0.0" => Ok(Some(0)),
        "1" | "1.0" => Ok(Some(1)),
        other => Err(Error::Parse {
            row,
            message: format!("column `{col}` must be 0 or 1, found `{other}`"),
        }),
    }
}

/// Reads a comma-delimited CSV with a header row.
///
/// Row indices in errors are 1-based data rows (the header is not counted).
pub fn read_csv<R: Read>(
    reader: R,
    outcome_col: &str,
    exposure_col: &str,
    covariate_cols: &[String],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_idx = find(outcome_col)?;
    let a_idx = find(exposure_col)?;
    let x_idx = covariate_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    let mut missing = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let cell = |j: usize| record.get(j).unwrap_or("");
        let y = parse_binary(cell(y_idx), row, outcome_col)?;
        let a = parse_binary(cell(a_idx), row, exposure_col)?;
        let mut row_missing = y.is_none() || a.is_none();
        let mut covariates = Vec::with_capacity(x_idx.len());
        for (&j, name) in x_idx.iter().zip(covariate_cols) {
            let raw = cell(j);
            if is_missing(raw) {
                row_missing = true;
                covariates.push(f64::NAN);
                continue;
            }
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("column `{name}` is not numeric: `{raw}`"),
            })?;
            if !v.is_finite() {
                row_missing = true;
            }
            covariates.push(v);
        }
        observations.push(Observation {
            covariates,
            exposure: a.unwrap_or(0),
            outcome: y.unwrap_or(0),
        });
        missing.push(row_missing);
    }
    Dataset::with_missing(covariate_cols.to_vec(), observations, missing)
}

pub fn load_csv<P: AsRef<Path>>(
    path: P,
    outcome_col: &str,
    exposure_col: &str,
    covariate_cols: &[String],
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, outcome_col, exposure_col, covariate_cols)
}

/// Writes `outcome,exposure,<covariates...>` with `NA` for missing cells.
///
/// Floats use the shortest representation that parses back to the same
/// value, so `read_csv(write_csv(ds))` reproduces a complete `ds` exactly.
/// Missing outcome or exposure cells are not recoverable once loaded.
pub fn write_csv<W: Write>(
    ds: &Dataset,
    writer: W,
    outcome_col: &str,
    exposure_col: &str,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let mut header = vec![outcome_col.to_string(), exposure_col.to_string()];
    header.extend(ds.covariate_names.iter().cloned());
    wtr.write_record(&header)?;
    for obs in &ds.observations {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(obs.outcome.to_string());
        rec.push(obs.exposure.to_string());
        for v in &obs.covariates {
            if v.is_finite() {
                rec.push(format!("{v}"));
            } else {
                rec.push("NA".to_string());
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv<P: AsRef<Path>>(
    ds: &Dataset,
    path: P,
    outcome_col: &str,
    exposure_col: &str,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(ds, std::io::BufWriter::new(file), outcome_col, exposure_col)
}

/// Drops every row flagged as missing. Returns the filtered dataset and the
/// number of rows removed.
pub fn complete_case_filter(ds: &Dataset) -> Result<(Dataset, usize)> {
    let filtered = ds.filter_rows(|i, _| !ds.missing[i]);
    let removed = ds.len() - filtered.len();
    if filtered.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {} rows contain missing values",
            ds.len()
        )));
    }
    Ok((filtered, removed))
}

/// Exposure-arm and (exposure, outcome) cell counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub n_treated: usize,
    pub n_control: usize,
    /// `cells[a][y]` counts units with exposure `a` and outcome `y`.
    pub cells: [[usize; 2]; 2],
    pub empty_arm: bool,
}

impl PositivityReport {
    pub fn total(&self) -> usize {
        self.n_treated + self.n_control
    }

    pub fn require_both_arms(&self) -> Result<()> {
        if self.empty_arm {
            return Err(Error::Positivity(format!(
                "treated={}, control={}",
                self.n_treated, self.n_control
            )));
        }
        Ok(())
    }
}

pub fn validate_positivity(ds: &Dataset) -> PositivityReport {
    let mut cells = [[0usize; 2]; 2];
    for o in ds.observations() {
        cells[o.exposure as usize][o.outcome as usize] += 1;
    }
    let n_control = cells[0][0] + cells[0][1];
    let n_treated = cells[1][0] + cells[1][1];
    PositivityReport {
        n_treated,
        n_control,
        cells,
        empty_arm: n_treated == 0 || n_control == 0,
    }
}
