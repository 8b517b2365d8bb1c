//! Observed-sample container and its CSV schema.
//!
//! Columns are role-tagged by header prefix: one `y`, one `a`, then
//! `z_0..z_{p-1}`, `w_0..w_{q-1}`, `x_0..x_{r-1}` (r may be zero).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed sample: outcome, treatment, proxies and covariates per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

/// Column-role layout of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSchema {
    pub dim_z: usize,
    pub dim_w: usize,
    pub dim_x: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn schema(&self) -> DataSchema {
        DataSchema {
            dim_z: self.z.first().map_or(0, Vec::len),
            dim_w: self.w.first().map_or(0, Vec::len),
            dim_x: self.x.first().map_or(0, Vec::len),
        }
    }

    /// Rows `(a_i, w_i, x_i)` as flat vectors, the outcome-bridge domain.
    pub fn rows_awx(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let mut r = Vec::with_capacity(1 + self.w[i].len() + self.x[i].len());
                r.push(self.a[i]);
                r.extend_from_slice(&self.w[i]);
                r.extend_from_slice(&self.x[i]);
                r
            })
            .collect()
    }

    /// Rows `(a_i, z_i, x_i)` as flat vectors, the treatment-bridge domain.
    pub fn rows_azx(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let mut r = Vec::with_capacity(1 + self.z[i].len() + self.x[i].len());
                r.push(self.a[i]);
                r.extend_from_slice(&self.z[i]);
                r.extend_from_slice(&self.x[i]);
                r
            })
            .collect()
    }

    /// Rows `(w_i, x_i)` as flat vectors.
    pub fn rows_wx(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let mut r = Vec::with_capacity(self.w[i].len() + self.x[i].len());
                r.extend_from_slice(&self.w[i]);
                r.extend_from_slice(&self.x[i]);
                r
            })
            .collect()
    }

    fn check_rectangular(&self) -> Result<()> {
        let n = self.n();
        let s = self.schema();
        if self.a.len() != n
            || self.z.len() != n
            || self.w.len() != n
            || self.x.len() != n
            || self.z.iter().any(|r| r.len() != s.dim_z)
            || self.w.iter().any(|r| r.len() != s.dim_w)
            || self.x.iter().any(|r| r.len() != s.dim_x)
        {
            return Err(Error::Config("ragged dataset columns".into()));
        }
        Ok(())
    }
}

fn header(schema: &DataSchema) -> Vec<String> {
    let mut h = vec!["y".to_string(), "a".to_string()];
    h.extend((0..schema.dim_z).map(|j| format!("z_{j}")));
    h.extend((0..schema.dim_w).map(|j| format!("w_{j}")));
    h.extend((0..schema.dim_x).map(|j| format!("x_{j}")));
    h
}

/// Formats a value with the fixed precision used for byte-reproducible output.
pub fn format_value(v: f64, precision: usize) -> String {
    format!("{v:.precision$e}")
}

/// Writes a dataset with locale-independent fixed-precision numbers.
pub fn save_csv(data: &Dataset, path: &Path, precision: usize) -> Result<()> {
    data.check_rectangular()?;
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(header(&data.schema()))?;
    for i in 0..data.n() {
        let mut rec = vec![format_value(data.y[i], precision), format_value(data.a[i], precision)];
        rec.extend(data.z[i].iter().map(|&v| format_value(v, precision)));
        rec.extend(data.w[i].iter().map(|&v| format_value(v, precision)));
        rec.extend(data.x[i].iter().map(|&v| format_value(v, precision)));
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Loads a dataset, assigning roles by header prefix. An explicit mapping of
/// original header names to role names (`y`, `a`, `z_0`, ...) covers real
/// datasets whose columns are not prefix-tagged.
pub fn load_csv(path: &Path, mapping: Option<&[(String, String)]>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let raw_header: Vec<String> =
        rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if raw_header.is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    let roles: Vec<String> = match mapping {
        None => raw_header.clone(),
        Some(map) => raw_header
            .iter()
            .map(|h| {
                map.iter()
                    .find(|(orig, _)| orig == h)
                    .map(|(_, role)| role.clone())
                    .unwrap_or_else(|| h.clone())
            })
            .collect(),
    };

    let find_one = |role: &str| -> Result<usize> {
        roles
            .iter()
            .position(|r| r == role)
            .ok_or_else(|| Error::MissingColumnRole(role.to_string()))
    };
    let y_col = find_one("y")?;
    let a_col = find_one("a")?;
    let indexed = |prefix: &str| -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = roles
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()).map(|j| (j, i))
            })
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let z_cols = indexed("z_");
    let w_cols = indexed("w_");
    let x_cols = indexed("x_");

    let mut data = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |col: usize| -> Result<f64> {
            let s = record.get(col).unwrap_or("").trim();
            let v: f64 = s.parse().map_err(|_| Error::NonNumericCell {
                row: row_idx,
                col: raw_header[col].clone(),
                value: s.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumericCell {
                    row: row_idx,
                    col: raw_header[col].clone(),
                    value: s.to_string(),
                });
            }
            Ok(v)
        };
        data.y.push(cell(y_col)?);
        data.a.push(cell(a_col)?);
        data.z.push(z_cols.iter().map(|&c| cell(c)).collect::<Result<_>>()?);
        data.w.push(w_cols.iter().map(|&c| cell(c)).collect::<Result<_>>()?);
        data.x.push(x_cols.iter().map(|&c| cell(c)).collect::<Result<_>>()?);
    }
    if data.n() == 0 {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok(data)
}
