//! Numeric CSV ingestion with per-feature min-max scaling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default)]
    pub has_header: bool,
    /// Zero-based column holding a non-negative integer class label.
    #[serde(default)]
    pub label_column: Option<usize>,
}

/// Per-feature minimum and maximum, fitted on a training file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureRange {
    pub fn fit(rows: &[Vec<f64>]) -> Result<FeatureRange> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Data("cannot fit feature ranges on zero rows".into()))?;
        let mut min = first.clone();
        let mut max = first.clone();
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(FeatureRange { min, max })
    }

    /// Maps into `[0, 1]`, clamping values outside the fitted range.
    /// Constant features map to 0.
    pub fn apply(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range <= 0.0 {
            0.0
        } else {
            ((v - self.min[j]) / range).clamp(0.0, 1.0)
        }
    }
}

/// Reads a numeric CSV. With `stats == None` the file is treated as the
/// training split and its own ranges are fitted and returned; otherwise the
/// supplied training ranges are applied and echoed back.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    stats: Option<&FeatureRange>,
) -> Result<(Dataset, FeatureRange)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(c) == schema.label_column {
                let l = cell.parse::<usize>().map_err(|_| {
                    Error::Data(format!("row {r}, column {c}: label {cell:?} is not a class index"))
                })?;
                labels.push(l);
                continue;
            }
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("row {r}, column {c}: non-numeric cell {cell:?}")))?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Data(format!("{}: no feature data", path.display())));
    }
    let (range, split) = match stats {
        None => (FeatureRange::fit(&rows)?, Split::Train),
        Some(s) => {
            if s.min.len() != rows[0].len() {
                return Err(Error::Data(format!(
                    "{} features, but training ranges cover {}",
                    rows[0].len(),
                    s.min.len()
                )));
            }
            (s.clone(), Split::Test)
        }
    };
    let width = rows[0].len();
    let data = rows
        .iter()
        .flat_map(|row| row.iter().enumerate().map(|(j, &v)| range.apply(j, v)))
        .collect();
    let ds = Dataset::new(
        vec![width],
        data,
        schema.label_column.map(|_| labels),
        split,
        path.display().to_string(),
    )?;
    Ok((ds, range))
}
