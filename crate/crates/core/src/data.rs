//! Dataset representation, CSV ingestion, splitting and synthetic data.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlpError, Result};
use crate::rng;

/// Dense row-major `rows x cols` matrix of finite covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!(
                "feature matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(LlpError::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    /// New matrix holding the given rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(invalid(format!("row index {i} out of range {}", self.rows)));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, values)
    }

    /// Per-column z-scoring. Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let n = self.rows as f64;
        let mut mean = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        let values = self
            .iter_rows()
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), s)| (v - m) * s)
                    .collect::<Vec<_>>()
            })
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }
}

/// Features plus optional ground-truth labels.
///
/// Labels are only consumed for evaluation and for counting positives while
/// forming bags; the learner never sees them at instance level.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(y) = &labels {
            if y.len() != features.rows() {
                return Err(LlpError::DimensionMismatch {
                    expected: features.rows(),
                    got: y.len(),
                });
            }
            if let Some(bad) = y.iter().find(|&&v| v > 1) {
                return Err(invalid(format!("label value {bad} is not binary")));
            }
        }
        let feature_names = (0..features.cols()).map(|j| format!("f{j}")).collect();
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| invalid("dataset has no labels"))
    }
}

/// Reads a numeric CSV with a header row. Every column except `label_column`
/// becomes a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| LlpError::io(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: Option<&str>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let label_pos = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| invalid(format!("label column '{name}' not in header")))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_pos)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(invalid("no feature columns"));
    }

    let mut values = Vec::new();
    let mut labels = label_pos.map(|_| Vec::new());
    let mut rows = 0usize;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row, header excluded
        let row_no = r + 1;
        if record.len() != header.len() {
            return Err(LlpError::Parse {
                row: row_no,
                column: "*".into(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if Some(j) == label_pos {
                let v = match field {
                    "0" | "0.0" => 0u8,
                    "1" | "1.0" => 1u8,
                    other => {
                        return Err(LlpError::Parse {
                            row: row_no,
                            column: header[j].clone(),
                            message: format!("label '{other}' is not 0 or 1"),
                        })
                    }
                };
                labels.as_mut().expect("label vector").push(v);
            } else {
                let v: f64 = field.parse().map_err(|_| LlpError::Parse {
                    row: row_no,
                    column: header[j].clone(),
                    message: format!("'{field}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(LlpError::Parse {
                        row: row_no,
                        column: header[j].clone(),
                        message: "non-finite value".into(),
                    });
                }
                values.push(v);
            }
        }
        rows += 1;
    }
    let features = FeatureMatrix::new(rows, feature_names.len(), values)?;
    let mut ds = LabeledDataset::new(features, labels)?;
    ds.feature_names = feature_names;
    Ok(ds)
}

/// Writes features (and labels under column `y`, when present). Values use
/// Rust's shortest round-trip float formatting, so reloading is exact.
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| LlpError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = ds.feature_names.clone();
    if ds.labels.is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(y) = &ds.labels {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LlpError::io(path, e))?;
    Ok(())
}

/// Two isotropic unit Gaussians: label 0 centred at the origin, label 1 at
/// `(separation, 0, ..., 0)`. Half the points (rounded down) are positive.
pub fn make_synthetic(m: usize, d: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    if m < 2 || d < 1 {
        return Err(invalid(format!("need m >= 2 and d >= 1, got m={m}, d={d}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(invalid(format!(
            "separation must be >= 0, got {separation}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let positives = m / 2;
    let mut labels: Vec<u8> = (0..m).map(|i| u8::from(i < positives)).collect();
    labels.shuffle(&mut rng);
    let mut values = Vec::with_capacity(m * d);
    for &y in &labels {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shift = if j == 0 && y == 1 { separation } else { 0.0 };
            values.push(z + shift);
        }
    }
    LabeledDataset::new(FeatureMatrix::new(m, d, values)?, Some(labels))
}

/// Disjoint train / validation / test index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    /// Checks pairwise disjointness and range.
    pub fn validate(&self, m: usize) -> Result<()> {
        let mut seen = vec![false; m];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= m {
                return Err(invalid(format!("split index {i} out of range {m}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(invalid(format!("split index {i} appears twice")));
            }
        }
        Ok(())
    }
}

/// Random partition of `0..m` into train / validation / test.
///
/// Train and validation sizes are `round(fraction * m)`; test takes the rest.
pub fn split(m: usize, fractions: (f64, f64, f64), seed: u64) -> Result<DataSplit> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) {
        return Err(invalid(format!(
            "split fractions must be positive, got ({ft}, {fv}, {fs})"
        )));
    }
    if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let n_train = ((ft * m as f64).round() as usize).min(m);
    let n_val = ((fv * m as f64).round() as usize).min(m - n_train);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::seeded(seed));
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(DataSplit {
        train: order,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "f1,f2,y\n0.5,1.0,1\n-2,3e-1,0\n4,5,1\n";

    #[test]
    fn parses_with_label_column() {
        let ds = read_csv(SMALL.as_bytes(), Some("y")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.features.cols(), 2);
        assert_eq!(ds.labels.as_deref(), Some(&[1u8, 0, 1][..]));
        assert_eq!(ds.features.row(1), &[-2.0, 0.3]);
    }

    #[test]
    fn parses_without_label_column() {
        let ds = read_csv(SMALL.as_bytes(), None).unwrap();
        assert!(ds.labels.is_none());
        assert_eq!(ds.features.cols(), 3);
    }

    #[test]
    fn bad_entry_names_row_and_column() {
        let err = read_csv("f1,f2\n1,2\n3,abc\n".as_bytes(), None).unwrap_err();
        match err {
            LlpError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "f2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_label_rejected() {
        let err = read_csv("f1,y\n1,2\n".as_bytes(), Some("y")).unwrap_err();
        assert!(matches!(err, LlpError::Parse { ref column, .. } if column == "y"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = read_csv("f1,f2\n1,2\n3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, LlpError::Parse { row: 2, .. }));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic(50, 3, 2.0, 9).unwrap();
        let b = make_synthetic(50, 3, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let y = a.labels().unwrap();
        assert_eq!(y.iter().filter(|&&v| v == 1).count(), 25);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(10, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        s.validate(10).unwrap();
        assert_eq!(s, split(10, (0.8, 0.1, 0.1), 3).unwrap());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(split(10, (0.7, 0.1, 0.1), 0).is_err());
        assert!(split(10, (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn standardize_zero_mean_unit_var() {
        let fm =
            FeatureMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let s = fm.standardized();
        let col0: Vec<f64> = s.iter_rows().map(|r| r[0]).collect();
        let mean: f64 = col0.iter().sum::<f64>() / 3.0;
        let var: f64 = col0.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert!(s.iter_rows().all(|r| r[1] == 0.0));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }
}
