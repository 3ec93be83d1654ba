//! Missing-value imputation and optional standardization.
//!
//! A [`Preprocessor`] is fitted on training rows only and then applied to
//! any rows with the same columns, so statistics never leak out of the
//! training side of a split. Scaling is chosen independently for ordinary
//! numeric columns and timestamp columns (names ending in `_ts`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense feature matrix with named columns; what the learners consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericMatrix {
    pub columns: Vec<String>,
    /// Row-major; every row has `columns.len()` finite values.
    pub rows: Vec<Vec<f64>>,
}

impl NumericMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    None,
    Zscore,
}

impl std::str::FromStr for ScalingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ScalingMode::None),
            "zscore" => Ok(ScalingMode::Zscore),
            other => Err(format!("unknown scaling mode `{other}` (expected `none` or `zscore`)")),
        }
    }
}

/// Per-group scaling choice: one mode for numeric columns, one for
/// timestamp columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingModes {
    pub numeric: ScalingMode,
    pub timestamps: ScalingMode,
}

impl ScalingModes {
    pub const NONE: ScalingModes = ScalingModes {
        numeric: ScalingMode::None,
        timestamps: ScalingMode::None,
    };

    pub const ZSCORE: ScalingModes = ScalingModes {
        numeric: ScalingMode::Zscore,
        timestamps: ScalingMode::Zscore,
    };

    pub const ALL: [ScalingModes; 4] = [
        ScalingModes { numeric: ScalingMode::None, timestamps: ScalingMode::None },
        ScalingModes { numeric: ScalingMode::None, timestamps: ScalingMode::Zscore },
        ScalingModes { numeric: ScalingMode::Zscore, timestamps: ScalingMode::None },
        ScalingModes { numeric: ScalingMode::Zscore, timestamps: ScalingMode::Zscore },
    ];
}

impl Default for ScalingModes {
    fn default() -> Self {
        ScalingModes::NONE
    }
}

pub fn is_timestamp_column(name: &str) -> bool {
    name.ends_with("_ts")
}

const PREPROCESSOR_FORMAT_VERSION: u32 = 1;

/// Fitted imputation medians and scaling statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub modes: ScalingModes,
    /// Lower median of the non-missing training values; 0 for all-missing
    /// columns.
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Zero-variance (or all-missing) columns; z-scoring maps them to 0.
    pub constant: Vec<bool>,
}

/// Lower median: for an even count the smaller of the two middle values.
fn lower_median(sorted: &[f64]) -> f64 {
    debug_assert!(!sorted.is_empty());
    sorted[(sorted.len() - 1) / 2]
}

impl Preprocessor {
    /// Computes medians, means, and stds per column from non-missing
    /// training values only.
    pub fn fit(columns: &[String], rows: &[Vec<Option<f64>>], modes: ScalingModes) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::LengthMismatch(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
        }
        let n_cols = columns.len();
        let mut medians = Vec::with_capacity(n_cols);
        let mut means = Vec::with_capacity(n_cols);
        let mut stds = Vec::with_capacity(n_cols);
        let mut constant = Vec::with_capacity(n_cols);
        for j in 0..n_cols {
            let mut vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
            if vals.is_empty() {
                medians.push(0.0);
                means.push(0.0);
                stds.push(0.0);
                constant.push(true);
                continue;
            }
            vals.sort_by(f64::total_cmp);
            medians.push(lower_median(&vals));
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            let sd = var.sqrt();
            means.push(m);
            stds.push(sd);
            constant.push(sd == 0.0);
        }
        Ok(Preprocessor {
            format_version: PREPROCESSOR_FORMAT_VERSION,
            columns: columns.to_vec(),
            modes,
            medians,
            means,
            stds,
            constant,
        })
    }

    fn mode_for(&self, column: &str) -> ScalingMode {
        if is_timestamp_column(column) {
            self.modes.timestamps
        } else {
            self.modes.numeric
        }
    }

    /// Imputes missing cells with the fitted medians, then applies the
    /// fitted scaling. Column names and order must match the fit exactly.
    pub fn transform(&self, columns: &[String], rows: &[Vec<Option<f64>>]) -> Result<NumericMatrix> {
        if columns != self.columns.as_slice() {
            return Err(Error::ColumnMismatch {
                expected: self.columns.join(","),
                got: columns.join(","),
            });
        }
        let col_modes: Vec<ScalingMode> = self.columns.iter().map(|c| self.mode_for(c)).collect();
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::LengthMismatch(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            let mut vals = Vec::with_capacity(row.len());
            for (j, cell) in row.iter().enumerate() {
                let x = cell.unwrap_or(self.medians[j]);
                let v = match col_modes[j] {
                    ScalingMode::None => x,
                    ScalingMode::Zscore => {
                        if self.constant[j] {
                            0.0
                        } else {
                            (x - self.means[j]) / self.stds[j]
                        }
                    }
                };
                vals.push(v);
            }
            out.push(vals);
        }
        Ok(NumericMatrix {
            columns: self.columns.clone(),
            rows: out,
        })
    }
}
