//! Tree-based binary classifiers built from scratch: a single decision
//! tree, a bagged random forest, gradient boosting with Newton leaf steps,
//! and second-order boosting with l1/l2/complexity regularization.
//!
//! All four families share the exact greedy tree builder in [`tree`],
//! train deterministically from an explicit seed, and serialize to a
//! single self-describing JSON document.

mod boost;
mod forest;
mod tree;

pub use boost::{fit_gboost, fit_reg2boost};
pub use forest::{fit_forest, fit_tree};
pub use tree::{DecisionTree, MaxFeatures, TreeNode};

use crate::error::{Error, Result};
use crate::preprocess::NumericMatrix;
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dtree,
    Rforest,
    Gboost,
    Reg2boost,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dtree => "dtree",
            Family::Rforest => "rforest",
            Family::Gboost => "gboost",
            Family::Reg2boost => "reg2boost",
        }
    }

    pub const ALL: [Family; 4] = [Family::Dtree, Family::Rforest, Family::Gboost, Family::Reg2boost];
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dtree" => Ok(Family::Dtree),
            "rforest" => Ok(Family::Rforest),
            "gboost" => Ok(Family::Gboost),
            "reg2boost" => Ok(Family::Reg2boost),
            other => Err(format!(
                "unknown model family `{other}` (expected dtree, rforest, gboost, or reg2boost)"
            )),
        }
    }
}

/// Only logistic loss is supported; the field exists so model files state
/// it explicitly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    #[default]
    None,
    Balanced,
}

impl std::str::FromStr for ClassWeight {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ClassWeight::None),
            "balanced" => Ok(ClassWeight::Balanced),
            other => Err(format!("unknown class_weight `{other}` (expected `none` or `balanced`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtreeParams {
    pub max_depth: u32,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for DtreeParams {
    fn default() -> Self {
        DtreeParams {
            max_depth: 5,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RforestParams {
    pub n_estimators: usize,
    pub max_depth: u32,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub class_weight: ClassWeight,
}

impl Default for RforestParams {
    fn default() -> Self {
        RforestParams {
            n_estimators: 100,
            max_depth: 8,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            class_weight: ClassWeight::Balanced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GboostParams {
    pub learning_rate: f64,
    pub max_depth: u32,
    pub n_estimators: usize,
    pub subsample: f64,
    pub loss: Loss,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for GboostParams {
    fn default() -> Self {
        GboostParams {
            learning_rate: 0.1,
            max_depth: 3,
            n_estimators: 100,
            subsample: 1.0,
            loss: Loss::Logistic,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reg2boostParams {
    pub learning_rate: f64,
    pub max_depth: u32,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub gamma: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    /// Optional positive-class gradient/hessian multiplier; `None` means 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_weight: Option<f64>,
}

impl Default for Reg2boostParams {
    fn default() -> Self {
        Reg2boostParams {
            learning_rate: 0.1,
            max_depth: 3,
            n_estimators: 100,
            subsample: 1.0,
            colsample_bytree: 1.0,
            gamma: 0.0,
            reg_alpha: 0.0,
            reg_lambda: 1.0,
            pos_weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperParams {
    Dtree(DtreeParams),
    Rforest(RforestParams),
    Gboost(GboostParams),
    Reg2boost(Reg2boostParams),
}

impl HyperParams {
    pub fn family(&self) -> Family {
        match self {
            HyperParams::Dtree(_) => Family::Dtree,
            HyperParams::Rforest(_) => Family::Rforest,
            HyperParams::Gboost(_) => Family::Gboost,
            HyperParams::Reg2boost(_) => Family::Reg2boost,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Dtree => HyperParams::Dtree(DtreeParams::default()),
            Family::Rforest => HyperParams::Rforest(RforestParams::default()),
            Family::Gboost => HyperParams::Gboost(GboostParams::default()),
            Family::Reg2boost => HyperParams::Reg2boost(Reg2boostParams::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        }
        fn growth(max_depth: u32, min_samples_split: usize) -> Result<()> {
            check(max_depth >= 1, "max_depth must be at least 1")?;
            check(min_samples_split >= 2, "min_samples_split must be at least 2")
        }
        fn rate(lr: f64) -> Result<()> {
            check(lr.is_finite() && lr > 0.0, "learning_rate must be positive and finite")
        }
        fn fraction(v: f64, name: &str) -> Result<()> {
            check(
                v.is_finite() && v > 0.0 && v <= 1.0,
                &format!("{name} must lie in (0, 1]"),
            )
        }
        fn non_negative(v: f64, name: &str) -> Result<()> {
            check(v.is_finite() && v >= 0.0, &format!("{name} must be non-negative"))
        }
        match self {
            HyperParams::Dtree(p) => growth(p.max_depth, p.min_samples_split),
            HyperParams::Rforest(p) => {
                check(p.n_estimators >= 1, "n_estimators must be at least 1")?;
                growth(p.max_depth, p.min_samples_split)
            }
            HyperParams::Gboost(p) => {
                rate(p.learning_rate)?;
                check(p.n_estimators >= 1, "n_estimators must be at least 1")?;
                growth(p.max_depth, p.min_samples_split)?;
                fraction(p.subsample, "subsample")
            }
            HyperParams::Reg2boost(p) => {
                rate(p.learning_rate)?;
                check(p.n_estimators >= 1, "n_estimators must be at least 1")?;
                growth(p.max_depth, 2)?;
                fraction(p.subsample, "subsample")?;
                fraction(p.colsample_bytree, "colsample_bytree")?;
                non_negative(p.gamma, "gamma")?;
                non_negative(p.reg_alpha, "reg_alpha")?;
                non_negative(p.reg_lambda, "reg_lambda")?;
                if let Some(w) = p.pos_weight {
                    check(w.is_finite() && w > 0.0, "pos_weight must be positive and finite")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format_version: u32,
    pub family: Family,
    pub params: HyperParams,
    /// Log-odds offset; 0 for tree families.
    pub base_score: f64,
    /// Stage shrinkage; 1 for tree families.
    pub learning_rate: f64,
    /// Resolved per-class sample weights (class 0, class 1), forest only.
    pub class_weight: Option<(f64, f64)>,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
}

impl EnsembleModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability; infinite at the endpoints.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logistic loss of one sample at raw score `f`, computed without
/// overflow for large |f|.
pub fn logistic_loss(y: u8, f: f64) -> f64 {
    f.max(0.0) - f * f64::from(y) + (-f.abs()).exp().ln_1p()
}

/// Analytic (gradient, hessian) of the logistic loss w.r.t. the raw score.
pub fn logistic_grad_hess(y: u8, f: f64) -> (f64, f64) {
    let p = sigmoid(f);
    (p - f64::from(y), p * (1.0 - p))
}

/// Training prevalence as clamped log-odds; the boosting starting point.
pub(crate) fn base_score_from_labels(y: &[u8]) -> f64 {
    let prevalence = y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64;
    logit(prevalence).clamp(-15.0, 15.0)
}

pub(crate) fn validate_training_inputs(x: &NumericMatrix, y: &[u8]) -> Result<()> {
    if x.n_rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch(format!(
            "feature matrix has {} rows but labels have {}",
            x.n_rows(),
            y.len()
        )));
    }
    for (r, row) in x.rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Experiment(format!(
                    "feature matrix contains a non-finite value at row {r}, column `{}`",
                    x.columns[c]
                )));
            }
        }
    }
    if let Some(bad) = y.iter().position(|&v| v > 1) {
        return Err(Error::Experiment(format!(
            "labels must be 0 or 1, found {} at row {bad}",
            y[bad]
        )));
    }
    Ok(())
}

/// Row-major matrix transposed to per-feature columns for the split scan.
pub(crate) fn to_columns(x: &NumericMatrix) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(x.n_rows()); x.n_cols()];
    for row in &x.rows {
        for (c, &v) in row.iter().enumerate() {
            cols[c].push(v);
        }
    }
    cols
}

/// Fit a model of the family selected by `params`.
pub fn fit(x: &NumericMatrix, y: &[u8], params: &HyperParams, seed: u64) -> Result<EnsembleModel> {
    match params {
        HyperParams::Dtree(p) => {
            params.validate()?;
            validate_training_inputs(x, y)?;
            let tree = fit_tree(x, y, None, p, seed)?;
            Ok(EnsembleModel {
                format_version: MODEL_FORMAT_VERSION,
                family: Family::Dtree,
                params: params.clone(),
                base_score: 0.0,
                learning_rate: 1.0,
                class_weight: None,
                feature_names: x.columns.clone(),
                seed,
                trees: vec![tree],
            })
        }
        HyperParams::Rforest(p) => fit_forest(x, y, p, seed),
        HyperParams::Gboost(p) => fit_gboost(x, y, p, seed),
        HyperParams::Reg2boost(p) => fit_reg2boost(x, y, p, seed),
    }
}

fn check_columns(model: &EnsembleModel, x: &NumericMatrix) -> Result<()> {
    if model.feature_names != x.columns {
        return Err(Error::ColumnMismatch {
            expected: model.feature_names.join(","),
            got: x.columns.join(","),
        });
    }
    Ok(())
}

/// Raw additive score per row: base_score + learning_rate * sum of trees.
pub(crate) fn raw_scores(model: &EnsembleModel, rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|row| {
            let total: f64 = model.trees.iter().map(|t| t.predict_row(row)).sum();
            model.base_score + model.learning_rate * total
        })
        .collect()
}

/// Positive-class probability per row.
pub fn predict_proba(model: &EnsembleModel, x: &NumericMatrix) -> Result<Vec<f64>> {
    check_columns(model, x)?;
    let scores = match model.family {
        Family::Dtree | Family::Rforest => {
            let k = model.trees.len().max(1) as f64;
            x.rows
                .iter()
                .map(|row| model.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
                .collect()
        }
        Family::Gboost | Family::Reg2boost => {
            raw_scores(model, &x.rows).into_iter().map(sigmoid).collect::<Vec<f64>>()
        }
    };
    debug_assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStartParams {
    pub n_additional_estimators: usize,
    /// Override for the continuation stages; `None` keeps the model's rate.
    pub learning_rate: Option<f64>,
}

/// Continue a boosting model on new data: existing trees and base_score
/// stay frozen, `n_additional_estimators` new trees fit the new residuals.
pub fn warm_start(
    model: &EnsembleModel,
    x: &NumericMatrix,
    y: &[u8],
    extra: &WarmStartParams,
) -> Result<EnsembleModel> {
    match model.family {
        Family::Gboost | Family::Reg2boost => boost::warm_extend(model, x, y, extra),
        family => Err(Error::UnsupportedWarmStart(family.as_str().to_string())),
    }
}

/// Total split gain per feature, normalized to sum to 1; all zeros when
/// the model never split.
pub fn importance(model: &EnsembleModel) -> Vec<(String, f64)> {
    let mut acc = vec![0.0f64; model.feature_names.len()];
    for tree in &model.trees {
        for node in &tree.nodes {
            if !node.is_leaf {
                acc[node.feature_index] += node.gain;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        for v in &mut acc {
            *v /= total;
        }
    }
    model.feature_names.iter().cloned().zip(acc).collect()
}

/// Serialize a model as pretty JSON; floats keep round-trip precision.
pub fn save_model<W: std::io::Write>(model: &EnsembleModel, sink: W) -> Result<()> {
    serde_json::to_writer_pretty(sink, model)
        .map_err(|e| Error::ModelFormat(format!("failed to serialize model: {e}")))
}

pub fn save_model_to_path(model: &EnsembleModel, path: &std::path::Path) -> Result<()> {
    let name = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&name, e))?;
    let mut writer = std::io::BufWriter::new(file);
    save_model(model, &mut writer)?;
    use std::io::Write;
    writer.flush().map_err(|e| Error::io(&name, e))
}

pub fn load_model<R: std::io::Read>(source: R) -> Result<EnsembleModel> {
    let value: serde_json::Value = serde_json::from_reader(source)
        .map_err(|e| Error::ModelFormat(format!("unreadable model file: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::ModelFormat("model file lacks a format_version field".to_string()))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let model: EnsembleModel = serde_json::from_value(value)
        .map_err(|e| Error::ModelFormat(format!("malformed model file: {e}")))?;
    if model.family != model.params.family() {
        return Err(Error::ModelFormat(format!(
            "family tag `{}` does not match the params block (`{}`)",
            model.family,
            model.params.family()
        )));
    }
    if model.feature_names.is_empty() {
        return Err(Error::ModelFormat("model has an empty feature_names list".to_string()));
    }
    for (t, tree) in model.trees.iter().enumerate() {
        for (i, node) in tree.nodes.iter().enumerate() {
            if !node.leaf_value.is_finite() || node.gain < 0.0 {
                return Err(Error::ModelFormat(format!("tree {t} node {i} holds invalid values")));
            }
            if !node.is_leaf
                && (node.left >= tree.nodes.len()
                    || node.right >= tree.nodes.len()
                    || node.feature_index >= model.feature_names.len())
            {
                return Err(Error::ModelFormat(format!("tree {t} node {i} points out of range")));
            }
        }
    }
    Ok(model)
}

pub fn load_model_from_path(path: &std::path::Path) -> Result<EnsembleModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_model(std::io::BufReader::new(file))
}
