//! Recursive feature elimination: repeatedly refit, score a held-out
//! slice, and drop the least important surviving features.

use super::split::{stratified_split, StratifyBy};
use super::{fit_on_split, score_with, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::learners::{importance, HyperParams};
use crate::preprocess::ScalingModes;
use crate::seeds;
use serde::Serialize;

const RFE_NS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RfeStep {
    /// Features the model was fitted with at this step.
    pub n_features: usize,
    pub auc: Option<f64>,
    /// Dropped after this step's fit; empty on the final step.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RfeOutcome {
    pub kept: Vec<String>,
    /// Names in the order they were removed.
    pub elimination_order: Vec<String>,
    pub trace: Vec<RfeStep>,
}

/// Shrink the feature set down to `n_target_features`, removing at most
/// `step` features per refit. The validation AUC of every intermediate
/// model is recorded so the cost of each elimination stays visible.
pub fn rfe(
    params: &HyperParams,
    scaling: ScalingModes,
    dataset: &LabeledDataset,
    n_target_features: usize,
    step: usize,
    seed: u64,
) -> Result<RfeOutcome> {
    params.validate()?;
    dataset.validate()?;
    let total = dataset.n_cols();
    if n_target_features == 0 || n_target_features > total {
        return Err(Error::Config(format!(
            "target feature count must lie in 1..={total}, got {n_target_features}"
        )));
    }
    if step == 0 {
        return Err(Error::Config("step must be at least 1".to_string()));
    }
    if step >= total {
        return Err(Error::Experiment(format!(
            "step {step} would eliminate the whole feature set of {total} in one round"
        )));
    }

    let (train_idx, val_idx) = stratified_split(
        dataset,
        0.2,
        StratifyBy::Class,
        seeds::derive(seed, &[RFE_NS, 0]),
    )?;
    let train_full = dataset.subset(&train_idx);
    let val_full = dataset.subset(&val_idx);

    // indices into the original column order; relative order never changes
    let mut kept_idx: Vec<usize> = (0..total).collect();
    let mut elimination_order = Vec::new();
    let mut trace = Vec::new();
    let mut iter: u64 = 0;

    loop {
        let train = train_full.select_features(&kept_idx);
        let val = val_full.select_features(&kept_idx);
        let (prep, model) =
            fit_on_split(&train, scaling, params, seeds::derive(seed, &[RFE_NS, 1, iter]))?;
        let scores = score_with(&prep, &model, &val)?;
        let auc = match roc_auc(&scores, &val.labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };

        if kept_idx.len() <= n_target_features {
            trace.push(RfeStep { n_features: kept_idx.len(), auc, dropped: Vec::new() });
            let kept = kept_idx.iter().map(|&i| dataset.columns[i].clone()).collect();
            return Ok(RfeOutcome { kept, elimination_order, trace });
        }

        // rank surviving features by this fit's importance; ties broken
        // toward the lower column index so reruns drop the same names
        let ranked = importance(&model);
        let mut order: Vec<usize> = (0..kept_idx.len()).collect();
        order.sort_by(|&a, &b| ranked[a].1.total_cmp(&ranked[b].1).then(a.cmp(&b)));
        let n_drop = step.min(kept_idx.len() - n_target_features);
        let mut drop_pos: Vec<usize> = order[..n_drop].to_vec();
        drop_pos.sort_unstable();
        let dropped: Vec<String> =
            drop_pos.iter().map(|&p| dataset.columns[kept_idx[p]].clone()).collect();

        trace.push(RfeStep { n_features: kept_idx.len(), auc, dropped: dropped.clone() });
        elimination_order.extend(dropped.iter().cloned());
        for &p in drop_pos.iter().rev() {
            kept_idx.remove(p);
        }
        iter += 1;
    }
}
