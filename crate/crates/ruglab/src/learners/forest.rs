//! Single classification tree and bagged forest fitting.

use super::tree::{DecisionTree, TreeBuilder, TreeGrowth, Objective};
use super::{
    to_columns, validate_training_inputs, ClassWeight, DtreeParams, EnsembleModel, Family,
    HyperParams, RforestParams, MODEL_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::preprocess::NumericMatrix;
use crate::seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const FOREST_NS: u64 = 1;

/// Weighted-Gini CART tree. `sample_weights` defaults to uniform.
pub fn fit_tree(
    x: &NumericMatrix,
    y: &[u8],
    sample_weights: Option<&[f64]>,
    params: &DtreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    HyperParams::Dtree(*params).validate()?;
    validate_training_inputs(x, y)?;
    let n = x.n_rows();
    if let Some(w) = sample_weights {
        if w.len() != n {
            return Err(Error::LengthMismatch(format!(
                "feature matrix has {n} rows but sample weights have {}",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Experiment(
                "sample weights must be positive and finite".to_string(),
            ));
        }
    }
    let uniform;
    let weights = match sample_weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0; n];
            &uniform
        }
    };
    let cols = to_columns(x);
    let allowed: Vec<usize> = (0..x.n_cols()).collect();
    let samples: Vec<usize> = (0..n).collect();
    let growth = TreeGrowth {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        max_features: params.max_features,
    };
    let objective = Objective::Gini { labels: y, weights };
    Ok(TreeBuilder::new(&cols, &allowed, growth, objective, seed).fit(&samples))
}

/// Per-class sample weights for the `balanced` option: n / (2 * count_c).
/// A class absent from the data keeps weight 1; nothing ever uses it.
fn balanced_weights(y: &[u8]) -> (f64, f64) {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = n - pos;
    let weight = |count: f64| if count > 0.0 { n / (2.0 * count) } else { 1.0 };
    (weight(neg), weight(pos))
}

/// Bagged forest: each tree trains on an n-sized bootstrap resample, with
/// per-split feature subsampling; the prediction is the mean of leaf
/// probabilities.
pub fn fit_forest(x: &NumericMatrix, y: &[u8], params: &RforestParams, seed: u64) -> Result<EnsembleModel> {
    let hp = HyperParams::Rforest(*params);
    hp.validate()?;
    validate_training_inputs(x, y)?;
    let n = x.n_rows();
    let class_weight = match params.class_weight {
        ClassWeight::None => (1.0, 1.0),
        ClassWeight::Balanced => balanced_weights(y),
    };
    let weights: Vec<f64> = y
        .iter()
        .map(|&l| if l == 1 { class_weight.1 } else { class_weight.0 })
        .collect();

    let cols = to_columns(x);
    let allowed: Vec<usize> = (0..x.n_cols()).collect();
    let growth = TreeGrowth {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        max_features: params.max_features,
    };

    let trees: Vec<DecisionTree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut boot_rng =
                ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[FOREST_NS, i as u64, 0]));
            let samples: Vec<usize> = (0..n).map(|_| boot_rng.gen_range(0..n)).collect();
            let split_seed = seeds::derive(seed, &[FOREST_NS, i as u64, 1]);
            let objective = Objective::Gini {
                labels: y,
                weights: &weights,
            };
            TreeBuilder::new(&cols, &allowed, growth, objective, split_seed).fit(&samples)
        })
        .collect();

    Ok(EnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        family: Family::Rforest,
        params: hp,
        base_score: 0.0,
        learning_rate: 1.0,
        class_weight: Some(class_weight),
        feature_names: x.columns.clone(),
        seed,
        trees,
    })
}
