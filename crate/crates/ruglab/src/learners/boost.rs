//! Stagewise boosting on log-odds with logistic loss.
//!
//! `gboost` fits each stage to the negative gradient (the residual
//! y - sigma(F)) with plain squared-error splits, then takes one Newton
//! step per leaf. `reg2boost` uses second-order split gains with
//! lambda/gamma/alpha regularization and per-tree column subsampling.
//! Both update F <- F + learning_rate * tree and start from the clamped
//! log-odds of training prevalence.

use super::tree::{DecisionTree, Objective, TreeBuilder, TreeGrowth, MaxFeatures};
use super::{
    base_score_from_labels, raw_scores, sigmoid, to_columns, validate_training_inputs,
    EnsembleModel, GboostParams, HyperParams, Reg2boostParams, WarmStartParams,
    MODEL_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::preprocess::NumericMatrix;
use crate::seeds;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BOOST_NS: u64 = 2;

/// Family-specific knobs for one run of the stage loop.
struct StageSpec {
    /// Shrinkage applied in the F updates while fitting.
    learning_rate_fit: f64,
    /// Stored leaf values are raw values times this; lets a warm-start
    /// continuation use a different effective rate while the saved model
    /// keeps a single learning_rate.
    leaf_scale: f64,
    growth: TreeGrowth,
    subsample: f64,
    colsample_bytree: f64,
    lambda: f64,
    gamma: f64,
    alpha: f64,
    pos_weight: f64,
    /// gboost: split on the residual with unit curvature, Newton-step the
    /// leaves. reg2boost: hessian-weighted splits and leaves alike.
    newton_leaf_only: bool,
}

impl StageSpec {
    fn for_gboost(p: &GboostParams, lr_fit: f64, leaf_scale: f64) -> Self {
        StageSpec {
            learning_rate_fit: lr_fit,
            leaf_scale,
            growth: TreeGrowth {
                max_depth: p.max_depth,
                min_samples_split: p.min_samples_split,
                max_features: p.max_features,
            },
            subsample: p.subsample,
            colsample_bytree: 1.0,
            lambda: 0.0,
            gamma: 0.0,
            alpha: 0.0,
            pos_weight: 1.0,
            newton_leaf_only: true,
        }
    }

    fn for_reg2boost(p: &Reg2boostParams, lr_fit: f64, leaf_scale: f64) -> Self {
        StageSpec {
            learning_rate_fit: lr_fit,
            leaf_scale,
            growth: TreeGrowth {
                max_depth: p.max_depth,
                min_samples_split: 2,
                max_features: MaxFeatures::All,
            },
            subsample: p.subsample,
            colsample_bytree: p.colsample_bytree,
            lambda: p.reg_lambda,
            gamma: p.gamma,
            alpha: p.reg_alpha,
            pos_weight: p.pos_weight.unwrap_or(1.0),
            newton_leaf_only: false,
        }
    }

    fn from_params(params: &HyperParams, lr_fit: f64, leaf_scale: f64) -> Result<Self> {
        match params {
            HyperParams::Gboost(p) => Ok(StageSpec::for_gboost(p, lr_fit, leaf_scale)),
            HyperParams::Reg2boost(p) => Ok(StageSpec::for_reg2boost(p, lr_fit, leaf_scale)),
            other => Err(Error::UnsupportedWarmStart(other.family().as_str().to_string())),
        }
    }
}

fn sample_sorted(rng: &mut ChaCha8Rng, total: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..total).collect();
    }
    let k = ((fraction * total as f64).floor() as usize).clamp(1, total);
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, total, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Run `n_stages` boosting stages, mutating the raw scores `f` in place
/// and returning the stored (leaf-scaled) trees. `stage_offset` keeps
/// warm-start continuations on their own seed path.
fn run_stages(
    x: &NumericMatrix,
    cols: &[Vec<f64>],
    y: &[u8],
    f: &mut [f64],
    spec: &StageSpec,
    n_stages: usize,
    stage_offset: usize,
    master_seed: u64,
) -> Vec<DecisionTree> {
    let n = y.len();
    let d = cols.len();
    let mut trees = Vec::with_capacity(n_stages);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut leaf_grad = vec![0.0; n];
    let mut leaf_hess = vec![0.0; n];

    for stage in 0..n_stages {
        let global = (stage_offset + stage) as u64;
        for i in 0..n {
            let p = sigmoid(f[i]);
            let yv = f64::from(y[i]);
            let g = p - yv;
            let h = p * (1.0 - p);
            let w = if y[i] == 1 { spec.pos_weight } else { 1.0 };
            if spec.newton_leaf_only {
                // squared-error fit to the residual: unit curvature splits
                grad[i] = g;
                hess[i] = 1.0;
            } else {
                grad[i] = w * g;
                hess[i] = w * h;
            }
            leaf_grad[i] = w * g;
            leaf_hess[i] = w * h;
        }

        let mut row_rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(master_seed, &[BOOST_NS, global, 0]));
        let samples = sample_sorted(&mut row_rng, n, spec.subsample);
        let mut col_rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(master_seed, &[BOOST_NS, global, 1]));
        let allowed = sample_sorted(&mut col_rng, d, spec.colsample_bytree);
        let split_seed = seeds::derive(master_seed, &[BOOST_NS, global, 2]);

        let objective = Objective::GradHess {
            grad: &grad,
            hess: &hess,
            leaf_grad: &leaf_grad,
            leaf_hess: &leaf_hess,
            lambda: spec.lambda,
            gamma: spec.gamma,
            alpha: spec.alpha,
        };
        let mut tree = TreeBuilder::new(cols, &allowed, spec.growth, objective, split_seed).fit(&samples);

        for (i, row) in x.rows.iter().enumerate() {
            f[i] += spec.learning_rate_fit * tree.predict_row(row);
        }
        if spec.leaf_scale != 1.0 {
            for node in &mut tree.nodes {
                node.leaf_value *= spec.leaf_scale;
            }
        }
        trees.push(tree);
    }
    trees
}

fn fit_boosted(
    x: &NumericMatrix,
    y: &[u8],
    params: HyperParams,
    learning_rate: f64,
    n_estimators: usize,
    seed: u64,
) -> Result<EnsembleModel> {
    params.validate()?;
    validate_training_inputs(x, y)?;
    let base_score = base_score_from_labels(y);
    let single_class = y.iter().all(|&v| v == y[0]);
    let trees = if single_class {
        log::warn!(
            "training labels are all {}; boosting keeps only the clamped base score",
            y[0]
        );
        Vec::new()
    } else {
        let cols = to_columns(x);
        let spec = StageSpec::from_params(&params, learning_rate, 1.0)?;
        let mut f = vec![base_score; y.len()];
        run_stages(x, &cols, y, &mut f, &spec, n_estimators, 0, seed)
    };
    Ok(EnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        family: params.family(),
        params,
        base_score,
        learning_rate,
        class_weight: None,
        feature_names: x.columns.clone(),
        seed,
        trees,
    })
}

pub fn fit_gboost(x: &NumericMatrix, y: &[u8], params: &GboostParams, seed: u64) -> Result<EnsembleModel> {
    fit_boosted(
        x,
        y,
        HyperParams::Gboost(*params),
        params.learning_rate,
        params.n_estimators,
        seed,
    )
}

pub fn fit_reg2boost(
    x: &NumericMatrix,
    y: &[u8],
    params: &Reg2boostParams,
    seed: u64,
) -> Result<EnsembleModel> {
    fit_boosted(
        x,
        y,
        HyperParams::Reg2boost(*params),
        params.learning_rate,
        params.n_estimators,
        seed,
    )
}

/// Boosting continuation behind [`super::warm_start`]. New stages derive
/// their seeds from the model's own seed at offsets past the existing
/// trees, so a continuation never replays the base model's randomness.
pub(super) fn warm_extend(
    model: &EnsembleModel,
    x: &NumericMatrix,
    y: &[u8],
    extra: &WarmStartParams,
) -> Result<EnsembleModel> {
    if model.feature_names != x.columns {
        return Err(Error::ColumnMismatch {
            expected: model.feature_names.join(","),
            got: x.columns.join(","),
        });
    }
    validate_training_inputs(x, y)?;
    let lr_new = extra.learning_rate.unwrap_or(model.learning_rate);
    if !lr_new.is_finite() || lr_new <= 0.0 {
        return Err(Error::Config("learning_rate override must be positive and finite".to_string()));
    }
    // stored trees already include the model's rate, so the continuation
    // rescales its raw leaves to keep one learning_rate in the file
    let leaf_scale = lr_new / model.learning_rate;
    let spec = StageSpec::from_params(&model.params, lr_new, leaf_scale)?;

    let mut f = raw_scores(model, &x.rows);
    let cols = to_columns(x);
    let new_trees = run_stages(
        x,
        &cols,
        y,
        &mut f,
        &spec,
        extra.n_additional_estimators,
        model.trees.len(),
        model.seed,
    );

    let mut out = model.clone();
    out.trees.extend(new_trees);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testutil;
    use super::super::{logistic_loss, predict_proba, warm_start};
    use super::*;

    fn train_loss(model: &EnsembleModel, x: &NumericMatrix, y: &[u8]) -> f64 {
        let scores = raw_scores(model, &x.rows);
        scores
            .iter()
            .zip(y)
            .map(|(&f, &l)| logistic_loss(l, f))
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn single_class_input_keeps_only_the_base_score() {
        let x = NumericMatrix {
            columns: vec!["a".into()],
            rows: vec![vec![1.0], vec![2.0], vec![3.0]],
        };
        let model = fit_gboost(&x, &[1, 1, 1], &GboostParams::default(), 0).unwrap();
        assert!(model.trees.is_empty());
        assert_eq!(model.base_score, 15.0);
        let scores = predict_proba(&model, &x).unwrap();
        let expect = sigmoid(15.0);
        assert!(scores.iter().all(|&s| s == expect));
    }

    #[test]
    fn both_families_rank_separable_data_perfectly() {
        let (x, y) = testutil::separable(100, 5, 11);
        let g = fit_gboost(
            &x,
            &y,
            &GboostParams {
                n_estimators: 100,
                learning_rate: 0.1,
                ..GboostParams::default()
            },
            0,
        )
        .unwrap();
        assert!(testutil::perfectly_ranked(&predict_proba(&g, &x).unwrap(), &y));
        let r = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 100,
                learning_rate: 0.1,
                ..Reg2boostParams::default()
            },
            0,
        )
        .unwrap();
        assert!(testutil::perfectly_ranked(&predict_proba(&r, &x).unwrap(), &y));
    }

    /// Mean logistic loss after each stage prefix of a fitted model.
    fn loss_per_stage(model: &EnsembleModel, x: &NumericMatrix, y: &[u8]) -> Vec<f64> {
        let mean_loss = |f: &[f64]| {
            f.iter().zip(y).map(|(&s, &l)| logistic_loss(l, s)).sum::<f64>() / y.len() as f64
        };
        let mut f = vec![model.base_score; y.len()];
        let mut out = vec![mean_loss(&f)];
        for tree in &model.trees {
            for (fi, row) in f.iter_mut().zip(&x.rows) {
                *fi += model.learning_rate * tree.predict_row(row);
            }
            out.push(mean_loss(&f));
        }
        out
    }

    #[test]
    fn training_loss_never_increases_at_full_subsample() {
        let (x, y) = testutil::noisy_signal(120, 8, 0.15);
        let g = fit_gboost(
            &x,
            &y,
            &GboostParams {
                n_estimators: 40,
                subsample: 1.0,
                ..GboostParams::default()
            },
            3,
        )
        .unwrap();
        let r = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 40,
                subsample: 1.0,
                colsample_bytree: 1.0,
                ..Reg2boostParams::default()
            },
            3,
        )
        .unwrap();
        for (name, model) in [("gboost", &g), ("reg2boost", &r)] {
            let losses = loss_per_stage(model, &x, &y);
            for w in losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{name} loss rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn huge_gamma_leaves_only_the_base_score() {
        let (x, y) = testutil::noisy_signal(60, 4, 0.1);
        let model = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 5,
                gamma: 1e12,
                ..Reg2boostParams::default()
            },
            0,
        )
        .unwrap();
        assert!(model.trees.iter().all(|t| t.n_splits() == 0));
        let scores = predict_proba(&model, &x).unwrap();
        // zero-split trees still take a leaf step on the whole sample,
        // so scores are constant across rows
        assert!(scores.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn giant_lambda_pins_predictions_to_the_prior() {
        let (x, y) = testutil::noisy_signal(60, 4, 0.1);
        let model = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 10,
                reg_lambda: 1e12,
                ..Reg2boostParams::default()
            },
            0,
        )
        .unwrap();
        let prior = sigmoid(model.base_score);
        let scores = predict_proba(&model, &x).unwrap();
        assert!(scores.iter().all(|s| (s - prior).abs() < 1e-6));
    }

    #[test]
    fn families_agree_when_regularization_is_off() {
        let (x, y) = testutil::noisy_signal(200, 21, 0.2);
        let g = fit_gboost(
            &x,
            &y,
            &GboostParams {
                n_estimators: 50,
                max_depth: 3,
                ..GboostParams::default()
            },
            5,
        )
        .unwrap();
        let r = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 50,
                max_depth: 3,
                reg_lambda: 0.0,
                ..Reg2boostParams::default()
            },
            5,
        )
        .unwrap();
        let auc = |scores: &[f64]| -> f64 {
            // rank agreement proxy: pairwise concordance
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..y.len() {
                for j in 0..y.len() {
                    if y[i] == 1 && y[j] == 0 {
                        den += 1.0;
                        if scores[i] > scores[j] {
                            num += 1.0;
                        } else if scores[i] == scores[j] {
                            num += 0.5;
                        }
                    }
                }
            }
            num / den
        };
        let auc_g = auc(&predict_proba(&g, &x).unwrap());
        let auc_r = auc(&predict_proba(&r, &x).unwrap());
        assert!((auc_g - auc_r).abs() < 0.02, "gboost {auc_g} vs reg2boost {auc_r}");
    }

    #[test]
    fn warm_start_appends_exactly_the_requested_trees() {
        let (x, y) = testutil::noisy_signal(80, 4, 0.2);
        let base = fit_gboost(
            &x,
            &y,
            &GboostParams {
                n_estimators: 20,
                ..GboostParams::default()
            },
            1,
        )
        .unwrap();
        let warmed = warm_start(
            &base,
            &x,
            &y,
            &WarmStartParams {
                n_additional_estimators: 12,
                learning_rate: None,
            },
        )
        .unwrap();
        assert_eq!(warmed.trees.len(), 32);
        assert_eq!(&warmed.trees[..20], &base.trees[..]);
        assert_eq!(warmed.base_score, base.base_score);
    }

    #[test]
    fn warm_start_with_zero_additional_is_identity() {
        let (x, y) = testutil::noisy_signal(60, 9, 0.2);
        let base = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 10,
                ..Reg2boostParams::default()
            },
            2,
        )
        .unwrap();
        let warmed = warm_start(
            &base,
            &x,
            &y,
            &WarmStartParams {
                n_additional_estimators: 0,
                learning_rate: None,
            },
        )
        .unwrap();
        assert_eq!(warmed, base);
    }

    #[test]
    fn warm_start_lr_override_scales_stored_leaves() {
        let (x, y) = testutil::noisy_signal(80, 6, 0.2);
        let base = fit_gboost(
            &x,
            &y,
            &GboostParams {
                n_estimators: 5,
                learning_rate: 0.1,
                ..GboostParams::default()
            },
            4,
        )
        .unwrap();
        let with_half = warm_start(
            &base,
            &x,
            &y,
            &WarmStartParams {
                n_additional_estimators: 3,
                learning_rate: Some(0.05),
            },
        )
        .unwrap();
        // model keeps one learning_rate; continuation trees carry the
        // override through their leaf values
        assert_eq!(with_half.learning_rate, 0.1);
        assert_eq!(with_half.trees.len(), 8);
        // continuation improves (or at least never worsens) training loss
        assert!(train_loss(&with_half, &x, &y) <= train_loss(&base, &x, &y) + 1e-12);
    }

    #[test]
    fn warm_start_improves_loss_on_shifted_data() {
        let (x_a, y_a) = testutil::noisy_signal(150, 13, 0.15);
        let (mut x_b, y_b) = testutil::noisy_signal(150, 14, 0.15);
        for row in &mut x_b.rows {
            for v in row.iter_mut() {
                *v = *v * 1.5 + 0.3;
            }
        }
        let base = fit_gboost(
            &x_a,
            &y_a,
            &GboostParams {
                n_estimators: 30,
                ..GboostParams::default()
            },
            6,
        )
        .unwrap();
        let warmed = warm_start(
            &base,
            &x_b,
            &y_b,
            &WarmStartParams {
                n_additional_estimators: 30,
                learning_rate: None,
            },
        )
        .unwrap();
        assert!(train_loss(&warmed, &x_b, &y_b) < train_loss(&base, &x_b, &y_b));
    }

    #[test]
    fn subsample_and_colsample_still_learn() {
        let (x, y) = testutil::separable(100, 6, 17);
        let model = fit_reg2boost(
            &x,
            &y,
            &Reg2boostParams {
                n_estimators: 60,
                subsample: 0.8,
                colsample_bytree: 0.5,
                ..Reg2boostParams::default()
            },
            0,
        )
        .unwrap();
        let scores = predict_proba(&model, &x).unwrap();
        assert!(testutil::perfectly_ranked(&scores, &y));
    }
}
