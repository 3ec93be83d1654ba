//! Exhaustive grid search scored by mean validation AUC over stratified
//! k-fold cross-validation. The preprocessing mode is a grid axis like any
//! hyperparameter, and each fold fits its preprocessor on that fold's
//! training part only.

use super::split::{stratified_kfold, StratifyBy};
use super::{fit_on_split, score_with, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::learners::{
    ClassWeight, DtreeParams, Family, GboostParams, HyperParams, MaxFeatures, Reg2boostParams,
    RforestParams,
};
use crate::preprocess::ScalingModes;
use crate::seeds;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const GRID_NS: u64 = 4;

/// One grid cell: model hyperparameters plus the preprocessing mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: HyperParams,
    pub scaling: ScalingModes,
}

/// Cross-validation result for one grid point. A fold AUC is `None` when
/// that fold's validation part was single-class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub point: GridPoint,
    pub fold_aucs: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub best: GridPoint,
    pub best_mean_auc: f64,
    /// One cell per grid point, in enumeration order.
    pub table: Vec<CvCell>,
}

/// Default search space per family; every parameter combination is
/// crossed with all four scaling modes.
pub fn default_grid(family: Family) -> Vec<GridPoint> {
    let learning_rates = [0.05, 0.1, 0.3];
    let depths = [3u32, 5, 8];
    let n_estimators = [100usize, 300];
    let subsamples = [0.8, 1.0];
    let colsamples = [0.8, 1.0];
    let gammas = [0.0, 1.0];
    let alphas = [0.0, 1.0];
    let lambdas = [1.0, 10.0];
    let min_splits = [2usize, 20];
    let max_features = [MaxFeatures::All, MaxFeatures::Sqrt];
    let class_weights = [ClassWeight::None, ClassWeight::Balanced];

    let mut params = Vec::new();
    match family {
        Family::Dtree => {
            for &max_depth in &depths {
                for &min_samples_split in &min_splits {
                    for &mf in &max_features {
                        params.push(HyperParams::Dtree(DtreeParams {
                            max_depth,
                            min_samples_split,
                            max_features: mf,
                        }));
                    }
                }
            }
        }
        Family::Rforest => {
            for &n in &n_estimators {
                for &max_depth in &depths {
                    for &min_samples_split in &min_splits {
                        for &mf in &max_features {
                            for &cw in &class_weights {
                                params.push(HyperParams::Rforest(RforestParams {
                                    n_estimators: n,
                                    max_depth,
                                    min_samples_split,
                                    max_features: mf,
                                    class_weight: cw,
                                }));
                            }
                        }
                    }
                }
            }
        }
        Family::Gboost => {
            for &learning_rate in &learning_rates {
                for &max_depth in &depths {
                    for &n in &n_estimators {
                        for &subsample in &subsamples {
                            for &min_samples_split in &min_splits {
                                for &mf in &max_features {
                                    params.push(HyperParams::Gboost(GboostParams {
                                        learning_rate,
                                        max_depth,
                                        n_estimators: n,
                                        subsample,
                                        loss: Default::default(),
                                        min_samples_split,
                                        max_features: mf,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
        }
        Family::Reg2boost => {
            for &learning_rate in &learning_rates {
                for &max_depth in &depths {
                    for &n in &n_estimators {
                        for &subsample in &subsamples {
                            for &colsample_bytree in &colsamples {
                                for &gamma in &gammas {
                                    for &reg_alpha in &alphas {
                                        for &reg_lambda in &lambdas {
                                            params.push(HyperParams::Reg2boost(Reg2boostParams {
                                                learning_rate,
                                                max_depth,
                                                n_estimators: n,
                                                subsample,
                                                colsample_bytree,
                                                gamma,
                                                reg_alpha,
                                                reg_lambda,
                                                pos_weight: None,
                                            }));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    params
        .into_iter()
        .flat_map(|p| {
            ScalingModes::ALL.iter().map(move |&scaling| GridPoint {
                params: p.clone(),
                scaling,
            })
        })
        .collect()
}

fn cv_point(
    point: &GridPoint,
    train: &LabeledDataset,
    folds: &[Vec<usize>],
    point_idx: usize,
    seed: u64,
) -> Result<CvCell> {
    let mut fold_aucs = Vec::with_capacity(folds.len());
    for (f, val_idx) in folds.iter().enumerate() {
        let mut train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        train_idx.sort_unstable();
        let fold_train = train.subset(&train_idx);
        let fold_val = train.subset(val_idx);
        let fit_seed = seeds::derive(seed, &[GRID_NS, 1, point_idx as u64, f as u64]);
        let (prep, model) = fit_on_split(&fold_train, point.scaling, &point.params, fit_seed)?;
        let scores = score_with(&prep, &model, &fold_val)?;
        match roc_auc(&scores, &fold_val.labels) {
            Ok(a) => fold_aucs.push(Some(a)),
            Err(Error::UndefinedAuc) => fold_aucs.push(None),
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
    let mean_auc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(CvCell {
        point: point.clone(),
        fold_aucs,
        mean_auc,
    })
}

/// Evaluate every grid point with k-fold CV on `train` and pick the best
/// mean validation AUC; ties keep the earliest point in enumeration order.
pub fn grid_search(
    grid: &[GridPoint],
    train: &LabeledDataset,
    k: usize,
    seed: u64,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(Error::GridSearch("the grid has no points".to_string()));
    }
    train.validate()?;
    for point in grid {
        point.params.validate()?;
    }
    let folds = stratified_kfold(train, k, StratifyBy::Class, seeds::derive(seed, &[GRID_NS, 0]))?;

    let table: Vec<CvCell> = grid
        .par_iter()
        .enumerate()
        .map(|(i, point)| cv_point(point, train, &folds, i, seed))
        .collect::<Result<_>>()?;

    let mut best: Option<(usize, f64)> = None;
    for (i, cell) in table.iter().enumerate() {
        if let Some(mean) = cell.mean_auc {
            let beats = match best {
                None => true,
                Some((_, incumbent)) => mean > incumbent,
            };
            if beats {
                best = Some((i, mean));
            }
        }
    }
    let Some((best_idx, best_mean_auc)) = best else {
        return Err(Error::GridSearch(
            "every grid point failed cross-validation (single-class validation folds)".to_string(),
        ));
    };
    Ok(GridSearchOutcome {
        best: table[best_idx].point.clone(),
        best_mean_auc,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testdata;
    use super::*;
    use crate::labeling::LabelConfig;

    fn tree_point(max_depth: u32) -> GridPoint {
        GridPoint {
            params: HyperParams::Dtree(DtreeParams {
                max_depth,
                min_samples_split: 2,
                max_features: MaxFeatures::All,
            }),
            scaling: ScalingModes::NONE,
        }
    }

    #[test]
    fn single_point_grid_returns_it_with_its_score() {
        let ds = testdata::two_source(40, 3, 0.1);
        let grid = vec![tree_point(3)];
        let out = grid_search(&grid, &ds, 3, 0).unwrap();
        assert_eq!(out.best, grid[0]);
        assert_eq!(out.table.len(), 1);
        assert_eq!(out.table[0].mean_auc, Some(out.best_mean_auc));
        assert_eq!(out.table[0].fold_aucs.len(), 3);
    }

    #[test]
    fn duplicate_point_never_steals_the_win() {
        let ds = testdata::two_source(40, 3, 0.1);
        let grid = vec![tree_point(3), tree_point(1)];
        let base = grid_search(&grid, &ds, 3, 0).unwrap();
        // append an exact duplicate of the winner: scores tie, first wins
        let mut padded = grid.clone();
        padded.push(base.best.clone());
        let again = grid_search(&padded, &ds, 3, 0).unwrap();
        assert_eq!(again.best, base.best);
        assert_eq!(again.best_mean_auc, base.best_mean_auc);
    }

    #[test]
    fn best_is_at_least_every_other_point() {
        let ds = testdata::two_source(50, 5, 0.15);
        let grid: Vec<GridPoint> = [1, 2, 4, 8].iter().map(|&d| tree_point(d)).collect();
        let out = grid_search(&grid, &ds, 3, 1).unwrap();
        for cell in &out.table {
            if let Some(mean) = cell.mean_auc {
                assert!(out.best_mean_auc >= mean);
            }
        }
    }

    #[test]
    fn empty_grid_and_single_class_data_fail() {
        let ds = testdata::two_source(20, 1, 0.0);
        assert!(matches!(
            grid_search(&[], &ds, 3, 0),
            Err(Error::GridSearch(_))
        ));
        let mut all_zero = ds.clone();
        for l in &mut all_zero.labels {
            *l = 0;
        }
        assert!(matches!(
            grid_search(&[tree_point(2)], &all_zero, 3, 0),
            Err(Error::GridSearch(_))
        ));
    }

    #[test]
    fn search_is_deterministic() {
        let ds = testdata::two_source(40, 9, 0.2);
        let grid: Vec<GridPoint> = [2, 3, 5].iter().map(|&d| tree_point(d)).collect();
        let a = grid_search(&grid, &ds, 3, 7).unwrap();
        let b = grid_search(&grid, &ds, 3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_grids_have_the_documented_shapes() {
        assert_eq!(default_grid(Family::Dtree).len(), 3 * 2 * 2 * 4);
        assert_eq!(default_grid(Family::Rforest).len(), 2 * 3 * 2 * 2 * 2 * 4);
        assert_eq!(default_grid(Family::Gboost).len(), 3 * 3 * 2 * 2 * 2 * 2 * 4);
        assert_eq!(
            default_grid(Family::Reg2boost).len(),
            3 * 3 * 2 * 2 * 2 * 2 * 2 * 2 * 4
        );
        for point in default_grid(Family::Gboost) {
            assert_eq!(point.params.family(), Family::Gboost);
            point.params.validate().unwrap();
        }
    }

    /// Majority-of-three-bits data: depth 3 is generatively right, depth 1
    /// underfits, and deep trees can only chase the flipped labels through
    /// the two continuous noise columns.
    fn majority_dataset(seed: u64) -> LabeledDataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ds = LabeledDataset {
            columns: vec!["b0".into(), "b1".into(), "b2".into(), "n0".into(), "n1".into()],
            rows: Vec::new(),
            labels: Vec::new(),
            sources: Vec::new(),
            token_ids: Vec::new(),
            label_config: LabelConfig::default(),
        };
        for i in 0..240 {
            let bits = [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)];
            let mut label = u8::from(bits.iter().filter(|&&b| b).count() >= 2);
            if rng.gen_bool(0.1) {
                label ^= 1;
            }
            ds.rows.push(vec![
                Some(f64::from(bits[0])),
                Some(f64::from(bits[1])),
                Some(f64::from(bits[2])),
                Some(rng.gen_range(-1.0..1.0)),
                Some(rng.gen_range(-1.0..1.0)),
            ]);
            ds.labels.push(label);
            ds.sources.push(crate::data::Source::Stonfi);
            ds.token_ids.push(format!("m{i}"));
        }
        ds
    }

    #[test]
    fn cv_recovers_the_generative_depth_most_of_the_time() {
        // enumerate deep-first so ties can't hand depth 3 a free win
        let grid = vec![tree_point(8), tree_point(3), tree_point(1)];
        let mut hits = 0;
        for seed in 0..10u64 {
            let ds = majority_dataset(1000 + seed);
            let out = grid_search(&grid, &ds, 3, seed).unwrap();
            if out.best == tree_point(3) {
                hits += 1;
            }
        }
        assert!(hits >= 8, "depth 3 won only {hits}/10 runs");
    }
}
