//! Experiment orchestration: labeled datasets, stratified splitting,
//! cross-validated grid search, the five source-fusion protocols, and
//! recursive feature elimination.

mod grid;
mod protocol;
mod rfe;
mod split;

pub use grid::{default_grid, grid_search, CvCell, GridPoint, GridSearchOutcome};
pub use protocol::{
    run_protocol, ExperimentConfig, ExperimentIdentity, ExperimentReport, FusionProtocol,
};
pub use rfe::{rfe, RfeOutcome, RfeStep};
pub use split::{stratified_kfold, stratified_split, StratifyBy};

use crate::data::{Source, TokenHistory};
use crate::error::{Error, Result};
use crate::features::{extract_features, FEATURE_NAMES};
use crate::labeling::{self, Approach, LabelConfig};
use crate::learners::{self, EnsembleModel, HyperParams};
use crate::preprocess::{Preprocessor, ScalingModes};

/// Feature rows with labels and provenance, before imputation/scaling.
///
/// Rows stay raw (`None` marks a missing value) because every
/// cross-validation fold must fit its own preprocessor on its own training
/// part; transforming up front would leak fold statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<u8>,
    pub sources: Vec<Source>,
    pub token_ids: Vec<String>,
    pub label_config: LabelConfig,
}

impl LabeledDataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if self.labels.len() != n || self.sources.len() != n || self.token_ids.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} rows, {} labels, {} sources, {} token ids",
                n,
                self.labels.len(),
                self.sources.len(),
                self.token_ids.len()
            )));
        }
        if let Some(bad) = self.rows.iter().position(|r| r.len() != self.columns.len()) {
            return Err(Error::LengthMismatch(format!(
                "row {bad} has {} values but there are {} columns",
                self.rows[bad].len(),
                self.columns.len()
            )));
        }
        Ok(())
    }

    /// Both classes present, so a model can actually train.
    pub fn is_trainable(&self) -> bool {
        self.labels.iter().any(|&l| l == 1) && self.labels.iter().any(|&l| l == 0)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            sources: idx.iter().map(|&i| self.sources[i]).collect(),
            token_ids: idx.iter().map(|&i| self.token_ids[i].clone()).collect(),
            label_config: self.label_config,
        }
    }

    pub fn filter_source(&self, source: Source) -> LabeledDataset {
        let idx: Vec<usize> = (0..self.n_rows())
            .filter(|&i| self.sources[i] == source)
            .collect();
        self.subset(&idx)
    }

    /// Keep only the columns at `keep` (positions into `columns`), in the
    /// given order.
    pub fn select_features(&self, keep: &[usize]) -> LabeledDataset {
        LabeledDataset {
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&c| r[c]).collect())
                .collect(),
            labels: self.labels.clone(),
            sources: self.sources.clone(),
            token_ids: self.token_ids.clone(),
            label_config: self.label_config,
        }
    }

    /// Row-wise concatenation; column sets and label provenance must agree.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.columns != other.columns {
            return Err(Error::ColumnMismatch {
                expected: self.columns.join(","),
                got: other.columns.join(","),
            });
        }
        if self.label_config != other.label_config {
            return Err(Error::Experiment(
                "datasets were labeled under different configurations".to_string(),
            ));
        }
        let mut out = self.clone();
        out.rows.extend(other.rows.iter().cloned());
        out.labels.extend_from_slice(&other.labels);
        out.sources.extend_from_slice(&other.sources);
        out.token_ids.extend(other.token_ids.iter().cloned());
        Ok(out)
    }
}

/// Whether the token's rug condition already triggers inside the feature
/// observation window, i.e. the model would be "predicting" an event its
/// inputs can see.
pub fn rug_within_observation(history: &TokenHistory, cfg: &LabelConfig) -> bool {
    match cfg.approach {
        Approach::Tvl => match labeling::max_drop(history, cfg.observation_minutes) {
            Ok(md) => md.md >= cfg.p,
            Err(_) => true, // no liquidity data at all
        },
        Approach::Idle => {
            let clamped = LabelConfig {
                horizon_minutes: cfg.observation_minutes,
                ..*cfg
            };
            labeling::label_idle(history, &clamped).map(|o| o.label == 1).unwrap_or(false)
        }
    }
}

/// Label every history and extract its feature row.
///
/// `drop_window_rugs` removes tokens whose rug condition already holds
/// within the observation window (kept by default).
pub fn build_dataset(
    histories: &[TokenHistory],
    cfg: &LabelConfig,
    drop_window_rugs: bool,
) -> Result<LabeledDataset> {
    cfg.validate()?;
    let columns: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut ds = LabeledDataset {
        columns,
        rows: Vec::with_capacity(histories.len()),
        labels: Vec::with_capacity(histories.len()),
        sources: Vec::with_capacity(histories.len()),
        token_ids: Vec::with_capacity(histories.len()),
        label_config: *cfg,
    };
    for history in histories {
        if drop_window_rugs && rug_within_observation(history, cfg) {
            continue;
        }
        let outcome = labeling::label(history, cfg)?;
        let fv = extract_features(history, cfg.observation_minutes)?;
        ds.rows.push(fv.as_row());
        ds.labels.push(outcome.label);
        ds.sources.push(history.source());
        ds.token_ids.push(history.token_id().to_string());
    }
    if ds.rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(ds)
}

/// Fit a preprocessor on the training rows only, then a model on the
/// transformed matrix. The pair is the unit every experiment evaluates.
pub fn fit_on_split(
    train: &LabeledDataset,
    scaling: ScalingModes,
    params: &HyperParams,
    seed: u64,
) -> Result<(Preprocessor, EnsembleModel)> {
    let preprocessor = Preprocessor::fit(&train.columns, &train.rows, scaling)?;
    let x = preprocessor.transform(&train.columns, &train.rows)?;
    let model = learners::fit(&x, &train.labels, params, seed)?;
    Ok((preprocessor, model))
}

/// Scores for `ds` under an already-fitted (preprocessor, model) pair.
pub fn score_with(
    preprocessor: &Preprocessor,
    model: &EnsembleModel,
    ds: &LabeledDataset,
) -> Result<Vec<f64>> {
    let x = preprocessor.transform(&ds.columns, &ds.rows)?;
    learners::predict_proba(model, &x)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Side, TokenMeta, TradeEvent, PoolState};

    fn trade(offset: i64, side: Side, price: f64, volume: f64) -> TradeEvent {
        TradeEvent {
            token_id: "tok".into(),
            pool_id: "pool".into(),
            tx_id: format!("tx{offset}"),
            timestamp: 1_700_000_000 + offset,
            side,
            price,
            volume_usd: volume,
            trader_id: "trader".into(),
            lp_fee: None,
            protocol_fee: None,
            source: Source::Stonfi,
        }
    }

    fn pool(offset: i64, tvl: f64) -> PoolState {
        PoolState {
            pool_id: "pool".into(),
            token_id: "tok".into(),
            timestamp: 1_700_000_000 + offset,
            tvl_usd: tvl,
            pool_creator: None,
            pool_deployed_at: None,
            source: Source::Stonfi,
        }
    }

    fn history(trades: Vec<TradeEvent>, pools: Vec<PoolState>) -> TokenHistory {
        let trading_start = trades.iter().map(|t| t.timestamp).min().unwrap();
        TokenHistory {
            meta: TokenMeta::synthetic("tok", Source::Stonfi),
            trades,
            pool_states: pools,
            trading_start,
        }
    }

    /// Steady trading, steady TVL: an honest token.
    fn honest_history() -> TokenHistory {
        let trades = (0..30)
            .map(|i| trade(i * 240, if i % 3 == 0 { Side::Sell } else { Side::Buy }, 1.0, 10.0))
            .collect();
        let pools = (0..30).map(|i| pool(i * 240, 1000.0)).collect();
        history(trades, pools)
    }

    /// TVL collapses within the first two minutes.
    fn instant_rug_history() -> TokenHistory {
        let trades = vec![trade(0, Side::Buy, 1.0, 10.0), trade(90, Side::Sell, 0.1, 5.0)];
        let pools = vec![pool(0, 100_000.0), pool(100, 10.0)];
        history(trades, pools)
    }

    #[test]
    fn build_dataset_aligns_labels_features_and_provenance() {
        let histories = vec![honest_history(), instant_rug_history()];
        let cfg = LabelConfig::default();
        let ds = build_dataset(&histories, &cfg, false).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.columns.len(), FEATURE_NAMES.len());
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.sources, vec![Source::Stonfi, Source::Stonfi]);
    }

    #[test]
    fn window_rug_flag_drops_the_instant_rug() {
        let histories = vec![honest_history(), instant_rug_history()];
        let cfg = LabelConfig::default();
        let ds = build_dataset(&histories, &cfg, true).unwrap();
        assert_eq!(ds.n_rows(), 1);
        assert_eq!(ds.labels, vec![0]);
        // an all-rug corpus under the flag empties out entirely
        assert!(matches!(
            build_dataset(&[instant_rug_history()], &cfg, true),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn idle_window_rug_detection_needs_a_gap_start_inside_the_window() {
        let cfg = LabelConfig {
            approach: Approach::Idle,
            ..LabelConfig::default()
        };
        // last trade at minute 2: the open gap starts inside the window
        let quiet = history(
            vec![trade(0, Side::Buy, 1.0, 5.0), trade(120, Side::Buy, 1.0, 5.0)],
            vec![pool(0, 1000.0)],
        );
        assert!(rug_within_observation(&quiet, &cfg));
        assert!(!rug_within_observation(&honest_history(), &cfg));
    }

    #[test]
    fn subset_select_and_concat_compose() {
        let ds = testdata::two_source(10, 1, 0.0);
        let sub = ds.subset(&[0, 3, 5]);
        assert_eq!(sub.n_rows(), 3);
        assert_eq!(sub.token_ids[1], ds.token_ids[3]);

        let ab = ds.select_features(&[0, 1]);
        assert_eq!(ab.columns, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(ab.rows[2], vec![ds.rows[2][0], ds.rows[2][1]]);

        let stonfi = ds.filter_source(Source::Stonfi);
        let dedust = ds.filter_source(Source::Dedust);
        let back = stonfi.concat(&dedust).unwrap();
        assert_eq!(back.n_rows(), ds.n_rows());
        assert!(stonfi.concat(&ab).is_err());
    }

    #[test]
    fn fitting_ignores_rows_outside_the_training_subset() {
        // mutate held-out rows; the fitted pair must not change
        let ds = testdata::two_source(30, 2, 0.1);
        let (train_idx, test_idx) =
            stratified_split(&ds, 0.2, StratifyBy::Class, 3).unwrap();
        let params = HyperParams::default_for(crate::learners::Family::Gboost);

        let fit_bytes = |d: &LabeledDataset| {
            let (prep, model) = fit_on_split(&d.subset(&train_idx), ScalingModes::NONE, &params, 9).unwrap();
            let mut buf = serde_json::to_vec(&prep).unwrap();
            let mut model_buf = Vec::new();
            learners::save_model(&model, &mut model_buf).unwrap();
            buf.extend(model_buf);
            buf
        };

        let baseline = fit_bytes(&ds);
        let mut tampered = ds.clone();
        for &i in &test_idx {
            for v in tampered.rows[i].iter_mut() {
                *v = v.map(|x| x * 100.0 - 7.0);
            }
        }
        assert_eq!(fit_bytes(&tampered), baseline);
    }
}
