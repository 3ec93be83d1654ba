//! The five source-fusion training protocols, each producing one
//! metrics report from (up to) two per-source datasets.

use super::grid::{grid_search, CvCell, GridPoint};
use super::split::{stratified_split, StratifyBy};
use super::{fit_on_split, score_with, LabeledDataset};
use crate::data::Source;
use crate::error::{Error, Result};
use crate::evaluation::{report, MetricsReport};
use crate::labeling::{Approach, LabelConfig};
use crate::learners::{importance, warm_start, EnsembleModel, Family, HyperParams, WarmStartParams};
use crate::preprocess::Preprocessor;
use crate::seeds;
use serde::{Deserialize, Serialize};

const PROTO_NS: u64 = 3;

/// How the two trading venues feed training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FusionProtocol {
    /// 1: train on Ston.fi, test on Ston.fi.
    StonfiOnly,
    /// 2: train on DeDust, test on DeDust.
    DedustOnly,
    /// 3: train on the union of both sources, test on one designated source.
    UnionTrain,
    /// 4: fit on Ston.fi, warm-start on DeDust, test on DeDust.
    StonfiThenDedust,
    /// 5: fit on DeDust, warm-start on Ston.fi, test on Ston.fi.
    DedustThenStonfi,
}

impl FusionProtocol {
    pub const ALL: [FusionProtocol; 5] = [
        FusionProtocol::StonfiOnly,
        FusionProtocol::DedustOnly,
        FusionProtocol::UnionTrain,
        FusionProtocol::StonfiThenDedust,
        FusionProtocol::DedustThenStonfi,
    ];

    pub fn id(self) -> u8 {
        match self {
            FusionProtocol::StonfiOnly => 1,
            FusionProtocol::DedustOnly => 2,
            FusionProtocol::UnionTrain => 3,
            FusionProtocol::StonfiThenDedust => 4,
            FusionProtocol::DedustThenStonfi => 5,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::Config(format!("protocol must be 1..=5, got {id}")))
    }

    pub fn uses_warm_start(self) -> bool {
        matches!(self, FusionProtocol::StonfiThenDedust | FusionProtocol::DedustThenStonfi)
    }
}

impl TryFrom<u8> for FusionProtocol {
    type Error = String;

    fn try_from(id: u8) -> std::result::Result<Self, String> {
        FusionProtocol::from_id(id).map_err(|e| e.to_string())
    }
}

impl From<FusionProtocol> for u8 {
    fn from(p: FusionProtocol) -> u8 {
        p.id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: FusionProtocol,
    pub family: Family,
    /// Grid to search; every point must belong to `family`.
    pub grid: Vec<GridPoint>,
    pub seed: u64,
    pub test_fraction: f64,
    pub k: usize,
    /// Which source's held-out rows protocol 3 evaluates on.
    pub test_source: Source,
    pub label: LabelConfig,
}

impl ExperimentConfig {
    pub fn new(protocol: FusionProtocol, family: Family, grid: Vec<GridPoint>, seed: u64) -> Self {
        ExperimentConfig {
            protocol,
            family,
            grid,
            seed,
            test_fraction: 0.2,
            k: 3,
            test_source: Source::Stonfi,
            label: LabelConfig::default(),
        }
    }

    pub fn approach(&self) -> Approach {
        self.label.approach
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        self.label.validate()?;
        if self.grid.is_empty() {
            return Err(Error::Config("the hyperparameter grid is empty".to_string()));
        }
        for point in &self.grid {
            if point.params.family() != self.family {
                return Err(Error::Config(format!(
                    "grid point family {} does not match the configured family {}",
                    point.params.family(),
                    self.family
                )));
            }
            point.params.validate()?;
        }
        if self.protocol.uses_warm_start()
            && !matches!(self.family, Family::Gboost | Family::Reg2boost)
        {
            return Err(Error::UnsupportedWarmStart(self.family.as_str().to_string()));
        }
        Ok(())
    }
}

/// What was run, attached to every metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentIdentity {
    pub approach: Approach,
    pub protocol: u8,
    pub family: Family,
    pub train_source: String,
    pub test_source: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub identity: ExperimentIdentity,
    pub metrics: MetricsReport,
    pub importances: Vec<(String, f64)>,
    pub best_point: GridPoint,
    pub best_cv_auc: f64,
    pub cv_table: Vec<CvCell>,
    pub model: EnsembleModel,
    pub preprocessor: Preprocessor,
    /// Held-out rows the metrics were computed on.
    pub test_token_ids: Vec<String>,
    pub test_scores: Vec<f64>,
}

fn require<'a>(
    ds: Option<&'a LabeledDataset>,
    source: Source,
    protocol: FusionProtocol,
) -> Result<&'a LabeledDataset> {
    let ds = ds.ok_or_else(|| {
        Error::Experiment(format!(
            "protocol {} needs the {} dataset, which was not provided",
            protocol.id(),
            source.as_str()
        ))
    })?;
    ds.validate()?;
    if ds.n_rows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(ds)
}

fn split_seed(config: &ExperimentConfig, source: Source) -> u64 {
    let tag = match source {
        Source::Stonfi => 0,
        Source::Dedust => 1,
    };
    seeds::derive(config.seed, &[PROTO_NS, tag])
}

struct FittedRun {
    best: GridPoint,
    best_cv_auc: f64,
    cv_table: Vec<CvCell>,
    preprocessor: Preprocessor,
    model: EnsembleModel,
}

/// Grid-search on `train`, then refit the winner on all of `train`.
fn search_and_fit(config: &ExperimentConfig, train: &LabeledDataset) -> Result<FittedRun> {
    let outcome = grid_search(
        &config.grid,
        train,
        config.k,
        seeds::derive(config.seed, &[PROTO_NS, 2]),
    )?;
    let (preprocessor, model) = fit_on_split(
        train,
        outcome.best.scaling,
        &outcome.best.params,
        seeds::derive(config.seed, &[PROTO_NS, 3]),
    )?;
    Ok(FittedRun {
        best: outcome.best,
        best_cv_auc: outcome.best_mean_auc,
        cv_table: outcome.table,
        preprocessor,
        model,
    })
}

fn n_estimators_of(params: &HyperParams) -> usize {
    match params {
        HyperParams::Gboost(p) => p.n_estimators,
        HyperParams::Reg2boost(p) => p.n_estimators,
        HyperParams::Rforest(p) => p.n_estimators,
        HyperParams::Dtree(_) => 1,
    }
}

fn finish(
    config: &ExperimentConfig,
    run: FittedRun,
    model: EnsembleModel,
    test: &LabeledDataset,
    train_source: String,
    test_source: String,
) -> Result<ExperimentReport> {
    let scores = score_with(&run.preprocessor, &model, test)?;
    let metrics = report(&scores, &test.labels, 0.5)?;
    Ok(ExperimentReport {
        identity: ExperimentIdentity {
            approach: config.approach(),
            protocol: config.protocol.id(),
            family: config.family,
            train_source,
            test_source,
            seed: config.seed,
        },
        metrics,
        importances: importance(&model),
        best_point: run.best,
        best_cv_auc: run.best_cv_auc,
        cv_table: run.cv_table,
        model,
        preprocessor: run.preprocessor,
        test_token_ids: test.token_ids.clone(),
        test_scores: scores,
    })
}

/// Run one fusion protocol end to end: split, grid-search, fit (and
/// warm-start for protocols 4/5), evaluate on the held-out rows.
pub fn run_protocol(
    config: &ExperimentConfig,
    stonfi: Option<&LabeledDataset>,
    dedust: Option<&LabeledDataset>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let by_source = |source: Source| match source {
        Source::Stonfi => require(stonfi, Source::Stonfi, config.protocol),
        Source::Dedust => require(dedust, Source::Dedust, config.protocol),
    };
    let split_of = |ds: &LabeledDataset, source: Source| -> Result<(LabeledDataset, LabeledDataset)> {
        let (train_idx, test_idx) =
            stratified_split(ds, config.test_fraction, StratifyBy::Class, split_seed(config, source))?;
        Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
    };

    match config.protocol {
        FusionProtocol::StonfiOnly | FusionProtocol::DedustOnly => {
            let source = if config.protocol == FusionProtocol::StonfiOnly {
                Source::Stonfi
            } else {
                Source::Dedust
            };
            let (train, test) = split_of(by_source(source)?, source)?;
            let run = search_and_fit(config, &train)?;
            let model = run.model.clone();
            finish(config, run, model, &test, source.as_str().to_string(), source.as_str().to_string())
        }
        FusionProtocol::UnionTrain => {
            let (stonfi_train, stonfi_test) = split_of(by_source(Source::Stonfi)?, Source::Stonfi)?;
            let (dedust_train, dedust_test) = split_of(by_source(Source::Dedust)?, Source::Dedust)?;
            let train = stonfi_train.concat(&dedust_train)?;
            let test = match config.test_source {
                Source::Stonfi => stonfi_test,
                Source::Dedust => dedust_test,
            };
            let run = search_and_fit(config, &train)?;
            let model = run.model.clone();
            finish(
                config,
                run,
                model,
                &test,
                "stonfi+dedust".to_string(),
                config.test_source.as_str().to_string(),
            )
        }
        FusionProtocol::StonfiThenDedust | FusionProtocol::DedustThenStonfi => {
            let (source_a, source_b) = if config.protocol == FusionProtocol::StonfiThenDedust {
                (Source::Stonfi, Source::Dedust)
            } else {
                (Source::Dedust, Source::Stonfi)
            };
            let (a_train, _a_test) = split_of(by_source(source_a)?, source_a)?;
            let (b_train, b_test) = split_of(by_source(source_b)?, source_b)?;
            let run = search_and_fit(config, &a_train)?;
            // continue training on the target venue in the frozen model's
            // feature space: the source-A preprocessor transforms B too
            let xb = &b_train;
            let extra = WarmStartParams {
                n_additional_estimators: n_estimators_of(&run.best.params),
                learning_rate: None,
            };
            let xb_matrix = run.preprocessor.transform(&xb.columns, &xb.rows)?;
            let warmed = warm_start(&run.model, &xb_matrix, &xb.labels, &extra)?;
            finish(
                config,
                run,
                warmed,
                &b_test,
                format!("{}->{}", source_a.as_str(), source_b.as_str()),
                source_b.as_str().to_string(),
            )
        }
    }
}
