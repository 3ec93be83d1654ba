//! Full-pipeline checks through the library API: generated corpus in,
//! fitted cross-exchange experiments out.

use std::collections::HashSet;

use ruglab::data::{assemble_histories, filter_corpus, CorpusFilter, Source};
use ruglab::experiments::{
    build_dataset, rug_within_observation, run_protocol, ExperimentConfig, FusionProtocol,
    GridPoint,
};
use ruglab::labeling::LabelConfig;
use ruglab::learners::{Family, GboostParams, HyperParams};
use ruglab::preprocess::ScalingModes;
use ruglab::synth::{generate, SynthConfig};

fn corpus_histories(n_tokens: usize, seed: u64) -> Vec<ruglab::data::TokenHistory> {
    let corpus = generate(&SynthConfig { n_tokens, seed, ..SynthConfig::default() }).unwrap();
    let histories = assemble_histories(corpus.trades, corpus.pools, corpus.tokens);
    filter_corpus(histories, &CorpusFilter::default()).unwrap()
}

fn one_point_grid(n_estimators: usize) -> Vec<GridPoint> {
    vec![GridPoint {
        params: HyperParams::Gboost(GboostParams { n_estimators, ..GboostParams::default() }),
        scaling: ScalingModes::NONE,
    }]
}

#[test]
fn all_five_protocols_detect_rugs_on_a_generated_corpus() {
    let histories = corpus_histories(600, 33);
    let label = LabelConfig::default();
    let full = build_dataset(&histories, &label, false).unwrap();
    let stonfi = full.filter_source(Source::Stonfi);
    let dedust = full.filter_source(Source::Dedust);

    let ids_of = |source: Source| -> HashSet<&str> {
        full.token_ids
            .iter()
            .zip(&full.sources)
            .filter(|(_, s)| **s == source)
            .map(|(id, _)| id.as_str())
            .collect()
    };
    let stonfi_ids = ids_of(Source::Stonfi);
    let dedust_ids = ids_of(Source::Dedust);

    let expected = [
        (FusionProtocol::StonfiOnly, "stonfi", "stonfi", 0.70),
        (FusionProtocol::DedustOnly, "dedust", "dedust", 0.70),
        (FusionProtocol::UnionTrain, "stonfi+dedust", "stonfi", 0.70),
        (FusionProtocol::StonfiThenDedust, "stonfi->dedust", "dedust", 0.60),
        (FusionProtocol::DedustThenStonfi, "dedust->stonfi", "stonfi", 0.60),
    ];
    for (protocol, train_source, test_source, floor) in expected {
        let mut config = ExperimentConfig::new(protocol, Family::Gboost, one_point_grid(60), 21);
        config.label = label;
        let report = run_protocol(&config, Some(&stonfi), Some(&dedust)).unwrap();
        assert_eq!(report.identity.train_source, train_source);
        assert_eq!(report.identity.test_source, test_source);
        let auc = report.metrics.auc.unwrap_or_else(|| panic!("{train_source}: auc undefined"));
        assert!(auc >= floor, "{train_source} -> {test_source}: auc {auc} under {floor}");

        let test_ids = if test_source == "stonfi" { &stonfi_ids } else { &dedust_ids };
        assert!(
            report.test_token_ids.iter().all(|id| test_ids.contains(id.as_str())),
            "{train_source}: test rows leaked from the wrong source"
        );

        let total: f64 = report.importances.iter().map(|(_, v)| v).sum();
        assert!((total - 1.0).abs() < 1e-9, "{train_source}: importances sum {total}");
    }
}

#[test]
fn window_rug_filter_drops_exactly_the_flagged_tokens() {
    let histories = corpus_histories(1500, 57);

    // TVL collapses in this generator start well past the observation
    // window, so only tokens that stop trading almost immediately can
    // rug inside it; the idle rule is what catches them.
    let tvl = LabelConfig::default();
    assert!(!histories.iter().any(|h| rug_within_observation(h, &tvl)));

    let label = LabelConfig { approach: ruglab::labeling::Approach::Idle, ..tvl };
    let flagged: HashSet<&str> = histories
        .iter()
        .filter(|h| rug_within_observation(h, &label))
        .map(|h| h.token_id())
        .collect();
    assert!(
        !flagged.is_empty(),
        "corpus should contain tokens that stop trading inside the observation window"
    );

    let kept_all = build_dataset(&histories, &label, false).unwrap();
    let kept_filtered = build_dataset(&histories, &label, true).unwrap();
    assert_eq!(kept_all.n_rows(), histories.len());
    assert_eq!(kept_filtered.n_rows(), histories.len() - flagged.len());
    assert!(
        kept_filtered.token_ids.iter().all(|id| !flagged.contains(id.as_str())),
        "a flagged token survived the filter"
    );
}
