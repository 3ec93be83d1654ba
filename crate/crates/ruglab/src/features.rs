//! Launch-window feature extraction.
//!
//! Every feature is computed from the first `observation_minutes` of
//! trading: the half-open window `[trading_start, trading_start + w)`.
//! A value that cannot be computed (no sells, no fee data, metadata absent)
//! stays missing; imputation is the preprocessor's job, not extraction's.

use std::collections::BTreeSet;

use crate::data::{Side, Source, TokenHistory};
use crate::error::{Error, Result};
use crate::labeling::tvl_series;

/// Column order for feature matrices and `features.csv`. Fixed; every
/// consumer indexes against this.
pub const FEATURE_NAMES: [&str; 33] = [
    "buy_sell_ratio",
    "price_range",
    "buys",
    "sells",
    "buy_perc",
    "sell_perc",
    "unique_buyers",
    "unique_sellers",
    "total_usd_volume",
    "total_usd_buy_volume",
    "total_usd_sell_volume",
    "decimals",
    "avg_lp_fee",
    "avg_protocol_fee",
    "jetton_creation_trade_delta",
    "pool_creation_trade_delta",
    "is_pool_creator",
    "initial_tvl_usd",
    "initial_price",
    "initial_buy_price",
    "max_tvl",
    "min_tvl",
    "buy_price_std",
    "initial_sell_price",
    "sell_price_std",
    "price_max",
    "price_min",
    "price_delta",
    "price_std",
    "first_buy_time_ts",
    "first_sell_time_ts",
    "pool_deployment_at_ts",
    "jetton_deployment_at_ts",
];

/// One token's launch-window description. `None` means missing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub token_id: String,
    pub source: Source,
    pub buy_sell_ratio: Option<f64>,
    pub price_range: Option<f64>,
    pub buys: Option<f64>,
    pub sells: Option<f64>,
    pub buy_perc: Option<f64>,
    pub sell_perc: Option<f64>,
    pub unique_buyers: Option<f64>,
    pub unique_sellers: Option<f64>,
    pub total_usd_volume: Option<f64>,
    pub total_usd_buy_volume: Option<f64>,
    pub total_usd_sell_volume: Option<f64>,
    pub decimals: Option<f64>,
    pub avg_lp_fee: Option<f64>,
    pub avg_protocol_fee: Option<f64>,
    pub jetton_creation_trade_delta: Option<f64>,
    pub pool_creation_trade_delta: Option<f64>,
    pub is_pool_creator: Option<f64>,
    pub initial_tvl_usd: Option<f64>,
    pub initial_price: Option<f64>,
    pub initial_buy_price: Option<f64>,
    pub max_tvl: Option<f64>,
    pub min_tvl: Option<f64>,
    pub buy_price_std: Option<f64>,
    pub initial_sell_price: Option<f64>,
    pub sell_price_std: Option<f64>,
    pub price_max: Option<f64>,
    pub price_min: Option<f64>,
    pub price_delta: Option<f64>,
    pub price_std: Option<f64>,
    pub first_buy_time_ts: Option<f64>,
    pub first_sell_time_ts: Option<f64>,
    pub pool_deployment_at_ts: Option<f64>,
    pub jetton_deployment_at_ts: Option<f64>,
}

impl FeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn as_row(&self) -> Vec<Option<f64>> {
        vec![
            self.buy_sell_ratio,
            self.price_range,
            self.buys,
            self.sells,
            self.buy_perc,
            self.sell_perc,
            self.unique_buyers,
            self.unique_sellers,
            self.total_usd_volume,
            self.total_usd_buy_volume,
            self.total_usd_sell_volume,
            self.decimals,
            self.avg_lp_fee,
            self.avg_protocol_fee,
            self.jetton_creation_trade_delta,
            self.pool_creation_trade_delta,
            self.is_pool_creator,
            self.initial_tvl_usd,
            self.initial_price,
            self.initial_buy_price,
            self.max_tvl,
            self.min_tvl,
            self.buy_price_std,
            self.initial_sell_price,
            self.sell_price_std,
            self.price_max,
            self.price_min,
            self.price_delta,
            self.price_std,
            self.first_buy_time_ts,
            self.first_sell_time_ts,
            self.pool_deployment_at_ts,
            self.jetton_deployment_at_ts,
        ]
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Population standard deviation; missing below two observations.
fn pop_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Some(var.sqrt())
}

/// Extracts the launch-window features of one token.
///
/// The history must hold at least one trade (guaranteed by assembly) and
/// its trades must already be time-sorted.
pub fn extract_features(history: &TokenHistory, observation_minutes: u32) -> Result<FeatureVector> {
    if observation_minutes == 0 {
        return Err(Error::Config("observation_minutes must be positive".into()));
    }
    if history.trades.is_empty() {
        return Err(Error::EmptyInput);
    }
    let start = history.trading_start;
    let window_s = i64::from(observation_minutes) * 60;
    let window: Vec<_> = history
        .trades
        .iter()
        .filter(|t| t.timestamp >= start && t.timestamp - start < window_s)
        .collect();
    debug_assert!(!window.is_empty(), "first trade always lies in the window");

    let buys: Vec<_> = window.iter().filter(|t| t.side == Side::Buy).collect();
    let sells: Vec<_> = window.iter().filter(|t| t.side == Side::Sell).collect();
    let n_buys = buys.len() as f64;
    let n_sells = sells.len() as f64;
    let n_all = window.len() as f64;

    let buy_prices: Vec<f64> = buys.iter().map(|t| t.price).collect();
    let sell_prices: Vec<f64> = sells.iter().map(|t| t.price).collect();
    let prices: Vec<f64> = window.iter().map(|t| t.price).collect();
    let lp_fees: Vec<f64> = window.iter().filter_map(|t| t.lp_fee).collect();
    let protocol_fees: Vec<f64> = window.iter().filter_map(|t| t.protocol_fee).collect();

    let unique_of = |ts: &[&&crate::data::TradeEvent]| {
        ts.iter()
            .map(|t| t.trader_id.as_str())
            .collect::<BTreeSet<_>>()
            .len() as f64
    };

    let price_max = prices.iter().copied().fold(f64::NAN, f64::max);
    let price_min = prices.iter().copied().fold(f64::NAN, f64::min);

    // TVL over the same half-open window, carry-forward included
    let tvl = match tvl_series(history, window_s, false) {
        Ok(series) => Some(series),
        Err(Error::EmptyTvl) => None,
        Err(e) => return Err(e),
    };
    let (initial_tvl, max_tvl, min_tvl) = match &tvl {
        Some(s) => {
            let vals: Vec<f64> = s.samples.iter().map(|&(_, v)| v).collect();
            (
                Some(vals[0]),
                Some(vals.iter().copied().fold(f64::MIN, f64::max)),
                Some(vals.iter().copied().fold(f64::MAX, f64::min)),
            )
        }
        None => (None, None, None),
    };

    // earliest pool deployment / first creator tag among the token's pools
    let pool_deployed_at = history
        .pool_states
        .iter()
        .filter_map(|p| p.pool_deployed_at)
        .min();
    let pool_creator = history
        .pool_states
        .iter()
        .find_map(|p| p.pool_creator.as_deref());
    let is_pool_creator = match (&history.meta.creator_id, pool_creator) {
        (Some(c), Some(pc)) => Some(f64::from(u8::from(c == pc))),
        _ => None,
    };

    let first_buy = buys.first();
    let first_sell = sells.first();

    Ok(FeatureVector {
        token_id: history.meta.token_id.clone(),
        source: history.source(),
        buy_sell_ratio: (n_sells > 0.0).then(|| n_buys / n_sells),
        price_range: Some(price_max - price_min),
        buys: Some(n_buys),
        sells: Some(n_sells),
        buy_perc: Some(n_buys / n_all),
        sell_perc: Some(n_sells / n_all),
        unique_buyers: Some(unique_of(&buys)),
        unique_sellers: Some(unique_of(&sells)),
        total_usd_volume: Some(window.iter().map(|t| t.volume_usd).sum()),
        total_usd_buy_volume: Some(buys.iter().map(|t| t.volume_usd).sum()),
        total_usd_sell_volume: Some(sells.iter().map(|t| t.volume_usd).sum()),
        decimals: history.meta.decimals.map(f64::from),
        avg_lp_fee: mean(&lp_fees),
        avg_protocol_fee: mean(&protocol_fees),
        jetton_creation_trade_delta: history
            .meta
            .jetton_deployed_at
            .map(|d| (start - d) as f64),
        pool_creation_trade_delta: pool_deployed_at.map(|d| (start - d) as f64),
        is_pool_creator,
        initial_tvl_usd: initial_tvl,
        initial_price: Some(window[0].price),
        initial_buy_price: first_buy.map(|t| t.price),
        max_tvl,
        min_tvl,
        buy_price_std: pop_std(&buy_prices),
        initial_sell_price: first_sell.map(|t| t.price),
        sell_price_std: pop_std(&sell_prices),
        price_max: Some(price_max),
        price_min: Some(price_min),
        price_delta: Some(window[window.len() - 1].price - window[0].price),
        price_std: pop_std(&prices),
        first_buy_time_ts: first_buy.map(|t| t.timestamp as f64),
        first_sell_time_ts: first_sell.map(|t| t.timestamp as f64),
        pool_deployment_at_ts: pool_deployed_at.map(|d| d as f64),
        jetton_deployment_at_ts: history.meta.jetton_deployed_at.map(|d| d as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PoolState, TokenMeta, TradeEvent};
    use proptest::prelude::*;

    const START: i64 = 1_704_100_000;

    struct TradeSpec {
        offset: i64,
        side: Side,
        price: f64,
        volume: f64,
        trader: &'static str,
        lp_fee: Option<f64>,
    }

    fn spec(offset: i64, side: Side, price: f64, volume: f64, trader: &'static str) -> TradeSpec {
        TradeSpec {
            offset,
            side,
            price,
            volume,
            trader,
            lp_fee: None,
        }
    }

    fn build_history(specs: &[TradeSpec], pools: Vec<PoolState>, meta: TokenMeta) -> TokenHistory {
        let trades: Vec<TradeEvent> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| TradeEvent {
                token_id: meta.token_id.clone(),
                pool_id: "pool".into(),
                tx_id: format!("tx{i:04}"),
                timestamp: START + s.offset,
                side: s.side,
                price: s.price,
                volume_usd: s.volume,
                trader_id: s.trader.into(),
                lp_fee: s.lp_fee,
                protocol_fee: None,
                source: Source::Stonfi,
            })
            .collect();
        TokenHistory {
            trading_start: START + specs[0].offset,
            meta,
            trades,
            pool_states: pools,
        }
    }

    fn meta() -> TokenMeta {
        TokenMeta {
            token_id: "tok".into(),
            creator_id: Some("creator".into()),
            decimals: Some(9),
            jetton_deployed_at: Some(START - 86_400),
            source: Source::Stonfi,
        }
    }

    fn pool(offset: i64, tvl: f64) -> PoolState {
        PoolState {
            pool_id: "pool".into(),
            token_id: "tok".into(),
            timestamp: START + offset,
            tvl_usd: tvl,
            pool_creator: Some("creator".into()),
            pool_deployed_at: Some(START - 3_600),
            source: Source::Stonfi,
        }
    }

    #[test]
    fn counts_ratios_and_price_extrema() {
        let h = build_history(
            &[
                spec(0, Side::Buy, 1.0, 10.0, "a"),
                spec(30, Side::Buy, 1.2, 20.0, "b"),
                spec(60, Side::Sell, 1.1, 5.0, "a"),
            ],
            vec![pool(-10, 1000.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.buys, Some(2.0));
        assert_eq!(f.sells, Some(1.0));
        assert_eq!(f.buy_sell_ratio, Some(2.0));
        assert_eq!(f.buy_perc, Some(2.0 / 3.0));
        assert_eq!(f.sell_perc, Some(1.0 / 3.0));
        assert_eq!(f.total_usd_volume, Some(35.0));
        assert_eq!(f.total_usd_buy_volume, Some(30.0));
        assert_eq!(f.total_usd_sell_volume, Some(5.0));
        assert_eq!(f.price_max, Some(1.2));
        assert_eq!(f.price_min, Some(1.0));
        assert!((f.price_range.unwrap() - 0.2).abs() < 1e-12);
        assert!((f.price_delta.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(f.unique_buyers, Some(2.0));
        assert_eq!(f.unique_sellers, Some(1.0));
        assert_eq!(f.initial_price, Some(1.0));
        assert_eq!(f.initial_buy_price, Some(1.0));
        assert_eq!(f.initial_sell_price, Some(1.1));
        assert_eq!(f.first_buy_time_ts, Some(START as f64));
        assert_eq!(f.first_sell_time_ts, Some((START + 60) as f64));
    }

    #[test]
    fn zero_sells_leaves_sell_derived_fields_missing() {
        let h = build_history(
            &[
                spec(0, Side::Buy, 1.0, 10.0, "a"),
                spec(30, Side::Buy, 1.2, 20.0, "b"),
            ],
            vec![pool(-10, 1000.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.buy_sell_ratio, None);
        assert_eq!(f.initial_sell_price, None);
        assert_eq!(f.sell_price_std, None);
        assert_eq!(f.first_sell_time_ts, None);
        // but the sell volume is an actual zero, not missing
        assert_eq!(f.total_usd_sell_volume, Some(0.0));
        assert_eq!(f.sells, Some(0.0));
        assert_eq!(f.sell_perc, Some(0.0));
        assert_eq!(f.unique_sellers, Some(0.0));
    }

    #[test]
    fn stds_need_two_observations() {
        let h = build_history(
            &[
                spec(0, Side::Buy, 1.0, 10.0, "a"),
                spec(30, Side::Sell, 3.0, 5.0, "b"),
            ],
            vec![pool(-10, 1000.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.buy_price_std, None);
        assert_eq!(f.sell_price_std, None);
        // population std of {1, 3} is 1
        assert_eq!(f.price_std, Some(1.0));
    }

    #[test]
    fn window_end_is_exclusive() {
        let h = build_history(
            &[
                spec(0, Side::Buy, 1.0, 10.0, "a"),
                spec(299, Side::Buy, 2.0, 10.0, "b"),
                spec(300, Side::Sell, 9.0, 99.0, "c"),
            ],
            vec![pool(-10, 1000.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.buys, Some(2.0));
        assert_eq!(f.sells, Some(0.0));
        assert_eq!(f.price_max, Some(2.0));
    }

    #[test]
    fn creation_deltas_and_creator_flag() {
        let h = build_history(
            &[spec(0, Side::Buy, 1.0, 10.0, "a")],
            vec![pool(-10, 1000.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.jetton_creation_trade_delta, Some(86_400.0));
        assert_eq!(f.pool_creation_trade_delta, Some(3_600.0));
        assert_eq!(f.is_pool_creator, Some(1.0));
        assert_eq!(f.pool_deployment_at_ts, Some((START - 3_600) as f64));
        assert_eq!(f.jetton_deployment_at_ts, Some((START - 86_400) as f64));
        assert_eq!(f.decimals, Some(9.0));

        // different wallet deployed the pool
        let mut other = pool(-10, 1000.0);
        other.pool_creator = Some("somebody_else".into());
        let h = build_history(&[spec(0, Side::Buy, 1.0, 10.0, "a")], vec![other], meta());
        assert_eq!(extract_features(&h, 5).unwrap().is_pool_creator, Some(0.0));

        // unknown metadata leaves the flag missing
        let mut anon = meta();
        anon.creator_id = None;
        anon.jetton_deployed_at = None;
        anon.decimals = None;
        let h = build_history(&[spec(0, Side::Buy, 1.0, 10.0, "a")], vec![pool(-10, 1.0)], anon);
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.is_pool_creator, None);
        assert_eq!(f.jetton_creation_trade_delta, None);
        assert_eq!(f.decimals, None);
    }

    #[test]
    fn negative_creation_delta_is_preserved() {
        // metadata says the jetton deployed after trading began; keep the sign
        let mut m = meta();
        m.jetton_deployed_at = Some(START + 500);
        let h = build_history(&[spec(0, Side::Buy, 1.0, 10.0, "a")], vec![pool(-10, 1.0)], m);
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.jetton_creation_trade_delta, Some(-500.0));
    }

    #[test]
    fn tvl_extrema_use_carry_forward_and_window_updates() {
        let h = build_history(
            &[spec(0, Side::Buy, 1.0, 10.0, "a")],
            vec![pool(-10, 500.0), pool(120, 800.0), pool(280, 200.0), pool(400, 9.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.initial_tvl_usd, Some(500.0));
        assert_eq!(f.max_tvl, Some(800.0));
        // the 400 s snapshot is outside the 5 minute window
        assert_eq!(f.min_tvl, Some(200.0));
    }

    #[test]
    fn missing_tvl_leaves_tvl_features_missing() {
        let h = build_history(&[spec(0, Side::Buy, 1.0, 10.0, "a")], vec![], meta());
        let f = extract_features(&h, 5).unwrap();
        assert_eq!(f.initial_tvl_usd, None);
        assert_eq!(f.max_tvl, None);
        assert_eq!(f.min_tvl, None);
    }

    #[test]
    fn fee_means_ignore_missing_cells() {
        let mut s1 = spec(0, Side::Buy, 1.0, 10.0, "a");
        s1.lp_fee = Some(0.002);
        let mut s2 = spec(10, Side::Buy, 1.0, 10.0, "b");
        s2.lp_fee = Some(0.004);
        let s3 = spec(20, Side::Sell, 1.0, 10.0, "c"); // no fee recorded
        let h = build_history(&[s1, s2, s3], vec![pool(-10, 1.0)], meta());
        let f = extract_features(&h, 5).unwrap();
        assert!((f.avg_lp_fee.unwrap() - 0.003).abs() < 1e-15);
        assert_eq!(f.avg_protocol_fee, None);
    }

    #[test]
    fn feature_name_table_matches_row_layout() {
        let h = build_history(
            &[spec(0, Side::Buy, 1.0, 10.0, "a")],
            vec![pool(-10, 1.0)],
            meta(),
        );
        let f = extract_features(&h, 5).unwrap();
        let row = f.as_row();
        assert_eq!(row.len(), FEATURE_NAMES.len());
        // spot-check a few positions against the table
        assert_eq!(FEATURE_NAMES[2], "buys");
        assert_eq!(row[2], f.buys);
        assert_eq!(FEATURE_NAMES[17], "initial_tvl_usd");
        assert_eq!(row[17], f.initial_tvl_usd);
        assert_eq!(FEATURE_NAMES[32], "jetton_deployment_at_ts");
        assert_eq!(row[32], f.jetton_deployment_at_ts);
    }

    proptest! {
        /// buys + sells equals the window trade count and the percentage
        /// identity holds on arbitrary windows.
        #[test]
        fn count_identities(
            sides in proptest::collection::vec(any::<bool>(), 1..40),
            offsets in proptest::collection::vec(0i64..299, 1..40),
        ) {
            let n = sides.len().min(offsets.len());
            let mut offs: Vec<i64> = offsets[..n].to_vec();
            offs.sort_unstable();
            offs[0] = 0;
            let specs: Vec<TradeSpec> = offs
                .iter()
                .zip(&sides)
                .map(|(&o, &b)| spec(o, if b { Side::Buy } else { Side::Sell }, 1.0, 1.0, "w"))
                .collect();
            let h = build_history(&specs, vec![pool(-10, 1.0)], meta());
            let f = extract_features(&h, 5).unwrap();
            prop_assert_eq!(f.buys.unwrap() + f.sells.unwrap(), n as f64);
            prop_assert!((f.buy_perc.unwrap() + f.sell_perc.unwrap() - 1.0).abs() < 1e-12);
            let total = f.total_usd_buy_volume.unwrap() + f.total_usd_sell_volume.unwrap();
            prop_assert!((total - f.total_usd_volume.unwrap()).abs() < 1e-9);
            if let (Some(mx), Some(mn)) = (f.max_tvl, f.min_tvl) {
                prop_assert!(mx >= mn);
            }
        }
    }
}
