//! Ground-truth labeling of token launches.
//!
//! Two independent rules decide whether a launch was a rug pull over a
//! horizon measured from the first trade:
//!
//! * **TVL rule**: build the token's TVL step series, find the largest
//!   peak-then-trough drop, and flag the token when that relative drop
//!   reaches `p`.
//! * **Idle rule**: flag the token when a trading silence of at least
//!   `idle_gap_minutes` starts inside the horizon (the open-ended silence
//!   after the last trade counts).
//!
//! All offsets are seconds since `trading_start`. TVL is carried forward
//! between snapshots, so the sample points fully determine the series.

use serde::{Deserialize, Serialize};

use crate::data::TokenHistory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Idle,
    Tvl,
}

impl Approach {
    pub fn as_str(&self) -> &'static str {
        match self {
            Approach::Idle => "idle",
            Approach::Tvl => "tvl",
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "idle" => Ok(Approach::Idle),
            "tvl" => Ok(Approach::Tvl),
            other => Err(format!("unknown approach `{other}` (expected `idle` or `tvl`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub approach: Approach,
    /// Relative TVL drop threshold, in (0, 1].
    pub p: f64,
    /// Label horizon, minutes from the first trade.
    pub horizon_minutes: u32,
    /// Minimum trading silence that counts as idle, minutes.
    pub idle_gap_minutes: u32,
    /// Feature window length, minutes. Kept here so labels and features
    /// agree on the anchor configuration.
    pub observation_minutes: u32,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            approach: Approach::Tvl,
            p: 0.99,
            horizon_minutes: 60,
            idle_gap_minutes: 60,
            observation_minutes: 5,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if self.horizon_minutes == 0 {
            return Err(Error::Config("horizon_minutes must be positive".into()));
        }
        if self.idle_gap_minutes == 0 {
            return Err(Error::Config("idle_gap_minutes must be positive".into()));
        }
        if self.observation_minutes == 0 {
            return Err(Error::Config("observation_minutes must be positive".into()));
        }
        if self.observation_minutes > self.horizon_minutes {
            return Err(Error::Config(format!(
                "observation window ({} min) must not exceed the horizon ({} min)",
                self.observation_minutes, self.horizon_minutes
            )));
        }
        Ok(())
    }
}

/// TVL step series over a window: `(offset_seconds, tvl_usd)` samples with
/// strictly increasing offsets. The value holds until the next sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TvlSeries {
    pub samples: Vec<(i64, f64)>,
}

/// Largest relative TVL drop and where it happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxDrop {
    /// Relative drop in [0, 1].
    pub md: f64,
    /// Offset of the peak, seconds from the first trade.
    pub t0_offset: i64,
    /// Offset of the trough, seconds; never earlier than `t0_offset`.
    pub tau_offset: i64,
}

/// Label decision plus the evidence behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelOutcome {
    pub label: u8,
    /// Relative drop that backed a TVL decision; `None` for idle labels and
    /// for tokens with no TVL data.
    pub md: Option<f64>,
    /// Token had no TVL observation in or before the window and was labeled
    /// rugged by convention.
    pub no_liquidity: bool,
}

/// Builds the TVL series over `[0, horizon]` (offsets inclusive at both
/// ends when `include_end`, exclusive of `horizon` otherwise).
///
/// Snapshots of every pool tied to the token are summed: each pool
/// contributes its latest snapshot value, or nothing before its first one.
/// The latest per-pool snapshot at or before the first trade is folded
/// into a carried-forward sample at offset 0.
pub fn tvl_series(history: &TokenHistory, horizon_seconds: i64, include_end: bool) -> Result<TvlSeries> {
    use std::collections::BTreeMap;

    let start = history.trading_start;
    let in_window = |off: i64| off > 0 && (off < horizon_seconds || (include_end && off == horizon_seconds));

    // Latest snapshot at or before offset 0, per pool. Records are sorted by
    // (timestamp, pool_id), so later iterations overwrite earlier ones.
    let mut base: BTreeMap<&str, f64> = BTreeMap::new();
    let mut events: BTreeMap<i64, Vec<(&str, f64)>> = BTreeMap::new();
    for p in &history.pool_states {
        let off = p.timestamp - start;
        if off <= 0 {
            base.insert(p.pool_id.as_str(), p.tvl_usd);
        } else if in_window(off) {
            events.entry(off).or_default().push((p.pool_id.as_str(), p.tvl_usd));
        }
    }

    let mut current = base;
    let mut samples = Vec::with_capacity(events.len() + 1);
    if !current.is_empty() {
        samples.push((0, current.values().sum()));
    }
    for (off, updates) in events {
        for (pool, tvl) in updates {
            current.insert(pool, tvl);
        }
        samples.push((off, current.values().sum()));
    }

    if samples.is_empty() {
        return Err(Error::EmptyTvl);
    }
    Ok(TvlSeries { samples })
}

/// Largest relative drop of a step series: the peak is the earliest sample
/// attaining the window maximum, the trough the earliest minimum at or
/// after the peak. An all-zero series has no drop.
pub fn max_drop_series(series: &TvlSeries) -> MaxDrop {
    let s = &series.samples;
    debug_assert!(!s.is_empty());

    let mut peak = 0;
    for i in 1..s.len() {
        if s[i].1 > s[peak].1 {
            peak = i;
        }
    }
    let mut trough = peak;
    for j in peak..s.len() {
        if s[j].1 < s[trough].1 {
            trough = j;
        }
    }
    let md = if s[peak].1 > 0.0 {
        (s[peak].1 - s[trough].1).abs() / s[peak].1
    } else {
        0.0
    };
    MaxDrop {
        md,
        t0_offset: s[peak].0,
        tau_offset: s[trough].0,
    }
}

/// Maximum relative TVL drop of a token over `[0, horizon]`.
pub fn max_drop(history: &TokenHistory, horizon_minutes: u32) -> Result<MaxDrop> {
    let series = tvl_series(history, i64::from(horizon_minutes) * 60, true)?;
    Ok(max_drop_series(&series))
}

/// TVL rule: rugged when the maximum relative drop reaches `cfg.p`.
/// A token with no TVL data in or before the window is rugged by
/// convention, with `no_liquidity` set.
pub fn label_tvl(history: &TokenHistory, cfg: &LabelConfig) -> Result<LabelOutcome> {
    cfg.validate()?;
    match max_drop(history, cfg.horizon_minutes) {
        Ok(drop) => Ok(LabelOutcome {
            label: u8::from(drop.md >= cfg.p),
            md: Some(drop.md),
            no_liquidity: false,
        }),
        Err(Error::EmptyTvl) => Ok(LabelOutcome {
            label: 1,
            md: None,
            no_liquidity: true,
        }),
        Err(e) => Err(e),
    }
}

/// Idle rule: rugged when a trading silence of at least
/// `cfg.idle_gap_minutes` starts within `[0, horizon]`. Silences between
/// consecutive trades count, as does the open-ended one after the last
/// trade.
pub fn label_idle(history: &TokenHistory, cfg: &LabelConfig) -> Result<LabelOutcome> {
    cfg.validate()?;
    let horizon = i64::from(cfg.horizon_minutes) * 60;
    let gap_min = i64::from(cfg.idle_gap_minutes) * 60;
    let start = history.trading_start;

    let mut label = 0u8;
    for w in history.trades.windows(2) {
        let gap_start = w[0].timestamp - start;
        let gap_len = w[1].timestamp - w[0].timestamp;
        if gap_start <= horizon && gap_len >= gap_min {
            label = 1;
            break;
        }
    }
    if label == 0 {
        if let Some(last) = history.trades.last() {
            // trailing silence is unbounded, so only its start matters
            if last.timestamp - start <= horizon {
                label = 1;
            }
        }
    }
    Ok(LabelOutcome {
        label,
        md: None,
        no_liquidity: false,
    })
}

/// Labels one token under the configured approach.
pub fn label(history: &TokenHistory, cfg: &LabelConfig) -> Result<LabelOutcome> {
    match cfg.approach {
        Approach::Idle => label_idle(history, cfg),
        Approach::Tvl => label_tvl(history, cfg),
    }
}

/// Fraction of tokens the TVL rule flags at each threshold in `p_grid`.
/// Non-increasing in `p` since each token's drop is fixed.
pub fn sweep_p(
    histories: &[TokenHistory],
    p_grid: &[f64],
    horizon_minutes: u32,
) -> Result<Vec<(f64, f64)>> {
    if histories.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if p_grid.is_empty() {
        return Err(Error::Config("p grid must not be empty".into()));
    }
    for &p in p_grid {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1], got {p}")));
        }
    }
    // one series pass per token, thresholds applied afterwards
    let drops: Vec<Option<f64>> = histories
        .iter()
        .map(|h| match max_drop(h, horizon_minutes) {
            Ok(d) => Ok(Some(d.md)),
            Err(Error::EmptyTvl) => Ok(None), // rugged at every threshold
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let n = histories.len() as f64;
    Ok(p_grid
        .iter()
        .map(|&p| {
            let flagged = drops
                .iter()
                .filter(|d| match d {
                    Some(md) => *md >= p,
                    None => true,
                })
                .count();
            (p, flagged as f64 / n)
        })
        .collect())
}

/// Rugged-class fraction at each horizon under `cfg.approach`.
pub fn sweep_horizon(
    histories: &[TokenHistory],
    horizons_minutes: &[u32],
    cfg: &LabelConfig,
) -> Result<Vec<(u32, f64)>> {
    if histories.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if horizons_minutes.is_empty() {
        return Err(Error::Config("horizon grid must not be empty".into()));
    }
    let n = histories.len() as f64;
    horizons_minutes
        .iter()
        .map(|&h| {
            let cfg_h = LabelConfig {
                horizon_minutes: h,
                // the anchor window must stay inside the horizon
                observation_minutes: cfg.observation_minutes.min(h),
                ..*cfg
            };
            let mut flagged = 0usize;
            for history in histories {
                flagged += usize::from(label(history, &cfg_h)?.label);
            }
            Ok((h, flagged as f64 / n))
        })
        .collect()
}
