//! On-chain record types, CSV ingestion, per-token assembly, and corpus
//! filtering.
//!
//! Three input files describe a corpus: `trades.csv` (swap events),
//! `pools.csv` (TVL snapshots), and `tokens.csv` (token metadata). Records
//! are grouped per token into [`TokenHistory`] values whose trade lists are
//! sorted by `(timestamp, tx_id)`, so downstream results do not depend on
//! input row order. Empty CSV cells are missing values, never zeroes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2024-01-01T00:00:00Z; default lower bound on `trading_start`.
pub const DEFAULT_DATE_LO: i64 = 1_704_067_200;
/// 2025-04-01T00:00:00Z; default upper bound on `trading_start`.
pub const DEFAULT_DATE_HI: i64 = 1_743_465_600;

pub const TRADES_FILE: &str = "trades.csv";
pub const POOLS_FILE: &str = "pools.csv";
pub const TOKENS_FILE: &str = "tokens.csv";

const TRADES_HEADER: [&str; 11] = [
    "token_id",
    "pool_id",
    "tx_id",
    "timestamp",
    "side",
    "price",
    "volume_usd",
    "trader_id",
    "lp_fee",
    "protocol_fee",
    "source",
];
const POOLS_HEADER: [&str; 7] = [
    "pool_id",
    "token_id",
    "timestamp",
    "tvl_usd",
    "pool_creator",
    "pool_deployed_at",
    "source",
];
const TOKENS_HEADER: [&str; 5] = [
    "token_id",
    "creator_id",
    "decimals",
    "jetton_deployed_at",
    "source",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Stonfi,
    Dedust,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Stonfi, Source::Dedust];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Stonfi => "stonfi",
            Source::Dedust => "dedust",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stonfi" => Ok(Source::Stonfi),
            "dedust" => Ok(Source::Dedust),
            other => Err(format!(
                "unknown source `{other}` (expected `stonfi` or `dedust`)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "buy" => Ok(Side::Buy),
            "sell" => Ok(Side::Sell),
            other => Err(format!("unknown side `{other}` (expected `buy` or `sell`)")),
        }
    }
}

/// A single swap against a token's pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEvent {
    pub token_id: String,
    pub pool_id: String,
    pub tx_id: String,
    /// Unix seconds.
    pub timestamp: i64,
    pub side: Side,
    /// Quote units per token; non-negative.
    pub price: f64,
    pub volume_usd: f64,
    pub trader_id: String,
    pub lp_fee: Option<f64>,
    pub protocol_fee: Option<f64>,
    pub source: Source,
}

/// A TVL snapshot of one pool at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub pool_id: String,
    pub token_id: String,
    /// Unix seconds.
    pub timestamp: i64,
    pub tvl_usd: f64,
    pub pool_creator: Option<String>,
    /// Unix seconds.
    pub pool_deployed_at: Option<i64>,
    pub source: Source,
}

/// Static token metadata. Every field except the id may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub token_id: String,
    pub creator_id: Option<String>,
    pub decimals: Option<u8>,
    /// Unix seconds.
    pub jetton_deployed_at: Option<i64>,
    pub source: Source,
}

impl TokenMeta {
    /// Placeholder for tokens that trade but have no row in `tokens.csv`.
    pub(crate) fn synthetic(token_id: &str, source: Source) -> Self {
        TokenMeta {
            token_id: token_id.to_string(),
            creator_id: None,
            decimals: None,
            jetton_deployed_at: None,
            source,
        }
    }
}

/// Everything known about one token, with trades sorted by
/// `(timestamp, tx_id)` and pool states by `(timestamp, pool_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenHistory {
    pub meta: TokenMeta,
    pub trades: Vec<TradeEvent>,
    pub pool_states: Vec<PoolState>,
    /// Timestamp of the first trade; the origin for all offsets.
    pub trading_start: i64,
}

impl TokenHistory {
    pub fn token_id(&self) -> &str {
        &self.meta.token_id
    }

    pub fn source(&self) -> Source {
        self.meta.source
    }
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

struct RowCx<'a> {
    file: &'a str,
    line: u64,
}

impl RowCx<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::MalformedRow {
            file: self.file.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn req<'r>(&self, rec: &'r csv::StringRecord, idx: usize, col: &str) -> Result<&'r str> {
        match rec.get(idx) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(self.err(format!("missing required value for `{col}`"))),
        }
    }

    fn opt<'r>(&self, rec: &'r csv::StringRecord, idx: usize) -> Option<&'r str> {
        rec.get(idx).filter(|v| !v.is_empty())
    }

    fn f64_non_neg(&self, raw: &str, col: &str) -> Result<f64> {
        let v: f64 = raw
            .parse()
            .map_err(|_| self.err(format!("`{col}` is not a number: `{raw}`")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.err(format!("`{col}` must be a finite non-negative number, got `{raw}`")));
        }
        Ok(v)
    }

    fn i64_non_neg(&self, raw: &str, col: &str) -> Result<i64> {
        let v: i64 = raw
            .parse()
            .map_err(|_| self.err(format!("`{col}` is not an integer: `{raw}`")))?;
        if v < 0 {
            return Err(self.err(format!("`{col}` must be >= 0, got `{raw}`")));
        }
        Ok(v)
    }

    fn source(&self, raw: &str) -> Result<Source> {
        raw.parse().map_err(|e: String| self.err(e))
    }
}

fn check_header(file: &str, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| Error::BadHeader {
        file: file.to_string(),
        msg: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::BadHeader {
            file: file.to_string(),
            msg: format!("expected columns [{}], got [{}]", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_reader(src: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().flexible(false).from_reader(src)
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Parses `trades.csv` content. `file` labels error messages.
pub fn parse_trades(src: impl Read, file: &str) -> Result<Vec<TradeEvent>> {
    let mut rdr = csv_reader(src);
    check_header(file, &mut rdr, &TRADES_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            file: file.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let cx = RowCx {
            file,
            line: record_line(&rec),
        };
        let side: Side = cx
            .req(&rec, 4, "side")?
            .parse()
            .map_err(|e: String| cx.err(e))?;
        out.push(TradeEvent {
            token_id: cx.req(&rec, 0, "token_id")?.to_string(),
            pool_id: cx.req(&rec, 1, "pool_id")?.to_string(),
            tx_id: cx.req(&rec, 2, "tx_id")?.to_string(),
            timestamp: cx.i64_non_neg(cx.req(&rec, 3, "timestamp")?, "timestamp")?,
            side,
            price: cx.f64_non_neg(cx.req(&rec, 5, "price")?, "price")?,
            volume_usd: cx.f64_non_neg(cx.req(&rec, 6, "volume_usd")?, "volume_usd")?,
            trader_id: cx.req(&rec, 7, "trader_id")?.to_string(),
            lp_fee: cx
                .opt(&rec, 8)
                .map(|v| cx.f64_non_neg(v, "lp_fee"))
                .transpose()?,
            protocol_fee: cx
                .opt(&rec, 9)
                .map(|v| cx.f64_non_neg(v, "protocol_fee"))
                .transpose()?,
            source: cx.source(cx.req(&rec, 10, "source")?)?,
        });
    }
    Ok(out)
}

/// Parses `pools.csv` content.
pub fn parse_pools(src: impl Read, file: &str) -> Result<Vec<PoolState>> {
    let mut rdr = csv_reader(src);
    check_header(file, &mut rdr, &POOLS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            file: file.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let cx = RowCx {
            file,
            line: record_line(&rec),
        };
        out.push(PoolState {
            pool_id: cx.req(&rec, 0, "pool_id")?.to_string(),
            token_id: cx.req(&rec, 1, "token_id")?.to_string(),
            timestamp: cx.i64_non_neg(cx.req(&rec, 2, "timestamp")?, "timestamp")?,
            tvl_usd: cx.f64_non_neg(cx.req(&rec, 3, "tvl_usd")?, "tvl_usd")?,
            pool_creator: cx.opt(&rec, 4).map(str::to_string),
            pool_deployed_at: cx
                .opt(&rec, 5)
                .map(|v| cx.i64_non_neg(v, "pool_deployed_at"))
                .transpose()?,
            source: cx.source(cx.req(&rec, 6, "source")?)?,
        });
    }
    Ok(out)
}

/// Parses `tokens.csv` content. Duplicate `token_id` rows are an error.
pub fn parse_tokens(src: impl Read, file: &str) -> Result<Vec<TokenMeta>> {
    let mut rdr = csv_reader(src);
    check_header(file, &mut rdr, &TOKENS_HEADER)?;
    let mut out: Vec<TokenMeta> = Vec::new();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            file: file.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let cx = RowCx {
            file,
            line: record_line(&rec),
        };
        let token_id = cx.req(&rec, 0, "token_id")?.to_string();
        if seen.insert(token_id.clone(), ()).is_some() {
            return Err(Error::DuplicateMeta {
                file: file.to_string(),
                line: cx.line,
                token_id,
            });
        }
        let decimals = match cx.opt(&rec, 2) {
            Some(raw) => {
                let v: u16 = raw
                    .parse()
                    .map_err(|_| cx.err(format!("`decimals` is not an integer: `{raw}`")))?;
                if v > 255 {
                    return Err(cx.err(format!("`decimals` out of range [0,255]: `{raw}`")));
                }
                Some(v as u8)
            }
            None => None,
        };
        out.push(TokenMeta {
            token_id,
            creator_id: cx.opt(&rec, 1).map(str::to_string),
            decimals,
            jetton_deployed_at: cx
                .opt(&rec, 3)
                .map(|v| cx.i64_non_neg(v, "jetton_deployed_at"))
                .transpose()?,
            source: cx.source(cx.req(&rec, 4, "source")?)?,
        });
    }
    Ok(out)
}

/// Parses the three corpus streams in one call.
pub fn parse_corpus(
    trades: impl Read,
    pools: impl Read,
    tokens: impl Read,
) -> Result<(Vec<TradeEvent>, Vec<PoolState>, Vec<TokenMeta>)> {
    Ok((
        parse_trades(trades, TRADES_FILE)?,
        parse_pools(pools, POOLS_FILE)?,
        parse_tokens(tokens, TOKENS_FILE)?,
    ))
}

/// Parses `trades.csv`, `pools.csv`, and `tokens.csv` from a directory.
pub fn parse_corpus_dir(dir: &Path) -> Result<(Vec<TradeEvent>, Vec<PoolState>, Vec<TokenMeta>)> {
    let open = |name: &str| {
        let path = dir.join(name);
        std::fs::File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))
    };
    let trades = parse_trades(open(TRADES_FILE)?, &dir.join(TRADES_FILE).display().to_string())?;
    let pools = parse_pools(open(POOLS_FILE)?, &dir.join(POOLS_FILE).display().to_string())?;
    let tokens = parse_tokens(open(TOKENS_FILE)?, &dir.join(TOKENS_FILE).display().to_string())?;
    Ok((trades, pools, tokens))
}

// ---------------------------------------------------------------------------
// writing
// ---------------------------------------------------------------------------

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_i64(v: Option<i64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trades(sink: impl Write, trades: &[TradeEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| Error::io(TRADES_FILE, std::io::Error::other(e));
    w.write_record(TRADES_HEADER).map_err(io_err)?;
    for t in trades {
        w.write_record([
            t.token_id.as_str(),
            t.pool_id.as_str(),
            t.tx_id.as_str(),
            &t.timestamp.to_string(),
            t.side.as_str(),
            &t.price.to_string(),
            &t.volume_usd.to_string(),
            t.trader_id.as_str(),
            &fmt_opt_f64(t.lp_fee),
            &fmt_opt_f64(t.protocol_fee),
            t.source.as_str(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(TRADES_FILE, e))?;
    Ok(())
}

pub fn write_pools(sink: impl Write, pools: &[PoolState]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| Error::io(POOLS_FILE, std::io::Error::other(e));
    w.write_record(POOLS_HEADER).map_err(io_err)?;
    for p in pools {
        w.write_record([
            p.pool_id.as_str(),
            p.token_id.as_str(),
            &p.timestamp.to_string(),
            &p.tvl_usd.to_string(),
            p.pool_creator.as_deref().unwrap_or(""),
            &fmt_opt_i64(p.pool_deployed_at),
            p.source.as_str(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(POOLS_FILE, e))?;
    Ok(())
}

pub fn write_tokens(sink: impl Write, tokens: &[TokenMeta]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| Error::io(TOKENS_FILE, std::io::Error::other(e));
    w.write_record(TOKENS_HEADER).map_err(io_err)?;
    for m in tokens {
        w.write_record([
            m.token_id.as_str(),
            m.creator_id.as_deref().unwrap_or(""),
            &m.decimals.map(|d| d.to_string()).unwrap_or_default(),
            &fmt_opt_i64(m.jetton_deployed_at),
            m.source.as_str(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(TOKENS_FILE, e))?;
    Ok(())
}

/// Writes the three corpus files into `dir`, creating it if needed.
pub fn write_corpus_dir(
    dir: &Path,
    trades: &[TradeEvent],
    pools: &[PoolState],
    tokens: &[TokenMeta],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write_trades(create(TRADES_FILE)?, trades)?;
    write_pools(create(POOLS_FILE)?, pools)?;
    write_tokens(create(TOKENS_FILE)?, tokens)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// assembly and filtering
// ---------------------------------------------------------------------------

/// Groups raw records into per-token histories.
///
/// Tokens are taken from the trade stream: a token with pool states or
/// metadata but no trades is dropped. Trades sort by `(timestamp, tx_id)`,
/// pool states by `(timestamp, pool_id)`, so assembly is deterministic
/// under any input row order. Tokens missing from `tokens.csv` get
/// all-missing metadata.
pub fn assemble_histories(
    trades: Vec<TradeEvent>,
    pools: Vec<PoolState>,
    tokens: Vec<TokenMeta>,
) -> Vec<TokenHistory> {
    let mut meta_by_token: BTreeMap<String, TokenMeta> = tokens
        .into_iter()
        .map(|m| (m.token_id.clone(), m))
        .collect();
    let mut trades_by_token: BTreeMap<String, Vec<TradeEvent>> = BTreeMap::new();
    for t in trades {
        trades_by_token.entry(t.token_id.clone()).or_default().push(t);
    }
    let mut pools_by_token: BTreeMap<String, Vec<PoolState>> = BTreeMap::new();
    for p in pools {
        pools_by_token.entry(p.token_id.clone()).or_default().push(p);
    }

    let mut out = Vec::with_capacity(trades_by_token.len());
    for (token_id, mut trades) in trades_by_token {
        trades.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.tx_id.cmp(&b.tx_id))
        });
        let mut pool_states = pools_by_token.remove(&token_id).unwrap_or_default();
        pool_states.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.pool_id.cmp(&b.pool_id))
                .then_with(|| a.tvl_usd.total_cmp(&b.tvl_usd))
        });
        let source = trades[0].source;
        let meta = meta_by_token
            .remove(&token_id)
            .unwrap_or_else(|| TokenMeta::synthetic(&token_id, source));
        let trading_start = trades[0].timestamp;
        out.push(TokenHistory {
            meta,
            trades,
            pool_states,
            trading_start,
        });
    }
    out
}

/// Corpus-level cleaning rules applied before labeling and featurization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusFilter {
    /// Inclusive lower bound on `trading_start`, unix seconds.
    pub date_lo: i64,
    /// Inclusive upper bound on `trading_start`, unix seconds.
    pub date_hi: i64,
    /// Drop tokens that have no pool state at all.
    pub require_pool: bool,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        CorpusFilter {
            date_lo: DEFAULT_DATE_LO,
            date_hi: DEFAULT_DATE_HI,
            require_pool: true,
        }
    }
}

/// Applies the filter: zero-volume trades are removed first, then
/// `trading_start` is recomputed from the surviving trades and the
/// window/pool checks run against it. Idempotent.
pub fn filter_corpus(histories: Vec<TokenHistory>, filter: &CorpusFilter) -> Result<Vec<TokenHistory>> {
    if filter.date_lo > filter.date_hi {
        return Err(Error::Config(format!(
            "date_lo ({}) must not exceed date_hi ({})",
            filter.date_lo, filter.date_hi
        )));
    }
    let mut out = Vec::with_capacity(histories.len());
    for mut h in histories {
        h.trades.retain(|t| t.volume_usd > 0.0);
        if h.trades.is_empty() {
            continue;
        }
        h.trading_start = h.trades[0].timestamp;
        if filter.require_pool && h.pool_states.is_empty() {
            continue;
        }
        if h.trading_start < filter.date_lo || h.trading_start > filter.date_hi {
            continue;
        }
        out.push(h);
    }
    Ok(out)
}

/// Parse + assemble + filter from a corpus directory.
pub fn load_histories(dir: &Path, filter: &CorpusFilter) -> Result<Vec<TokenHistory>> {
    let (trades, pools, tokens) = parse_corpus_dir(dir)?;
    filter_corpus(assemble_histories(trades, pools, tokens), filter)
}
