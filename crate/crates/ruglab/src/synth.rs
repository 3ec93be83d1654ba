//! Seeded synthetic DEX corpus generator.
//!
//! Emits the same trades/pools/tokens CSV files the ingestion layer
//! reads, plus ground_truth.csv mapping each token to its archetype.
//! Four archetypes cover the behaviors the pipeline must tell apart:
//!
//! * `honest`: steady trading past the label horizon, TVL drawdown
//!   bounded well below any rug threshold.
//! * `tvl_rug`: liquidity collapses to a sliver of its peak inside the
//!   horizon; most instances also stop trading at the collapse.
//! * `idle_rug`: all trading ceases a few minutes in, liquidity intact.
//! * `late_rug`: indistinguishable from honest inside the horizon, rugs
//!   well after it. Hard negatives for the 60-minute labels.
//!
//! Rug tokens carry an early-window signature (thin volume, fewer
//! distinct traders, creator running the pool, smaller initial TVL)
//! whose strength is a dial, so corpora can be made easy or hard.

use crate::data::{
    write_corpus_dir, PoolState, Side, Source, TokenMeta, TradeEvent, DEFAULT_DATE_HI,
    DEFAULT_DATE_LO,
};
use crate::error::{Error, Result};
use crate::seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const SYNTH_NS: u64 = 6;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

const MINUTE: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Honest,
    TvlRug,
    IdleRug,
    LateRug,
}

impl Archetype {
    pub const ALL: [Archetype; 4] =
        [Archetype::Honest, Archetype::TvlRug, Archetype::IdleRug, Archetype::LateRug];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Honest => "honest",
            Archetype::TvlRug => "tvl_rug",
            Archetype::IdleRug => "idle_rug",
            Archetype::LateRug => "late_rug",
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown archetype `{s}`")))
    }
}

/// Fractions over the four archetypes; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeMix {
    pub honest: f64,
    pub tvl_rug: f64,
    pub idle_rug: f64,
    pub late_rug: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        ArchetypeMix { honest: 0.60, tvl_rug: 0.18, idle_rug: 0.12, late_rug: 0.10 }
    }
}

impl ArchetypeMix {
    fn fractions(&self) -> [f64; 4] {
        [self.honest, self.tvl_rug, self.idle_rug, self.late_rug]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x) || !x.is_finite()) {
            return Err(Error::Config(format!("archetype fractions must lie in [0, 1], got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("archetype fractions must sum to 1, got {sum}")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> Archetype {
        let u: f64 = rng.gen();
        let f = self.fractions();
        let mut acc = 0.0;
        for (frac, archetype) in f.into_iter().zip(Archetype::ALL) {
            acc += frac;
            if u < acc {
                return archetype;
            }
        }
        Archetype::LateRug
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tokens: usize,
    pub mix: ArchetypeMix,
    pub seed: u64,
    /// Volumes and TVL of every DeDust token are multiplied by this, so
    /// the two sources have shifted feature distributions but identical
    /// label behavior.
    pub dedust_scale: f64,
    /// Mean trades per minute inside the observation window for honest
    /// tokens.
    pub trade_intensity: f64,
    /// Log-standard-deviation of the per-trade price step.
    pub price_volatility: f64,
    /// 0 = rug launches look exactly like honest ones, 1 = maximally
    /// distinct. Controls how learnable the corpus is.
    pub signal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tokens: 1000,
            mix: ArchetypeMix::default(),
            seed: 0,
            dedust_scale: 1.5,
            trade_intensity: 3.0,
            price_volatility: 0.03,
            signal: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 {
            return Err(Error::Config("n_tokens must be at least 1".to_string()));
        }
        self.mix.validate()?;
        if !(self.dedust_scale > 0.0) || !self.dedust_scale.is_finite() {
            return Err(Error::Config(format!("dedust_scale must be positive, got {}", self.dedust_scale)));
        }
        if !(self.trade_intensity > 0.0) || !self.trade_intensity.is_finite() {
            return Err(Error::Config(format!(
                "trade_intensity must be positive, got {}",
                self.trade_intensity
            )));
        }
        if !(self.price_volatility >= 0.0) || !self.price_volatility.is_finite() {
            return Err(Error::Config(format!(
                "price_volatility must be non-negative, got {}",
                self.price_volatility
            )));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::Config(format!("signal must lie in [0, 1], got {}", self.signal)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub trades: Vec<TradeEvent>,
    pub pools: Vec<PoolState>,
    pub tokens: Vec<TokenMeta>,
    /// `(token_id, archetype)` in token order.
    pub ground_truth: Vec<(String, Archetype)>,
}

/// A standard normal via Box-Muller; rand's distributions crate is not a
/// dependency and two uniforms are all this needs.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn lognormal(rng: &mut impl Rng, mu_ln: f64, sigma: f64) -> f64 {
    (mu_ln + sigma * normal(rng)).exp()
}

/// Exponential inter-arrival in seconds, clamped to [1, cap_secs] so no
/// accidental idle gap can form inside an active phase.
fn gap_secs(rng: &mut impl Rng, mean_secs: f64, cap_secs: f64) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    (-u.ln() * mean_secs).clamp(1.0, cap_secs)
}

/// Per-archetype launch-window behavior knobs at a given signal level.
struct WindowProfile {
    mean_gap_secs: f64,
    volume_mu_ln: f64,
    new_trader_prob: f64,
    tvl_mu_ln: f64,
    creator_runs_pool_prob: f64,
}

fn window_profile(archetype: Archetype, intensity: f64, s: f64) -> WindowProfile {
    let honest_gap = MINUTE / intensity;
    let base_volume = 180.0f64.ln();
    let base_tvl = 8000.0f64.ln();
    match archetype {
        Archetype::Honest | Archetype::LateRug => WindowProfile {
            mean_gap_secs: honest_gap,
            volume_mu_ln: base_volume,
            new_trader_prob: 0.85,
            tvl_mu_ln: base_tvl,
            creator_runs_pool_prob: 0.20,
        },
        Archetype::TvlRug => WindowProfile {
            mean_gap_secs: honest_gap * (1.0 + 1.8 * s),
            volume_mu_ln: base_volume - 1.3 * s,
            new_trader_prob: 0.85 * (1.0 - 0.6 * s),
            tvl_mu_ln: base_tvl - 1.6 * s,
            creator_runs_pool_prob: 0.20 + 0.55 * s,
        },
        Archetype::IdleRug => WindowProfile {
            mean_gap_secs: honest_gap * (1.0 + 2.6 * s),
            volume_mu_ln: base_volume - 1.0 * s,
            new_trader_prob: 0.85 * (1.0 - 0.7 * s),
            tvl_mu_ln: base_tvl - 0.5 * s,
            creator_runs_pool_prob: 0.20 + 0.35 * s,
        },
    }
}

struct TokenBundle {
    trades: Vec<TradeEvent>,
    pools: Vec<PoolState>,
    meta: TokenMeta,
    archetype: Archetype,
}

/// How long trading stays active, in seconds from the first trade.
fn active_span(archetype: Archetype, rng: &mut impl Rng) -> f64 {
    match archetype {
        // trade well past the 60-minute horizon, then wind down
        Archetype::Honest => rng.gen_range(75.0..170.0) * MINUTE,
        // collapse strictly between the observation window and the horizon
        Archetype::TvlRug => rng.gen_range(6.5..55.0) * MINUTE,
        Archetype::IdleRug => rng.gen_range(3.0..45.0) * MINUTE,
        Archetype::LateRug => rng.gen_range(75.0..170.0) * MINUTE,
    }
}

fn generate_token(config: &SynthConfig, idx: usize) -> TokenBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, &[SYNTH_NS, idx as u64]));
    let archetype = config.mix.draw(&mut rng);
    let source = if rng.gen_bool(0.5) { Source::Stonfi } else { Source::Dedust };
    let scale = if source == Source::Dedust { config.dedust_scale } else { 1.0 };
    let s = config.signal;
    let profile = window_profile(archetype, config.trade_intensity, s);

    let token_id = format!("tok_{idx:05}");
    let pool_id = format!("pool_{idx:05}");
    let creator = format!("cr_{idx:05}");
    // leave three days of room so the whole history sits inside the
    // default ingestion date window regardless of where the launch lands
    let start: i64 =
        DEFAULT_DATE_LO + rng.gen_range(0..(DEFAULT_DATE_HI - DEFAULT_DATE_LO - 3 * 86_400));

    let pool_creator = if rng.gen_bool(profile.creator_runs_pool_prob) {
        creator.clone()
    } else {
        format!("deployer_{idx:05}")
    };
    let pool_deployed_at = start - rng.gen_range(60..1800);
    let jetton_deployed_at = pool_deployed_at - rng.gen_range(300..86_400);

    let end_active = active_span(archetype, &mut rng);
    // honest and late-rug tokens must hold their final trade past the
    // horizon so the open-ended trailing gap cannot read as idle
    let force_final = matches!(archetype, Archetype::Honest | Archetype::LateRug);
    let window_end = 5.0 * MINUTE;
    // after the launch window honest-style flow thins out but never
    // pauses long enough to qualify as idle
    let post_window_gap = 120.0;
    let gap_cap = 40.0 * MINUTE;

    let mut price = lognormal(&mut rng, (2e-3f64).ln(), 0.8);
    let mut trades: Vec<TradeEvent> = Vec::new();
    let mut traders: Vec<String> = Vec::new();
    let mut t = 0.0f64;
    let mut last_emitted = 0.0f64;
    loop {
        if t > end_active {
            break;
        }
        price *= (config.price_volatility * normal(&mut rng)).exp();
        let side = if trades.is_empty() || rng.gen_bool(0.6) { Side::Buy } else { Side::Sell };
        let trader = if traders.is_empty() || rng.gen_bool(profile.new_trader_prob) {
            let fresh = format!("tr_{idx:05}_{}", traders.len());
            traders.push(fresh.clone());
            fresh
        } else {
            traders[rng.gen_range(0..traders.len())].clone()
        };
        let volume = lognormal(&mut rng, profile.volume_mu_ln, 1.0) * scale;
        trades.push(TradeEvent {
            token_id: token_id.clone(),
            pool_id: pool_id.clone(),
            tx_id: format!("tx_{idx:05}_{:04}", trades.len()),
            timestamp: start + t as i64,
            side,
            price,
            volume_usd: volume,
            trader_id: trader,
            lp_fee: rng.gen_bool(0.85).then(|| volume * 0.003 * rng.gen_range(0.8..1.2)),
            protocol_fee: rng.gen_bool(0.85).then(|| volume * 0.0008 * rng.gen_range(0.8..1.2)),
            source,
        });
        last_emitted = t;
        let mean = if t < window_end { profile.mean_gap_secs } else { post_window_gap };
        t += gap_secs(&mut rng, mean, gap_cap);
    }
    if force_final && last_emitted < end_active {
        price *= (config.price_volatility * normal(&mut rng)).exp();
        let volume = lognormal(&mut rng, profile.volume_mu_ln, 1.0) * scale;
        trades.push(TradeEvent {
            token_id: token_id.clone(),
            pool_id: pool_id.clone(),
            tx_id: format!("tx_{idx:05}_{:04}", trades.len()),
            timestamp: start + end_active as i64,
            side: Side::Sell,
            price,
            volume_usd: volume,
            trader_id: traders[rng.gen_range(0..traders.len())].clone(),
            lp_fee: None,
            protocol_fee: None,
            source,
        });
    }
    // 30% of TVL rugs keep dumping after the collapse instead of going
    // quiet, so the two label definitions stay genuinely different
    if archetype == Archetype::TvlRug && rng.gen_bool(0.3) {
        let dump_end = rng.gen_range(75.0..170.0) * MINUTE;
        let mut t = end_active + gap_secs(&mut rng, 90.0, gap_cap);
        let mut last = end_active;
        while t <= dump_end {
            price *= 0.7 * (config.price_volatility * normal(&mut rng)).exp();
            let volume = lognormal(&mut rng, profile.volume_mu_ln - 1.0, 1.0) * scale;
            trades.push(TradeEvent {
                token_id: token_id.clone(),
                pool_id: pool_id.clone(),
                tx_id: format!("tx_{idx:05}_{:04}", trades.len()),
                timestamp: start + t as i64,
                side: Side::Sell,
                price,
                volume_usd: volume,
                trader_id: traders[rng.gen_range(0..traders.len())].clone(),
                lp_fee: None,
                protocol_fee: None,
                source,
            });
            last = t;
            t += gap_secs(&mut rng, 600.0, gap_cap);
        }
        if last <= 61.0 * MINUTE {
            trades.push(TradeEvent {
                token_id: token_id.clone(),
                pool_id: pool_id.clone(),
                tx_id: format!("tx_{idx:05}_{:04}", trades.len()),
                timestamp: start + dump_end as i64,
                side: Side::Sell,
                price,
                volume_usd: lognormal(&mut rng, profile.volume_mu_ln - 1.0, 1.0) * scale,
                trader_id: traders[rng.gen_range(0..traders.len())].clone(),
                lp_fee: None,
                protocol_fee: None,
                source,
            });
        }
    }

    // TVL snapshots every ~2 minutes over three hours; honest snapshots
    // scatter inside a fixed band of the launch level so the carry-forward
    // drawdown stays below 1 - 0.75/1.30
    let tvl_0 = lognormal(&mut rng, profile.tvl_mu_ln, 0.9) * scale;
    let rug_tvl_at = match archetype {
        Archetype::TvlRug | Archetype::LateRug => Some(end_active),
        Archetype::Honest | Archetype::IdleRug => None,
    };
    let mut pools: Vec<PoolState> = Vec::new();
    let mut snap_t = 0.0f64;
    let mut running_peak = 0.0f64;
    while snap_t <= 180.0 * MINUTE {
        let mut tvl = if snap_t == 0.0 { tvl_0 } else { tvl_0 * rng.gen_range(0.75..1.30) };
        if let Some(rug_at) = rug_tvl_at {
            if snap_t >= rug_at {
                tvl = running_peak * 0.002 * rng.gen_range(0.25..1.0);
            }
        }
        running_peak = running_peak.max(tvl);
        pools.push(PoolState {
            pool_id: pool_id.clone(),
            token_id: token_id.clone(),
            timestamp: start + snap_t as i64,
            tvl_usd: tvl,
            pool_creator: Some(pool_creator.clone()),
            pool_deployed_at: Some(pool_deployed_at),
            source,
        });
        snap_t += 120.0 + rng.gen_range(-20.0..20.0);
    }

    let meta = TokenMeta {
        token_id: token_id.clone(),
        creator_id: Some(creator),
        decimals: rng.gen_bool(0.9).then_some(9),
        jetton_deployed_at: rng.gen_bool(0.9).then_some(jetton_deployed_at),
        source,
    };
    TokenBundle { trades, pools, meta, archetype }
}

/// Generate the whole corpus. Token streams are independent given the
/// seed, so generation is parallel; output order is by token index.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let bundles: Vec<TokenBundle> =
        (0..config.n_tokens).into_par_iter().map(|i| generate_token(config, i)).collect();

    let mut corpus = SynthCorpus {
        trades: Vec::new(),
        pools: Vec::new(),
        tokens: Vec::new(),
        ground_truth: Vec::new(),
    };
    for b in bundles {
        corpus.ground_truth.push((b.meta.token_id.clone(), b.archetype));
        corpus.trades.extend(b.trades);
        corpus.pools.extend(b.pools);
        corpus.tokens.push(b.meta);
    }
    Ok(corpus)
}

pub fn write_ground_truth(mut sink: impl Write, rows: &[(String, Archetype)]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(GROUND_TRUTH_FILE, e);
    writeln!(sink, "token_id,archetype").map_err(io_err)?;
    for (token_id, archetype) in rows {
        writeln!(sink, "{token_id},{}", archetype.as_str()).map_err(io_err)?;
    }
    Ok(())
}

/// Generate and write trades.csv, pools.csv, tokens.csv and
/// ground_truth.csv into `dir`.
pub fn generate_to_dir(config: &SynthConfig, dir: &Path) -> Result<SynthCorpus> {
    let corpus = generate(config)?;
    write_corpus_dir(dir, &corpus.trades, &corpus.pools, &corpus.tokens)?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_ground_truth(std::io::BufWriter::new(file), &corpus.ground_truth)?;
    Ok(corpus)
}
