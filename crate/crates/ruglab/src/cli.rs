//! Command-line interface: one binary, one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 model or
//! experiment failure. Every run prints its resolved effective config as a
//! single JSON line before doing any work, so logs always show what a run
//! actually used after flag/config/default precedence was applied.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::data::{self, CorpusFilter, Source, TokenHistory};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsReport};
use crate::experiments::{
    build_dataset, default_grid, fit_on_split, grid_search, rfe, run_protocol, score_with, CvCell,
    ExperimentConfig, ExperimentIdentity, FusionProtocol, GridPoint, LabeledDataset,
};
use crate::features::{extract_features, FEATURE_NAMES};
use crate::labeling::{self, Approach, LabelConfig};
use crate::learners::{self, Family, HyperParams};
use crate::preprocess::{Preprocessor, ScalingModes};
use crate::seeds;
use crate::synth::{self, SynthConfig};

/// Seed namespace for fits launched directly by the CLI (`train`).
const CLI_NS: u64 = 7;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_P_GRID: [f64; 12] =
    [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99, 1.0];
const DEFAULT_HORIZONS: [u32; 6] = [15, 30, 45, 60, 90, 120];

#[derive(Debug, Parser)]
#[command(name = "ruglab", version, about = "Early rug-pull detection for DEX token launches")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-exchange corpus with known archetypes.
    Synth {
        /// Number of tokens to generate.
        #[arg(long, default_value_t = 1000)]
        n_tokens: usize,
        /// How separable rug launches are from honest ones, 0..=1.
        #[arg(long)]
        signal: Option<f64>,
        /// Volume/TVL multiplier applied to the DeDust half of the corpus.
        #[arg(long)]
        dedust_scale: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Parse and filter a corpus, then print a per-source summary.
    Ingest {
        #[command(flatten)]
        data: DataOpts,
    },
    /// Label every token and write labels.csv.
    Label {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        label: LabelOpts,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Extract launch-window features and write features.csv.
    Featurize {
        #[command(flatten)]
        data: DataOpts,
        /// Observation window length in minutes.
        #[arg(long)]
        window: Option<u32>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rug fraction as a function of the TVL-drop threshold; writes sweep_p.csv.
    SweepP {
        #[command(flatten)]
        data: DataOpts,
        /// Label horizon in minutes.
        #[arg(long)]
        horizon: Option<u32>,
        /// Comma-separated thresholds to evaluate.
        #[arg(long, value_delimiter = ',')]
        p_grid: Option<Vec<f64>>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rug fraction as a function of the horizon; writes sweep_horizon.csv.
    SweepHorizon {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        label: LabelOpts,
        /// Comma-separated horizons (minutes) to evaluate.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<u32>>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Grid-search, fit on the full corpus, save model + preprocessor.
    Train {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        label: LabelOpts,
        /// Learner family: dtree, rforest, gboost, or reg2boost.
        #[arg(long)]
        family: Option<Family>,
        /// Cross-validation folds for the grid search.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Drop tokens that already rugged inside the observation window.
        #[arg(long)]
        drop_window_rugs: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score a corpus with a saved model and write metrics.json.
    Evaluate {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        label: LabelOpts,
        /// Directory holding model.json and preprocessor.json.
        #[arg(long)]
        model: PathBuf,
        /// Score at or above this is classified as a rug.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run one cross-exchange protocol end to end.
    Fuse {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        label: LabelOpts,
        /// Protocol id 1..=5.
        #[arg(long)]
        protocol: Option<u8>,
        #[arg(long)]
        family: Option<Family>,
        /// Which source protocol 3 holds out for testing.
        #[arg(long)]
        test_source: Option<Source>,
        /// Cross-validation folds for the grid search.
        #[arg(long)]
        k: Option<usize>,
        /// Drop tokens that already rugged inside the observation window.
        #[arg(long)]
        drop_window_rugs: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recursive feature elimination; writes rfe.csv.
    Rfe {
        #[command(flatten)]
        data: DataOpts,
        #[command(flatten)]
        label: LabelOpts,
        #[arg(long)]
        family: Option<Family>,
        /// Number of features to keep.
        #[arg(long, default_value_t = 10)]
        target: usize,
        /// Features dropped per refit.
        #[arg(long, default_value_t = 1)]
        step: usize,
        /// Drop tokens that already rugged inside the observation window.
        #[arg(long)]
        drop_window_rugs: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Merge metrics.json files into one comparison table (report.csv).
    Report {
        /// metrics.json files, one table row each.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
struct DataOpts {
    /// Directory holding trades.csv, pools.csv, and tokens.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Inclusive lower bound on launch time, unix seconds.
    #[arg(long)]
    date_lo: Option<i64>,
    /// Inclusive upper bound on launch time, unix seconds.
    #[arg(long)]
    date_hi: Option<i64>,
    /// Keep tokens that never report a pool snapshot.
    #[arg(long)]
    keep_poolless: bool,
}

#[derive(Debug, Clone, Copy, Default, Args)]
struct LabelOpts {
    /// Labeling rule: tvl or idle.
    #[arg(long)]
    approach: Option<Approach>,
    /// Relative TVL drop that counts as a rug, in (0, 1].
    #[arg(long)]
    p: Option<f64>,
    /// Label horizon in minutes from the first trade.
    #[arg(long)]
    horizon: Option<u32>,
    /// Minimum trading silence in minutes the idle rule flags.
    #[arg(long)]
    gap: Option<u32>,
    /// Observation window length in minutes.
    #[arg(long)]
    window: Option<u32>,
}

/// On-disk config. Every field is optional; flags win over file values and
/// file values win over defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    approach: Option<Approach>,
    protocol: Option<u8>,
    family: Option<Family>,
    grid: Option<Vec<GridPoint>>,
    seed: Option<u64>,
    test_source: Option<Source>,
    label: Option<FileLabel>,
    data: Option<FileData>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLabel {
    p: Option<f64>,
    horizon_minutes: Option<u32>,
    idle_gap_minutes: Option<u32>,
    observation_minutes: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileData {
    stonfi_dir: Option<PathBuf>,
    dedust_dir: Option<PathBuf>,
}

/// metrics.json layout: the metric fields at the top level plus an
/// `identity` object saying which experiment produced them.
#[derive(Debug, serde::Serialize, Deserialize)]
struct MetricsFile {
    identity: ExperimentIdentity,
    #[serde(flatten)]
    metrics: MetricsReport,
}

pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_thread_pool();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests land here too; only real parse
            // failures are usage errors.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn init_thread_pool() {
    let Ok(raw) = std::env::var("RUGLAB_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // Errors only mean a global pool already exists (tests call the
            // CLI repeatedly in one process); the first cap wins.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => log::warn!("ignoring RUGLAB_THREADS={raw:?}: expected a positive integer"),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    match cli.command {
        Command::Synth { n_tokens, signal, dedust_scale, out } => {
            cmd_synth(n_tokens, signal, dedust_scale, seed, &out)
        }
        Command::Ingest { data } => cmd_ingest(&data, &file),
        Command::Label { data, label, out } => cmd_label(&data, &label, &file, seed, &out),
        Command::Featurize { data, window, out } => cmd_featurize(&data, window, &file, seed, &out),
        Command::SweepP { data, horizon, p_grid, out } => {
            cmd_sweep_p(&data, horizon, p_grid, &file, seed, &out)
        }
        Command::SweepHorizon { data, label, horizons, out } => {
            cmd_sweep_horizon(&data, &label, horizons, &file, seed, &out)
        }
        Command::Train { data, label, family, k, drop_window_rugs, out } => {
            cmd_train(&data, &label, family, k, drop_window_rugs, &file, seed, &out)
        }
        Command::Evaluate { data, label, model, threshold, out } => {
            cmd_evaluate(&data, &label, &model, threshold, &file, seed, &out)
        }
        Command::Fuse { data, label, protocol, family, test_source, k, drop_window_rugs, out } => {
            cmd_fuse(&data, &label, protocol, family, test_source, k, drop_window_rugs, &file, seed, &out)
        }
        Command::Rfe { data, label, family, target, step, drop_window_rugs, out } => {
            cmd_rfe(&data, &label, family, target, step, drop_window_rugs, &file, seed, &out)
        }
        Command::Report { inputs, out } => cmd_report(&inputs, &out),
    }
}

// ---------------------------------------------------------------- resolution

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
}

fn resolve_label(opts: &LabelOpts, file: &FileConfig) -> LabelConfig {
    let mut cfg = LabelConfig::default();
    if let Some(a) = file.approach {
        cfg.approach = a;
    }
    if let Some(l) = &file.label {
        if let Some(p) = l.p {
            cfg.p = p;
        }
        if let Some(h) = l.horizon_minutes {
            cfg.horizon_minutes = h;
        }
        if let Some(g) = l.idle_gap_minutes {
            cfg.idle_gap_minutes = g;
        }
        if let Some(w) = l.observation_minutes {
            cfg.observation_minutes = w;
        }
    }
    if let Some(a) = opts.approach {
        cfg.approach = a;
    }
    if let Some(p) = opts.p {
        cfg.p = p;
    }
    if let Some(h) = opts.horizon {
        cfg.horizon_minutes = h;
    }
    if let Some(g) = opts.gap {
        cfg.idle_gap_minutes = g;
    }
    if let Some(w) = opts.window {
        cfg.observation_minutes = w;
    }
    cfg
}

fn resolve_family(flag: Option<Family>, file: &FileConfig) -> Family {
    flag.or(file.family)
        .or_else(|| file.grid.as_ref().and_then(|g| g.first()).map(|pt| pt.params.family()))
        .unwrap_or(Family::Gboost)
}

/// Grid from the config if it has one (every point must match `family`),
/// otherwise the family's default search space.
fn resolve_grid(family: Family, file: &FileConfig) -> Result<Vec<GridPoint>> {
    match &file.grid {
        Some(grid) if !grid.is_empty() => {
            for pt in grid {
                if pt.params.family() != family {
                    return Err(Error::Config(format!(
                        "config grid point has family {} but the run asked for {}",
                        pt.params.family().as_str(),
                        family.as_str()
                    )));
                }
            }
            Ok(grid.clone())
        }
        _ => Ok(default_grid(family)),
    }
}

fn corpus_filter(opts: &DataOpts) -> CorpusFilter {
    let mut filter = CorpusFilter::default();
    if let Some(lo) = opts.date_lo {
        filter.date_lo = lo;
    }
    if let Some(hi) = opts.date_hi {
        filter.date_hi = hi;
    }
    if opts.keep_poolless {
        filter.require_pool = false;
    }
    filter
}

/// Histories from `--data`, else from the config's per-source dirs. Mixed
/// directories are fine either way; config dirs are pinned to their source
/// so a stray row cannot leak across exchanges.
fn load_data(opts: &DataOpts, file: &FileConfig) -> Result<Vec<TokenHistory>> {
    let filter = corpus_filter(opts);
    if let Some(dir) = &opts.data {
        return data::load_histories(dir, &filter);
    }
    let mut out = Vec::new();
    let mut configured = false;
    if let Some(dir) = file.data.as_ref().and_then(|d| d.stonfi_dir.as_ref()) {
        out.extend(
            data::load_histories(dir, &filter)?.into_iter().filter(|h| h.source() == Source::Stonfi),
        );
        configured = true;
    }
    if let Some(dir) = file.data.as_ref().and_then(|d| d.dedust_dir.as_ref()) {
        out.extend(
            data::load_histories(dir, &filter)?.into_iter().filter(|h| h.source() == Source::Dedust),
        );
        configured = true;
    }
    if !configured {
        return Err(Error::io(
            "data",
            std::io::Error::new(
                ErrorKind::NotFound,
                "no input directory; pass --data <dir> or set data.stonfi_dir / data.dedust_dir in the config",
            ),
        ));
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn data_json(opts: &DataOpts, file: &FileConfig) -> serde_json::Value {
    let filter = corpus_filter(opts);
    let dirs = match &opts.data {
        Some(dir) => json!({ "mixed": dir }),
        None => json!({
            "stonfi_dir": file.data.as_ref().and_then(|d| d.stonfi_dir.as_ref()),
            "dedust_dir": file.data.as_ref().and_then(|d| d.dedust_dir.as_ref()),
        }),
    };
    json!({
        "dirs": dirs,
        "date_lo": filter.date_lo,
        "date_hi": filter.date_hi,
        "require_pool": filter.require_pool,
    })
}

/// The one line every subcommand prints before doing work. Keys are sorted
/// by serde_json, so the line is deterministic for a given invocation.
fn print_effective(command: &str, mut body: serde_json::Value) {
    if let Some(map) = body.as_object_mut() {
        map.insert("command".to_string(), json!(command));
    }
    println!("effective config: {body}");
}

// ------------------------------------------------------------------ file I/O

fn file_error(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::io(
        path.display().to_string(),
        std::io::Error::new(ErrorKind::Other, err.to_string()),
    )
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| file_error(path, e))
}

fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(|e| file_error(path, e))?;
    std::io::Write::flush(&mut writer).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| file_error(path, e))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_cv_table(path: &Path, table: &[CvCell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| file_error(path, e);
    w.write_record([
        "point",
        "family",
        "params",
        "numeric_scaling",
        "timestamp_scaling",
        "fold_aucs",
        "mean_auc",
    ])
    .map_err(err)?;
    for (i, cell) in table.iter().enumerate() {
        let params = serde_json::to_string(&cell.point.params).map_err(|e| file_error(path, e))?;
        let folds: Vec<String> = cell.fold_aucs.iter().map(|a| opt_cell(*a)).collect();
        w.write_record([
            i.to_string(),
            cell.point.params.family().as_str().to_string(),
            params,
            format!("{:?}", cell.point.scaling.numeric).to_lowercase(),
            format!("{:?}", cell.point.scaling.timestamps).to_lowercase(),
            folds.join(";"),
            opt_cell(cell.mean_auc),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_importances(path: &Path, importances: &[(String, f64)]) -> Result<()> {
    let mut sorted: Vec<&(String, f64)> = importances.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| file_error(path, e);
    w.write_record(["feature", "importance"]).map_err(err)?;
    for (name, value) in sorted {
        w.write_record([name.as_str(), &value.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// "stonfi", "dedust", or "stonfi+dedust" depending on what the rows hold.
fn sources_string(ds: &LabeledDataset) -> String {
    let present: BTreeSet<Source> = ds.sources.iter().copied().collect();
    let names: Vec<&str> = present.iter().map(|s| s.as_str()).collect();
    names.join("+")
}

// --------------------------------------------------------------- subcommands

fn cmd_synth(
    n_tokens: usize,
    signal: Option<f64>,
    dedust_scale: Option<f64>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut config = SynthConfig { n_tokens, seed, ..SynthConfig::default() };
    if let Some(s) = signal {
        config.signal = s;
    }
    if let Some(s) = dedust_scale {
        config.dedust_scale = s;
    }
    print_effective(
        "synth",
        json!({
            "n_tokens": config.n_tokens,
            "seed": config.seed,
            "signal": config.signal,
            "dedust_scale": config.dedust_scale,
            "mix": {
                "honest": config.mix.honest,
                "tvl_rug": config.mix.tvl_rug,
                "idle_rug": config.mix.idle_rug,
                "late_rug": config.mix.late_rug,
            },
            "out": out,
        }),
    );
    ensure_dir(out)?;
    let corpus = synth::generate_to_dir(&config, out)?;
    let mut counts = std::collections::BTreeMap::new();
    for (_, archetype) in &corpus.ground_truth {
        *counts.entry(archetype.as_str()).or_insert(0usize) += 1;
    }
    for (archetype, count) in &counts {
        println!("{archetype}: {count} tokens");
    }
    println!(
        "wrote {} trades, {} tvl snapshots, {} tokens to {}",
        corpus.trades.len(),
        corpus.pools.len(),
        corpus.tokens.len(),
        out.display()
    );
    Ok(())
}

fn cmd_ingest(data: &DataOpts, file: &FileConfig) -> Result<()> {
    print_effective("ingest", json!({ "data": data_json(data, file) }));
    let histories = load_data(data, file)?;
    for source in Source::ALL {
        let of_source: Vec<&TokenHistory> =
            histories.iter().filter(|h| h.source() == source).collect();
        if of_source.is_empty() {
            println!("{source}: 0 tokens");
            continue;
        }
        let trades: usize = of_source.iter().map(|h| h.trades.len()).sum();
        let snapshots: usize = of_source.iter().map(|h| h.pool_states.len()).sum();
        let lo = of_source.iter().map(|h| h.trading_start).min().unwrap();
        let hi = of_source.iter().map(|h| h.trading_start).max().unwrap();
        println!(
            "{source}: {} tokens, {trades} trades, {snapshots} tvl snapshots, launches {lo}..{hi}",
            of_source.len()
        );
    }
    println!("total: {} tokens", histories.len());
    Ok(())
}

fn cmd_label(
    data: &DataOpts,
    label: &LabelOpts,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = resolve_label(label, file);
    cfg.validate()?;
    print_effective(
        "label",
        json!({ "label": cfg, "seed": seed, "data": data_json(data, file), "out": out }),
    );
    let histories = load_data(data, file)?;
    ensure_dir(out)?;
    let path = out.join("labels.csv");
    let mut w = csv_writer(&path)?;
    let err = |e: csv::Error| file_error(&path, e);
    w.write_record(["token_id", "source", "approach", "p", "horizon_minutes", "label", "md", "annotation"])
        .map_err(err)?;
    for history in &histories {
        let outcome = labeling::label(history, &cfg)?;
        w.write_record([
            history.token_id(),
            history.source().as_str(),
            cfg.approach.as_str(),
            &cfg.p.to_string(),
            &cfg.horizon_minutes.to_string(),
            &outcome.label.to_string(),
            &opt_cell(outcome.md),
            if outcome.no_liquidity { "no_liquidity" } else { "" },
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("wrote {} labels to {}", histories.len(), path.display());
    Ok(())
}

fn cmd_featurize(
    data: &DataOpts,
    window: Option<u32>,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let base = resolve_label(&LabelOpts { window, ..LabelOpts::default() }, file);
    base.validate()?;
    let minutes = base.observation_minutes;
    print_effective(
        "featurize",
        json!({
            "observation_minutes": minutes,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let histories = load_data(data, file)?;
    ensure_dir(out)?;
    let path = out.join("features.csv");
    let mut w = csv_writer(&path)?;
    let err = |e: csv::Error| file_error(&path, e);
    let mut header = vec!["token_id", "source"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header).map_err(err)?;
    for history in &histories {
        let fv = extract_features(history, minutes)?;
        let mut record = vec![history.token_id().to_string(), history.source().as_str().to_string()];
        record.extend(fv.as_row().into_iter().map(opt_cell));
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("wrote {} feature rows to {}", histories.len(), path.display());
    Ok(())
}

fn cmd_sweep_p(
    data: &DataOpts,
    horizon: Option<u32>,
    p_grid: Option<Vec<f64>>,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let base = resolve_label(&LabelOpts { horizon, ..LabelOpts::default() }, file);
    let grid = p_grid.unwrap_or_else(|| DEFAULT_P_GRID.to_vec());
    print_effective(
        "sweep-p",
        json!({
            "horizon_minutes": base.horizon_minutes,
            "p_grid": grid,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let histories = load_data(data, file)?;
    let curve = labeling::sweep_p(&histories, &grid, base.horizon_minutes)?;
    ensure_dir(out)?;
    let path = out.join("sweep_p.csv");
    let mut w = csv_writer(&path)?;
    let err = |e: csv::Error| file_error(&path, e);
    w.write_record(["p", "rug_fraction"]).map_err(err)?;
    for (p, fraction) in &curve {
        w.write_record([p.to_string(), fraction.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("wrote {} points to {}", curve.len(), path.display());
    Ok(())
}

fn cmd_sweep_horizon(
    data: &DataOpts,
    label: &LabelOpts,
    horizons: Option<Vec<u32>>,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = resolve_label(label, file);
    cfg.validate()?;
    let grid = horizons.unwrap_or_else(|| DEFAULT_HORIZONS.to_vec());
    print_effective(
        "sweep-horizon",
        json!({
            "label": cfg,
            "horizons": grid,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let histories = load_data(data, file)?;
    let curve = labeling::sweep_horizon(&histories, &grid, &cfg)?;
    ensure_dir(out)?;
    let path = out.join("sweep_horizon.csv");
    let mut w = csv_writer(&path)?;
    let err = |e: csv::Error| file_error(&path, e);
    w.write_record(["horizon_minutes", "rug_fraction"]).map_err(err)?;
    for (horizon, fraction) in &curve {
        w.write_record([horizon.to_string(), fraction.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("wrote {} points to {}", curve.len(), path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &DataOpts,
    label: &LabelOpts,
    family: Option<Family>,
    k: usize,
    drop_window_rugs: bool,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = resolve_label(label, file);
    let family = resolve_family(family, file);
    let grid = resolve_grid(family, file)?;
    print_effective(
        "train",
        json!({
            "label": cfg,
            "family": family.as_str(),
            "grid_points": grid.len(),
            "k": k,
            "drop_window_rugs": drop_window_rugs,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let histories = load_data(data, file)?;
    let dataset = build_dataset(&histories, &cfg, drop_window_rugs)?;
    let search = grid_search(&grid, &dataset, k, seeds::derive(seed, &[CLI_NS, 0]))?;
    let (preprocessor, model) = fit_on_split(
        &dataset,
        search.best.scaling,
        &search.best.params,
        seeds::derive(seed, &[CLI_NS, 1]),
    )?;
    ensure_dir(out)?;
    learners::save_model_to_path(&model, &out.join("model.json"))?;
    write_json_pretty(&out.join("preprocessor.json"), &preprocessor)?;
    write_cv_table(&out.join("cv_table.csv"), &search.table)?;
    let best_params =
        serde_json::to_string(&search.best.params).map_err(|e| Error::Config(e.to_string()))?;
    println!(
        "best point: {best_params} (cv auc {:.4}); model written to {}",
        search.best_mean_auc,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    data: &DataOpts,
    label: &LabelOpts,
    model_dir: &Path,
    threshold: f64,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = resolve_label(label, file);
    print_effective(
        "evaluate",
        json!({
            "label": cfg,
            "model": model_dir,
            "threshold": threshold,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let model = learners::load_model_from_path(&model_dir.join("model.json"))?;
    let preprocessor: Preprocessor = read_json(&model_dir.join("preprocessor.json"))?;
    let histories = load_data(data, file)?;
    let dataset = build_dataset(&histories, &cfg, false)?;
    let scores = score_with(&preprocessor, &model, &dataset)?;
    let metrics = evaluation::report(&scores, &dataset.labels, threshold)?;
    let identity = ExperimentIdentity {
        approach: cfg.approach,
        protocol: 0,
        family: model.family,
        train_source: "pretrained".to_string(),
        test_source: sources_string(&dataset),
        seed,
    };
    ensure_dir(out)?;
    let path = out.join("metrics.json");
    write_json_pretty(&path, &MetricsFile { identity, metrics: metrics.clone() })?;
    println!(
        "auc {} accuracy {:.4} on {} rows; metrics written to {}",
        opt_cell(metrics.auc),
        metrics.accuracy,
        metrics.n,
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fuse(
    data: &DataOpts,
    label: &LabelOpts,
    protocol: Option<u8>,
    family: Option<Family>,
    test_source: Option<Source>,
    k: Option<usize>,
    drop_window_rugs: bool,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let id = protocol.or(file.protocol).ok_or_else(|| {
        Error::Config("fuse needs --protocol 1..=5 (or `protocol` in the config)".to_string())
    })?;
    let protocol = FusionProtocol::from_id(id)?;
    let family = resolve_family(family, file);
    let grid = resolve_grid(family, file)?;
    let mut config = ExperimentConfig::new(protocol, family, grid, seed);
    config.label = resolve_label(label, file);
    if let Some(source) = test_source.or(file.test_source) {
        config.test_source = source;
    }
    if let Some(k) = k {
        config.k = k;
    }
    print_effective(
        "fuse",
        json!({
            "protocol": config.protocol.id(),
            "family": config.family.as_str(),
            "grid_points": config.grid.len(),
            "k": config.k,
            "test_fraction": config.test_fraction,
            "test_source": config.test_source.as_str(),
            "label": config.label,
            "drop_window_rugs": drop_window_rugs,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let histories = load_data(data, file)?;
    let full = build_dataset(&histories, &config.label, drop_window_rugs)?;
    let stonfi = full.filter_source(Source::Stonfi);
    let dedust = full.filter_source(Source::Dedust);
    let report = run_protocol(
        &config,
        (stonfi.n_rows() > 0).then_some(&stonfi),
        (dedust.n_rows() > 0).then_some(&dedust),
    )?;
    ensure_dir(out)?;
    write_json_pretty(
        &out.join("metrics.json"),
        &MetricsFile { identity: report.identity.clone(), metrics: report.metrics.clone() },
    )?;
    write_importances(&out.join("importances.csv"), &report.importances)?;
    write_cv_table(&out.join("cv_table.csv"), &report.cv_table)?;
    learners::save_model_to_path(&report.model, &out.join("model.json"))?;
    write_json_pretty(&out.join("preprocessor.json"), &report.preprocessor)?;
    println!(
        "protocol {} ({} -> {}): auc {} on {} rows; outputs written to {}",
        report.identity.protocol,
        report.identity.train_source,
        report.identity.test_source,
        opt_cell(report.metrics.auc),
        report.metrics.n,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_rfe(
    data: &DataOpts,
    label: &LabelOpts,
    family: Option<Family>,
    target: usize,
    step: usize,
    drop_window_rugs: bool,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = resolve_label(label, file);
    let family = resolve_family(family, file);
    let (params, scaling) = match file.grid.as_ref().and_then(|g| g.first()) {
        Some(pt) if pt.params.family() == family => (pt.params.clone(), pt.scaling),
        _ => (HyperParams::default_for(family), ScalingModes::NONE),
    };
    print_effective(
        "rfe",
        json!({
            "label": cfg,
            "family": family.as_str(),
            "params": params,
            "target": target,
            "step": step,
            "drop_window_rugs": drop_window_rugs,
            "seed": seed,
            "data": data_json(data, file),
            "out": out,
        }),
    );
    let histories = load_data(data, file)?;
    let dataset = build_dataset(&histories, &cfg, drop_window_rugs)?;
    let outcome = rfe(&params, scaling, &dataset, target, step, seed)?;
    ensure_dir(out)?;
    let path = out.join("rfe.csv");
    let mut w = csv_writer(&path)?;
    let err = |e: csv::Error| file_error(&path, e);
    w.write_record(["step", "n_features", "auc", "dropped"]).map_err(err)?;
    for (i, step) in outcome.trace.iter().enumerate() {
        w.write_record([
            i.to_string(),
            step.n_features.to_string(),
            opt_cell(step.auc),
            step.dropped.join(";"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("kept {}: {}", outcome.kept.len(), outcome.kept.join(", "));
    println!("trace written to {}", path.display());
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    print_effective("report", json!({ "inputs": inputs, "out": out }));
    ensure_dir(out)?;
    let path = out.join("report.csv");
    let mut w = csv_writer(&path)?;
    let err = |e: csv::Error| file_error(&path, e);
    w.write_record([
        "approach",
        "protocol",
        "family",
        "train_source",
        "test_source",
        "seed",
        "auc",
        "accuracy",
        "precision_1",
        "recall_1",
        "f1_1",
        "precision_0",
        "recall_0",
        "f1_0",
        "tn",
        "fp",
        "fn",
        "tp",
        "n",
        "threshold",
    ])
    .map_err(err)?;
    for input in inputs {
        let row: MetricsFile = read_json(input)?;
        let id = &row.identity;
        let m = &row.metrics;
        w.write_record([
            id.approach.as_str().to_string(),
            id.protocol.to_string(),
            id.family.as_str().to_string(),
            id.train_source.clone(),
            id.test_source.clone(),
            id.seed.to_string(),
            opt_cell(m.auc),
            m.accuracy.to_string(),
            m.precision_1.to_string(),
            m.recall_1.to_string(),
            m.f1_1.to_string(),
            m.precision_0.to_string(),
            m.recall_0.to_string(),
            m.f1_0.to_string(),
            m.confusion.tn.to_string(),
            m.confusion.fp.to_string(),
            m.confusion.fn_.to_string(),
            m.confusion.tp.to_string(),
            m.n.to_string(),
            m.threshold.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("{} rows written to {}", inputs.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).expect("args should parse")
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let file = FileConfig {
            approach: Some(Approach::Idle),
            label: Some(FileLabel {
                p: Some(0.9),
                horizon_minutes: Some(90),
                idle_gap_minutes: None,
                observation_minutes: None,
            }),
            ..FileConfig::default()
        };
        let opts = LabelOpts { p: Some(0.8), ..LabelOpts::default() };
        let cfg = resolve_label(&opts, &file);
        assert_eq!(cfg.approach, Approach::Idle);
        assert_eq!(cfg.p, 0.8);
        assert_eq!(cfg.horizon_minutes, 90);
        assert_eq!(cfg.idle_gap_minutes, LabelConfig::default().idle_gap_minutes);
    }

    #[test]
    fn family_resolution_falls_back_through_grid_to_gboost() {
        let empty = FileConfig::default();
        assert_eq!(resolve_family(None, &empty), Family::Gboost);
        assert_eq!(resolve_family(Some(Family::Dtree), &empty), Family::Dtree);
        let with_grid = FileConfig {
            grid: Some(vec![GridPoint {
                params: HyperParams::default_for(Family::Rforest),
                scaling: ScalingModes::NONE,
            }]),
            ..FileConfig::default()
        };
        assert_eq!(resolve_family(None, &with_grid), Family::Rforest);
        // An explicit family that contradicts the config grid is a config error.
        assert!(matches!(resolve_grid(Family::Gboost, &with_grid), Err(Error::Config(_))));
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"aproach": "tvl"}"#).unwrap();
        let err = load_file_config(Some(&path)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_data_location_is_a_data_error_naming_the_gap() {
        let err = load_data(&DataOpts::default(), &FileConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--data"));
    }

    #[test]
    fn label_flags_parse_into_overrides() {
        let cli = parse(&[
            "ruglab", "label", "--approach", "idle", "--p", "0.95", "--horizon", "30", "--gap",
            "45", "--window", "10", "--data", "corpus", "--out", "outdir",
        ]);
        let Command::Label { label, data, out } = cli.command else {
            panic!("expected label subcommand");
        };
        assert_eq!(label.approach, Some(Approach::Idle));
        assert_eq!(label.p, Some(0.95));
        assert_eq!(label.horizon, Some(30));
        assert_eq!(label.gap, Some(45));
        assert_eq!(label.window, Some(10));
        assert_eq!(data.data.as_deref(), Some(Path::new("corpus")));
        assert_eq!(out, Path::new("outdir"));
    }

    // Exit codes for these paths are covered against the real binary in
    // tests/cli.rs; printing from here would bypass libtest capture.
    #[test]
    fn unknown_flags_are_usage_errors_and_help_is_not() {
        let err = Cli::try_parse_from(["ruglab", "label", "--bogus"]).unwrap_err();
        assert!(err.use_stderr());
        let err = Cli::try_parse_from(["ruglab", "--help"]).unwrap_err();
        assert!(!err.use_stderr());
    }

    #[test]
    fn comma_lists_parse() {
        let cli = parse(&["ruglab", "sweep-p", "--p-grid", "0.5,0.75,0.99", "--data", "d"]);
        let Command::SweepP { p_grid, .. } = cli.command else {
            panic!("expected sweep-p");
        };
        assert_eq!(p_grid, Some(vec![0.5, 0.75, 0.99]));
    }

    #[test]
    fn metrics_file_round_trips_with_flattened_metrics() {
        let metrics = MetricsReport {
            auc: Some(0.9),
            precision_1: 0.8,
            recall_1: 0.7,
            f1_1: 0.75,
            precision_0: 0.9,
            recall_0: 0.95,
            f1_0: 0.92,
            accuracy: 0.88,
            confusion: crate::evaluation::Confusion { tn: 50, fp: 5, fn_: 10, tp: 35 },
            n: 100,
            threshold: 0.5,
        };
        let identity = ExperimentIdentity {
            approach: Approach::Tvl,
            protocol: 3,
            family: Family::Gboost,
            train_source: "stonfi+dedust".to_string(),
            test_source: "stonfi".to_string(),
            seed: 7,
        };
        let text =
            serde_json::to_string(&MetricsFile { identity, metrics: metrics.clone() }).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["auc"], json!(0.9));
        assert_eq!(value["confusion"]["fn"], json!(10));
        assert_eq!(value["identity"]["protocol"], json!(3));
        let back: MetricsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.metrics, metrics);
    }
}
