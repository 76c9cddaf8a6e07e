use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};
use serde_json::Value;

use trajcast::backtest::{
    copula_experiment, dm_matrix, evaluate, read_panel, run_backtest, write_dm, write_report, BacktestConfig, Loss,
    SummaryRow,
};
use trajcast::dmtest::LongRunVariance;
use trajcast::marketdata::io::{ingest, read_da_prices, read_fundamentals, read_grid_store, read_trades, write_grid_store};
use trajcast::marketdata::synth::write_synthetic_market;
use trajcast::marketdata::{generate_synthetic_market, GridSpec, SynthConfig};
use trajcast::models::{parse_model_list, ModelId};

/// Ensemble trajectory forecasts for intraday electricity prices.
#[derive(Debug, Parser)]
#[command(name = "trajcast", version, about)]
struct Cli {
    /// More log output (repeatable)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic market with known ground truth
    Synth(SynthArgs),
    /// Validate raw CSVs and normalize them into a grid store
    Ingest(IngestArgs),
    /// Run the rolling-window study
    Backtest(BacktestArgs),
    /// Rescore the persisted ensembles of a run
    Evaluate(EvaluateArgs),
    /// Write the Diebold-Mariano p-value matrix of a run
    Dm(DmArgs),
    /// Rescore a run's ensembles under alternative copulas
    Copula(CopulaArgs),
    /// Write per-hour, per-step and per-quantile tables of a run
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for the grid store and ground truth
    #[arg(long)]
    out: PathBuf,
    /// Synthetic market configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of delivery days [default: 130]
    #[arg(long)]
    days: Option<usize>,
    /// Number of delivery hours per day [default: 2]
    #[arg(long)]
    products: Option<usize>,
    /// Master seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write a trade-level rendering for ingestion
    #[arg(long)]
    trades: bool,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Trades CSV
    #[arg(long)]
    trades: PathBuf,
    /// Day-ahead prices CSV
    #[arg(long)]
    da: PathBuf,
    /// Fundamentals CSV
    #[arg(long)]
    fundamentals: PathBuf,
    /// Output directory for the grid store
    #[arg(long)]
    out: PathBuf,
    /// Grid layout (JSON); defaults to 12 lags and 31 five-minute steps
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep days whose auction does not have 24 hours
    #[arg(long)]
    keep_irregular: bool,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    /// Grid store directory
    #[arg(long)]
    data: PathBuf,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
    /// Backtest configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set members=200 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated model ids, or "all"
    #[arg(long)]
    models: Option<String>,
    /// Refit stride in days
    #[arg(long)]
    stride: Option<usize>,
    /// Worker threads (0 uses every core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Grid store directory
    #[arg(long)]
    data: PathBuf,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 uses every core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct DmArgs {
    /// Run directory
    #[arg(long)]
    out: PathBuf,
    /// Loss to compare
    #[arg(long, default_value = "es", value_parser = ["es", "crps"])]
    loss: String,
    /// Comma-separated model ids, or "all" [default: the run's models]
    #[arg(long)]
    models: Option<String>,
}

#[derive(Debug, Args)]
struct CopulaArgs {
    /// Grid store directory
    #[arg(long)]
    data: PathBuf,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
    /// Model whose ensembles are reordered [default: the run's copula_base]
    #[arg(long)]
    base: Option<String>,
    /// Worker threads (0 uses every core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory
    #[arg(long)]
    out: PathBuf,
}

/// A problem with the invocation rather than with the work itself.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let core = err.chain().find_map(|c| c.downcast_ref::<trajcast::Error>());
            let is_usage = err.chain().any(|c| c.is::<UsageError>()) || core.is_some_and(|e| e.kind() == "config");
            let kind = if is_usage { "usage" } else { core.map_or("runtime", |e| e.kind()) };
            eprintln!("error[{kind}]: {err:#}");
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Backtest(a) => backtest(a),
        Command::Evaluate(a) => {
            let data = read_grid_store(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
            let summary = pool(a.jobs)?.install(|| evaluate(&a.out, &data))?;
            print_summary(&summary);
            Ok(())
        }
        Command::Dm(a) => dm(a),
        Command::Copula(a) => copula(a),
        Command::Report(a) => {
            let panel = read_panel(&a.out.join("scores/panel.csv"))?;
            write_report(&a.out, &panel)?;
            println!("wrote {}", a.out.join("report").display());
            Ok(())
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn from_json<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| usage(format!("{what}: {e}")))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => from_json(read_json(p)?, "synthetic market configuration")?,
        None => SynthConfig::new(130, 2),
    };
    if let Some(days) = a.days {
        cfg.days = days;
    }
    if let Some(products) = a.products {
        cfg.hours = SynthConfig::new(cfg.days, products).hours;
    }
    let market = generate_synthetic_market(&cfg, a.seed)?;
    write_synthetic_market(&a.out, &market, a.trades)?;
    println!(
        "wrote {} product-days ({} days x {} hours) to {}",
        market.data.grids().len(),
        cfg.days,
        cfg.hours.len(),
        a.out.display()
    );
    Ok(())
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let spec: GridSpec = match &a.config {
        Some(p) => from_json(read_json(p)?, "grid layout")?,
        None => GridSpec::default(),
    };
    let trades = read_trades(&a.trades).with_context(|| format!("reading {}", a.trades.display()))?;
    let da = read_da_prices(&a.da).with_context(|| format!("reading {}", a.da.display()))?;
    let funds = read_fundamentals(&a.fundamentals).with_context(|| format!("reading {}", a.fundamentals.display()))?;
    let data = ingest(&trades, &da, &funds, &spec, a.keep_irregular)?;
    write_grid_store(&a.out, &data)?;
    println!("wrote {} product-days to {}", data.grids().len(), a.out.display());
    Ok(())
}

fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| usage(format!("override {s:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn backtest_config(a: &BacktestArgs) -> Result<BacktestConfig> {
    let mut value = match &a.config {
        Some(p) => read_json(p)?,
        None => serde_json::to_value(BacktestConfig::default())?,
    };
    let Value::Object(map) = &mut value else {
        bail!(usage("backtest configuration must be a JSON object"));
    };
    for o in &a.overrides {
        let (k, v) = parse_override(o)?;
        map.insert(k, v);
    }
    let mut cfg: BacktestConfig = from_json(value, "backtest configuration")?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(models) = &a.models {
        cfg.models = parse_model_list(models)?;
    }
    if let Some(stride) = a.stride {
        cfg.stride = stride;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn backtest(a: BacktestArgs) -> Result<()> {
    let cfg = backtest_config(&a)?;
    let data = read_grid_store(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    info!("config hash {}", cfg.hash());
    let out = run_backtest(&cfg, &data, &a.out, a.jobs)?;
    print_summary(&out.summary);
    if !out.failures.is_empty() {
        println!("{} cells failed; see {}", out.failures.len(), a.out.join("scores/failures.csv").display());
    }
    Ok(())
}

fn run_config(dir: &Path) -> Result<BacktestConfig> {
    let path = dir.join("config.json");
    Ok(from_json(read_json(&path)?, "run configuration")?)
}

fn dm(a: DmArgs) -> Result<()> {
    let cfg = run_config(&a.out)?;
    let loss: Loss = a.loss.parse()?;
    let models = match &a.models {
        Some(m) => parse_model_list(m)?,
        None => cfg.models.clone(),
    };
    let panel = read_panel(&a.out.join("scores/panel.csv"))?;
    let variance = cfg.dm_lag.map_or(LongRunVariance::NeweyWest, LongRunVariance::Lag);
    let m = dm_matrix(&panel, &models, loss, variance)?;
    fs::create_dir_all(a.out.join("dm"))?;
    let path = a.out.join("dm").join(format!("{}_pvalues.csv", loss.name()));
    write_dm(&path, &models, &m)?;
    println!("p-values that the row model beats the column model ({} loss):", loss.name());
    print!("{:16}", "");
    for model in &models {
        print!(" {:>14}", model.name());
    }
    println!();
    for (model, row) in models.iter().zip(&m) {
        print!("{:16}", model.name());
        for p in row {
            match p {
                Some(p) => print!(" {p:>14.4}"),
                None => print!(" {:>14}", "NA"),
            }
        }
        println!();
    }
    Ok(())
}

fn copula(a: CopulaArgs) -> Result<()> {
    let cfg = run_config(&a.out)?;
    let base: ModelId = match &a.base {
        Some(m) => m.parse()?,
        None => cfg.copula_base,
    };
    let data = read_grid_store(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let rows = pool(a.jobs)?.install(|| copula_experiment(&a.out, &data, base))?;
    println!("{:16} {:>10} {:>10} {:>10} {:>12}", "copula", "ES", "CRPS", "VS", "DSS");
    for r in rows {
        let s = r.summary;
        let dss = s.dss.map_or("NA".to_string(), |v| format!("{v:.4}"));
        println!("{:16} {:>10.4} {:>10.4} {:>10.4} {:>12}", r.variant, s.es, s.crps, s.vs, dss);
    }
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:16} {:>5} {:>5} {:>10} {:>8} {:>10} {:>10} {:>8} {:>8} {:>6} {:>6} {:>6}",
        "model", "days", "gaps", "ES", "CRPS", "VS", "DSS", "MAE", "RMSE", "50%", "90%", "99%"
    );
    for r in rows {
        let name = r.model.name();
        match &r.summary {
            Some(s) => {
                let dss = s.dss.map_or("NA".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{name:16} {:>5} {:>5} {:>10.4} {:>8.4} {:>10.3} {:>10} {:>8.4} {:>8.4} {:>6.3} {:>6.3} {:>6.3}",
                    s.days, r.gaps, s.es, s.crps, s.vs, dss, s.mae, s.rmse, s.coverage[0], s.coverage[1], s.coverage[2]
                );
            }
            None => println!("{name:16} {:>5} {:>5}  (no usable ensembles)", 0, r.gaps),
        }
    }
}
