//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration / data / solver error, 2 internal
//! or output error. Every failure prints a single diagnostic line.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backtest::{self, BacktestError, EventLabels, StudyPlan};
use crate::config::{self, ConfigError, StudyConfig};
use crate::data::{self, CarbonProxy, DataError, DateRange, Universe};
use crate::factor::{self, FactorError};
use crate::index::{self, IndexError, IndexInputs, IndexMethod, IndexSpec, RiskKind, SweepCurve};
use crate::risk::{Convention, RiskError, RiskParams};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "decarb", version, about = "Build and backtest decarbonized indices")]
#[command(after_long_help = key_help())]
struct Cli {
    /// Worker threads for sweeps and backtests (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep k and c_rel; write k_curve.csv, c_curve.csv and sweep.svg.
    #[command(after_long_help = key_help())]
    Sweep(StudyArgs),
    /// Build indices at fixed k (weights_di1.csv) and/or c_rel (weights_di2.csv).
    #[command(after_long_help = key_help())]
    Build(StudyArgs),
    /// Run the rolling backtest; write in_sample.csv, out_sample.csv, summary.csv and a chart.
    #[command(after_long_help = key_help())]
    Backtest(StudyArgs),
    /// List the named parameter presets.
    Presets,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Carbon proxy (overrides `proxy`).
    #[arg(long)]
    proxy: Option<CarbonProxy>,
    /// Risk measure (overrides `risk`).
    #[arg(long)]
    risk: Option<RiskKind>,
    /// Mean sign convention (overrides `convention`).
    #[arg(long)]
    convention: Option<Convention>,
}

fn key_help() -> String {
    let mut s = String::from("Config keys (key = value; [section] prefixes keys with `section.`):\n");
    for (k, d) in config::KEYS {
        s.push_str(&format!("  {k:<26} {d}\n"));
    }
    s
}

#[derive(Debug)]
enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

macro_rules! user_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::User(e.to_string())
            }
        }
    )*};
}
user_errors!(ConfigError, DataError, FactorError, IndexError, RiskError, BacktestError);

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(CliError::Internal)?;
    Ok(buf)
}

struct Study {
    cfg: StudyConfig,
    out: PathBuf,
    proxy: CarbonProxy,
    risk_kind: RiskKind,
    params: RiskParams,
}

impl Study {
    fn new(args: &StudyArgs) -> Result<Self, CliError> {
        let cfg = StudyConfig::load(&args.config)?;
        let proxy = args.proxy.unwrap_or_else(|| cfg.carbon_proxy());
        let risk_kind = args.risk.unwrap_or_else(|| cfg.risk_kind());
        let convention = args.convention.or(cfg.convention).unwrap_or_default();
        let params = RiskParams::new(cfg.confidence(), convention)?;
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            cfg,
            out,
            proxy,
            risk_kind,
            params,
        })
    }

    fn universe(&self) -> Result<Universe, CliError> {
        let prices = data::load_prices(self.cfg.required_path("prices")?)?;
        let caps = data::load_caps(self.cfg.required_path("caps")?)?;
        let carbon = data::load_carbon(self.cfg.required_path("carbon")?)?;
        let factors = data::load_factors(self.cfg.required_path("factors")?, self.cfg.model_kind())?;
        let assets = data::join_assets(prices, &caps, &carbon)?;
        Ok(data::assemble_universe(assets, &factors, self.proxy, &self.cfg.policy)?)
    }

    fn window(&self, universe: &Universe) -> DateRange {
        let dates = universe.return_dates();
        DateRange::new(
            self.cfg.window_start.unwrap_or(dates[0]),
            self.cfg.window_end.unwrap_or(dates[dates.len() - 1]),
        )
    }

    fn inputs(&self, universe: &Universe) -> Result<IndexInputs, CliError> {
        let fit = factor::fit_universe(universe, self.window(universe))?;
        Ok(IndexInputs::new(universe, &fit)?)
    }

    /// `("di1", drop-k)` when `k` is set and `("di2", carbon cap)` when `c_rel` is set.
    fn specs(&self) -> Result<Vec<(&'static str, IndexSpec)>, CliError> {
        let mut specs = Vec::new();
        if let Some(k) = self.cfg.drop_k() {
            specs.push(("di1", IndexSpec::new(IndexMethod::DropK(k), self.risk_kind, self.params)));
        }
        if let Some(c) = self.cfg.cap_fraction() {
            specs.push(("di2", IndexSpec::new(IndexMethod::CarbonCap(c), self.risk_kind, self.params)));
        }
        if specs.is_empty() {
            return Err(ConfigError::Missing("k or c_rel".into()).into());
        }
        Ok(specs)
    }

    fn create_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", self.out.display())))
    }
}

fn curve_panel(curve: &SweepCurve, title: &str, x_label: &str) -> svg::Panel {
    svg::Panel {
        title: title.to_string(),
        x_label: x_label.to_string(),
        y_label: "risk".to_string(),
        series: vec![svg::Series {
            name: "DI risk".to_string(),
            points: curve
                .points
                .iter()
                .filter_map(|p| p.risk_value.map(|r| (p.parameter, r)))
                .collect(),
        }],
        markers: curve
            .optimum
            .map(|o| vec![(o, format!("selected {x_label} = {o}"))])
            .unwrap_or_default(),
        x_ticks: Vec::new(),
    }
}

fn cmd_sweep(args: &StudyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let study = Study::new(args)?;
    let universe = study.universe()?;
    let inputs = study.inputs(&universe)?;
    let k_grid = study
        .cfg
        .grid_k
        .clone()
        .unwrap_or_else(|| index::default_k_grid(universe.n_assets()));
    let c_grid = study.cfg.grid_c.clone().unwrap_or_else(index::default_c_grid);
    let elbow = study.cfg.elbow_tol.unwrap_or(index::DEFAULT_ELBOW_TOL);
    let k_curve = index::sweep_k(&inputs, &k_grid, study.risk_kind, study.params)?;
    let c_curve = index::sweep_c(&inputs, &c_grid, study.risk_kind, study.params, elbow)?;

    study.create_out()?;
    let io_err = |e: io::Error| e.to_string();
    write_file(
        &study.out.join("k_curve.csv"),
        &csv_bytes(|b| k_curve.write_csv(b).map_err(io_err))?,
    )?;
    write_file(
        &study.out.join("c_curve.csv"),
        &csv_bytes(|b| c_curve.write_csv(b).map_err(io_err))?,
    )?;
    let measure = study.risk_kind.as_str().to_uppercase();
    let chart = svg::render(&[
        curve_panel(&k_curve, &format!("{measure} vs k ({})", study.proxy), "k"),
        curve_panel(&c_curve, &format!("{measure} vs c_rel ({})", study.proxy), "c_rel"),
    ]);
    write_file(&study.out.join("sweep.svg"), chart.as_bytes())?;

    let show = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    writeln!(out, "k_opt = {}", show(k_curve.optimum)).ok();
    writeln!(out, "c_opt = {}", show(c_curve.optimum)).ok();
    Ok(())
}

fn weights_csv(tickers: &[String], w: &ndarray::Array1<f64>) -> Vec<u8> {
    let mut rows: Vec<(&String, f64)> = tickers.iter().zip(w.iter().copied()).collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let mut s = String::from("ticker,weight\n");
    for (t, v) in rows {
        s.push_str(&format!("{t},{v:.10}\n"));
    }
    s.into_bytes()
}

fn cmd_build(args: &StudyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let study = Study::new(args)?;
    let specs = study.specs()?;
    let universe = study.universe()?;
    let inputs = study.inputs(&universe)?;
    let bp_risk = inputs.risk_of(inputs.benchmark.view(), study.risk_kind, &study.params)?;
    let bp_fp = inputs.benchmark_footprint();
    let built = specs
        .iter()
        .map(|(name, s)| inputs.build(s).map(|di| (*name, di)))
        .collect::<Result<Vec<_>, _>>()?;

    study.create_out()?;
    for (name, di) in &built {
        write_file(
            &study.out.join(format!("weights_{name}.csv")),
            &weights_csv(&inputs.tickers, &di.weights),
        )?;
    }
    writeln!(out, "benchmark: risk {bp_risk:.8} footprint {bp_fp:.8}").ok();
    for (name, di) in &built {
        writeln!(
            out,
            "{name} ({}): risk {:.8} footprint {:.8} ({:.2}% of benchmark) status {}",
            di.spec.label(),
            di.risk_value,
            di.footprint,
            100.0 * di.footprint / bp_fp,
            di.status.as_str()
        )
        .ok();
    }
    Ok(())
}

fn month_index(m: backtest::YearMonth) -> f64 {
    (m.year * 12 + m.month as i32 - 1) as f64
}

fn returns_chart(report: &backtest::BacktestReport, proxy: CarbonProxy) -> String {
    let xs: Vec<f64> = report.out_sample.iter().map(|r| month_index(r.month)).collect();
    let mut series = vec![svg::Series {
        name: "benchmark".to_string(),
        points: xs
            .iter()
            .zip(&report.out_sample)
            .map(|(&x, r)| (x, r.bp_return))
            .collect(),
    }];
    for (j, label) in report.spec_labels.iter().enumerate() {
        series.push(svg::Series {
            name: label.clone(),
            points: xs
                .iter()
                .zip(&report.out_sample)
                .filter_map(|(&x, r)| r.di_returns[j].map(|v| (x, v)))
                .collect(),
        });
    }
    let markers = report
        .out_sample
        .iter()
        .filter_map(|r| r.event.as_ref().map(|e| (month_index(r.month), format!("{}: {e}", r.month))))
        .collect();
    let step = (report.out_sample.len() / 8).max(1);
    let x_ticks = report
        .out_sample
        .iter()
        .step_by(step)
        .map(|r| (month_index(r.month), r.month.to_string()))
        .collect();
    svg::render(&[svg::Panel {
        title: format!("Monthly returns, {proxy}"),
        x_label: "month".to_string(),
        y_label: "return (%)".to_string(),
        series,
        markers,
        x_ticks,
    }])
}

fn cmd_backtest(args: &StudyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let study = Study::new(args)?;
    let count = study
        .cfg
        .backtest_windows
        .ok_or_else(|| ConfigError::Missing("backtest.windows".into()))?;
    if count == 0 {
        return Err(BacktestError::NoWindows.into());
    }
    let start = study
        .cfg
        .backtest_start
        .ok_or_else(|| ConfigError::Missing("backtest.start".into()))?;
    let specs = study.specs()?;
    let events = match &study.cfg.events {
        Some(path) => {
            let market = study
                .cfg
                .market_name()
                .ok_or_else(|| ConfigError::Missing("market".into()))?;
            backtest::load_events(path, market)?
        }
        None => match study.cfg.market_name() {
            Some(market) => backtest::builtin_events(market)?,
            None => EventLabels::new(),
        },
    };
    let plan = StudyPlan::annual(start, count, specs.into_iter().map(|(_, s)| s).collect(), events)?;
    let universe = study.universe()?;
    let report = backtest::run_study(&universe, &plan)?;

    study.create_out()?;
    let csv_err = |e: csv::Error| e.to_string();
    write_file(
        &study.out.join("in_sample.csv"),
        &csv_bytes(|b| report.write_in_sample(b).map_err(csv_err))?,
    )?;
    write_file(
        &study.out.join("out_sample.csv"),
        &csv_bytes(|b| report.write_out_sample(b).map_err(csv_err))?,
    )?;
    write_file(
        &study.out.join("summary.csv"),
        &csv_bytes(|b| report.write_summary(b).map_err(csv_err))?,
    )?;
    write_file(
        &study.out.join(format!("monthly_returns_{}.svg", study.proxy)),
        returns_chart(&report, study.proxy).as_bytes(),
    )?;
    for s in &report.summary {
        let frac = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
        writeln!(
            out,
            "{}: beat benchmark in {}/{} months ({}), {}/{} event months ({})",
            s.spec,
            s.outperform_months,
            s.months,
            frac(s.outperform_fraction()),
            s.event_outperform,
            s.event_months,
            frac(s.event_fraction())
        )
        .ok();
    }
    Ok(())
}

fn cmd_presets(out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "name            market model proxy risk p     k   c_rel").ok();
    for p in &index::PRESETS {
        writeln!(
            out,
            "{:<15} {:<6} {:<5} {:<5} {:<4} {:<5} {:<3} {}",
            p.name,
            p.market,
            p.model.as_str(),
            p.proxy.as_str(),
            p.risk_kind.as_str(),
            p.p,
            p.k,
            p.c_rel
        )
        .ok();
    }
    Ok(())
}

/// Run the CLI with explicit arguments and streams; returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    write!(out, "{text}").ok();
                    0
                }
                _ => {
                    write!(err, "{text}").ok();
                    1
                }
            };
        }
    };

    // Commands report into a buffer so they can run inside a worker pool.
    let dispatch = || {
        let mut buf = Vec::new();
        let r = match &cli.command {
            Command::Sweep(a) => cmd_sweep(a, &mut buf),
            Command::Build(a) => cmd_build(a, &mut buf),
            Command::Backtest(a) => cmd_backtest(a, &mut buf),
            Command::Presets => cmd_presets(&mut buf),
        };
        (buf, r)
    };
    let (report, result) = match cli.jobs {
        Some(0) => (Vec::new(), Err(CliError::User("--jobs must be at least 1".into()))),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(dispatch),
            Err(e) => (Vec::new(), Err(CliError::Internal(format!("cannot start thread pool: {e}")))),
        },
        None => dispatch(),
    };
    out.write_all(&report).ok();
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {}", e.message()).ok();
            e.code()
        }
    }
}

/// Run the CLI on the process arguments and standard streams.
pub fn run() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
