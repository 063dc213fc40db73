//! Study configuration: a flat `key = value` text file.
//!
//! ```text
//! # comment
//! prices  = data/prices.csv
//! proxy   = ghg
//! grid.k  = 1, 2, 5
//!
//! [backtest]
//! start   = 2017-04-01
//! windows = 5
//! ```
//!
//! A `[section]` header prefixes the keys below it with `section.`; only one
//! level of nesting exists. Unknown or repeated keys are errors. Relative
//! paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::data::{CarbonProxy, MissingDataPolicy, ModelKind};
use crate::index::{self, Preset, RiskKind};
use crate::risk::Convention;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("prices", "long-format price file: date, ticker, close"),
    ("caps", "market-cap file: ticker, market_cap"),
    ("carbon", "carbon file: ticker, ghg, co2 (blank = missing)"),
    ("factors", "factor file: date, <factor columns>, rf"),
    ("events", "event-label file: market, year, month, label (default: bundled list)"),
    ("market", "market name used to select event labels"),
    ("preset", "named parameter preset (see `decarb presets`)"),
    ("model", "factor model: five | four"),
    ("proxy", "carbon proxy: ghg | co2"),
    ("risk", "risk measure: var | es"),
    ("p", "confidence level in (0,1)"),
    ("convention", "mean sign: loss (-mean) | literal (+mean)"),
    ("k", "number of highest-carbon assets excluded by the drop-k index"),
    ("c_rel", "carbon cap as a fraction of the benchmark footprint"),
    ("elbow_tol", "relative tolerance of the cap elbow rule"),
    ("grid.k", "comma-separated k values for the sweep"),
    ("grid.c", "comma-separated c_rel values for the sweep"),
    ("window.start", "first date of the estimation window (sweep, build)"),
    ("window.end", "last date of the estimation window (sweep, build)"),
    ("backtest.start", "first date of the first one-year in-sample window"),
    ("backtest.windows", "number of rolling annual windows"),
    ("policy.max_gap_fraction", "drop assets missing more than this fraction of dates"),
    ("policy.ffill_limit", "longest forward-filled gap, in trading days"),
    ("policy.max_abs_return", "optional sanity bound on |daily return|"),
    ("out", "output directory"),
    ("seed", "integer kept for experiment logs; the pipeline draws no random numbers"),
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },

    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },

    #[error("config line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },

    #[error("config line {line}: key '{key}' given twice")]
    DuplicateKey { line: usize, key: String },

    #[error("invalid value for '{key}': {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("missing required key '{0}'")]
    Missing(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Parsed configuration. Unset optional keys are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyConfig {
    pub prices: Option<PathBuf>,
    pub caps: Option<PathBuf>,
    pub carbon: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub market: Option<String>,
    pub preset: Option<&'static Preset>,
    pub model: Option<ModelKind>,
    pub proxy: Option<CarbonProxy>,
    pub risk: Option<RiskKind>,
    pub p: Option<f64>,
    pub convention: Option<Convention>,
    pub k: Option<usize>,
    pub c_rel: Option<f64>,
    pub elbow_tol: Option<f64>,
    pub grid_k: Option<Vec<usize>>,
    pub grid_c: Option<Vec<f64>>,
    pub window_start: Option<NaiveDate>,
    pub window_end: Option<NaiveDate>,
    pub backtest_start: Option<NaiveDate>,
    pub backtest_windows: Option<usize>,
    pub policy: MissingDataPolicy,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("'{raw}': {e}"),
    })
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(ConfigError::InvalidValue {
            key: key.to_string(),
            reason: "empty list".into(),
        });
    }
    Ok(items)
}

fn date(key: &str, raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("'{raw}' is not a YYYY-MM-DD date"),
    })
}

fn strip_quotes(s: &str) -> &str {
    s.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(s)
}

impl StudyConfig {
    /// Parse config text; relative paths are joined onto `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = StudyConfig::default();
        let mut seen = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    reason: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if name.is_empty() || name.contains('.') {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        reason: format!("invalid section '{name}'"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                reason: "expected 'key = value'".into(),
            })?;
            let (k, v) = (k.trim(), strip_quotes(v.trim()));
            let key = match &section {
                Some(s) => format!("{s}.{k}"),
                None => k.to_string(),
            };
            if !KEYS.iter().any(|(name, _)| *name == key) {
                return Err(ConfigError::UnknownKey { line: line_no, key });
            }
            if seen.insert(key.clone(), line_no).is_some() {
                return Err(ConfigError::DuplicateKey { line: line_no, key });
            }
            cfg.set(&key, v, base_dir)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let path = |v: &str| Some(base.join(v));
        match key {
            "prices" => self.prices = path(v),
            "caps" => self.caps = path(v),
            "carbon" => self.carbon = path(v),
            "factors" => self.factors = path(v),
            "events" => self.events = path(v),
            "out" => self.out = path(v),
            "market" => self.market = Some(v.to_string()),
            "preset" => {
                self.preset = Some(index::find_preset(v).ok_or_else(|| ConfigError::InvalidValue {
                    key: key.into(),
                    reason: format!("unknown preset '{v}'"),
                })?)
            }
            "model" => self.model = Some(value(key, v)?),
            "proxy" => self.proxy = Some(value(key, v)?),
            "risk" => self.risk = Some(value(key, v)?),
            "p" => self.p = Some(value(key, v)?),
            "convention" => self.convention = Some(value(key, v)?),
            "k" => self.k = Some(value(key, v)?),
            "c_rel" => self.c_rel = Some(value(key, v)?),
            "elbow_tol" => self.elbow_tol = Some(value(key, v)?),
            "grid.k" => self.grid_k = Some(list(key, v)?),
            "grid.c" => self.grid_c = Some(list(key, v)?),
            "window.start" => self.window_start = Some(date(key, v)?),
            "window.end" => self.window_end = Some(date(key, v)?),
            "backtest.start" => self.backtest_start = Some(date(key, v)?),
            "backtest.windows" => self.backtest_windows = Some(value(key, v)?),
            "policy.max_gap_fraction" => self.policy.max_gap_fraction = value(key, v)?,
            "policy.ffill_limit" => self.policy.ffill_limit = value(key, v)?,
            "policy.max_abs_return" => self.policy.max_abs_return = Some(value(key, v)?),
            "seed" => self.seed = Some(value(key, v)?),
            _ => unreachable!("key list and setter disagree on '{key}'"),
        }
        Ok(())
    }

    /// Explicit key, else the preset's value, else `default`.
    pub fn model_kind(&self) -> ModelKind {
        self.model
            .or(self.preset.map(|p| p.model))
            .unwrap_or(ModelKind::FiveFactor)
    }

    pub fn carbon_proxy(&self) -> CarbonProxy {
        self.proxy.or(self.preset.map(|p| p.proxy)).unwrap_or(CarbonProxy::Ghg)
    }

    pub fn risk_kind(&self) -> RiskKind {
        self.risk.or(self.preset.map(|p| p.risk_kind)).unwrap_or(RiskKind::VaR)
    }

    pub fn confidence(&self) -> f64 {
        self.p.or(self.preset.map(|p| p.p)).unwrap_or(0.95)
    }

    pub fn drop_k(&self) -> Option<usize> {
        self.k.or(self.preset.map(|p| p.k))
    }

    pub fn cap_fraction(&self) -> Option<f64> {
        self.c_rel.or(self.preset.map(|p| p.c_rel))
    }

    pub fn market_name(&self) -> Option<&str> {
        self.market.as_deref().or(self.preset.map(|p| p.market))
    }

    pub fn required_path(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "prices" => &self.prices,
            "caps" => &self.caps,
            "carbon" => &self.carbon,
            "factors" => &self.factors,
            _ => &None,
        };
        p.as_deref().ok_or_else(|| ConfigError::Missing(key.to_string()))
    }
}
