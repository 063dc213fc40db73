//! Market data loading, validation and alignment.
//!
//! Four long-lived file formats feed a study:
//!
//! | file        | columns                                   |
//! |-------------|-------------------------------------------|
//! | prices      | `date, ticker, close` (long format)       |
//! | caps        | `ticker, market_cap`                      |
//! | carbon      | `ticker, ghg, co2` (blank cell = missing) |
//! | factors     | `date, <factor columns>, rf`              |
//!
//! Factor files are read as decimal returns per period. Files that publish
//! percentages must be divided by 100 before loading.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use thiserror::Error;

/// Errors raised while loading or aligning market data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("malformed file {source_name}: {reason}")]
    MalformedFile { source_name: String, reason: String },

    #[error("non-positive price {value} for {ticker} on {date}")]
    NonPositivePrice {
        ticker: String,
        date: NaiveDate,
        value: f64,
    },

    #[error("non-positive market cap {value} for {ticker}")]
    NonPositiveCap { ticker: String, value: f64 },

    #[error("negative carbon value {value} for {ticker}")]
    NegativeCarbon { ticker: String, value: f64 },

    #[error("no market cap for {0}")]
    MissingCap(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("universe too small: {survivors} assets survive the missing-data policy, need at least 2")]
    UniverseTooSmall { survivors: usize },

    #[error("asset and factor calendars do not intersect")]
    CalendarDisjoint,

    #[error("return {value} for {ticker} on {date} exceeds the sanity bound {bound}")]
    ImplausibleReturn {
        ticker: String,
        date: NaiveDate,
        value: f64,
        bound: f64,
    },

    #[error("invalid factor panel: {0}")]
    InvalidFactorPanel(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Carbon-footprint measure used to rank and cap assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CarbonProxy {
    /// Greenhouse-gas intensity per sale.
    Ghg,
    /// Total CO2 emissions.
    Co2,
}

impl CarbonProxy {
    pub fn as_str(self) -> &'static str {
        match self {
            CarbonProxy::Ghg => "ghg",
            CarbonProxy::Co2 => "co2",
        }
    }
}

impl fmt::Display for CarbonProxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CarbonProxy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ghg" => Ok(CarbonProxy::Ghg),
            "co2" => Ok(CarbonProxy::Co2),
            other => Err(format!("unknown carbon proxy '{other}' (expected ghg or co2)")),
        }
    }
}

/// Per-asset carbon measures; `None` marks a missing value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CarbonValues {
    pub ghg: Option<f64>,
    pub co2: Option<f64>,
}

impl CarbonValues {
    pub fn get(&self, proxy: CarbonProxy) -> Option<f64> {
        match proxy {
            CarbonProxy::Ghg => self.ghg,
            CarbonProxy::Co2 => self.co2,
        }
    }
}

/// One asset: closing prices, a study-constant market cap and carbon measures.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetRecord {
    ticker: String,
    closes: BTreeMap<NaiveDate, f64>,
    market_cap: f64,
    carbon: CarbonValues,
}

impl AssetRecord {
    pub fn new(
        ticker: impl Into<String>,
        closes: BTreeMap<NaiveDate, f64>,
        market_cap: f64,
        carbon: CarbonValues,
    ) -> Result<Self> {
        let ticker = ticker.into();
        for (&date, &value) in &closes {
            if !(value > 0.0) || !value.is_finite() {
                return Err(DataError::NonPositivePrice { ticker, date, value });
            }
        }
        if !(market_cap > 0.0) || !market_cap.is_finite() {
            return Err(DataError::NonPositiveCap {
                ticker,
                value: market_cap,
            });
        }
        for value in [carbon.ghg, carbon.co2].into_iter().flatten() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(DataError::NegativeCarbon { ticker, value });
            }
        }
        Ok(Self {
            ticker,
            closes,
            market_cap,
            carbon,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn closes(&self) -> &BTreeMap<NaiveDate, f64> {
        &self.closes
    }

    pub fn market_cap(&self) -> f64 {
        self.market_cap
    }

    pub fn carbon(&self) -> CarbonValues {
        self.carbon
    }
}

/// Which factor regression a study uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Market excess return, size, value, profitability, investment.
    FiveFactor,
    /// Size, value, momentum, market.
    FourFactor,
}

impl ModelKind {
    pub fn factor_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::FiveFactor => &["MKT_RF", "SMB", "HML", "RMW", "CMA"],
            ModelKind::FourFactor => &["SMB", "HML", "WML", "MF"],
        }
    }

    pub fn factor_count(self) -> usize {
        self.factor_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::FiveFactor => "five",
            ModelKind::FourFactor => "four",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "five" | "five-factor" | "5" => Ok(ModelKind::FiveFactor),
            "four" | "four-factor" | "4" => Ok(ModelKind::FourFactor),
            other => Err(format!("unknown factor model '{other}' (expected five or four)")),
        }
    }
}

/// Date-indexed factor returns and the risk-free rate, decimal per period.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    model_kind: ModelKind,
    dates: Vec<NaiveDate>,
    series: Array2<f64>,
    risk_free: Array1<f64>,
}

impl FactorPanel {
    /// `series` is dates × factors in the column order of [`ModelKind::factor_names`].
    pub fn new(
        model_kind: ModelKind,
        dates: Vec<NaiveDate>,
        series: Array2<f64>,
        risk_free: Array1<f64>,
    ) -> Result<Self> {
        let k = model_kind.factor_count();
        if series.ncols() != k {
            return Err(DataError::InvalidFactorPanel(format!(
                "expected {k} factor columns, got {}",
                series.ncols()
            )));
        }
        if series.nrows() != dates.len() || risk_free.len() != dates.len() {
            return Err(DataError::InvalidFactorPanel(format!(
                "{} dates but {} factor rows and {} risk-free values",
                dates.len(),
                series.nrows(),
                risk_free.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidFactorPanel(
                "dates must be strictly increasing".into(),
            ));
        }
        if series.iter().chain(risk_free.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::InvalidFactorPanel("missing or non-finite value".into()));
        }
        Ok(Self {
            model_kind,
            dates,
            series,
            risk_free,
        })
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model_kind
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn series(&self) -> &Array2<f64> {
        &self.series
    }

    pub fn risk_free(&self) -> &Array1<f64> {
        &self.risk_free
    }

    /// Restrict to `dates`, which must all be present in the panel.
    fn select(&self, dates: &[NaiveDate]) -> Self {
        let index: BTreeMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let rows: Vec<usize> = dates.iter().map(|d| index[d]).collect();
        let k = self.series.ncols();
        let series = Array2::from_shape_fn((rows.len(), k), |(t, j)| self.series[[rows[t], j]]);
        let risk_free = rows.iter().map(|&r| self.risk_free[r]).collect();
        Self {
            model_kind: self.model_kind,
            dates: dates.to_vec(),
            series,
            risk_free,
        }
    }
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// How gaps in price histories are treated when aligning a universe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissingDataPolicy {
    /// Assets missing more than this fraction of the common calendar are dropped.
    pub max_gap_fraction: f64,
    /// Longest run of consecutive missing closes that is forward-filled.
    pub ffill_limit: usize,
    /// Optional bound on `|return|`; exceeding it is an error.
    pub max_abs_return: Option<f64>,
}

impl Default for MissingDataPolicy {
    fn default() -> Self {
        Self {
            max_gap_fraction: 0.10,
            ffill_limit: 5,
            max_abs_return: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmitReason {
    MissingProxy,
    TooManyGaps,
}

impl fmt::Display for OmitReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OmitReason::MissingProxy => "missing carbon proxy",
            OmitReason::TooManyGaps => "too many missing closes",
        })
    }
}

/// Included / omitted counts and omitted market-cap share.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    pub included: usize,
    pub omitted: usize,
    pub included_cap: f64,
    pub omitted_cap: f64,
    pub omitted_assets: Vec<(String, OmitReason)>,
}

impl CoverageStats {
    pub fn total_cap(&self) -> f64 {
        self.included_cap + self.omitted_cap
    }

    /// Omitted share of total market cap, in percent.
    pub fn omitted_cap_pct(&self) -> f64 {
        100.0 * self.omitted_cap / self.total_cap()
    }
}

/// An aligned, immutable panel of assets and factors for one study.
///
/// Assets are ordered by ticker. `prices` has one row per calendar date;
/// `returns` and the factor panel have one row per calendar date after the
/// first.
#[derive(Debug, Clone)]
pub struct Universe {
    assets: Vec<AssetRecord>,
    calendar: Vec<NaiveDate>,
    prices: Array2<f64>,
    returns: Array2<f64>,
    factors: FactorPanel,
    active_proxy: CarbonProxy,
    coverage: CoverageStats,
}

impl Universe {
    pub fn assets(&self) -> &[AssetRecord] {
        &self.assets
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn tickers(&self) -> Vec<&str> {
        self.assets.iter().map(|a| a.ticker()).collect()
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    /// Dates of the rows of [`Universe::returns`].
    pub fn return_dates(&self) -> &[NaiveDate] {
        &self.calendar[1..]
    }

    /// Aligned (forward-filled) closes, calendar × assets.
    pub fn prices(&self) -> &Array2<f64> {
        &self.prices
    }

    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
    }

    pub fn factors(&self) -> &FactorPanel {
        &self.factors
    }

    pub fn active_proxy(&self) -> CarbonProxy {
        self.active_proxy
    }

    pub fn coverage(&self) -> &CoverageStats {
        &self.coverage
    }

    pub fn market_caps(&self) -> Array1<f64> {
        self.assets.iter().map(|a| a.market_cap()).collect()
    }

    /// Active-proxy carbon value per asset.
    pub fn carbon(&self) -> Array1<f64> {
        self.assets
            .iter()
            .map(|a| {
                a.carbon()
                    .get(self.active_proxy)
                    .expect("universe assets carry the active proxy")
            })
            .collect()
    }

    /// Indices of return rows whose date falls in `window`.
    pub fn return_rows_in(&self, window: DateRange) -> std::ops::Range<usize> {
        let dates = self.return_dates();
        let lo = dates.partition_point(|&d| d < window.start);
        let hi = dates.partition_point(|&d| d <= window.end);
        lo..hi.max(lo)
    }
}

/// Simple returns `(p_t − p_{t−1}) / p_{t−1}` of a positive price sequence.
pub fn simple_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(DataError::InsufficientData {
            needed: 2,
            got: prices.len(),
        });
    }
    Ok(prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect())
}

/// Date-indexed simple returns; the first date has no return.
pub fn compute_returns(closes: &BTreeMap<NaiveDate, f64>) -> Result<BTreeMap<NaiveDate, f64>> {
    let prices: Vec<f64> = closes.values().copied().collect();
    let returns = simple_returns(&prices)?;
    Ok(closes.keys().skip(1).copied().zip(returns).collect())
}

pub type PriceTable = BTreeMap<String, BTreeMap<NaiveDate, f64>>;

pub(crate) fn malformed(source_name: &str, reason: impl Into<String>) -> DataError {
    DataError::MalformedFile {
        source_name: source_name.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn csv_reader<R: io::Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader)
}

/// Map lower-cased header names to column positions and check `required` are present.
pub(crate) fn header_index(
    headers: &csv::StringRecord,
    required: &[&str],
    source_name: &str,
) -> Result<BTreeMap<String, usize>> {
    let index: BTreeMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_ascii_lowercase(), i))
        .collect();
    if index.len() != headers.len() {
        return Err(malformed(source_name, "duplicate column in header"));
    }
    for name in required {
        if !index.contains_key(&name.to_ascii_lowercase()) {
            return Err(malformed(source_name, format!("header lacks column '{name}'")));
        }
    }
    Ok(index)
}

pub(crate) fn parse_date(raw: &str, source_name: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|_| malformed(source_name, format!("line {line}: bad date '{raw}'")))
}

fn parse_number(raw: &str, what: &str, source_name: &str, line: u64) -> Result<f64> {
    let value: f64 = raw
        .parse()
        .map_err(|_| malformed(source_name, format!("line {line}: bad {what} '{raw}'")))?;
    if !value.is_finite() {
        return Err(malformed(source_name, format!("line {line}: non-finite {what}")));
    }
    Ok(value)
}

fn records<'a, R: io::Read>(
    rdr: &'a mut csv::Reader<R>,
    source_name: &str,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    let name = source_name.to_string();
    rdr.records().map(move |rec| {
        let rec = rec.map_err(|e| malformed(&name, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        Ok((line, rec))
    })
}

/// Read a long-format `date, ticker, close` price file.
pub fn read_prices<R: io::Read>(reader: R, source_name: &str) -> Result<PriceTable> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(source_name, e.to_string()))?
        .clone();
    let idx = header_index(&headers, &["date", "ticker", "close"], source_name)?;
    let (di, ti, ci) = (idx["date"], idx["ticker"], idx["close"]);

    let mut table = PriceTable::new();
    for item in records(&mut rdr, source_name) {
        let (line, rec) = item?;
        let date = parse_date(&rec[di], source_name, line)?;
        let ticker = rec[ti].to_string();
        if ticker.is_empty() {
            return Err(malformed(source_name, format!("line {line}: empty ticker")));
        }
        let close = parse_number(&rec[ci], "close", source_name, line)?;
        if close <= 0.0 {
            return Err(DataError::NonPositivePrice {
                ticker,
                date,
                value: close,
            });
        }
        let series = table.entry(ticker.clone()).or_default();
        if series.insert(date, close).is_some() {
            return Err(malformed(
                source_name,
                format!("line {line}: duplicate date {date} for {ticker}"),
            ));
        }
    }
    Ok(table)
}

pub fn load_prices(path: &Path) -> Result<PriceTable> {
    read_prices(open(path)?, &path.display().to_string())
}

/// Read a `ticker, market_cap` file.
pub fn read_caps<R: io::Read>(reader: R, source_name: &str) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(source_name, e.to_string()))?
        .clone();
    let idx = header_index(&headers, &["ticker", "market_cap"], source_name)?;
    let (ti, mi) = (idx["ticker"], idx["market_cap"]);

    let mut caps = BTreeMap::new();
    for item in records(&mut rdr, source_name) {
        let (line, rec) = item?;
        let ticker = rec[ti].to_string();
        let cap = parse_number(&rec[mi], "market_cap", source_name, line)?;
        if cap <= 0.0 {
            return Err(DataError::NonPositiveCap { ticker, value: cap });
        }
        if caps.insert(ticker.clone(), cap).is_some() {
            return Err(malformed(source_name, format!("line {line}: duplicate ticker {ticker}")));
        }
    }
    Ok(caps)
}

pub fn load_caps(path: &Path) -> Result<BTreeMap<String, f64>> {
    read_caps(open(path)?, &path.display().to_string())
}

/// Read a `ticker, ghg, co2` file; blank cells are missing values.
pub fn read_carbon<R: io::Read>(
    reader: R,
    source_name: &str,
) -> Result<BTreeMap<String, CarbonValues>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(source_name, e.to_string()))?
        .clone();
    let idx = header_index(&headers, &["ticker", "ghg", "co2"], source_name)?;
    let (ti, gi, ci) = (idx["ticker"], idx["ghg"], idx["co2"]);

    let cell = |raw: &str, what: &str, ticker: &str, line: u64| -> Result<Option<f64>> {
        if raw.is_empty() {
            return Ok(None);
        }
        let value = parse_number(raw, what, source_name, line)?;
        if value < 0.0 {
            return Err(DataError::NegativeCarbon {
                ticker: ticker.to_string(),
                value,
            });
        }
        Ok(Some(value))
    };

    let mut out = BTreeMap::new();
    for item in records(&mut rdr, source_name) {
        let (line, rec) = item?;
        let ticker = rec[ti].to_string();
        let values = CarbonValues {
            ghg: cell(&rec[gi], "ghg", &ticker, line)?,
            co2: cell(&rec[ci], "co2", &ticker, line)?,
        };
        if out.insert(ticker.clone(), values).is_some() {
            return Err(malformed(source_name, format!("line {line}: duplicate ticker {ticker}")));
        }
    }
    Ok(out)
}

pub fn load_carbon(path: &Path) -> Result<BTreeMap<String, CarbonValues>> {
    read_carbon(open(path)?, &path.display().to_string())
}

/// Read a `date, <factors>, rf` file for `model_kind`; column names are case-insensitive.
pub fn read_factors<R: io::Read>(
    reader: R,
    source_name: &str,
    model_kind: ModelKind,
) -> Result<FactorPanel> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(source_name, e.to_string()))?
        .clone();
    let mut required = vec!["date", "rf"];
    required.extend_from_slice(model_kind.factor_names());
    let idx = header_index(&headers, &required, source_name)?;
    let factor_cols: Vec<usize> = model_kind
        .factor_names()
        .iter()
        .map(|n| idx[&n.to_ascii_lowercase()])
        .collect();
    let (di, ri) = (idx["date"], idx["rf"]);

    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut rf = Vec::new();
    for item in records(&mut rdr, source_name) {
        let (line, rec) = item?;
        let date = parse_date(&rec[di], source_name, line)?;
        if let Some(&last) = dates.last() {
            if date <= last {
                return Err(malformed(
                    source_name,
                    format!("line {line}: dates must be strictly increasing"),
                ));
            }
        }
        dates.push(date);
        for &c in &factor_cols {
            values.push(parse_number(&rec[c], "factor value", source_name, line)?);
        }
        rf.push(parse_number(&rec[ri], "rf", source_name, line)?);
    }
    let series = Array2::from_shape_vec((dates.len(), factor_cols.len()), values)
        .expect("row-major factor values");
    FactorPanel::new(model_kind, dates, series, Array1::from(rf))
}

pub fn load_factors(path: &Path, model_kind: ModelKind) -> Result<FactorPanel> {
    read_factors(open(path)?, &path.display().to_string(), model_kind)
}

/// Join price, cap and carbon tables into asset records, one per priced ticker.
pub fn join_assets(
    prices: PriceTable,
    caps: &BTreeMap<String, f64>,
    carbon: &BTreeMap<String, CarbonValues>,
) -> Result<Vec<AssetRecord>> {
    prices
        .into_iter()
        .map(|(ticker, closes)| {
            let cap = *caps
                .get(&ticker)
                .ok_or_else(|| DataError::MissingCap(ticker.clone()))?;
            let values = carbon.get(&ticker).copied().unwrap_or_default();
            AssetRecord::new(ticker, closes, cap, values)
        })
        .collect()
}

/// Align assets and factors into a [`Universe`].
///
/// Assets lacking `proxy`, or missing more than `policy.max_gap_fraction` of
/// the common calendar, are omitted. Short gaps are forward-filled and the
/// final calendar keeps only dates on which every surviving asset has a close.
pub fn assemble_universe(
    assets: Vec<AssetRecord>,
    factors: &FactorPanel,
    proxy: CarbonProxy,
    policy: &MissingDataPolicy,
) -> Result<Universe> {
    let mut assets = assets;
    assets.sort_by(|a, b| a.ticker.cmp(&b.ticker));

    let mut omitted = Vec::new();
    let mut omitted_cap = 0.0;
    let (mut with_proxy, without): (Vec<_>, Vec<_>) = assets
        .into_iter()
        .partition(|a| a.carbon.get(proxy).is_some());
    for a in without {
        omitted_cap += a.market_cap;
        omitted.push((a.ticker, OmitReason::MissingProxy));
    }

    let factor_dates: BTreeSet<NaiveDate> = factors.dates().iter().copied().collect();
    let traded: BTreeSet<NaiveDate> = with_proxy
        .iter()
        .flat_map(|a| a.closes.keys().copied())
        .collect();
    let master: Vec<NaiveDate> = traded.intersection(&factor_dates).copied().collect();
    if master.is_empty() && !with_proxy.is_empty() {
        return Err(DataError::CalendarDisjoint);
    }

    // Gap screen on the master calendar.
    let mut kept = Vec::with_capacity(with_proxy.len());
    for a in with_proxy.drain(..) {
        let missing = master.iter().filter(|d| !a.closes.contains_key(d)).count();
        if missing as f64 > policy.max_gap_fraction * master.len() as f64 {
            omitted_cap += a.market_cap;
            omitted.push((a.ticker, OmitReason::TooManyGaps));
        } else {
            kept.push(a);
        }
    }
    omitted.sort_by(|a, b| a.0.cmp(&b.0));

    if kept.len() < 2 {
        return Err(DataError::UniverseTooSmall {
            survivors: kept.len(),
        });
    }

    // Forward-fill each asset onto the master calendar.
    let filled: Vec<Vec<Option<f64>>> = kept
        .iter()
        .map(|a| forward_fill(&master, &a.closes, policy.ffill_limit))
        .collect();
    let rows: Vec<usize> = (0..master.len())
        .filter(|&t| filled.iter().all(|col| col[t].is_some()))
        .collect();
    if rows.is_empty() {
        return Err(DataError::CalendarDisjoint);
    }
    if rows.len() < 2 {
        return Err(DataError::InsufficientData {
            needed: 2,
            got: rows.len(),
        });
    }

    let calendar: Vec<NaiveDate> = rows.iter().map(|&t| master[t]).collect();
    let n = kept.len();
    let prices = Array2::from_shape_fn((rows.len(), n), |(t, i)| {
        filled[i][rows[t]].expect("row kept only when every asset has a close")
    });
    let mut returns = Array2::zeros((rows.len() - 1, n));
    for i in 0..n {
        for t in 1..rows.len() {
            let r = (prices[[t, i]] - prices[[t - 1, i]]) / prices[[t - 1, i]];
            if let Some(bound) = policy.max_abs_return {
                if r.abs() >= bound {
                    return Err(DataError::ImplausibleReturn {
                        ticker: kept[i].ticker.clone(),
                        date: calendar[t],
                        value: r,
                        bound,
                    });
                }
            }
            returns[[t - 1, i]] = r;
        }
    }

    let included_cap = kept.iter().map(|a| a.market_cap).sum();
    let coverage = CoverageStats {
        included: kept.len(),
        omitted: omitted.len(),
        included_cap,
        omitted_cap,
        omitted_assets: omitted,
    };

    Ok(Universe {
        factors: factors.select(&calendar[1..]),
        assets: kept,
        calendar,
        prices,
        returns,
        active_proxy: proxy,
        coverage,
    })
}

/// Closes on `calendar`, carrying the last observation forward for at most `limit` dates.
fn forward_fill(
    calendar: &[NaiveDate],
    closes: &BTreeMap<NaiveDate, f64>,
    limit: usize,
) -> Vec<Option<f64>> {
    let mut last: Option<f64> = None;
    let mut run = 0usize;
    calendar
        .iter()
        .map(|d| match closes.get(d) {
            Some(&p) => {
                last = Some(p);
                run = 0;
                Some(p)
            }
            None => {
                run += 1;
                if run <= limit {
                    last
                } else {
                    None
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn series(dates: &[NaiveDate], prices: &[f64]) -> BTreeMap<NaiveDate, f64> {
        dates.iter().copied().zip(prices.iter().copied()).collect()
    }

    fn calendar(n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| d("2020-01-01") + chrono::Days::new(i as u64))
            .collect()
    }

    fn flat_factors(dates: &[NaiveDate]) -> FactorPanel {
        let k = ModelKind::FourFactor.factor_count();
        let series = Array2::from_shape_fn((dates.len(), k), |(t, j)| {
            ((t * 7 + j * 3) % 11) as f64 * 1e-3
        });
        FactorPanel::new(
            ModelKind::FourFactor,
            dates.to_vec(),
            series,
            Array1::zeros(dates.len()),
        )
        .unwrap()
    }

    fn asset(ticker: &str, dates: &[NaiveDate], cap: f64, ghg: Option<f64>) -> AssetRecord {
        let prices: Vec<f64> = (0..dates.len()).map(|i| 100.0 + i as f64).collect();
        AssetRecord::new(
            ticker,
            series(dates, &prices),
            cap,
            CarbonValues { ghg, co2: Some(1.0) },
        )
        .unwrap()
    }

    #[test]
    fn reads_well_formed_prices() {
        let csv = "date,ticker,close\n\
                   2020-01-01,AAA,10\n2020-01-02,AAA,11\n2020-01-03,AAA,12\n\
                   2020-01-01,BBB,20\n2020-01-02,BBB,21\n2020-01-03,BBB,22\n";
        let table = read_prices(csv.as_bytes(), "prices").unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table["AAA"].len(), 3);
        assert_eq!(table["BBB"][&d("2020-01-02")], 21.0);
    }

    #[test]
    fn zero_price_names_the_cell() {
        let csv = "date,ticker,close\n2020-01-01,AAA,10\n2020-01-02,AAA,0.0\n";
        match read_prices(csv.as_bytes(), "prices") {
            Err(DataError::NonPositivePrice { ticker, date, value }) => {
                assert_eq!(ticker, "AAA");
                assert_eq!(date, d("2020-01-02"));
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_date_is_malformed() {
        let csv = "date,ticker,close\n2020-01-01,AAA,10\n2020-01-01,AAA,11\n";
        assert!(matches!(
            read_prices(csv.as_bytes(), "prices"),
            Err(DataError::MalformedFile { .. })
        ));
    }

    #[test]
    fn bad_header_and_bad_date_are_malformed() {
        let csv = "day,ticker,close\n2020-01-01,AAA,10\n";
        assert!(matches!(
            read_prices(csv.as_bytes(), "p"),
            Err(DataError::MalformedFile { .. })
        ));
        let csv = "date,ticker,close\n01/02/2020,AAA,10\n";
        assert!(matches!(
            read_prices(csv.as_bytes(), "p"),
            Err(DataError::MalformedFile { .. })
        ));
    }

    #[test]
    fn carbon_blank_cells_are_missing() {
        let csv = "ticker,ghg,co2\nAAA,1.5,\nBBB,,200\n";
        let c = read_carbon(csv.as_bytes(), "carbon").unwrap();
        assert_eq!(c["AAA"], CarbonValues { ghg: Some(1.5), co2: None });
        assert_eq!(c["BBB"], CarbonValues { ghg: None, co2: Some(200.0) });
    }

    #[test]
    fn factor_columns_found_by_name() {
        let csv = "date,rf,MF,WML,HML,SMB\n2020-01-01,0.0001,0.01,0.02,0.03,0.04\n";
        let panel = read_factors(csv.as_bytes(), "f", ModelKind::FourFactor).unwrap();
        // Stored in canonical SMB, HML, WML, MF order.
        assert_eq!(panel.series().row(0).to_vec(), vec![0.04, 0.03, 0.02, 0.01]);
        assert_eq!(panel.risk_free()[0], 0.0001);

        let missing = "date,rf,SMB,HML,WML\n2020-01-01,0,0,0,0\n";
        assert!(read_factors(missing.as_bytes(), "f", ModelKind::FourFactor).is_err());
    }

    #[test]
    fn returns_arithmetic() {
        assert_eq!(simple_returns(&[100.0, 110.0]).unwrap(), vec![0.1]);
        assert_eq!(simple_returns(&[100.0, 100.0, 100.0]).unwrap(), vec![0.0, 0.0]);
        let r = simple_returns(&[100.0, 110.0, 99.0]).unwrap();
        assert!((r[0] - 0.10).abs() < 1e-15);
        assert!((r[1] + 0.10).abs() < 1e-15);
        assert!(matches!(
            simple_returns(&[100.0]),
            Err(DataError::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn dated_returns_skip_first_date() {
        let cal = calendar(3);
        let r = compute_returns(&series(&cal, &[100.0, 110.0, 99.0])).unwrap();
        assert_eq!(r.keys().copied().collect::<Vec<_>>(), cal[1..].to_vec());
    }

    #[test]
    fn asset_missing_proxy_is_omitted_with_cap_share() {
        let cal = calendar(10);
        let assets = vec![
            asset("AAA", &cal, 1.0, Some(3.0)),
            asset("BBB", &cal, 3.0, None),
            asset("CCC", &cal, 4.0, Some(5.0)),
        ];
        let u = assemble_universe(
            assets,
            &flat_factors(&cal),
            CarbonProxy::Ghg,
            &MissingDataPolicy::default(),
        )
        .unwrap();
        assert_eq!(u.tickers(), vec!["AAA", "CCC"]);
        let cov = u.coverage();
        assert_eq!((cov.included, cov.omitted), (2, 1));
        assert_eq!(cov.omitted_assets[0], ("BBB".to_string(), OmitReason::MissingProxy));
        assert!((cov.omitted_cap_pct() - 37.5).abs() < 1e-12);
        assert_eq!(cov.total_cap(), 8.0);
    }

    #[test]
    fn gappy_asset_is_dropped() {
        let cal = calendar(20);
        let half: Vec<NaiveDate> = cal.iter().copied().step_by(2).collect();
        let assets = vec![
            asset("AAA", &cal, 1.0, Some(1.0)),
            asset("BBB", &half, 1.0, Some(1.0)),
            asset("CCC", &cal, 1.0, Some(1.0)),
        ];
        let policy = MissingDataPolicy {
            max_gap_fraction: 0.10,
            ..Default::default()
        };
        let u = assemble_universe(assets, &flat_factors(&cal), CarbonProxy::Ghg, &policy).unwrap();
        assert_eq!(u.tickers(), vec!["AAA", "CCC"]);
        assert_eq!(u.coverage().omitted_assets[0].1, OmitReason::TooManyGaps);
        assert_eq!(u.calendar().len(), 20);
    }

    #[test]
    fn short_gap_is_forward_filled() {
        let cal = calendar(30);
        let mut holey = cal.clone();
        holey.remove(10);
        let assets = vec![asset("AAA", &cal, 1.0, Some(1.0)), asset("BBB", &holey, 1.0, Some(1.0))];
        let u = assemble_universe(
            assets,
            &flat_factors(&cal),
            CarbonProxy::Ghg,
            &MissingDataPolicy::default(),
        )
        .unwrap();
        assert_eq!(u.calendar().len(), 30);
        // BBB carries its 2020-01-10 close into 2020-01-11.
        assert_eq!(u.prices()[[10, 1]], u.prices()[[9, 1]]);
        assert_eq!(u.returns()[[9, 1]], 0.0);
    }

    #[test]
    fn long_gap_beyond_limit_shrinks_calendar() {
        let cal = calendar(100);
        let holey: Vec<NaiveDate> = cal
            .iter()
            .enumerate()
            .filter(|(i, _)| !(40..47).contains(i))
            .map(|(_, d)| *d)
            .collect();
        let assets = vec![asset("AAA", &cal, 1.0, Some(1.0)), asset("BBB", &holey, 1.0, Some(1.0))];
        let u = assemble_universe(
            assets,
            &flat_factors(&cal),
            CarbonProxy::Ghg,
            &MissingDataPolicy::default(),
        )
        .unwrap();
        // 7-day gap: first 5 filled, last 2 dropped from the calendar.
        assert_eq!(u.calendar().len(), 98);
        assert_eq!(u.factors().dates(), u.return_dates());
    }

    #[test]
    fn disjoint_calendars_and_small_universes_fail() {
        let cal = calendar(10);
        let later: Vec<NaiveDate> = (0..10)
            .map(|i| d("2021-01-01") + chrono::Days::new(i))
            .collect();
        let assets = vec![asset("AAA", &cal, 1.0, Some(1.0)), asset("BBB", &cal, 1.0, Some(1.0))];
        assert!(matches!(
            assemble_universe(
                assets,
                &flat_factors(&later),
                CarbonProxy::Ghg,
                &MissingDataPolicy::default()
            ),
            Err(DataError::CalendarDisjoint)
        ));

        let assets = vec![asset("AAA", &cal, 1.0, Some(1.0)), asset("BBB", &cal, 1.0, None)];
        assert!(matches!(
            assemble_universe(
                assets,
                &flat_factors(&cal),
                CarbonProxy::Ghg,
                &MissingDataPolicy::default()
            ),
            Err(DataError::UniverseTooSmall { survivors: 1 })
        ));
    }

    #[test]
    fn sanity_bound_rejects_unit_mistakes() {
        let cal = calendar(5);
        let mut jumpy = asset("AAA", &cal, 1.0, Some(1.0));
        jumpy.closes.insert(cal[2], 1000.0);
        let assets = vec![jumpy, asset("BBB", &cal, 1.0, Some(1.0))];
        let policy = MissingDataPolicy {
            max_abs_return: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(
            assemble_universe(assets, &flat_factors(&cal), CarbonProxy::Ghg, &policy),
            Err(DataError::ImplausibleReturn { .. })
        ));
    }

    #[test]
    fn asset_record_rejects_bad_values() {
        let cal = calendar(2);
        assert!(AssetRecord::new("A", series(&cal, &[1.0, -1.0]), 1.0, CarbonValues::default()).is_err());
        assert!(AssetRecord::new("A", series(&cal, &[1.0, 1.0]), 0.0, CarbonValues::default()).is_err());
        let neg = CarbonValues { ghg: Some(-1.0), co2: None };
        assert!(AssetRecord::new("A", series(&cal, &[1.0, 1.0]), 1.0, neg).is_err());
    }

    #[test]
    fn return_rows_in_window() {
        let cal = calendar(10);
        let assets = vec![asset("AAA", &cal, 1.0, Some(1.0)), asset("BBB", &cal, 1.0, Some(1.0))];
        let u = assemble_universe(
            assets,
            &flat_factors(&cal),
            CarbonProxy::Ghg,
            &MissingDataPolicy::default(),
        )
        .unwrap();
        let rows = u.return_rows_in(DateRange::new(cal[3], cal[5]));
        assert_eq!(rows, 2..5);
        assert_eq!(u.return_dates()[rows.start], cal[3]);
    }
}
