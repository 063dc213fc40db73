//! Rolling in-sample construction and out-of-sample monthly evaluation.
//!
//! Each window fits the factor model on its in-sample year, builds every
//! index spec once, and holds those weights fixed through the following
//! out-of-sample segment.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{self, DataError, DateRange, Universe};
use crate::factor::{self, FactorError};
use crate::index::{DecarbonizedIndex, IndexError, IndexInputs, IndexSpec, RiskKind};
use crate::optimizer::{OptimizeError, SolveStatus};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("no windows")]
    NoWindows,

    #[error("invalid study plan: {0}")]
    InvalidPlan(String),

    #[error("no labeled months")]
    NoLabeledMonths,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-positive price {value} at position {index}")]
    NonPositivePrice { index: usize, value: f64 },

    #[error("window {window}: {source}")]
    Factor {
        window: DateRange,
        #[source]
        source: FactorError,
    },

    #[error(transparent)]
    Index(#[from] IndexError),

    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

/// Calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Month → event label for one market.
pub type EventLabels = BTreeMap<YearMonth, String>;

/// Read an events file with columns `market, year, month, label`, keeping
/// rows for `market`. Labels for the same month are joined with `"; "`.
pub fn read_events<R: io::Read>(reader: R, source_name: &str, market: &str) -> std::result::Result<EventLabels, DataError> {
    let mut rdr = data::csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| data::malformed(source_name, e.to_string()))?
        .clone();
    let idx = data::header_index(&headers, &["market", "year", "month", "label"], source_name)?;
    let (mi, yi, moi, li) = (idx["market"], idx["year"], idx["month"], idx["label"]);
    let mut labels = EventLabels::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data::malformed(source_name, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if !rec[mi].eq_ignore_ascii_case(market) {
            continue;
        }
        let year: i32 = rec[yi]
            .parse()
            .map_err(|_| data::malformed(source_name, format!("line {line}: bad year '{}'", &rec[yi])))?;
        let month: u32 = rec[moi]
            .parse()
            .ok()
            .filter(|m| (1..=12).contains(m))
            .ok_or_else(|| data::malformed(source_name, format!("line {line}: bad month '{}'", &rec[moi])))?;
        labels
            .entry(YearMonth { year, month })
            .and_modify(|l: &mut String| {
                l.push_str("; ");
                l.push_str(&rec[li]);
            })
            .or_insert_with(|| rec[li].to_string());
    }
    Ok(labels)
}

pub fn load_events(path: &Path, market: &str) -> std::result::Result<EventLabels, DataError> {
    read_events(data::open(path)?, &path.display().to_string(), market)
}

/// Climate-event months bundled with the crate (nifty and sp500).
pub const BUILTIN_EVENTS: &str = include_str!("../data/events.csv");

/// Bundled event labels for `market`; empty for markets not listed.
pub fn builtin_events(market: &str) -> std::result::Result<EventLabels, DataError> {
    read_events(BUILTIN_EVENTS.as_bytes(), "builtin events.csv", market)
}

/// Percentage return of a fixed-weight portfolio between two closes:
/// `(w·P_final − w·P_initial)·100 / (w·P_initial)`.
pub fn monthly_return(w: ArrayView1<f64>, initial: ArrayView1<f64>, last: ArrayView1<f64>) -> Result<f64> {
    for len in [initial.len(), last.len()] {
        if len != w.len() {
            return Err(BacktestError::DimensionMismatch {
                expected: w.len(),
                actual: len,
            });
        }
    }
    for (index, &value) in initial.iter().chain(last.iter()).enumerate() {
        if !(value > 0.0) {
            return Err(BacktestError::NonPositivePrice {
                index: index % w.len(),
                value,
            });
        }
    }
    let v0 = w.dot(&initial);
    let v1 = w.dot(&last);
    Ok((v1 - v0) * 100.0 / v0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub in_sample: DateRange,
    pub out_sample: DateRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    windows: Vec<Window>,
    specs: Vec<IndexSpec>,
    events: EventLabels,
}

impl StudyPlan {
    pub fn new(windows: Vec<Window>, specs: Vec<IndexSpec>, events: EventLabels) -> Result<Self> {
        if windows.is_empty() {
            return Err(BacktestError::NoWindows);
        }
        if specs.is_empty() {
            return Err(BacktestError::InvalidPlan("no index specs".into()));
        }
        for w in &windows {
            if w.in_sample.start > w.in_sample.end || w.out_sample.start > w.out_sample.end {
                return Err(BacktestError::InvalidPlan(format!("empty range in window {}", w.in_sample)));
            }
            if w.out_sample.start <= w.in_sample.end {
                return Err(BacktestError::InvalidPlan(format!(
                    "out-of-sample segment {} starts before in-sample {} ends",
                    w.out_sample, w.in_sample
                )));
            }
        }
        for pair in windows.windows(2) {
            if pair[1].out_sample.start <= pair[0].out_sample.end {
                return Err(BacktestError::InvalidPlan(format!(
                    "out-of-sample segments {} and {} overlap or are out of order",
                    pair[0].out_sample, pair[1].out_sample
                )));
            }
        }
        let mut labels: Vec<String> = specs.iter().map(IndexSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|p| p[0] == p[1]) {
            return Err(BacktestError::InvalidPlan("duplicate index spec".into()));
        }
        Ok(Self { windows, specs, events })
    }

    /// `count` consecutive one-year in-sample windows from `start`, each
    /// followed by a one-year out-of-sample segment.
    pub fn annual(start: NaiveDate, count: usize, specs: Vec<IndexSpec>, events: EventLabels) -> Result<Self> {
        let year = |i: usize| {
            start
                .checked_add_months(Months::new(12 * i as u32))
                .ok_or_else(|| BacktestError::InvalidPlan("window dates overflow".into()))
        };
        let windows = (0..count)
            .map(|i| {
                let (a, b, c) = (year(i)?, year(i + 1)?, year(i + 2)?);
                Ok(Window {
                    in_sample: DateRange::new(a, b.pred_opt().expect("valid date")),
                    out_sample: DateRange::new(b, c.pred_opt().expect("valid date")),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(windows, specs, events)
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn specs(&self) -> &[IndexSpec] {
        &self.specs
    }

    pub fn events(&self) -> &EventLabels {
        &self.events
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InSampleRow {
    pub window: DateRange,
    pub spec: String,
    pub risk_kind: RiskKind,
    pub bp_risk: f64,
    pub di_risk: Option<f64>,
    pub bp_footprint: f64,
    pub di_footprint: Option<f64>,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutSampleRow {
    pub month: YearMonth,
    pub bp_return: f64,
    /// One entry per spec, `None` where the window's solve failed.
    pub di_returns: Vec<Option<f64>>,
    pub event: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub spec: String,
    pub months: usize,
    pub outperform_months: usize,
    pub event_months: usize,
    pub event_outperform: usize,
}

impl SummaryRow {
    pub fn outperform_fraction(&self) -> Option<f64> {
        (self.months > 0).then(|| self.outperform_months as f64 / self.months as f64)
    }

    pub fn event_fraction(&self) -> Option<f64> {
        (self.event_months > 0).then(|| self.event_outperform as f64 / self.event_months as f64)
    }
}

/// Per-window construction results, kept for auditing applied weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window: Window,
    pub benchmark: Array1<f64>,
    pub indices: Vec<Option<DecarbonizedIndex>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub spec_labels: Vec<String>,
    pub windows: Vec<WindowResult>,
    pub in_sample: Vec<InSampleRow>,
    pub out_sample: Vec<OutSampleRow>,
    pub summary: Vec<SummaryRow>,
}

/// Index ranges of the calendar falling in each calendar month of `range`.
fn month_bounds(calendar: &[NaiveDate], range: DateRange) -> Vec<(YearMonth, usize, usize)> {
    let mut out: Vec<(YearMonth, usize, usize)> = Vec::new();
    for (i, &d) in calendar.iter().enumerate() {
        if !range.contains(d) {
            continue;
        }
        let ym = YearMonth::of(d);
        match out.last_mut() {
            Some(last) if last.0 == ym => last.2 = i,
            _ => out.push((ym, i, i)),
        }
    }
    out
}

struct WindowOutput {
    result: WindowResult,
    in_sample: Vec<InSampleRow>,
    out_sample: Vec<OutSampleRow>,
}

fn run_window(universe: &Universe, plan: &StudyPlan, window: Window) -> Result<WindowOutput> {
    let fit = factor::fit_universe(universe, window.in_sample).map_err(|source| BacktestError::Factor {
        window: window.in_sample,
        source,
    })?;
    let inputs = IndexInputs::new(universe, &fit)?;
    let bench_fp = inputs.benchmark_footprint();

    let mut indices = Vec::with_capacity(plan.specs.len());
    let mut in_rows = Vec::with_capacity(plan.specs.len());
    for spec in &plan.specs {
        let bp_risk = inputs.risk_of(inputs.benchmark.view(), spec.risk_kind, &spec.params)?;
        let built = match inputs.build(spec) {
            Ok(di) => Some(di),
            Err(IndexError::Optimize(OptimizeError::InfeasibleProblem(_))) => None,
            Err(e) => return Err(e.into()),
        };
        in_rows.push(InSampleRow {
            window: window.in_sample,
            spec: spec.label(),
            risk_kind: spec.risk_kind,
            bp_risk,
            di_risk: built.as_ref().map(|d| d.risk_value),
            bp_footprint: bench_fp,
            di_footprint: built.as_ref().map(|d| d.footprint),
            status: built.as_ref().map_or(SolveStatus::Infeasible, |d| d.status),
        });
        indices.push(built);
    }

    let prices = universe.prices();
    let mut out_rows = Vec::new();
    for (month, first, last) in month_bounds(universe.calendar(), window.out_sample) {
        let p0 = prices.row(first);
        let p1 = prices.row(last);
        let bp_return = monthly_return(inputs.benchmark.view(), p0, p1)?;
        let di_returns = indices
            .iter()
            .map(|di| di.as_ref().map(|d| monthly_return(d.weights.view(), p0, p1)).transpose())
            .collect::<Result<Vec<_>>>()?;
        out_rows.push(OutSampleRow {
            month,
            bp_return,
            di_returns,
            event: plan.events.get(&month).cloned(),
        });
    }

    Ok(WindowOutput {
        result: WindowResult {
            window,
            benchmark: inputs.benchmark.clone(),
            indices,
        },
        in_sample: in_rows,
        out_sample: out_rows,
    })
}

fn summarize(labels: &[String], rows: &[OutSampleRow]) -> Vec<SummaryRow> {
    labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let mut s = SummaryRow {
                spec: label.clone(),
                months: 0,
                outperform_months: 0,
                event_months: 0,
                event_outperform: 0,
            };
            for row in rows {
                let Some(r) = row.di_returns[j] else { continue };
                let beat = r > row.bp_return;
                s.months += 1;
                s.outperform_months += usize::from(beat);
                if row.event.is_some() {
                    s.event_months += 1;
                    s.event_outperform += usize::from(beat);
                }
            }
            s
        })
        .collect()
}

/// Run every window of `plan` on `universe`.
///
/// Windows are processed in parallel; rows are assembled in window order
/// and then month order.
pub fn run_study(universe: &Universe, plan: &StudyPlan) -> Result<BacktestReport> {
    let outputs = plan
        .windows
        .par_iter()
        .map(|&w| run_window(universe, plan, w))
        .collect::<Result<Vec<_>>>()?;
    let spec_labels: Vec<String> = plan.specs.iter().map(IndexSpec::label).collect();
    let mut windows = Vec::new();
    let mut in_sample = Vec::new();
    let mut out_sample = Vec::new();
    for o in outputs {
        windows.push(o.result);
        in_sample.extend(o.in_sample);
        out_sample.extend(o.out_sample);
    }
    let summary = summarize(&spec_labels, &out_sample);
    Ok(BacktestReport {
        spec_labels,
        windows,
        in_sample,
        out_sample,
        summary,
    })
}

/// Fraction of `labels` months in which each spec strictly beat the benchmark.
pub fn event_summary(report: &BacktestReport, labels: &EventLabels) -> Result<Vec<(String, f64)>> {
    let relabeled: Vec<OutSampleRow> = report
        .out_sample
        .iter()
        .map(|r| OutSampleRow {
            event: labels.get(&r.month).cloned(),
            ..r.clone()
        })
        .collect();
    let rows = summarize(&report.spec_labels, &relabeled);
    if rows.iter().all(|r| r.event_months == 0) {
        return Err(BacktestError::NoLabeledMonths);
    }
    Ok(rows
        .into_iter()
        .map(|r| {
            let f = r.event_fraction().unwrap_or(0.0);
            (r.spec, f)
        })
        .collect())
}

fn num(v: f64) -> String {
    format!("{v:.8}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_writer<W: io::Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

impl BacktestReport {
    pub fn write_in_sample<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv_writer(out);
        w.write_record([
            "window_start",
            "window_end",
            "spec",
            "risk_kind",
            "bp_risk",
            "di_risk",
            "bp_footprint",
            "di_footprint",
            "status",
        ])?;
        for r in &self.in_sample {
            w.write_record([
                r.window.start.to_string(),
                r.window.end.to_string(),
                r.spec.clone(),
                r.risk_kind.to_string(),
                num(r.bp_risk),
                opt_num(r.di_risk),
                num(r.bp_footprint),
                opt_num(r.di_footprint),
                r.status.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_out_sample<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv_writer(out);
        let mut header = vec!["month".to_string(), "bp_return_pct".to_string()];
        header.extend(self.spec_labels.iter().cloned());
        header.push("event".to_string());
        w.write_record(&header)?;
        for r in &self.out_sample {
            let mut rec = vec![r.month.to_string(), num(r.bp_return)];
            rec.extend(r.di_returns.iter().map(|v| opt_num(*v)));
            rec.push(r.event.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv_writer(out);
        w.write_record([
            "spec",
            "months",
            "outperform_months",
            "outperform_fraction",
            "event_months",
            "event_outperform",
            "event_fraction",
        ])?;
        for r in &self.summary {
            w.write_record([
                r.spec.clone(),
                r.months.to_string(),
                r.outperform_months.to_string(),
                opt_num(r.outperform_fraction()),
                r.event_months.to_string(),
                r.event_outperform.to_string(),
                opt_num(r.event_fraction()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn monthly_return_cases() {
        let r = monthly_return(array![1.0].view(), array![100.0].view(), array![110.0].view()).unwrap();
        assert_abs_diff_eq!(r, 10.0, epsilon = 1e-10);
        let r = monthly_return(
            array![0.5, 0.5].view(),
            array![100.0, 200.0].view(),
            array![110.0, 190.0].view(),
        )
        .unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-10);
        // (83 − 90)·100 / 90
        let r = monthly_return(
            array![0.2, 0.8].view(),
            array![50.0, 100.0].view(),
            array![55.0, 90.0].view(),
        )
        .unwrap();
        assert_abs_diff_eq!(r, -700.0 / 90.0, epsilon = 1e-10);
        assert!(monthly_return(array![1.0].view(), array![0.0].view(), array![1.0].view()).is_err());
        assert!(monthly_return(array![1.0].view(), array![1.0, 2.0].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn month_boundaries() {
        let cal = [d(2020, 1, 30), d(2020, 1, 31), d(2020, 2, 3), d(2020, 2, 28), d(2020, 3, 2)];
        let b = month_bounds(&cal, DateRange::new(d(2020, 1, 31), d(2020, 2, 29)));
        assert_eq!(
            b,
            vec![
                (YearMonth { year: 2020, month: 1 }, 1, 1),
                (YearMonth { year: 2020, month: 2 }, 2, 3)
            ]
        );
    }

    #[test]
    fn events_file_filters_market_and_merges() {
        let text = "market,year,month,label\nnifty,2019,12,COP 25\nsp500,2019,12,COP 25\nsp500,2022,11,Hurricane Nicole\nsp500,2022,11,COP 27\n";
        let ev = read_events(text.as_bytes(), "events", "sp500").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[&YearMonth { year: 2022, month: 11 }], "Hurricane Nicole; COP 27");
        let bad = "market,year,month,label\nnifty,2019,13,x\n";
        assert!(read_events(bad.as_bytes(), "events", "nifty").is_err());
    }

    #[test]
    fn builtin_event_list() {
        let nifty = builtin_events("nifty").unwrap();
        let sp = builtin_events("sp500").unwrap();
        assert_eq!((nifty.len(), sp.len()), (12, 14));
        assert_eq!(sp[&YearMonth { year: 2022, month: 11 }], "Hurricane Nicole; COP 27");
        assert_eq!(nifty[&YearMonth { year: 2020, month: 5 }], "Cyclone Amphan");
        assert!(builtin_events("ftse").unwrap().is_empty());
    }

    #[test]
    fn plan_validation() {
        assert!(matches!(
            StudyPlan::new(vec![], vec![], EventLabels::new()),
            Err(BacktestError::NoWindows)
        ));
        let spec = IndexSpec::new(
            crate::index::IndexMethod::CarbonCap(0.9),
            RiskKind::VaR,
            crate::risk::RiskParams::new(0.95, Default::default()).unwrap(),
        );
        let plan = StudyPlan::annual(d(2017, 4, 1), 3, vec![spec], EventLabels::new()).unwrap();
        assert_eq!(plan.windows().len(), 3);
        assert_eq!(plan.windows()[0].in_sample, DateRange::new(d(2017, 4, 1), d(2018, 3, 31)));
        assert_eq!(plan.windows()[0].out_sample, DateRange::new(d(2018, 4, 1), d(2019, 3, 31)));
        let overlapping = vec![plan.windows()[0], plan.windows()[0]];
        assert!(StudyPlan::new(overlapping, vec![spec], EventLabels::new()).is_err());
        assert!(StudyPlan::new(vec![plan.windows()[0]], vec![spec, spec], EventLabels::new()).is_err());
    }

    fn row(bp: f64, di: f64, event: bool) -> OutSampleRow {
        OutSampleRow {
            month: YearMonth { year: 2020, month: 1 },
            bp_return: bp,
            di_returns: vec![Some(di)],
            event: event.then(|| "e".to_string()),
        }
    }

    #[test]
    fn summary_counts_strict_wins() {
        let mut rows: Vec<OutSampleRow> = (0..9).map(|_| row(0.0, 1.0, true)).collect();
        rows.extend((0..3).map(|_| row(1.0, 1.0, true)));
        rows.push(row(2.0, 1.0, false));
        let s = summarize(&["di".to_string()], &rows);
        assert_eq!(s[0].months, 13);
        assert_eq!(s[0].event_months, 12);
        assert_eq!(s[0].event_fraction(), Some(0.75));
        let ties = summarize(&["di".to_string()], &[row(1.0, 1.0, true)]);
        assert_eq!(ties[0].event_fraction(), Some(0.0));
    }
}
