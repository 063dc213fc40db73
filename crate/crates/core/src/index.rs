//! Benchmark and decarbonized index construction.
//!
//! DI_1 ("drop-k") excludes the `k` highest-carbon assets; DI_2 ("carbon
//! cap") bounds the portfolio footprint at a fraction of the benchmark's.
//! Both minimize parametric mean-VaR or mean-ES under the factor-model
//! covariance.

use std::fmt;
use std::io;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{CarbonProxy, DateRange, ModelKind, Universe};
use crate::factor::{self, FactorError, FactorModelFit};
use crate::optimizer::{self, OptimizeError, PortfolioProblem, SolveStatus, Tolerances};
use crate::risk::{self, Convention, RiskError, RiskParams};

/// Risks within this distance are ties in `sweep_k`.
pub const K_TIE_TOL: f64 = 1e-12;
pub const DEFAULT_ELBOW_TOL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("invalid index spec: {0}")]
    InvalidSpec(String),

    #[error("empty parameter grid")]
    EmptyGrid,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(transparent)]
    Optimize(#[from] OptimizeError),

    #[error(transparent)]
    Factor(#[from] FactorError),

    #[error(transparent)]
    Risk(#[from] RiskError),
}

pub type Result<T> = std::result::Result<T, IndexError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskKind {
    VaR,
    ES,
}

impl RiskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::VaR => "var",
            RiskKind::ES => "es",
        }
    }

    /// `T(p)` for VaR, `T₁(p)` for ES.
    pub fn multiplier(self, p: f64) -> std::result::Result<f64, RiskError> {
        match self {
            RiskKind::VaR => risk::normal_quantile(p),
            RiskKind::ES => risk::es_multiplier(p),
        }
    }
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "var" => Ok(RiskKind::VaR),
            "es" => Ok(RiskKind::ES),
            other => Err(format!("unknown risk kind '{other}' (expected var or es)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexMethod {
    /// Pin the `k` highest-carbon assets to zero.
    DropK(usize),
    /// Cap the footprint at `c_rel` times the benchmark footprint.
    CarbonCap(f64),
}

impl IndexMethod {
    /// Short column label, e.g. `di1_k3` or `di2_c0.85`.
    pub fn label(&self) -> String {
        match self {
            IndexMethod::DropK(k) => format!("di1_k{k}"),
            IndexMethod::CarbonCap(c) => format!("di2_c{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSpec {
    pub method: IndexMethod,
    pub risk_kind: RiskKind,
    pub params: RiskParams,
}

impl IndexSpec {
    pub fn new(method: IndexMethod, risk_kind: RiskKind, params: RiskParams) -> Self {
        Self {
            method,
            risk_kind,
            params,
        }
    }

    /// Check the method parameter against a universe of `n` assets.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.method {
            IndexMethod::DropK(k) => {
                if k < 1 || k + 2 > n {
                    return Err(IndexError::InvalidSpec(format!(
                        "k must satisfy 1 <= k <= N-2 (N = {n}), got {k}"
                    )));
                }
            }
            IndexMethod::CarbonCap(c) => {
                if !(c > 0.0 && c <= 1.0) {
                    return Err(IndexError::InvalidSpec(format!(
                        "c_rel must be in (0,1], got {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// e.g. `di1_k3_var`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.method.label(), self.risk_kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecarbonizedIndex {
    pub weights: Array1<f64>,
    pub spec: IndexSpec,
    pub window: DateRange,
    pub risk_value: f64,
    pub footprint: f64,
    pub benchmark_footprint: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
}

/// `W_i = M_i / ΣM`; the last weight absorbs rounding so the sum is 1.
pub fn benchmark_weights(caps: ArrayView1<f64>) -> Array1<f64> {
    let total: f64 = caps.sum();
    let mut w = caps.mapv(|m| m / total);
    if let Some(last) = w.len().checked_sub(1) {
        let head: f64 = w.slice(ndarray::s![..last]).sum();
        w[last] = 1.0 - head;
    }
    w
}

/// Asset indices by carbon descending, ties by ascending index.
///
/// Universe assets are in ticker order, so index ties are ticker ties.
pub fn rank_by_carbon(carbon: ArrayView1<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..carbon.len()).collect();
    order.sort_by(|&a, &b| carbon[b].total_cmp(&carbon[a]).then(a.cmp(&b)));
    order
}

/// `Σ c_i w_i`.
pub fn portfolio_footprint(w: ArrayView1<f64>, carbon: ArrayView1<f64>) -> Result<f64> {
    if w.len() != carbon.len() {
        return Err(IndexError::DimensionMismatch {
            expected: carbon.len(),
            actual: w.len(),
        });
    }
    Ok(w.dot(&carbon))
}

/// Everything index construction needs from one in-sample fit.
#[derive(Debug, Clone)]
pub struct IndexInputs {
    pub tickers: Vec<String>,
    pub window: DateRange,
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    pub carbon: Array1<f64>,
    pub benchmark: Array1<f64>,
    pub tolerances: Tolerances,
}

impl IndexInputs {
    pub fn new(universe: &Universe, fit: &FactorModelFit) -> Result<Self> {
        if fit.n_assets() != universe.n_assets() {
            return Err(IndexError::DimensionMismatch {
                expected: universe.n_assets(),
                actual: fit.n_assets(),
            });
        }
        Ok(Self {
            tickers: fit.tickers().to_vec(),
            window: fit.window(),
            mu: fit.mu().clone(),
            sigma: factor::assemble_covariance(fit)?,
            carbon: universe.carbon(),
            benchmark: benchmark_weights(universe.market_caps().view()),
            tolerances: Tolerances::default(),
        })
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn benchmark_footprint(&self) -> f64 {
        self.benchmark.dot(&self.carbon)
    }

    /// Parametric risk of an arbitrary weight vector.
    pub fn risk_of(&self, w: ArrayView1<f64>, risk_kind: RiskKind, params: &RiskParams) -> Result<f64> {
        let m = risk_kind.multiplier(params.p())?;
        Ok(risk::mean_risk(
            w,
            self.mu.view(),
            self.sigma.view(),
            m,
            params.convention().mean_sign(),
        )?)
    }

    fn base_problem(&self, risk_kind: RiskKind, params: &RiskParams) -> Result<PortfolioProblem> {
        let m = risk_kind.multiplier(params.p())?;
        if m < 0.0 {
            return Err(IndexError::InvalidSpec(format!(
                "p = {} gives a negative risk multiplier; the objective is not convex below the median",
                params.p()
            )));
        }
        Ok(PortfolioProblem::new(
            self.mu.clone(),
            self.sigma.clone(),
            m,
            params.convention().mean_sign(),
        )?)
    }

    /// Solve the index problem described by `spec`.
    pub fn build(&self, spec: &IndexSpec) -> Result<DecarbonizedIndex> {
        let n = self.n_assets();
        spec.validate(n)?;
        let base = self.base_problem(spec.risk_kind, &spec.params)?;
        let bench_fp = self.benchmark_footprint();
        let problem = match spec.method {
            IndexMethod::DropK(k) => {
                let order = rank_by_carbon(self.carbon.view());
                base.with_pinned(order[..k].iter().copied())?
            }
            IndexMethod::CarbonCap(c_rel) => {
                base.with_carbon_cap(self.carbon.clone(), c_rel * bench_fp)?
            }
        };
        let sol = optimizer::solve(&problem, &self.tolerances, Some(self.benchmark.view()))?;
        Ok(DecarbonizedIndex {
            footprint: sol.weights.dot(&self.carbon),
            weights: sol.weights,
            spec: *spec,
            window: self.window,
            risk_value: sol.objective,
            benchmark_footprint: bench_fp,
            status: sol.status,
            kkt_residual: sol.kkt_residual,
        })
    }

    /// Unconstrained (no pins, no cap) optimum.
    pub fn build_unconstrained(&self, risk_kind: RiskKind, params: &RiskParams) -> Result<optimizer::Solution> {
        let problem = self.base_problem(risk_kind, params)?;
        Ok(optimizer::solve(&problem, &self.tolerances, Some(self.benchmark.view()))?)
    }
}

pub fn build_di1(
    universe: &Universe,
    fit: &FactorModelFit,
    k: usize,
    risk_kind: RiskKind,
    params: RiskParams,
) -> Result<DecarbonizedIndex> {
    IndexInputs::new(universe, fit)?.build(&IndexSpec::new(IndexMethod::DropK(k), risk_kind, params))
}

pub fn build_di2(
    universe: &Universe,
    fit: &FactorModelFit,
    c_rel: f64,
    risk_kind: RiskKind,
    params: RiskParams,
) -> Result<DecarbonizedIndex> {
    IndexInputs::new(universe, fit)?.build(&IndexSpec::new(IndexMethod::CarbonCap(c_rel), risk_kind, params))
}

/// One point of a parameter sweep. `risk_value` and `footprint` are `None`
/// for infeasible points.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub parameter: f64,
    pub risk_value: Option<f64>,
    pub footprint: Option<f64>,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    /// `"k"` or `"c_rel"`.
    pub parameter_name: &'static str,
    pub points: Vec<SweepPoint>,
    pub optimum: Option<f64>,
}

impl SweepCurve {
    /// CSV with columns `<parameter>,risk_value,footprint,status`.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{},risk_value,footprint,status", self.parameter_name)?;
        for p in &self.points {
            let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                p.parameter,
                fmt_opt(p.risk_value),
                fmt_opt(p.footprint),
                p.status
            )?;
        }
        Ok(())
    }
}

fn sweep(
    inputs: &IndexInputs,
    methods: Vec<(f64, IndexMethod)>,
    risk_kind: RiskKind,
    params: RiskParams,
) -> Result<Vec<SweepPoint>> {
    if methods.is_empty() {
        return Err(IndexError::EmptyGrid);
    }
    for (_, m) in &methods {
        IndexSpec::new(*m, risk_kind, params).validate(inputs.n_assets())?;
    }
    methods
        .into_par_iter()
        .map(|(value, method)| {
            match inputs.build(&IndexSpec::new(method, risk_kind, params)) {
                Ok(di) => Ok(SweepPoint {
                    parameter: value,
                    risk_value: Some(di.risk_value),
                    footprint: Some(di.footprint),
                    status: di.status.as_str(),
                }),
                Err(IndexError::Optimize(OptimizeError::InfeasibleProblem(_))) => Ok(SweepPoint {
                    parameter: value,
                    risk_value: None,
                    footprint: None,
                    status: SolveStatus::Infeasible.as_str(),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Build DI_1 for each `k`; the optimum is the smallest `k` among the
/// minimum-risk points.
pub fn sweep_k(inputs: &IndexInputs, grid: &[usize], risk_kind: RiskKind, params: RiskParams) -> Result<SweepCurve> {
    let methods = grid.iter().map(|&k| (k as f64, IndexMethod::DropK(k))).collect();
    let points = sweep(inputs, methods, risk_kind, params)?;
    let optimum = select_k(&points);
    Ok(SweepCurve {
        parameter_name: "k",
        points,
        optimum,
    })
}

fn select_k(points: &[SweepPoint]) -> Option<f64> {
    let min = points
        .iter()
        .filter_map(|p| p.risk_value)
        .fold(f64::INFINITY, f64::min);
    points
        .iter()
        .filter(|p| p.risk_value.is_some_and(|r| r <= min + K_TIE_TOL))
        .map(|p| p.parameter)
        .fold(None, |best: Option<f64>, k| Some(best.map_or(k, |b| b.min(k))))
}

/// Build DI_2 for each `c_rel`; the optimum is the smallest `c_rel` whose
/// risk is within `elbow_tol·|min|` of the grid minimum.
pub fn sweep_c(
    inputs: &IndexInputs,
    grid: &[f64],
    risk_kind: RiskKind,
    params: RiskParams,
    elbow_tol: f64,
) -> Result<SweepCurve> {
    let methods = grid.iter().map(|&c| (c, IndexMethod::CarbonCap(c))).collect();
    let points = sweep(inputs, methods, risk_kind, params)?;
    let optimum = select_c(&points, elbow_tol);
    Ok(SweepCurve {
        parameter_name: "c_rel",
        points,
        optimum,
    })
}

fn select_c(points: &[SweepPoint], elbow_tol: f64) -> Option<f64> {
    let min = points
        .iter()
        .filter_map(|p| p.risk_value)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let threshold = min + elbow_tol * min.abs();
    points
        .iter()
        .filter(|p| p.risk_value.is_some_and(|r| r <= threshold))
        .map(|p| p.parameter)
        .fold(None, |best: Option<f64>, c| Some(best.map_or(c, |b| b.min(c))))
}

/// About ten evenly spaced integers from `⌈5%·N⌉` to `⌊50%·N⌋`, within `[1, N−2]`.
pub fn default_k_grid(n: usize) -> Vec<usize> {
    if n < 3 {
        return Vec::new();
    }
    let max_k = n - 2;
    let lo = ((0.05 * n as f64).ceil() as usize).clamp(1, max_k);
    let hi = ((0.5 * n as f64).floor() as usize).clamp(lo, max_k);
    let mut grid: Vec<usize> = (0..10)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / 9.0).round() as usize)
        .collect();
    grid.dedup();
    grid
}

/// `0.50, 0.55, …, 0.95`.
pub fn default_c_grid() -> Vec<f64> {
    (10..=19).map(|i| i as f64 * 5.0 / 100.0).collect()
}

/// Published parameter choice for one market / proxy / risk measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub market: &'static str,
    pub model: ModelKind,
    pub proxy: CarbonProxy,
    pub risk_kind: RiskKind,
    pub p: f64,
    pub k: usize,
    pub c_rel: f64,
}

impl Preset {
    pub fn specs(&self, convention: Convention) -> Result<[IndexSpec; 2]> {
        let params = RiskParams::new(self.p, convention)?;
        Ok([
            IndexSpec::new(IndexMethod::DropK(self.k), self.risk_kind, params),
            IndexSpec::new(IndexMethod::CarbonCap(self.c_rel), self.risk_kind, params),
        ])
    }
}

const fn preset(
    name: &'static str,
    market: &'static str,
    model: ModelKind,
    proxy: CarbonProxy,
    risk_kind: RiskKind,
    k: usize,
    c_rel: f64,
) -> Preset {
    Preset {
        name,
        market,
        model,
        proxy,
        risk_kind,
        p: 0.95,
        k,
        c_rel,
    }
}

pub const PRESETS: [Preset; 8] = [
    preset("nifty-ghg-var", "nifty", ModelKind::FourFactor, CarbonProxy::Ghg, RiskKind::VaR, 1, 0.95),
    preset("nifty-co2-var", "nifty", ModelKind::FourFactor, CarbonProxy::Co2, RiskKind::VaR, 2, 0.95),
    preset("nifty-ghg-es", "nifty", ModelKind::FourFactor, CarbonProxy::Ghg, RiskKind::ES, 1, 0.95),
    preset("nifty-co2-es", "nifty", ModelKind::FourFactor, CarbonProxy::Co2, RiskKind::ES, 2, 0.95),
    preset("sp500-ghg-var", "sp500", ModelKind::FiveFactor, CarbonProxy::Ghg, RiskKind::VaR, 48, 0.85),
    preset("sp500-co2-var", "sp500", ModelKind::FiveFactor, CarbonProxy::Co2, RiskKind::VaR, 32, 0.95),
    preset("sp500-ghg-es", "sp500", ModelKind::FiveFactor, CarbonProxy::Ghg, RiskKind::ES, 16, 0.95),
    preset("sp500-co2-es", "sp500", ModelKind::FiveFactor, CarbonProxy::Co2, RiskKind::ES, 32, 0.95),
];

pub fn find_preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
