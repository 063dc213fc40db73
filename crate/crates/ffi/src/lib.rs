//! C ABI over `decarb-core`.
//!
//! Every function returns a [`DecarbStatus`]; results are written through
//! out-pointers. After a non-`Ok` status, [`decarb_last_error_message`]
//! returns a description of the failure on the calling thread. Panics never
//! cross the boundary: they are reported as [`DecarbStatus::Internal`].
//!
//! Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use chrono::NaiveDate;
use decarb_core::data::{self, CarbonProxy, DateRange, MissingDataPolicy, ModelKind, Universe};
use decarb_core::factor;
use decarb_core::index::{IndexError, IndexInputs, IndexMethod, IndexSpec, RiskKind};
use decarb_core::optimizer::{self, OptimizeError, PortfolioProblem, SolveStatus, Tolerances};
use decarb_core::risk::{self, Convention, RiskParams};
use decarb_core::backtest;
use ndarray::{Array1, Array2, ArrayView1};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of its domain (p outside (0,1), bad k, bad date…).
    InvalidArgument = 2,
    /// An input file is missing, unreadable or malformed.
    Data = 3,
    /// The constraints admit no portfolio.
    Infeasible = 4,
    /// The caller-supplied buffer is too small.
    BufferTooSmall = 5,
    /// Numerical failure or a bug; the message has details.
    Internal = 6,
}

/// Solver outcome reported by [`decarb_solve`] and [`decarb_build_index`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbSolveStatus {
    Converged = 0,
    IterationLimit = 1,
    Infeasible = 2,
}

impl From<SolveStatus> for DecarbSolveStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => DecarbSolveStatus::Converged,
            SolveStatus::IterationLimit => DecarbSolveStatus::IterationLimit,
            SolveStatus::Infeasible => DecarbSolveStatus::Infeasible,
        }
    }
}

/// Factor model selector for [`decarb_universe_load`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbModel {
    /// MKT_RF, SMB, HML, RMW, CMA
    FiveFactor = 0,
    /// SMB, HML, WML, MF
    FourFactor = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbProxy {
    Ghg = 0,
    Co2 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbRisk {
    Var = 0,
    ES = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbConvention {
    /// `−wᵀμ + m·σ`
    Loss = 0,
    /// `+wᵀμ + m·σ`
    Literal = 1,
}

/// Opaque aligned universe. Create with [`decarb_universe_load`], release
/// with [`decarb_universe_free`].
pub struct DecarbUniverse {
    universe: Universe,
}

struct Failure(DecarbStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(DecarbStatus::InvalidArgument, msg.into())
    }

    fn null(name: &str) -> Self {
        Failure(DecarbStatus::NullPointer, format!("{name} is null"))
    }
}

impl From<data::DataError> for Failure {
    fn from(e: data::DataError) -> Self {
        Failure(DecarbStatus::Data, e.to_string())
    }
}

impl From<risk::RiskError> for Failure {
    fn from(e: risk::RiskError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<OptimizeError> for Failure {
    fn from(e: OptimizeError) -> Self {
        let code = match e {
            OptimizeError::InfeasibleProblem(_) => DecarbStatus::Infeasible,
            _ => DecarbStatus::InvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Optimize(inner) => inner.into(),
            IndexError::Factor(_) => Failure(DecarbStatus::Internal, e.to_string()),
            _ => Failure::invalid(e.to_string()),
        }
    }
}

impl From<backtest::BacktestError> for Failure {
    fn from(e: backtest::BacktestError) -> Self {
        Failure::invalid(e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DecarbStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".to_string());
        Err(Failure(DecarbStatus::Internal, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            DecarbStatus::Ok
        }
        Err(Failure(code, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            code
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(name))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn in_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn in_date(p: *const c_char, name: &str) -> Result<NaiveDate, Failure> {
    let s = in_str(p, name)?;
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| Failure::invalid(format!("{name} '{s}' is not YYYY-MM-DD")))
}

/// Copy `text` plus a NUL into `buf`. `needed` receives the full size
/// including the NUL; a null `buf` with `len == 0` only queries the size.
unsafe fn write_c_string(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let bytes = text.as_bytes();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len() + 1;
    }
    if buf.is_null() && len == 0 {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Failure::null("buf"));
    }
    if len < bytes.len() + 1 {
        return Err(Failure(
            DecarbStatus::BufferTooSmall,
            format!("buffer of {len} bytes, need {}", bytes.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Copy the last error message of this thread into `buf` (NUL-terminated).
///
/// `needed` (nullable) receives the size including the NUL. The message is
/// empty after a successful call.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes; `needed` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_last_error_message(buf: *mut c_char, len: usize, needed: *mut usize) -> DecarbStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    // Reporting must not clobber the message being reported.
    match write_c_string(&msg, buf, len, needed) {
        Ok(()) => DecarbStatus::Ok,
        Err(Failure(code, _)) => code,
    }
}

/// Load prices, caps, carbon and factor files and align them into a universe.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_universe_load(
    prices: *const c_char,
    caps: *const c_char,
    carbon: *const c_char,
    factors: *const c_char,
    model: DecarbModel,
    proxy: DecarbProxy,
    out: *mut *mut DecarbUniverse,
) -> DecarbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let model = match model {
            DecarbModel::FiveFactor => ModelKind::FiveFactor,
            DecarbModel::FourFactor => ModelKind::FourFactor,
        };
        let proxy = match proxy {
            DecarbProxy::Ghg => CarbonProxy::Ghg,
            DecarbProxy::Co2 => CarbonProxy::Co2,
        };
        let prices = data::load_prices(Path::new(in_str(prices, "prices")?))?;
        let caps = data::load_caps(Path::new(in_str(caps, "caps")?))?;
        let carbon = data::load_carbon(Path::new(in_str(carbon, "carbon")?))?;
        let panel = data::load_factors(Path::new(in_str(factors, "factors")?), model)?;
        let assets = data::join_assets(prices, &caps, &carbon)?;
        let universe = data::assemble_universe(assets, &panel, proxy, &MissingDataPolicy::default())?;
        *out = Box::into_raw(Box::new(DecarbUniverse { universe }));
        Ok(())
    })
}

/// Release a universe. Null is ignored.
///
/// # Safety
/// `u` must be null or a handle from [`decarb_universe_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn decarb_universe_free(u: *mut DecarbUniverse) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Number of assets in the universe.
///
/// # Safety
/// `u` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_universe_num_assets(u: *const DecarbUniverse, out: *mut usize) -> DecarbStatus {
    guard(|| {
        let u = u.as_ref().ok_or_else(|| Failure::null("universe"))?;
        *out_ref(out, "out")? = u.universe.n_assets();
        Ok(())
    })
}

/// Ticker of asset `i` (universe order) as a NUL-terminated string.
///
/// # Safety
/// `u` must be a live handle; `buf` valid for `len` bytes or null with
/// `len == 0`; `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_universe_ticker(
    u: *const DecarbUniverse,
    i: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> DecarbStatus {
    guard(|| {
        let u = u.as_ref().ok_or_else(|| Failure::null("universe"))?;
        let tickers = u.universe.tickers();
        let t = tickers
            .get(i)
            .ok_or_else(|| Failure::invalid(format!("asset index {i} out of range (n = {})", tickers.len())))?;
        write_c_string(t, buf, len, needed)
    })
}

/// Standard normal quantile Φ⁻¹(p) for `p` in (0, 1).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_normal_quantile(p: f64, out: *mut f64) -> DecarbStatus {
    guard(|| {
        *out_ref(out, "out")? = risk::normal_quantile(p)?;
        Ok(())
    })
}

/// Gaussian expected-shortfall multiplier φ(Φ⁻¹(p)) / (1 − p).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_es_multiplier(p: f64, out: *mut f64) -> DecarbStatus {
    guard(|| {
        *out_ref(out, "out")? = risk::es_multiplier(p)?;
        Ok(())
    })
}

/// Minimize `mean_sign·wᵀμ + multiplier·√(wᵀΣw)` over the simplex.
///
/// `carbon` (nullable) with `cap` adds `carbonᵀw ≤ cap`. `pinned` (nullable)
/// is a length-`n` mask; nonzero entries are fixed at weight 0.
///
/// # Safety
/// `mu`, `carbon`, `pinned` and `weights` must be valid for `n` elements,
/// `sigma` for `n·n`; scalar out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_solve(
    n: usize,
    mu: *const f64,
    sigma: *const f64,
    multiplier: f64,
    mean_sign: f64,
    carbon: *const f64,
    cap: f64,
    pinned: *const u8,
    weights: *mut f64,
    objective: *mut f64,
    status: *mut DecarbSolveStatus,
) -> DecarbStatus {
    guard(|| {
        let mu = Array1::from(in_slice(mu, n, "mu")?.to_vec());
        let sigma = Array2::from_shape_vec((n, n), in_slice(sigma, n * n, "sigma")?.to_vec())
            .map_err(|e| Failure::invalid(e.to_string()))?;
        let weights = out_slice(weights, n, "weights")?;
        let objective = out_ref(objective, "objective")?;
        let status = out_ref(status, "status")?;

        let mut problem = PortfolioProblem::new(mu, sigma, multiplier, mean_sign)?;
        if !pinned.is_null() {
            let mask = slice::from_raw_parts(pinned, n);
            problem = problem.with_pinned((0..n).filter(|&i| mask[i] != 0))?;
        }
        if !carbon.is_null() {
            problem = problem.with_carbon_cap(Array1::from(in_slice(carbon, n, "carbon")?.to_vec()), cap)?;
        }
        let sol = optimizer::solve(&problem, &Tolerances::default(), None)?;
        weights.copy_from_slice(sol.weights.as_slice().expect("contiguous weights"));
        *objective = sol.objective;
        *status = sol.status.into();
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecarbMethod {
    /// Drop the `k` highest emitters.
    DropK = 0,
    /// Cap the footprint at `c_rel` × benchmark footprint.
    CarbonCap = 1,
}

/// Parameters of one decarbonized index for [`decarb_build_index`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DecarbIndexSpec {
    pub method: DecarbMethod,
    /// Used by `DropK` only.
    pub k: usize,
    /// Used by `CarbonCap` only.
    pub c_rel: f64,
    pub risk: DecarbRisk,
    pub p: f64,
    pub convention: DecarbConvention,
}

/// Outputs of [`decarb_build_index`]; `weights` is caller-owned, length = assets.
#[repr(C)]
#[derive(Debug)]
pub struct DecarbIndexResult {
    pub weights: *mut f64,
    pub risk_value: f64,
    pub footprint: f64,
    pub benchmark_footprint: f64,
    pub status: DecarbSolveStatus,
}

/// Fit the factor model on `[window_start, window_end]` and build one index.
///
/// # Safety
/// `u` must be a live handle, dates NUL-terminated `YYYY-MM-DD` strings,
/// `spec` valid, and `result.weights` valid for the universe's asset count.
#[no_mangle]
pub unsafe extern "C" fn decarb_build_index(
    u: *const DecarbUniverse,
    window_start: *const c_char,
    window_end: *const c_char,
    spec: *const DecarbIndexSpec,
    result: *mut DecarbIndexResult,
) -> DecarbStatus {
    guard(|| {
        let u = &u.as_ref().ok_or_else(|| Failure::null("universe"))?.universe;
        let window = DateRange::new(in_date(window_start, "window_start")?, in_date(window_end, "window_end")?);
        let spec = *spec.as_ref().ok_or_else(|| Failure::null("spec"))?;
        let result = out_ref(result, "result")?;
        let weights = out_slice(result.weights, u.n_assets(), "result.weights")?;

        let method = match spec.method {
            DecarbMethod::DropK => IndexMethod::DropK(spec.k),
            DecarbMethod::CarbonCap => IndexMethod::CarbonCap(spec.c_rel),
        };
        let risk_kind = match spec.risk {
            DecarbRisk::Var => RiskKind::VaR,
            DecarbRisk::ES => RiskKind::ES,
        };
        let convention = match spec.convention {
            DecarbConvention::Loss => Convention::LossConvention,
            DecarbConvention::Literal => Convention::Literal,
        };
        let params = RiskParams::new(spec.p, convention)?;
        let fit = factor::fit_universe(u, window).map_err(|e| Failure::invalid(e.to_string()))?;
        let inputs = IndexInputs::new(u, &fit)?;
        let di = inputs.build(&IndexSpec::new(method, risk_kind, params))?;

        weights.copy_from_slice(di.weights.as_slice().expect("contiguous weights"));
        result.risk_value = di.risk_value;
        result.footprint = di.footprint;
        result.benchmark_footprint = di.benchmark_footprint;
        result.status = di.status.into();
        Ok(())
    })
}

/// Percentage return `(w·P1 − w·P0)·100 / (w·P0)` of fixed weights.
///
/// # Safety
/// `w`, `p0`, `p1` must be valid for `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn decarb_monthly_return(
    n: usize,
    w: *const f64,
    p0: *const f64,
    p1: *const f64,
    out: *mut f64,
) -> DecarbStatus {
    guard(|| {
        let w = ArrayView1::from(in_slice(w, n, "w")?);
        let p0 = ArrayView1::from(in_slice(p0, n, "p0")?);
        let p1 = ArrayView1::from(in_slice(p1, n, "p1")?);
        *out_ref(out, "out")? = backtest::monthly_return(w, p0, p1)?;
        Ok(())
    })
}
