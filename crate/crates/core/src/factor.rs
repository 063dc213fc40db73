//! Per-asset factor regressions and the factor-structured covariance `βΩβᵀ + Δ`.

use std::io;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{DateRange, ModelKind, Universe};
use crate::linalg::{self, LinalgError, QrDecomposition};

/// Lower bound on specific variances; keeps `βΩβᵀ + Δ` positive definite.
pub const DELTA_FLOOR: f64 = 1e-10;

/// Relative pivot threshold below which the design is treated as collinear.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("factor design matrix is rank deficient (collinear factors)")]
    RankDeficient,

    #[error("insufficient observations: need at least {needed}, got {got}")]
    InsufficientObservations { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("assembled covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("regression for {ticker} failed: {source}")]
    Asset {
        ticker: String,
        #[source]
        source: Box<FactorError>,
    },
}

/// One least-squares fit with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first, then one slope per regressor.
    pub coefficients: Array1<f64>,
    /// `SSR / (T − K − 1)`.
    pub residual_variance: f64,
    pub r_squared: f64,
    pub residuals: Array1<f64>,
}

/// A factorized design `[1 | X]`, reusable across many responses.
#[derive(Debug, Clone)]
pub struct OlsDesign {
    design: Array2<f64>,
    qr: QrDecomposition,
}

impl OlsDesign {
    pub fn new(x: ArrayView2<f64>) -> Result<Self, FactorError> {
        let (t, k) = x.dim();
        if t < k + 2 {
            return Err(FactorError::InsufficientObservations {
                needed: k + 2,
                got: t,
            });
        }
        let mut design = Array2::ones((t, k + 1));
        design.slice_mut(s![.., 1..]).assign(&x);
        let qr = QrDecomposition::new(design.view(), RANK_TOL).map_err(|e| match e {
            LinalgError::Singular => FactorError::RankDeficient,
            LinalgError::DimensionMismatch { expected, actual } => {
                FactorError::DimensionMismatch { expected, actual }
            }
            LinalgError::NotPositiveDefinite { .. } => FactorError::RankDeficient,
        })?;
        Ok(Self { design, qr })
    }

    pub fn fit(&self, y: ArrayView1<f64>) -> Result<OlsFit, FactorError> {
        let (t, p) = self.design.dim();
        if y.len() != t {
            return Err(FactorError::DimensionMismatch {
                expected: t,
                actual: y.len(),
            });
        }
        let coefficients = self
            .qr
            .solve_least_squares(y)
            .map_err(|_| FactorError::RankDeficient)?;
        let residuals = &y - &self.design.dot(&coefficients);
        let ssr: f64 = residuals.iter().map(|r| r * r).sum();
        let mean = y.sum() / t as f64;
        let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
        Ok(OlsFit {
            coefficients,
            residual_variance: ssr / (t - p) as f64,
            r_squared,
            residuals,
        })
    }
}

/// Regress `y` on `x` plus an intercept.
pub fn fit_ols(y: ArrayView1<f64>, x: ArrayView2<f64>) -> Result<OlsFit, FactorError> {
    OlsDesign::new(x)?.fit(y)
}

/// Loadings, factor covariance and specific variances for one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelFit {
    tickers: Vec<String>,
    model_kind: ModelKind,
    window: DateRange,
    mu: Array1<f64>,
    alpha: Array1<f64>,
    beta: Array2<f64>,
    omega: Array2<f64>,
    delta: Array1<f64>,
    r_squared: Array1<f64>,
}

impl FactorModelFit {
    /// Build a fit from externally estimated parts (e.g. simulation fixtures).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        tickers: Vec<String>,
        model_kind: ModelKind,
        window: DateRange,
        mu: Array1<f64>,
        beta: Array2<f64>,
        omega: Array2<f64>,
        delta: Array1<f64>,
    ) -> Result<Self, FactorError> {
        let n = tickers.len();
        let k = model_kind.factor_count();
        for (expected, actual) in [
            (n, mu.len()),
            (n, beta.nrows()),
            (k, beta.ncols()),
            (k, omega.nrows()),
            (k, omega.ncols()),
            (n, delta.len()),
        ] {
            if expected != actual {
                return Err(FactorError::DimensionMismatch { expected, actual });
            }
        }
        let delta = delta.mapv(|d| d.max(DELTA_FLOOR));
        Ok(Self {
            tickers,
            model_kind,
            window,
            mu,
            alpha: Array1::zeros(n),
            beta,
            omega,
            delta,
            r_squared: Array1::from_elem(n, f64::NAN),
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model_kind
    }

    pub fn window(&self) -> DateRange {
        self.window
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &Array2<f64> {
        &self.beta
    }

    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    pub fn delta(&self) -> &Array1<f64> {
        &self.delta
    }

    pub fn r_squared(&self) -> &Array1<f64> {
        &self.r_squared
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Per-asset diagnostics as CSV: `ticker, alpha, beta_<factor>..., delta, r_squared`.
    pub fn write_report<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["ticker".to_string(), "alpha".to_string()];
        header.extend(
            self.model_kind
                .factor_names()
                .iter()
                .map(|n| format!("beta_{}", n.to_ascii_lowercase())),
        );
        header.push("delta".into());
        header.push("r_squared".into());
        w.write_record(&header)?;
        for (i, ticker) in self.tickers.iter().enumerate() {
            let mut row = vec![ticker.clone(), format!("{:e}", self.alpha[i])];
            row.extend(self.beta.row(i).iter().map(|b| format!("{b:e}")));
            row.push(format!("{:e}", self.delta[i]));
            row.push(format!("{:.6}", self.r_squared[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample covariance of the columns of `x` (rows are observations), denominator `T − 1`.
pub fn sample_covariance(x: ArrayView2<f64>) -> Array2<f64> {
    let (t, k) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("non-empty sample");
    let centered = &x - &mean;
    let mut cov = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let v = centered.column(a).dot(&centered.column(b)) / (t as f64 - 1.0);
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    cov
}

/// Fit the universe's factor model on the return rows inside `window`.
///
/// Each asset's excess return is regressed on the factors; `mu` is the mean
/// of raw returns over the same rows.
pub fn fit_universe(universe: &Universe, window: DateRange) -> Result<FactorModelFit, FactorError> {
    let rows = universe.return_rows_in(window);
    let panel = universe.factors();
    let k = panel.model_kind().factor_count();
    let t = rows.len();
    if t < k + 2 {
        return Err(FactorError::InsufficientObservations {
            needed: k + 2,
            got: t,
        });
    }
    let factors = panel.series().slice(s![rows.clone(), ..]);
    let rf = panel.risk_free().slice(s![rows.clone()]);
    let returns = universe.returns().slice(s![rows.clone(), ..]);
    let design = OlsDesign::new(factors)?;

    let fits: Vec<OlsFit> = (0..universe.n_assets())
        .into_par_iter()
        .map(|i| {
            let excess = &returns.column(i) - &rf;
            design.fit(excess.view()).map_err(|e| FactorError::Asset {
                ticker: universe.assets()[i].ticker().to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;

    let n = fits.len();
    let mut beta = Array2::zeros((n, k));
    let mut alpha = Array1::zeros(n);
    let mut delta = Array1::zeros(n);
    let mut r_squared = Array1::zeros(n);
    for (i, fit) in fits.iter().enumerate() {
        alpha[i] = fit.coefficients[0];
        beta.row_mut(i).assign(&fit.coefficients.slice(s![1..]));
        delta[i] = fit.residual_variance.max(DELTA_FLOOR);
        r_squared[i] = fit.r_squared;
    }
    let dates = universe.return_dates();
    Ok(FactorModelFit {
        tickers: universe.tickers().iter().map(|t| t.to_string()).collect(),
        model_kind: panel.model_kind(),
        window: DateRange::new(dates[rows.start], dates[rows.end - 1]),
        mu: returns.mean_axis(Axis(0)).expect("non-empty window"),
        alpha,
        beta,
        omega: sample_covariance(factors),
        delta,
        r_squared,
    })
}

/// `β Ω βᵀ + diag(δ)`, exactly symmetric.
pub fn factor_covariance(
    beta: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    delta: ArrayView1<f64>,
) -> Array2<f64> {
    let n = beta.nrows();
    let b_omega = beta.dot(&omega);
    let mut sigma = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = b_omega.row(i).dot(&beta.row(j));
            sigma[[i, j]] = v;
            sigma[[j, i]] = v;
        }
        sigma[[i, i]] += delta[i];
    }
    sigma
}

/// Asset covariance implied by `fit`, verified positive definite.
pub fn assemble_covariance(fit: &FactorModelFit) -> Result<Array2<f64>, FactorError> {
    let sigma = factor_covariance(fit.beta.view(), fit.omega.view(), fit.delta.view());
    linalg::cholesky(sigma.view()).map_err(|_| FactorError::NotPositiveDefinite)?;
    Ok(sigma)
}
