//! Decarbonized index construction.
//!
//! Builds long-only portfolios that track a market-cap benchmark while
//! minimizing parametric mean-VaR or mean-ES under a factor-model covariance,
//! subject to carbon-footprint constraints, and evaluates them with rolling
//! in-sample / out-of-sample backtests.
//!
//! Pipeline:
//! 1. [`data`] loads prices, caps, carbon and factor files into a [`data::Universe`].
//! 2. [`factor`] fits per-asset factor regressions and assembles `βΩβᵀ + Δ`.
//! 3. [`risk`] evaluates Gaussian VaR / ES of a weight vector.
//! 4. [`optimizer`] minimizes `a·wᵀμ + T·√(wᵀΣw)` over the simplex with pins and a carbon cap.
//! 5. [`index`] builds the drop-k and carbon-cap indices and sweeps their parameters.
//! 6. [`backtest`] runs the rolling study and produces the report tables.

// `!(x > 0.0)` comparisons are used throughout to reject NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cli;
pub mod config;
pub mod data;
pub mod factor;
pub mod index;
pub mod linalg;
pub mod optimizer;
pub mod risk;
pub mod svg;

pub use backtest::{BacktestReport, StudyPlan};
pub use data::{AssetRecord, CarbonProxy, FactorPanel, ModelKind, Universe};
pub use factor::FactorModelFit;
pub use index::{DecarbonizedIndex, IndexMethod, IndexSpec, RiskKind};
pub use optimizer::{PortfolioProblem, Solution, SolveStatus, Tolerances};
pub use risk::{Convention, RiskParams};
