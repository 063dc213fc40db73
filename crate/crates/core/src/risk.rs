//! Gaussian VaR / ES of a weighted portfolio, plus empirical estimators.
//!
//! Parametric measures take the form `a·wᵀμ + m·√(wᵀΣw)` where `m` is the
//! normal quantile (VaR) or the tail-mean multiplier `φ(Φ⁻¹(p))/(1−p)` (ES).
//! The sign `a` of the mean term depends on the [`Convention`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("p must be in (0,1), got {0}")]
    DomainError(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty sample")]
    EmptySample,
}

/// Sign convention for the mean term of the parametric objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Convention {
    /// `−wᵀμ + m·σ`: VaR / ES of the loss `−wᵀr`.
    #[default]
    LossConvention,
    /// `+wᵀμ + m·σ`, the objective written directly on returns.
    Literal,
}

impl Convention {
    /// Coefficient `a` multiplying `wᵀμ`.
    pub fn mean_sign(self) -> f64 {
        match self {
            Convention::LossConvention => -1.0,
            Convention::Literal => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Convention::LossConvention => "loss",
            Convention::Literal => "literal",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "loss" => Ok(Convention::LossConvention),
            "literal" => Ok(Convention::Literal),
            other => Err(format!("unknown convention '{other}' (expected loss or literal)")),
        }
    }
}

/// Confidence level and sign convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    p: f64,
    convention: Convention,
}

impl RiskParams {
    pub fn new(p: f64, convention: Convention) -> Result<Self, RiskError> {
        check_p(p)?;
        Ok(Self { p, convention })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }
}

fn check_p(p: f64) -> Result<(), RiskError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(RiskError::DomainError(p))
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `Φ⁻¹(p)`, accurate to about 1e-15 absolute on (1e-300, 1 − 1e-16).
///
/// Acklam's rational approximation followed by one Newton step on the
/// erfc-based CDF. The lower tail is always solved directly; upper-tail
/// arguments use `Φ⁻¹(p) = −Φ⁻¹(1−p)`.
pub fn normal_quantile(p: f64) -> Result<f64, RiskError> {
    check_p(p)?;
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p == 0.5 {
        return 0.0;
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let density = normal_pdf(x);
    if density > 0.0 {
        x - (normal_cdf(x) - p) / density
    } else {
        x
    }
}

/// ES multiplier `φ(Φ⁻¹(p)) / (1 − p)`.
pub fn es_multiplier(p: f64) -> Result<f64, RiskError> {
    let z = normal_quantile(p)?;
    Ok(normal_pdf(z) / (1.0 - p))
}

/// `a·wᵀμ + multiplier·√(wᵀΣw)`.
pub fn mean_risk(
    w: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    sigma: ArrayView2<f64>,
    multiplier: f64,
    mean_sign: f64,
) -> Result<f64, RiskError> {
    let n = w.len();
    for actual in [mu.len(), sigma.nrows(), sigma.ncols()] {
        if actual != n {
            return Err(RiskError::DimensionMismatch {
                expected: n,
                actual,
            });
        }
    }
    let variance = w.dot(&sigma.dot(&w));
    Ok(mean_sign * w.dot(&mu) + multiplier * variance.max(0.0).sqrt())
}

/// Parametric Gaussian VaR of the portfolio `w`.
pub fn portfolio_var(
    w: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    sigma: ArrayView2<f64>,
    params: &RiskParams,
) -> Result<f64, RiskError> {
    let m = normal_quantile(params.p)?;
    mean_risk(w, mu, sigma, m, params.convention.mean_sign())
}

/// Parametric Gaussian ES of the portfolio `w`.
pub fn portfolio_es(
    w: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    sigma: ArrayView2<f64>,
    params: &RiskParams,
) -> Result<f64, RiskError> {
    let m = es_multiplier(params.p)?;
    mean_risk(w, mu, sigma, m, params.convention.mean_sign())
}

/// `⌈x⌉`, snapping values within rounding noise of an integer onto it
/// (`0.7 * 10` is `7.000000000000001` in binary floating point).
fn ceil_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn sorted(losses: &[f64]) -> Result<Vec<f64>, RiskError> {
    if losses.is_empty() {
        return Err(RiskError::EmptySample);
    }
    let mut v = losses.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Empirical VaR: the `⌈n·p⌉`-th smallest loss.
pub fn empirical_var(losses: &[f64], p: f64) -> Result<f64, RiskError> {
    check_p(p)?;
    let v = sorted(losses)?;
    let n = v.len();
    let k = ceil_count(n as f64 * p).clamp(1, n);
    Ok(v[k - 1])
}

/// Empirical ES: mean of the worst `⌈n·(1−p)⌉` losses.
pub fn empirical_es(losses: &[f64], p: f64) -> Result<f64, RiskError> {
    check_p(p)?;
    let v = sorted(losses)?;
    let n = v.len();
    let m = ceil_count(n as f64 * (1.0 - p)).clamp(1, n);
    Ok(v[n - m..].iter().sum::<f64>() / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;

    #[test]
    fn quantile_reference_points() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(normal_quantile(0.95).unwrap(), 1.6448536269514722, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(0.05).unwrap(), -1.6448536269514722, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(0.975).unwrap(), 1.959963984540054, epsilon = 1e-12);
    }

    #[test]
    fn quantile_domain() {
        for p in [0.0, 1.0, -0.1, 1.2, f64::NAN] {
            assert!(normal_quantile(p).is_err());
            assert!(es_multiplier(p).is_err());
        }
        assert!(RiskParams::new(1.2, Convention::LossConvention).is_err());
    }

    #[test]
    fn quantile_deep_tail_round_trips() {
        for p in [1e-12, 1e-30, 1e-100] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) / p - 1.0).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn es_multiplier_reference_points() {
        assert_abs_diff_eq!(es_multiplier(0.95).unwrap(), 2.0627128075074257, epsilon = 1e-9);
        assert_abs_diff_eq!(
            es_multiplier(0.5).unwrap(),
            (2.0 / PI).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn es_dominates_var_on_grid() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert!(es_multiplier(p).unwrap() > normal_quantile(p).unwrap(), "p={p}");
        }
    }

    #[test]
    fn single_asset_reduces_to_multipliers() {
        let w = array![1.0];
        let mu = array![0.0];
        let sigma = array![[1.0]];
        for conv in [Convention::LossConvention, Convention::Literal] {
            let params = RiskParams::new(0.95, conv).unwrap();
            let var = portfolio_var(w.view(), mu.view(), sigma.view(), &params).unwrap();
            let es = portfolio_es(w.view(), mu.view(), sigma.view(), &params).unwrap();
            assert_abs_diff_eq!(var, 1.6448536, epsilon = 1e-7);
            assert_abs_diff_eq!(es, 2.0627128, epsilon = 1e-7);
        }
    }

    #[test]
    fn median_level_leaves_only_the_mean() {
        let w = array![1.0];
        let mu = array![0.003];
        let sigma = array![[2.5]];
        let loss = RiskParams::new(0.5, Convention::LossConvention).unwrap();
        let lit = RiskParams::new(0.5, Convention::Literal).unwrap();
        assert_eq!(portfolio_var(w.view(), mu.view(), sigma.view(), &loss).unwrap(), -0.003);
        assert_eq!(portfolio_var(w.view(), mu.view(), sigma.view(), &lit).unwrap(), 0.003);
    }

    #[test]
    fn two_asset_identity_covariance() {
        let params = RiskParams::new(0.95, Convention::LossConvention).unwrap();
        let v = portfolio_var(
            array![0.5, 0.5].view(),
            Array1::zeros(2).view(),
            Array2::eye(2).view(),
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(v, 1.6448536269514722 * 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let params = RiskParams::new(0.95, Convention::LossConvention).unwrap();
        assert!(matches!(
            portfolio_var(array![1.0].view(), array![0.0, 0.0].view(), array![[1.0]].view(), &params),
            Err(RiskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empirical_order_statistics() {
        let losses: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_var(&losses, 0.8).unwrap(), 8.0);
        assert_eq!(empirical_var(&losses, 0.75).unwrap(), 8.0);
        assert_eq!(empirical_var(&losses, 0.7).unwrap(), 7.0);
        assert_eq!(empirical_es(&losses, 0.8).unwrap(), 9.5);
        assert_eq!(empirical_var(&[3.5], 0.99).unwrap(), 3.5);
        assert_eq!(empirical_es(&[3.5], 0.01).unwrap(), 3.5);
        assert_eq!(empirical_var(&[], 0.5), Err(RiskError::EmptySample));
        assert_eq!(empirical_es(&[], 0.5), Err(RiskError::EmptySample));
    }

    #[test]
    fn empirical_constant_sample() {
        let c = vec![2.25; 37];
        for i in 1..20 {
            let p = i as f64 / 20.0;
            assert_eq!(empirical_var(&c, p).unwrap(), 2.25);
            assert_eq!(empirical_es(&c, p).unwrap(), 2.25);
        }
    }

    proptest! {
        #[test]
        fn empirical_es_dominates_var(
            losses in prop::collection::vec(-100.0f64..100.0, 1..200),
            p in 0.01f64..0.99,
        ) {
            let var = empirical_var(&losses, p).unwrap();
            let es = empirical_es(&losses, p).unwrap();
            prop_assert!(es >= var - 1e-12);
        }

        #[test]
        fn parametric_monotone_in_p_above_median(
            w0 in 0.0f64..1.0,
            m0 in -0.01f64..0.01,
            m1 in -0.01f64..0.01,
            s0 in 0.01f64..1.0,
            s1 in 0.01f64..1.0,
            rho in -0.9f64..0.9,
            p in 0.5f64..0.989,
        ) {
            let w = array![w0, 1.0 - w0];
            let mu = array![m0, m1];
            let c = rho * s0 * s1;
            let sigma = array![[s0 * s0, c], [c, s1 * s1]];
            for conv in [Convention::LossConvention, Convention::Literal] {
                let lo = RiskParams::new(p, conv).unwrap();
                let hi = RiskParams::new(p + 0.01, conv).unwrap();
                let v = |r: &RiskParams| portfolio_var(w.view(), mu.view(), sigma.view(), r).unwrap();
                let e = |r: &RiskParams| portfolio_es(w.view(), mu.view(), sigma.view(), r).unwrap();
                prop_assert!(v(&hi) >= v(&lo));
                prop_assert!(e(&hi) >= e(&lo));
                prop_assert!(e(&lo) >= v(&lo));
            }
        }

        #[test]
        fn risk_term_is_positively_homogeneous(
            w0 in 0.0f64..1.0,
            s0 in 0.01f64..1.0,
            s1 in 0.01f64..1.0,
            scale in 0.1f64..10.0,
        ) {
            let w = array![w0, 1.0 - w0];
            let sigma = array![[s0, 0.1 * s0.min(s1)], [0.1 * s0.min(s1), s1]];
            let zero = Array1::zeros(2);
            let base = mean_risk(w.view(), zero.view(), sigma.view(), 1.0, -1.0).unwrap();
            let scaled_sigma = &sigma * (scale * scale);
            let scaled = mean_risk(w.view(), zero.view(), scaled_sigma.view(), 1.0, -1.0).unwrap();
            prop_assert!((scaled - scale * base).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }
}
