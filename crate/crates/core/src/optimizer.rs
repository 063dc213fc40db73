//! Long-only mean-risk portfolio optimization.
//!
//! Minimizes `f(w) = a·wᵀμ + T·√(wᵀΣw)` over
//! `{w ≥ 0, Σw = 1, w_i = 0 for pinned i, cᵀw ≤ cap}`.
//!
//! `f` is convex and, for positive-definite `Σ`, strictly convex on the
//! affine hull of the simplex, so any KKT point is the unique global minimum.
//!
//! The solver alternates two steps:
//! 1. a projected-gradient step with Barzilai-Borwein length and an Armijo
//!    search along the projection arc, which identifies the active face;
//! 2. a regularized Newton step restricted to that face (equality-constrained
//!    QP on the free coordinates), truncated at the first blocking bound.
//!
//! Pinned assets are removed before solving and re-inserted as exact zeros.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::linalg;

/// Floor on `√(wᵀΣw)` in the gradient.
const MIN_VOLATILITY: f64 = 1e-16;
const ARMIJO: f64 = 1e-4;
/// Residual target, relative to `kkt_tol`, for post-convergence polishing.
const POLISH_FACTOR: f64 = 1e-4;
const POLISH_STEPS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("infeasible problem: {0}")]
    InfeasibleProblem(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Linear cap `cᵀw ≤ cap` on the portfolio carbon footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct CarbonCap {
    pub intensity: Array1<f64>,
    pub cap: f64,
}

/// Objective data and constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProblem {
    mu: Array1<f64>,
    sigma: Array2<f64>,
    multiplier: f64,
    mean_sign: f64,
    pinned: BTreeSet<usize>,
    carbon: Option<CarbonCap>,
}

impl PortfolioProblem {
    /// `multiplier` is `T` (normal quantile or ES multiplier) and must be
    /// non-negative; `mean_sign` is `a ∈ {−1, +1}`.
    pub fn new(
        mu: Array1<f64>,
        sigma: Array2<f64>,
        multiplier: f64,
        mean_sign: f64,
    ) -> Result<Self, OptimizeError> {
        let n = mu.len();
        if n == 0 {
            return Err(OptimizeError::InvalidProblem("no assets".into()));
        }
        for actual in [sigma.nrows(), sigma.ncols()] {
            if actual != n {
                return Err(OptimizeError::DimensionMismatch {
                    expected: n,
                    actual,
                });
            }
        }
        if !(multiplier >= 0.0) || !multiplier.is_finite() {
            return Err(OptimizeError::InvalidProblem(format!(
                "risk multiplier must be finite and non-negative, got {multiplier}"
            )));
        }
        if mean_sign != 1.0 && mean_sign != -1.0 {
            return Err(OptimizeError::InvalidProblem(format!(
                "mean sign must be -1 or +1, got {mean_sign}"
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(OptimizeError::InvalidProblem("non-finite input".into()));
        }
        Ok(Self {
            mu,
            sigma,
            multiplier,
            mean_sign,
            pinned: BTreeSet::new(),
            carbon: None,
        })
    }

    /// Force the given asset indices to zero weight. At least one asset must stay free.
    pub fn with_pinned(mut self, pinned: impl IntoIterator<Item = usize>) -> Result<Self, OptimizeError> {
        let n = self.n_assets();
        self.pinned = pinned.into_iter().collect();
        if let Some(&bad) = self.pinned.iter().find(|&&i| i >= n) {
            return Err(OptimizeError::InvalidProblem(format!(
                "pinned index {bad} out of range for {n} assets"
            )));
        }
        if self.pinned.len() >= n {
            return Err(OptimizeError::InvalidProblem(
                "every asset is pinned to zero".into(),
            ));
        }
        Ok(self)
    }

    /// Add the constraint `intensityᵀw ≤ cap`.
    pub fn with_carbon_cap(mut self, intensity: Array1<f64>, cap: f64) -> Result<Self, OptimizeError> {
        let n = self.n_assets();
        if intensity.len() != n {
            return Err(OptimizeError::DimensionMismatch {
                expected: n,
                actual: intensity.len(),
            });
        }
        if intensity.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(OptimizeError::InvalidProblem(
                "carbon intensities must be finite and non-negative".into(),
            ));
        }
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(OptimizeError::InvalidProblem(format!(
                "carbon cap must be positive, got {cap}"
            )));
        }
        self.carbon = Some(CarbonCap { intensity, cap });
        Ok(self)
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn mean_sign(&self) -> f64 {
        self.mean_sign
    }

    pub fn pinned(&self) -> &BTreeSet<usize> {
        &self.pinned
    }

    pub fn carbon(&self) -> Option<&CarbonCap> {
        self.carbon.as_ref()
    }

    /// `a·wᵀμ + T·√(wᵀΣw)`.
    pub fn objective(&self, w: ArrayView1<f64>) -> f64 {
        let variance = w.dot(&self.sigma.dot(&w));
        self.mean_sign * w.dot(&self.mu) + self.multiplier * variance.max(0.0).sqrt()
    }

    /// `a·μ + T·Σw / √(wᵀΣw)`.
    pub fn gradient(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let sw = self.sigma.dot(&w);
        let vol = w.dot(&sw).max(0.0).sqrt().max(MIN_VOLATILITY);
        &self.mu * self.mean_sign + &sw * (self.multiplier / vol)
    }

    fn check_feasible(&self) -> Result<(), OptimizeError> {
        if let Some(cc) = &self.carbon {
            let min_free = (0..self.n_assets())
                .filter(|i| !self.pinned.contains(i))
                .map(|i| cc.intensity[i])
                .fold(f64::INFINITY, f64::min);
            if min_free > cc.cap {
                return Err(OptimizeError::InfeasibleProblem(format!(
                    "carbon cap infeasible: cap {} is below the lowest unpinned intensity {}",
                    cc.cap, min_free
                )));
            }
        }
        Ok(())
    }

    fn reduce(&self) -> Reduced {
        let free: Vec<usize> = (0..self.n_assets())
            .filter(|i| !self.pinned.contains(i))
            .collect();
        let m = free.len();
        let mu = free.iter().map(|&i| self.mu[i]).collect();
        let sigma = Array2::from_shape_fn((m, m), |(a, b)| self.sigma[[free[a], free[b]]]);
        let carbon = self.carbon.as_ref().map(|cc| CarbonCap {
            intensity: free.iter().map(|&i| cc.intensity[i]).collect(),
            cap: cc.cap,
        });
        Reduced {
            free,
            problem: PortfolioProblem {
                mu,
                sigma,
                multiplier: self.multiplier,
                mean_sign: self.mean_sign,
                pinned: BTreeSet::new(),
                carbon,
            },
        }
    }
}

/// Pinned-free copy of a problem plus the map back to full indices.
struct Reduced {
    free: Vec<usize>,
    problem: PortfolioProblem,
}

impl Reduced {
    fn expand(&self, w: &Array1<f64>, n: usize) -> Array1<f64> {
        let mut full = Array1::zeros(n);
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = w[k];
        }
        full
    }

    fn restrict(&self, w: ArrayView1<f64>) -> Array1<f64> {
        self.free.iter().map(|&i| w[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Converged once the KKT residual falls to this level.
    pub kkt_tol: f64,
    /// Allowed violation of the budget and carbon constraints.
    pub constraint_tol: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            constraint_tol: 1e-8,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub weights: Array1<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Euclidean projection onto the unit simplex.
fn project_simplex(y: ArrayView1<f64>) -> Array1<f64> {
    let mut u: Vec<f64> = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    let mut w = y.mapv(|v| (v - tau).max(0.0));
    let s = w.sum();
    if s > 0.0 {
        w /= s;
    }
    w
}

/// Euclidean projection onto `{w ≥ 0, Σw = 1, cᵀw ≤ cap}` (no pins).
///
/// The cap is dualized: `w(λ) = P_simplex(y − λc)` with `cᵀw(λ)`
/// nonincreasing in `λ`. Bisection brackets the multiplier, then an exact
/// solve on the final linear piece lands on the cap.
fn project_reduced(y: ArrayView1<f64>, carbon: Option<&CarbonCap>) -> Array1<f64> {
    let w0 = project_simplex(y);
    let Some(cc) = carbon else { return w0 };
    let c = &cc.intensity;
    let footprint = |w: &Array1<f64>| c.dot(w);
    if footprint(&w0) <= cc.cap {
        return w0;
    }
    let at = |lambda: f64| project_simplex((&y - &(c * lambda)).view());

    let cmax = c.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut lo = 0.0;
    let mut hi = 1.0 / cmax;
    let mut w_hi = at(hi);
    let mut doublings = 0;
    while footprint(&w_hi) > cc.cap {
        lo = hi;
        hi *= 2.0;
        w_hi = at(hi);
        doublings += 1;
        if doublings > 2000 {
            break;
        }
    }
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let w_mid = at(mid);
        if footprint(&w_mid) > cc.cap {
            lo = mid;
        } else {
            hi = mid;
            w_hi = w_mid;
        }
    }

    // Exact multiplier on the support of the feasible end of the bracket.
    let support: Vec<usize> = (0..w_hi.len()).filter(|&i| w_hi[i] > 0.0).collect();
    let m = support.len() as f64;
    let (mut a, mut b, mut csum, mut ysum) = (0.0, 0.0, 0.0, 0.0);
    for &i in &support {
        a += c[i] * y[i];
        b += c[i] * c[i];
        csum += c[i];
        ysum += y[i];
    }
    let denom = b - csum * csum / m;
    if denom > 0.0 {
        let lambda = (a - csum * (ysum - 1.0) / m - cc.cap) / denom;
        if lambda >= lo && lambda <= hi * (1.0 + 1e-9) {
            let tau = (ysum - lambda * csum - 1.0) / m;
            let in_support = |i: usize| support.binary_search(&i).is_ok();
            let consistent = (0..y.len()).all(|i| {
                let v = y[i] - lambda * c[i] - tau;
                if in_support(i) {
                    v >= -1e-12
                } else {
                    v <= 1e-12
                }
            });
            if consistent {
                let mut w = Array1::zeros(y.len());
                for &i in &support {
                    w[i] = (y[i] - lambda * c[i] - tau).max(0.0);
                }
                let s = w.sum();
                w /= s;
                if footprint(&w) <= cc.cap * (1.0 + 1e-14) {
                    return w;
                }
            }
        }
    }
    w_hi
}

/// Euclidean projection of `w0` onto the feasible set of `problem`.
pub fn project_feasible(
    w0: ArrayView1<f64>,
    problem: &PortfolioProblem,
) -> Result<Array1<f64>, OptimizeError> {
    let n = problem.n_assets();
    if w0.len() != n {
        return Err(OptimizeError::DimensionMismatch {
            expected: n,
            actual: w0.len(),
        });
    }
    problem.check_feasible()?;
    let reduced = problem.reduce();
    let y = reduced.restrict(w0);
    let w = project_reduced(y.view(), reduced.problem.carbon.as_ref());
    Ok(reduced.expand(&w, n))
}

/// Natural residual `‖w − P(w − ∇f(w))‖₂` on the unpinned coordinates.
///
/// Zero exactly at KKT points: a stationary point with non-negative
/// multipliers on the active bounds and the carbon cap.
pub fn kkt_residual(w: ArrayView1<f64>, problem: &PortfolioProblem) -> f64 {
    let reduced = problem.reduce();
    let wr = reduced.restrict(w);
    residual_reduced(&reduced.problem, &wr)
}

fn residual_reduced(p: &PortfolioProblem, w: &Array1<f64>) -> f64 {
    let g = p.gradient(w.view());
    let target = project_reduced((w - &g).view(), p.carbon.as_ref());
    let diff = w - &target;
    diff.dot(&diff).sqrt()
}

/// Minimize the problem from `start` (default: equal weights on unpinned assets).
///
/// Returns `Err` only for invalid or infeasible problems. Hitting the
/// iteration limit yields the best feasible iterate with status
/// [`SolveStatus::IterationLimit`].
pub fn solve(
    problem: &PortfolioProblem,
    tolerances: &Tolerances,
    start: Option<ArrayView1<f64>>,
) -> Result<Solution, OptimizeError> {
    let n = problem.n_assets();
    problem.check_feasible()?;
    let reduced = problem.reduce();
    let p = &reduced.problem;
    let m = reduced.free.len();

    let y0 = match start {
        Some(s) => {
            if s.len() != n {
                return Err(OptimizeError::DimensionMismatch {
                    expected: n,
                    actual: s.len(),
                });
            }
            reduced.restrict(s)
        }
        None => Array1::from_elem(m, 1.0 / m as f64),
    };
    let mut w = project_reduced(y0.view(), p.carbon.as_ref());
    let mut f = p.objective(w.view());
    let mut g = p.gradient(w.view());
    let mut step = initial_step(p, &w, &g);
    let mut residual = residual_reduced(p, &w);
    let mut iterations = 0;
    let mut stalled = 0;

    // Once converged, keep iterating while the residual improves so the
    // returned weights do not depend on the objective's overall scale.
    let mut polish = 0;
    while residual > tolerances.kkt_tol * POLISH_FACTOR && iterations < tolerances.max_iterations {
        if residual <= tolerances.kkt_tol {
            polish += 1;
            if polish > POLISH_STEPS {
                break;
            }
        }
        iterations += 1;
        let residual_prev = residual;
        let w_prev = w.clone();
        let g_prev = g.clone();
        let f_prev = f;

        // Projected-gradient step along the projection arc.
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = project_reduced((&w - &(&g * alpha)).view(), p.carbon.as_ref());
            let ft = p.objective(trial.view());
            if ft <= f + ARMIJO * g.dot(&(&trial - &w)) {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        if let Some((trial, ft)) = accepted {
            w = trial;
            f = ft;
        }

        // Newton step on the face identified above.
        if let Some((wn, fnew)) = newton_on_face(p, &w, f) {
            w = wn;
            f = fnew;
        }

        g = p.gradient(w.view());
        residual = residual_reduced(p, &w);
        if residual_prev <= tolerances.kkt_tol && residual >= residual_prev {
            w = w_prev;
            residual = residual_prev;
            break;
        }

        let s = &w - &w_prev;
        let yk = &g - &g_prev;
        let sy = s.dot(&yk);
        step = if sy > 0.0 {
            (s.dot(&s) / sy).clamp(1e-12, 1e12)
        } else {
            (step * 2.0).min(1e12)
        };

        if f >= f_prev && s.iter().all(|v| *v == 0.0) {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let weights = reduced.expand(&w, n);
    let status = if residual <= tolerances.kkt_tol {
        SolveStatus::Converged
    } else {
        SolveStatus::IterationLimit
    };
    Ok(Solution {
        objective: problem.objective(weights.view()),
        weights,
        kkt_residual: residual,
        iterations,
        status,
    })
}

/// Step length whose projected-gradient move is of the order of the local curvature.
fn initial_step(p: &PortfolioProblem, w: &Array1<f64>, g: &Array1<f64>) -> f64 {
    let vol = w.dot(&p.sigma.dot(w)).max(0.0).sqrt().max(MIN_VOLATILITY);
    let max_diag = p.sigma.diag().iter().fold(0.0f64, |a, v| a.max(*v));
    let curvature = p.multiplier * max_diag / vol;
    if curvature > 0.0 {
        1.0 / curvature
    } else {
        let gnorm = g.dot(g).sqrt();
        if gnorm > 0.0 {
            1.0 / gnorm
        } else {
            1.0
        }
    }
}

/// Regularized Newton step on the free coordinates of `w`, holding zero
/// weights at zero and, if active, the carbon cap at equality.
fn newton_on_face(p: &PortfolioProblem, w: &Array1<f64>, f: f64) -> Option<(Array1<f64>, f64)> {
    let free: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let m = free.len();
    if m < 2 {
        return None;
    }

    let carbon = p.carbon.as_ref();
    let cap_active = carbon.is_some_and(|cc| cc.cap - cc.intensity.dot(w) <= 1e-11 * cc.cap);
    let c_free: Option<Vec<f64>> = carbon.map(|cc| free.iter().map(|&i| cc.intensity[i]).collect());
    // A cap row is redundant when intensities are equal on the face.
    let cap_row = cap_active
        && c_free.as_ref().is_some_and(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo > 1e-12 * hi.abs().max(lo.abs())
        });
    let rows = 1 + usize::from(cap_row);
    if m <= rows {
        return None;
    }

    let g = p.gradient(w.view());
    let sw = p.sigma.dot(w);
    let vol = w.dot(&sw).max(0.0).sqrt().max(MIN_VOLATILITY);
    let t = p.multiplier;
    let dim = m + rows;
    let mut kkt = Array2::<f64>::zeros((dim, dim));
    let mut trace = 0.0;
    for a in 0..m {
        for b in 0..m {
            let (i, j) = (free[a], free[b]);
            kkt[[a, b]] = t * (p.sigma[[i, j]] / vol - sw[i] * sw[j] / (vol * vol * vol));
        }
        trace += kkt[[a, a]];
    }
    let reg = 1e-12 * (trace / m as f64).abs() + 1e-300;
    for a in 0..m {
        kkt[[a, a]] += reg;
        kkt[[a, m]] = 1.0;
        kkt[[m, a]] = 1.0;
    }
    if cap_row {
        let c = c_free.as_ref().expect("cap row implies carbon");
        for a in 0..m {
            kkt[[a, m + 1]] = c[a];
            kkt[[m + 1, a]] = c[a];
        }
    }
    let mut rhs = Array1::zeros(dim);
    for a in 0..m {
        rhs[a] = -g[free[a]];
    }
    let sol = linalg::solve(kkt.view(), rhs.view(), 1e-18).ok()?;
    let d_free = sol.slice(ndarray::s![..m]);

    let mut d = Array1::zeros(w.len());
    for a in 0..m {
        d[free[a]] = d_free[a];
    }
    let slope = g.dot(&d);
    if !(slope < 0.0) {
        return None;
    }

    let mut t_max = f64::INFINITY;
    for &i in &free {
        if d[i] < 0.0 {
            t_max = t_max.min(w[i] / -d[i]);
        }
    }
    if let Some(cc) = carbon {
        let cd = cc.intensity.dot(&d);
        if !cap_active && cd > 0.0 {
            t_max = t_max.min((cc.cap - cc.intensity.dot(w)).max(0.0) / cd);
        }
    }
    let mut step = t_max.min(1.0);
    if !(step > 0.0) {
        return None;
    }
    for _ in 0..50 {
        let trial = w + &(&d * step);
        let trial = project_reduced(trial.view(), carbon);
        let ft = p.objective(trial.view());
        if ft <= f + ARMIJO * step * slope {
            return Some((trial, ft));
        }
        step *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(mu: Array1<f64>, sigma: Array2<f64>, t: f64) -> PortfolioProblem {
        PortfolioProblem::new(mu, sigma, t, -1.0).unwrap()
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        a.dot(&a.t()) + Array2::<f64>::eye(n) * 0.1
    }

    #[test]
    fn projection_fixed_point() {
        let p = problem(Array1::zeros(3), Array2::eye(3), 1.0);
        let w0 = array![0.2, 0.3, 0.5];
        let w = project_feasible(w0.view(), &p).unwrap();
        for (a, b) in w.iter().zip(w0.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn projection_with_pin() {
        let p = problem(Array1::zeros(2), Array2::eye(2), 1.0)
            .with_pinned([0])
            .unwrap();
        let w = project_feasible(array![0.6, 0.4].view(), &p).unwrap();
        assert_eq!(w, array![0.0, 1.0]);
    }

    #[test]
    fn projection_onto_carbon_cap() {
        let p = problem(Array1::zeros(2), Array2::eye(2), 1.0)
            .with_carbon_cap(array![10.0, 2.0], 6.0)
            .unwrap();
        let w = project_feasible(array![1.0, 0.0].view(), &p).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_reports_infeasible_cap() {
        let p = problem(Array1::zeros(2), Array2::eye(2), 1.0)
            .with_carbon_cap(array![10.0, 8.0], 6.0)
            .unwrap();
        assert!(matches!(
            project_feasible(array![0.5, 0.5].view(), &p),
            Err(OptimizeError::InfeasibleProblem(_))
        ));
    }

    #[test]
    fn symmetric_problem_gives_equal_weights() {
        let p = problem(Array1::zeros(3), Array2::eye(3), 1.7);
        let third = Array1::from_elem(3, 1.0 / 3.0);
        assert!(kkt_residual(third.view(), &p) <= 1e-10);
        let sol = solve(&p, &Tolerances::default(), Some(array![0.7, 0.2, 0.1].view())).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        for v in sol.weights.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn two_asset_calculus_optimum() {
        // d/dw [w² + 4(1−w)²] = 0  ⇒  w = 0.8
        let p = problem(Array1::zeros(2), Array2::from_diag(&array![1.0, 4.0]), 1.0);
        let analytic = array![0.8, 0.2];
        assert!(kkt_residual(analytic.view(), &p) <= 1e-8);
        let sol = solve(&p, &Tolerances::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_abs_diff_eq!(sol.weights[0], 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective, 20f64.sqrt() / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_non_optimal_point_has_large_residual() {
        let p = problem(Array1::zeros(2), Array2::from_diag(&array![1.0, 4.0]), 1.0);
        assert!(kkt_residual(array![0.5, 0.5].view(), &p) > 1e-3);
    }

    #[test]
    fn pinned_weights_are_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = random_spd(6, &mut rng);
        let mu = Array1::from_shape_fn(6, |_| rng.random_range(-0.05..0.05));
        let p = problem(mu, sigma, 1.645).with_pinned([1, 4]).unwrap();
        let sol = solve(&p, &Tolerances::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_eq!(sol.weights[1].to_bits(), 0.0f64.to_bits());
        assert_eq!(sol.weights[4].to_bits(), 0.0f64.to_bits());
        assert!((sol.weights.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn binding_carbon_cap_has_nonnegative_multiplier() {
        // Low-variance asset is the high emitter; cap forces the split.
        let p = problem(Array1::zeros(2), Array2::from_diag(&array![1.0, 4.0]), 1.0)
            .with_carbon_cap(array![10.0, 2.0], 6.0)
            .unwrap();
        let sol = solve(&p, &Tolerances::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_abs_diff_eq!(sol.weights[0], 0.5, epsilon = 1e-12);
        let c = array![10.0, 2.0];
        assert!(c.dot(&sol.weights) <= 6.0 + 1e-8);
        // Stationarity: g + ν1 + λc = 0 on the two free coordinates.
        let g = p.gradient(sol.weights.view());
        let lambda = -(g[0] - g[1]) / (c[0] - c[1]);
        assert!(lambda >= 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let sigma = random_spd(n, &mut rng);
        let mu = Array1::from_shape_fn(n, |_| rng.random_range(-0.1..0.1));
        let p = problem(mu, sigma, 2.06);
        let raw = Array1::from_shape_fn(n, |_| rng.random_range(0.01..1.0));
        let w = &raw / raw.sum();
        let g = p.gradient(w.view());
        let h = 1e-6;
        for i in 0..n {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (p.objective(up.view()) - p.objective(dn.view())) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-8));
        }
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(PortfolioProblem::new(Array1::zeros(2), Array2::eye(3), 1.0, 1.0).is_err());
        assert!(PortfolioProblem::new(Array1::zeros(2), Array2::eye(2), -1.0, 1.0).is_err());
        assert!(PortfolioProblem::new(Array1::zeros(2), Array2::eye(2), 1.0, 0.5).is_err());
        let p = problem(Array1::zeros(2), Array2::eye(2), 1.0);
        assert!(p.clone().with_pinned([2]).is_err());
        assert!(p.clone().with_pinned([0, 1]).is_err());
        assert!(p.clone().with_carbon_cap(array![1.0, -1.0], 1.0).is_err());
        assert!(p.with_carbon_cap(array![1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn larger_problem_converges_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 60;
        let sigma = random_spd(n, &mut rng) * 1e-4;
        let mu = Array1::from_shape_fn(n, |_| rng.random_range(-1e-3..1e-3));
        let c = Array1::from_shape_fn(n, |_| rng.random_range(0.0..100.0));
        let bench = Array1::from_elem(n, 1.0 / n as f64);
        let cap = 0.6 * c.dot(&bench);
        let p = problem(mu, sigma, 1.645).with_carbon_cap(c.clone(), cap).unwrap();
        let sol = solve(&p, &Tolerances::default(), Some(bench.view())).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged, "{sol:?}");
        assert!(sol.iterations < 100, "iterations {}", sol.iterations);
        assert!(c.dot(&sol.weights) <= cap + 1e-8);
        assert!(sol.weights.iter().all(|v| *v >= -1e-10));
    }
}
