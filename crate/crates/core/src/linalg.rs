//! Small dense linear-algebra kernels.
//!
//! Matrices here are at most a few hundred on a side, so plain O(n³)
//! factorizations are adequate and keep results bit-reproducible.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is singular or nearly singular")]
    Singular,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
///
/// Pivots smaller than `rel_tol` times the largest absolute entry of `A`
/// are treated as singular.
pub fn solve(a: ArrayView2<f64>, b: ArrayView1<f64>, rel_tol: f64) -> Result<Array1<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: a.ncols(),
        });
    }
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(LinalgError::Singular);
    }
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m[[r, col]].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= rel_tol * scale {
            return Err(LinalgError::Singular);
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap([col, j], [pivot_row, j]);
            }
            x.swap(col, pivot_row);
        }
        for r in (col + 1)..n {
            let f = m[[r, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[[r, j]] -= f * m[[col, j]];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[[i, j]] * x[j];
        }
        x[i] = s / m[[i, i]];
    }
    Ok(x)
}

/// Householder QR of a tall matrix, kept in compact form for repeated
/// least-squares solves against the same design.
#[derive(Debug, Clone)]
pub struct QrDecomposition {
    /// Householder vectors below the diagonal, `R` on and above it.
    packed: Array2<f64>,
    /// Scalars `τ` of the reflectors `I − τ v vᵀ`.
    tau: Vec<f64>,
}

impl QrDecomposition {
    /// Factor `a` (rows ≥ cols). Fails with [`LinalgError::Singular`] when a
    /// diagonal of `R` is below `rel_tol` times the largest one.
    pub fn new(a: ArrayView2<f64>, rel_tol: f64) -> Result<Self, LinalgError> {
        let (m, n) = a.dim();
        if m < n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                actual: m,
            });
        }
        let mut q = a.to_owned();
        let mut tau = vec![0.0; n];
        for k in 0..n {
            let norm = (k..m).map(|i| q[[i, k]] * q[[i, k]]).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if q[[k, k]] > 0.0 { -norm } else { norm };
            let v0 = q[[k, k]] - alpha;
            // v = (1, q[k+1..,k] / v0)
            for i in (k + 1)..m {
                q[[i, k]] /= v0;
            }
            let vnorm2 = 1.0 + ((k + 1)..m).map(|i| q[[i, k]] * q[[i, k]]).sum::<f64>();
            tau[k] = 2.0 / vnorm2;
            q[[k, k]] = alpha;
            for j in (k + 1)..n {
                let mut s = q[[k, j]];
                for i in (k + 1)..m {
                    s += q[[i, k]] * q[[i, j]];
                }
                s *= tau[k];
                q[[k, j]] -= s;
                for i in (k + 1)..m {
                    q[[i, j]] -= s * q[[i, k]];
                }
            }
        }
        let max_diag = (0..n).fold(0.0f64, |acc, k| acc.max(q[[k, k]].abs()));
        if max_diag == 0.0 || (0..n).any(|k| q[[k, k]].abs() <= rel_tol * max_diag) {
            return Err(LinalgError::Singular);
        }
        Ok(Self { packed: q, tau })
    }

    pub fn rows(&self) -> usize {
        self.packed.nrows()
    }

    /// Least-squares solution of `a x ≈ y`.
    pub fn solve_least_squares(&self, y: ArrayView1<f64>) -> Result<Array1<f64>, LinalgError> {
        let (m, n) = self.packed.dim();
        if y.len() != m {
            return Err(LinalgError::DimensionMismatch {
                expected: m,
                actual: y.len(),
            });
        }
        let mut z = y.to_owned();
        for k in 0..n {
            let mut s = z[k];
            for i in (k + 1)..m {
                s += self.packed[[i, k]] * z[i];
            }
            s *= self.tau[k];
            z[k] -= s;
            for i in (k + 1)..m {
                z[i] -= s * self.packed[[i, k]];
            }
        }
        let mut x = Array1::zeros(n);
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in (i + 1)..n {
                s -= self.packed[[i, j]] * x[j];
            }
            x[i] = s / self.packed[[i, i]];
        }
        Ok(x)
    }
}

/// `xᵀ A x` for symmetric `A`.
pub fn quadratic_form(a: ArrayView2<f64>, x: ArrayView1<f64>) -> f64 {
    x.dot(&a.dot(&x))
}
