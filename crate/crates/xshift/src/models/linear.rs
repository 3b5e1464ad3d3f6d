//! Ordinary least squares via the normal equations.
//!
//! The Gram matrix of the intercept-augmented design is assembled in one
//! pass and solved with a Cholesky factorization. On a rank-deficient
//! system the error reports the condition estimate from the symmetric
//! eigendecomposition instead of returning garbage coefficients.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefficients.len());
        let mut y = self.intercept;
        for (c, x) in self.coefficients.iter().zip(row) {
            y += c * x;
        }
        y
    }

    pub fn predict(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, data has {}",
                self.n_features(),
                x.n_cols()
            )));
        }
        Ok(x.rows_iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Gram matrix and moment vector of the intercept-augmented design.
fn normal_equations(x: &DataMatrix, y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.n_rows();
    let p = x.n_cols();
    let k = p + 1;
    let mut g = DMatrix::<f64>::zeros(k, k);
    let mut r = DVector::<f64>::zeros(k);
    g[(0, 0)] = n as f64;
    for i in 0..n {
        let row = x.row(i);
        r[0] += y[i];
        for a in 0..p {
            g[(0, a + 1)] += row[a];
            r[a + 1] += row[a] * y[i];
            for b in a..p {
                g[(a + 1, b + 1)] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    (g, r)
}

/// Least-squares fit with an intercept. Requires more rows than fitted
/// parameters and a full-rank design.
pub fn fit_ols(x: &DataMatrix, y: &[f64]) -> Result<LinearModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n != y.len() {
        return Err(Error::invalid(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if n < p + 2 {
        return Err(Error::invalid(format!(
            "need at least {} rows to fit {p} coefficients plus an intercept",
            p + 2
        )));
    }
    let (g, r) = normal_equations(x, y);
    let beta = match g.clone().cholesky() {
        Some(chol) => chol.solve(&r),
        None => {
            let eig = g.symmetric_eigen();
            let mut max_ev = 0.0f64;
            let mut min_ev = f64::INFINITY;
            for &ev in eig.eigenvalues.iter() {
                max_ev = max_ev.max(ev.abs());
                min_ev = min_ev.min(ev.abs());
            }
            let cond = max_ev / min_ev;
            return Err(Error::Factorization(format!(
                "normal equations are singular (rank-deficient design); condition estimate {cond:.3e}"
            )));
        }
    };
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

/// Ridge regression with an unpenalized intercept. Features and target are
/// centered, the coefficient block solves (Xc'Xc + lambda I) b = Xc'yc, and
/// the intercept is recovered from the means, so the system is positive
/// definite for any lambda > 0 even on a rank-deficient design.
pub fn fit_ridge(x: &DataMatrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n != y.len() {
        return Err(Error::invalid(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if n == 0 || p == 0 {
        return Err(Error::invalid("ridge needs at least one row and one column"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("ridge penalty must be positive"));
    }
    let mx = x.column_means();
    let my = y.iter().sum::<f64>() / n as f64;
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut r = DVector::<f64>::zeros(p);
    for i in 0..n {
        let row = x.row(i);
        let dy = y[i] - my;
        for a in 0..p {
            let da = row[a] - mx[a];
            r[a] += da * dy;
            for b in a..p {
                g[(a, b)] += da * (row[b] - mx[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
        g[(a, a)] += lambda;
    }
    let beta = g
        .cholesky()
        .ok_or_else(|| {
            Error::Factorization("ridge system is not positive definite".to_string())
        })?
        .solve(&r);
    let mut intercept = my;
    for a in 0..p {
        intercept -= beta[a] * mx[a];
    }
    Ok(LinearModel {
        intercept,
        coefficients: beta.iter().copied().collect(),
    })
}
