//! Ordinary least squares via the normal equations. Used as an independent
//! reference for the PLS solver, never by the pipeline itself.

use super::matrix::{cholesky_solve, dot, Matrix};
use super::{check_data, check_target, mean, RegressError};

/// Pivot threshold, relative to the largest diagonal of `X^T X`.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl OlsFit {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows()
            .map(|r| self.intercept + dot(r, &self.beta))
            .collect()
    }
}

/// Minimizes `|y - X beta - b|^2 + ridge |beta|^2` (intercept unpenalized).
pub fn fit_ols_oracle(x: &Matrix, y: &[f64], ridge: f64) -> Result<OlsFit, RegressError> {
    check_data(x)?;
    check_target(x, y)?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(RegressError::InvalidInput(format!("ridge must be >= 0, got {ridge}")));
    }
    let x_mean = x.column_means();
    let y_mean = mean(y);
    let xc = x.sub_row_vector(&x_mean);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let d = x.cols();

    let mut gram = Matrix::zeros(d, d);
    for r in xc.iter_rows() {
        for i in 0..d {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            let row = gram.row_mut(i);
            for j in 0..d {
                row[j] += ri * r[j];
            }
        }
    }
    for i in 0..d {
        gram.set(i, i, gram.get(i, i) + ridge);
    }
    let rhs = xc.tmat_vec(&yc);
    let beta = cholesky_solve(&gram, &rhs, SINGULAR_TOL).ok_or(RegressError::SingularSystem)?;
    let intercept = y_mean - dot(&x_mean, &beta);
    Ok(OlsFit { beta, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [5.0]]).unwrap();
        let y: Vec<f64> = [0.0, 1.0, 2.0, 5.0].iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = fit_ols_oracle(&x, &y, 0.0).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-9);
        assert!((fit.intercept - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_columns_are_singular_without_ridge() {
        let x = Matrix::from_fn(6, 2, |i, _| i as f64 * 0.7 + 1.0);
        let y: Vec<f64> = (0..6).map(|i| (i * i) as f64).collect();
        assert_eq!(fit_ols_oracle(&x, &y, 0.0), Err(RegressError::SingularSystem));
        assert!(fit_ols_oracle(&x, &y, 1e-3).is_ok());
    }

    #[test]
    fn negative_ridge_rejected() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        assert!(fit_ols_oracle(&x, &[1.0, 2.0, 3.0], -1.0).is_err());
    }
}
