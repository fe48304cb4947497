//! Dense regression toolkit: NIPALS partial least squares, a PCA baseline,
//! an ordinary-least-squares oracle and the coefficient of determination.
//!
//! Everything here is a pure function over `f64` data. Fitted models are
//! immutable and `Sync`.

mod matrix;
mod ols;
mod pca;
mod pls;

pub use matrix::{axpy, cholesky_solve, dot, mean, norm, solve_upper, Matrix};
pub use ols::{fit_ols_oracle, OlsFit};
pub use pca::{fit_pca, pca_regression, PcaModel, PcaRegression};
pub use pls::{fit_pls, PlsModel, PlsOptions};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("target has zero variance")]
    DegenerateTarget,
    #[error("data matrix rank exhausted after {achieved} component(s)")]
    RankExhausted { achieved: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("normal equations are singular; use a positive ridge")]
    SingularSystem,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Checks the data-matrix contract: at least two rows, one column, finite.
pub(crate) fn check_data(x: &Matrix) -> Result<(), RegressError> {
    if x.rows() < 2 {
        return Err(RegressError::InvalidInput(format!(
            "need at least 2 rows, got {}",
            x.rows()
        )));
    }
    if x.cols() < 1 {
        return Err(RegressError::InvalidInput("need at least 1 column".into()));
    }
    if !x.all_finite() {
        return Err(RegressError::InvalidInput(
            "data matrix contains non-finite values".into(),
        ));
    }
    Ok(())
}

pub(crate) fn check_target(x: &Matrix, y: &[f64]) -> Result<(), RegressError> {
    if y.len() != x.rows() {
        return Err(RegressError::DimensionMismatch(format!(
            "target has {} values, data has {} rows",
            y.len(),
            x.rows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(RegressError::InvalidInput(
            "target contains non-finite values".into(),
        ));
    }
    Ok(())
}

pub(crate) fn sum_sq_dev(y: &[f64]) -> f64 {
    let m = mean(y);
    y.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Coefficient of determination `1 - SS_res / SS_tot`. May be negative.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64, RegressError> {
    if y.len() != y_hat.len() {
        return Err(RegressError::DimensionMismatch(format!(
            "{} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(RegressError::InvalidInput(
            "r_squared needs at least 2 values".into(),
        ));
    }
    let ss_tot = sum_sq_dev(y);
    if ss_tot <= 0.0 {
        return Err(RegressError::DegenerateTarget);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_reference_values() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        // SS_res = 4 + 0 + 4 = 8, SS_tot = 2
        assert_eq!(r_squared(&y, &[3.0, 2.0, 1.0]).unwrap(), -3.0);
    }

    #[test]
    fn r_squared_rejects_constant_target() {
        assert_eq!(
            r_squared(&[5.0, 5.0], &[1.0, 2.0]),
            Err(RegressError::DegenerateTarget)
        );
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }
}
