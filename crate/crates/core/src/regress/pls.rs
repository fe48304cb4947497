//! Single-target partial least squares (PLS1) fitted with NIPALS.
//!
//! The data matrix is decomposed into X-scores `T`, X-loadings `P` and
//! unit-norm weights `W` such that `X ~ T P^T`, with Y-loadings `C` giving
//! `y ~ T C`. Each component is extracted from the deflated residuals of
//! the previous ones (`X <- X - t p^T`, `y <- y - c t`).
//!
//! Scores of new data are `(X - x_mean) W (P^T W)^{-1}`; `P^T W` is unit
//! upper triangular for NIPALS, so predictions with the first `k` components
//! only need the leading `k x k` block.

use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, norm, solve_upper, Matrix};
use super::{check_data, check_target, sum_sq_dev, RegressError};

/// Deflated X below this fraction of the original norm counts as exhausted.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlsOptions {
    /// Inner-loop stop threshold on the change of the weight vector.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// A fitted PLS1 model. Column vectors are stored component-major, which is
/// also the JSON layout (`W[j]` is the j-th weight vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    pub k: usize,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub x_loadings: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub y_loadings: Vec<f64>,
    /// `(t_min, t_max)` of each component's training X-scores.
    pub train_score_range: Vec<(f64, f64)>,
}

/// Fits `k` NIPALS components of `y` on `x`.
pub fn fit_pls(
    x: &Matrix,
    y: &[f64],
    k: usize,
    opts: PlsOptions,
) -> Result<PlsModel, RegressError> {
    check_data(x)?;
    check_target(x, y)?;
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > (n - 1).min(d) {
        return Err(RegressError::DimensionMismatch(format!(
            "k = {k} outside 1..={} for a {n}x{d} matrix",
            (n - 1).min(d)
        )));
    }
    if sum_sq_dev(y) <= 0.0 {
        return Err(RegressError::DegenerateTarget);
    }

    let x_mean = x.column_means();
    let y_mean = super::mean(y);
    let mut xa = x.sub_row_vector(&x_mean);
    let mut ya: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let x_norm0 = xa.frobenius_norm();

    let mut weights = Vec::with_capacity(k);
    let mut x_loadings = Vec::with_capacity(k);
    let mut y_loadings = Vec::with_capacity(k);
    let mut ranges = Vec::with_capacity(k);

    for comp in 0..k {
        if xa.frobenius_norm() <= RANK_TOL * x_norm0 {
            return Err(RegressError::RankExhausted { achieved: comp });
        }
        let mut w = nipals_weight(&xa, &ya, opts).ok_or(RegressError::RankExhausted {
            achieved: comp,
        })?;
        let mut t = xa.mat_vec(&w);
        let tt = dot(&t, &t);
        // w lies in the row space of xa, so a vanishing score means xa is
        // numerically zero
        if tt <= (RANK_TOL * x_norm0).powi(2) {
            return Err(RegressError::RankExhausted { achieved: comp });
        }
        let mut p: Vec<f64> = xa.tmat_vec(&t).into_iter().map(|v| v / tt).collect();
        let mut c = dot(&ya, &t) / tt;

        // deflation uses t p^T and c t, both invariant under the sign flip
        for i in 0..xa.rows() {
            let ti = t[i];
            axpy(-ti, &p, xa.row_mut(i));
            ya[i] -= c * ti;
        }

        if largest_entry_negative(&w) {
            w.iter_mut().for_each(|v| *v = -*v);
            t.iter_mut().for_each(|v| *v = -*v);
            p.iter_mut().for_each(|v| *v = -*v);
            c = -c;
        }
        let t_min = t.iter().copied().fold(f64::INFINITY, f64::min);
        let t_max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        weights.push(w);
        x_loadings.push(p);
        y_loadings.push(c);
        ranges.push((t_min, t_max));
    }

    Ok(PlsModel {
        k,
        x_mean,
        y_mean,
        weights,
        x_loadings,
        y_loadings,
        train_score_range: ranges,
    })
}

/// NIPALS inner loop for a single target. Returns the unit weight vector,
/// or `None` if the cross-covariance vanished.
fn nipals_weight(xa: &Matrix, ya: &[f64], opts: PlsOptions) -> Option<Vec<f64>> {
    let mut u = ya.to_vec();
    let mut w_old: Option<Vec<f64>> = None;
    let mut w = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        w = xa.tmat_vec(&u);
        let wn = norm(&w);
        if wn == 0.0 || !wn.is_finite() {
            return None;
        }
        w.iter_mut().for_each(|v| *v /= wn);
        let t = xa.mat_vec(&w);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return None;
        }
        let c = dot(ya, &t) / tt;
        if c == 0.0 {
            return None;
        }
        u = ya.iter().map(|v| v / c).collect();
        if let Some(prev) = &w_old {
            let diff: f64 = prev
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if diff < opts.tol {
                break;
            }
        }
        w_old = Some(w.clone());
    }
    Some(w)
}

fn largest_entry_negative(w: &[f64]) -> bool {
    let mut best = 0.0f64;
    for &v in w {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    best < 0.0
}

impl PlsModel {
    pub fn dim(&self) -> usize {
        self.x_mean.len()
    }

    /// Weight vector (unit norm) of component `comp` (0-based).
    pub fn direction(&self, comp: usize) -> &[f64] {
        &self.weights[comp]
    }

    fn check_usage(&self, x: &Matrix, k_used: usize) -> Result<(), RegressError> {
        if k_used == 0 || k_used > self.k {
            return Err(RegressError::DimensionMismatch(format!(
                "k_used = {k_used} outside 1..={}",
                self.k
            )));
        }
        if x.cols() != self.dim() {
            return Err(RegressError::DimensionMismatch(format!(
                "data has {} columns, model expects {}",
                x.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `P_k^T W_k`, the leading block of the (unit upper-triangular) coupling.
    fn coupling(&self, k_used: usize) -> Matrix {
        Matrix::from_fn(k_used, k_used, |i, j| {
            dot(&self.x_loadings[i], &self.weights[j])
        })
    }

    /// Regression coefficients on centered data using the first `k_used`
    /// components.
    pub fn coefficients(&self, k_used: usize) -> Vec<f64> {
        let m = self.coupling(k_used);
        let z = solve_upper(&m, &self.y_loadings[..k_used]);
        let mut beta = vec![0.0; self.dim()];
        for (j, &zj) in z.iter().enumerate() {
            axpy(zj, &self.weights[j], &mut beta);
        }
        beta
    }

    pub fn predict(&self, x: &Matrix, k_used: usize) -> Result<Vec<f64>, RegressError> {
        self.check_usage(x, k_used)?;
        let beta = self.coefficients(k_used);
        Ok(x
            .iter_rows()
            .map(|r| {
                self.y_mean
                    + r.iter()
                        .zip(&self.x_mean)
                        .zip(&beta)
                        .map(|((v, m), b)| (v - m) * b)
                        .sum::<f64>()
            })
            .collect())
    }

    /// X-scores of `x` on the first `k_used` components (`n x k_used`).
    pub fn scores(&self, x: &Matrix, k_used: usize) -> Result<Matrix, RegressError> {
        self.check_usage(x, k_used)?;
        let m = self.coupling(k_used);
        let mut out = Matrix::zeros(x.rows(), k_used);
        let mut centered = vec![0.0; self.dim()];
        for (i, r) in x.iter_rows().enumerate() {
            for ((c, v), mu) in centered.iter_mut().zip(r).zip(&self.x_mean) {
                *c = v - mu;
            }
            let a: Vec<f64> = (0..k_used)
                .map(|j| dot(&centered, &self.weights[j]))
                .collect();
            // t M = a, with M upper triangular: forward substitution on M^T
            let row = out.row_mut(i);
            for j in 0..k_used {
                let mut s = a[j];
                for l in 0..j {
                    s -= row[l] * m.get(l, j);
                }
                row[j] = s / m.get(j, j);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PlsModel serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::r_squared;

    #[test]
    fn perfect_one_dimensional_relation() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap();
        let y = [2.0, 4.0, 6.0, 8.0];
        let m = fit_pls(&x, &y, 1, PlsOptions::default()).unwrap();
        let pred = m.predict(&x, 1).unwrap();
        assert_eq!(r_squared(&y, &pred).unwrap(), 1.0);
        for (a, b) in pred.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn k_used_zero_is_rejected() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let m = fit_pls(&x, &[1.0, 2.0, 4.0], 1, PlsOptions::default()).unwrap();
        assert!(matches!(
            m.predict(&x, 0),
            Err(RegressError::DimensionMismatch(_))
        ));
        let wrong = Matrix::from_rows(&[[1.0, 2.0], [2.0, 3.0]]).unwrap();
        assert!(m.predict(&wrong, 1).is_err());
    }

    #[test]
    fn constant_target_is_degenerate() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 1.0], [3.0, 5.0]]).unwrap();
        assert_eq!(
            fit_pls(&x, &[3.0, 3.0, 3.0], 1, PlsOptions::default()),
            Err(RegressError::DegenerateTarget)
        );
    }

    #[test]
    fn rank_one_data_exhausts_after_one_component() {
        let x = Matrix::from_fn(6, 3, |i, j| (i as f64) * [1.0, -2.0, 0.5][j]);
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 3.0 + 1.0).collect();
        assert_eq!(
            fit_pls(&x, &y, 2, PlsOptions::default()),
            Err(RegressError::RankExhausted { achieved: 1 })
        );
    }

    #[test]
    fn sign_convention_makes_largest_weight_positive() {
        let x = Matrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - (j as f64));
        let y: Vec<f64> = (0..8).map(|i| -(i as f64)).collect();
        let m = fit_pls(&x, &y, 2, PlsOptions::default()).unwrap();
        for w in &m.weights {
            let big = w.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
            assert!((norm(w) - 1.0).abs() < 1e-9);
        }
        for &(lo, hi) in &m.train_score_range {
            assert!(lo <= hi);
        }
    }

    #[test]
    fn training_scores_match_deflation_scores() {
        let x = Matrix::from_fn(10, 4, |i, j| (((i + 1) * (j + 2)) as f64).sin());
        let y: Vec<f64> = (0..10).map(|i| (i as f64).cos()).collect();
        let m = fit_pls(&x, &y, 3, PlsOptions::default()).unwrap();
        let t = m.scores(&x, 3).unwrap();
        for c in 0..3 {
            let col = t.col(c);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((lo - m.train_score_range[c].0).abs() < 1e-10);
            assert!((hi - m.train_score_range[c].1).abs() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let x = Matrix::from_fn(9, 3, |i, j| (i as f64 * 0.1 + j as f64).exp().ln_1p());
        let y: Vec<f64> = (0..9).map(|i| (i as f64 / 3.0).sqrt()).collect();
        let m = fit_pls(&x, &y, 2, PlsOptions::default()).unwrap();
        let back = PlsModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in ["k", "x_mean", "y_mean", "W", "P", "C", "train_score_range"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
