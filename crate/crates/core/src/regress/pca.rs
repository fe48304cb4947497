//! Principal component analysis by power iteration with deflation, plus the
//! PCA-regression baseline (least squares on the leading component scores).

use super::matrix::{axpy, cholesky_solve, dot, norm, Matrix};
use super::{check_data, check_target, mean, RegressError};

const POWER_TOL: f64 = 1e-13;
const POWER_MAX_ITER: usize = 10_000;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Orthonormal principal directions, component-major.
    pub components: Vec<Vec<f64>>,
    pub x_mean: Vec<f64>,
    /// Sample variance (divisor `n - 1`) along each component.
    pub explained_variance: Vec<f64>,
}

pub fn fit_pca(x: &Matrix, k: usize) -> Result<PcaModel, RegressError> {
    check_data(x)?;
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > (n - 1).min(d) {
        return Err(RegressError::DimensionMismatch(format!(
            "k = {k} outside 1..={}",
            (n - 1).min(d)
        )));
    }
    let x_mean = x.column_means();
    let xc = x.sub_row_vector(&x_mean);
    let mut cov = Matrix::zeros(d, d);
    for r in xc.iter_rows() {
        for i in 0..d {
            let ri = r[i];
            let row = cov.row_mut(i);
            for j in 0..d {
                row[j] += ri * r[j];
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let mut cov = Matrix::from_fn(d, d, |i, j| cov.get(i, j) * scale);
    let total: f64 = (0..d).map(|i| cov.get(i, i)).sum();

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for comp in 0..k {
        let (v, lambda) = power_iteration(&cov, &components, comp);
        if !(lambda > RANK_TOL * total) {
            return Err(RegressError::RankExhausted { achieved: comp });
        }
        // deflate: cov <- cov - lambda v v^T
        for i in 0..d {
            let vi = v[i];
            let row = cov.row_mut(i);
            axpy(-lambda * vi, &v, row);
        }
        components.push(v);
        explained.push(lambda);
    }
    // power iteration can return near-equal eigenvalues slightly out of order
    for i in 1..explained.len() {
        if explained[i] > explained[i - 1] {
            explained[i] = explained[i - 1];
        }
    }
    Ok(PcaModel {
        components,
        x_mean,
        explained_variance: explained,
    })
}

fn power_iteration(cov: &Matrix, previous: &[Vec<f64>], seed: usize) -> (Vec<f64>, f64) {
    let d = cov.rows();
    // deterministic start, not aligned with any axis
    let mut v: Vec<f64> = (0..d)
        .map(|i| 1.0 + ((i + 1) as f64 * (seed + 1) as f64 * 0.618_033_988_75).fract())
        .collect();
    orthogonalize(&mut v, previous);
    let n0 = norm(&v);
    if n0 == 0.0 {
        return (v, 0.0);
    }
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..POWER_MAX_ITER {
        let mut next = cov.mat_vec(&v);
        orthogonalize(&mut next, previous);
        let nn = norm(&next);
        if nn == 0.0 {
            return (v, 0.0);
        }
        next.iter_mut().for_each(|x| *x /= nn);
        let delta = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    let lambda = dot(&v, &cov.mat_vec(&v)).max(0.0);
    if largest_negative(&v) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (v, lambda)
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        axpy(-p, b, v);
    }
}

fn largest_negative(v: &[f64]) -> bool {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best < 0.0
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Scores on the first `k_used` components.
    pub fn transform(&self, x: &Matrix, k_used: usize) -> Result<Matrix, RegressError> {
        if x.cols() != self.x_mean.len() || k_used == 0 || k_used > self.k() {
            return Err(RegressError::DimensionMismatch(format!(
                "transform of {} columns with k_used = {k_used}",
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), k_used);
        let mut c = vec![0.0; self.x_mean.len()];
        for (i, r) in x.iter_rows().enumerate() {
            for ((ci, v), m) in c.iter_mut().zip(r).zip(&self.x_mean) {
                *ci = v - m;
            }
            for j in 0..k_used {
                out.set(i, j, dot(&c, &self.components[j]));
            }
        }
        Ok(out)
    }
}

/// Least-squares regression of `y` on the leading `k_used` PCA scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaRegression {
    pub k_used: usize,
    pub coef: Vec<f64>,
    pub y_mean: f64,
}

pub fn pca_regression(
    pca: &PcaModel,
    x: &Matrix,
    y: &[f64],
    k_used: usize,
) -> Result<PcaRegression, RegressError> {
    check_target(x, y)?;
    let t = pca.transform(x, k_used)?;
    let y_mean = mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    // scores are centered on the fitting data, so the Gram matrix is
    // diagonal up to round-off
    let gram = Matrix::from_fn(k_used, k_used, |i, j| {
        t.iter_rows().map(|r| r[i] * r[j]).sum()
    });
    let rhs = t.tmat_vec(&yc);
    let coef = cholesky_solve(&gram, &rhs, 1e-14).ok_or(RegressError::SingularSystem)?;
    Ok(PcaRegression {
        k_used,
        coef,
        y_mean,
    })
}

impl PcaRegression {
    pub fn predict(&self, pca: &PcaModel, x: &Matrix) -> Result<Vec<f64>, RegressError> {
        let t = pca.transform(x, self.k_used)?;
        Ok(t.iter_rows().map(|r| self.y_mean + dot(r, &self.coef)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_nonzero_column_gives_axis_direction() {
        let x = Matrix::from_fn(7, 4, |i, j| if j == 2 { (i * i) as f64 } else { 0.0 });
        let p = fit_pca(&x, 1).unwrap();
        let c = &p.components[0];
        assert!((c[2].abs() - 1.0).abs() < 1e-12);
        for j in [0, 1, 3] {
            assert!(c[j].abs() < 1e-12);
        }
        // rank one: a second component is unavailable
        assert_eq!(fit_pca(&x, 2), Err(RegressError::RankExhausted { achieved: 1 }));
    }

    #[test]
    fn components_orthonormal_and_variance_sorted() {
        let x = Matrix::from_fn(30, 5, |i, j| {
            let h = (i as u64 * 2654435761 + j as u64 * 40503 + 17) % 1009;
            h as f64 / 1009.0 * (j + 1) as f64
        });
        let p = fit_pca(&x, 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot(&p.components[a], &p.components[b]) - expect).abs() < 1e-8);
            }
        }
        for w in p.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }
}
