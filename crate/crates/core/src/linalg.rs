//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition threshold above which a normal matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Jacobi (diagonal) scaling factors `1/sqrt(diag)`; zero diagonals map to 1.
fn jacobi_scale(sym: &DMatrix<f64>) -> DVector<f64> {
    sym.diagonal().map(|d| if d > 0.0 && d.is_finite() { 1.0 / d.sqrt() } else { 1.0 })
}

/// Condition number of a symmetric matrix after diagonal equilibration, so
/// that mixed physical units do not inflate it.
pub fn scaled_condition(sym: &DMatrix<f64>) -> f64 {
    if sym.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let s = jacobi_scale(sym);
    let scaled = DMatrix::from_fn(sym.nrows(), sym.ncols(), |i, j| sym[(i, j)] * s[i] * s[j]);
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves the symmetric positive definite system `n·x = rhs` through an
/// equilibrated Cholesky factorization. Returns the solution and the
/// scaled condition number of `n`.
pub fn solve_spd(n: &DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<(DVector<f64>, f64)> {
    let cond = scaled_condition(n);
    if !(cond <= COND_LIMIT) {
        return Err(Error::Singular { what, cond });
    }
    let s = jacobi_scale(n);
    let scaled = DMatrix::from_fn(n.nrows(), n.ncols(), |i, j| n[(i, j)] * s[i] * s[j]);
    let chol = scaled.cholesky().ok_or(Error::Singular { what, cond })?;
    let y = chol.solve(&rhs.component_mul(&s));
    Ok((y.component_mul(&s), cond))
}

/// Whitens `(g, h)` against covariance `cov = L·Lᵀ`: returns `(L⁻¹g, L⁻¹h)`.
pub fn whiten(cov: &DMatrix<f64>, g: &DMatrix<f64>, h: &DVector<f64>, what: &'static str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let chol = cov.clone().cholesky().ok_or_else(|| Error::Singular { what, cond: scaled_condition(cov) })?;
    let l = chol.l();
    let a = l.solve_lower_triangular(g).ok_or(Error::Singular { what, cond: f64::INFINITY })?;
    let y = l.solve_lower_triangular(h).ok_or(Error::Singular { what, cond: f64::INFINITY })?;
    Ok((a, y))
}

/// Minimum-norm least-squares solution of `a·x ≈ y` through an SVD of the
/// column-equilibrated matrix. Used where part of the state is unobservable.
pub fn min_norm_lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let s = DVector::from_iterator(norms.len(), norms.iter().map(|&n| if n > 0.0 { 1.0 / n } else { 1.0 }));
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= s[j];
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let z = svd
        .solve(y, smax * 1e-10)
        .map_err(|e| Error::Singular { what: "minimum-norm solve", cond: if e.is_empty() { f64::INFINITY } else { f64::NAN } })?;
    Ok(z.component_mul(&s))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_ignores_units() {
        let n = DMatrix::from_diagonal(&DVector::from_vec(vec![1e12, 1.0, 1e-6]));
        assert!((scaled_condition(&n) - 1.0).abs() < 1e-12);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(scaled_condition(&sing) > 1e14);
    }

    #[test]
    fn spd_solve_and_singular_error() {
        let n = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (x, _) = solve_spd(&n, &DVector::from_vec(vec![1.0, 2.0]), "test").unwrap();
        assert!((&n * &x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-14);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(solve_spd(&sing, &DVector::zeros(2), "test"), Err(Error::Singular { .. })));
    }

    #[test]
    fn min_norm_on_rank_deficient() {
        // x0 + x1 = 2 has minimum-norm solution [1, 1]
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = min_norm_lstsq(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let vals = vec![1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(vals), 2.0);
    }
}
