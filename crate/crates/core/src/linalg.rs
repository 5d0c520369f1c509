use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorisation that refuses numerically singular matrices.
pub fn spd_factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let chol = Cholesky::new(m).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot * min_pivot > 1e-13 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    Ok(chol)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` couples rows `i+1` and `i`; `upper[i]` couples rows `i` and `i+1`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::Singular("tridiagonal pivot vanished".into()));
    }
    if n > 1 {
        c[0] = upper[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i - 1] * c[i - 1];
        if denom == 0.0 {
            return Err(Error::Singular("tridiagonal pivot vanished".into()));
        }
        if i + 1 < n {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [1.0, 0.5, 0.25];
        let diag = [4.0, 5.0, 6.0, 7.0];
        let upper = [0.3, 0.2, 0.1];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        let mut m = DMatrix::zeros(4, 4);
        for i in 0..4 {
            m[(i, i)] = diag[i];
        }
        for i in 0..3 {
            m[(i + 1, i)] = lower[i];
            m[(i, i + 1)] = upper[i];
        }
        let dense = m.lu().solve(&nalgebra::DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..4 {
            assert!((x[i] - dense[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_refused() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_factor(m, "test").is_err());
    }
}
