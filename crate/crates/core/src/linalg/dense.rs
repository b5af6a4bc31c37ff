//! Dense Hermitian helpers on top of faer.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};
use crate::C64;

/// `(A + A*) / 2`.
pub fn hermitian_part(a: MatRef<'_, C64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Largest `|A_ij - conj(A_ji)|` relative to the largest entry.
pub fn hermitian_defect(a: MatRef<'_, C64>) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            num = num.max((a[(i, j)] - a[(j, i)].conj()).norm());
            den = den.max(a[(i, j)].norm());
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Ascending eigenvalues and orthonormal eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let h = hermitian_part(a);
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NotConverged(format!("hermitian eigensolve: {e:?}")))?;
    let s = evd.S().column_vector();
    let mut idx: Vec<usize> = (0..h.nrows()).collect();
    idx.sort_by(|&i, &j| s[i].re.total_cmp(&s[j].re));
    let vals = idx.iter().map(|&i| s[i].re).collect();
    let u = evd.U();
    let vecs = Mat::from_fn(h.nrows(), h.nrows(), |r, c| u[(r, idx[c])]);
    Ok((vals, vecs))
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(a: MatRef<'_, C64>) -> Result<Vec<f64>> {
    let h = hermitian_part(a);
    let mut v: Vec<f64> = h
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::NotConverged(format!("hermitian eigenvalues: {e:?}")))?
        .into_iter()
        .collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(b: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let h = hermitian_part(b);
    let llt = h
        .llt(Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("matrix not positive definite: {e:?}")))?;
    Ok(llt.L().to_owned())
}

/// Solve `B X = R` given the lower Cholesky factor of `B`.
pub fn cholesky_solve(l: MatRef<'_, C64>, rhs: MatRef<'_, C64>) -> Mat<C64> {
    let mut x = rhs.to_owned();
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    solve_upper_triangular_in_place(l.adjoint(), x.as_mut(), Par::Seq);
    x
}

/// Generalized Hermitian-definite eigenproblem `A v = w B v`.
///
/// Eigenvalues ascend; eigenvectors are `B`-orthonormal (`V* B V = I`).
pub fn pencil_eigen(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let l = cholesky(b)?;
    let c = reduce(a, l.as_ref());
    let (vals, u) = hermitian_eigen(c.as_ref())?;
    let mut v = u;
    solve_upper_triangular_in_place(l.adjoint(), v.as_mut(), Par::Seq);
    Ok((vals, v))
}

/// Eigenvalues of `A v = w B v` only.
pub fn pencil_eigenvalues(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Result<Vec<f64>> {
    let l = cholesky(b)?;
    let c = reduce(a, l.as_ref());
    hermitian_eigenvalues(c.as_ref())
}

/// `L^{-1} A L^{-*}`, symmetrized.
fn reduce(a: MatRef<'_, C64>, l: MatRef<'_, C64>) -> Mat<C64> {
    let mut c = hermitian_part(a);
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let mut ct = c.adjoint().to_owned();
    solve_lower_triangular_in_place(l, ct.as_mut(), Par::Seq);
    hermitian_part(ct.as_ref())
}

/// `x* y`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn col_to_vec(m: MatRef<'_, C64>, j: usize) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn vec_to_col(x: &[C64]) -> Mat<C64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

/// Matrix product `a * b`.
pub fn matmul(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Mat<C64> {
    a * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pencil_vectors_are_b_orthonormal() {
        let n = 6;
        let a = Mat::from_fn(n, n, |i, j| {
            let x = (i as f64 - j as f64).abs();
            C64::new(1.0 / (1.0 + x), if i < j { 0.1 } else if i > j { -0.1 } else { 0.0 })
        });
        let b = Mat::from_fn(n, n, |i, j| C64::new(if i == j { 2.0 + i as f64 } else { 0.1 }, 0.0));
        let (w, v) = pencil_eigen(a.as_ref(), b.as_ref()).unwrap();
        let g = v.adjoint() * &b * &v;
        let r = &a * &v - &b * &v * Mat::from_fn(n, n, |i, j| if i == j { C64::new(w[i], 0.0) } else { C64::new(0.0, 0.0) });
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - C64::new(e, 0.0)).norm() < 1e-12);
                assert!(r[(i, j)].norm() < 1e-12);
            }
        }
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn cholesky_solve_inverts() {
        let b = Mat::from_fn(4, 4, |i, j| C64::new(if i == j { 4.0 } else { 1.0 }, 0.0));
        let l = cholesky(b.as_ref()).unwrap();
        let x = cholesky_solve(l.as_ref(), Mat::<C64>::identity(4, 4).as_ref());
        let p = &b * &x;
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - C64::new(e, 0.0)).norm() < 1e-13);
            }
        }
    }
}
