//! One-sided (Hestenes) Jacobi SVD and the spectral quantities built on it.

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Sweep cap for the Jacobi iterations.
pub const MAX_SWEEPS: usize = 100;
/// A sweep whose largest normalized column correlation is below this value
/// ends the iteration.
pub const CONVERGENCE_TOL: f64 = 1e-12;
/// Default relative threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

// Pairs whose normalized correlation is already at rounding level are left alone.
const ROTATE_TOL: f64 = 1e-15;

/// Thin SVD `A = U · diag(σ) · Vᵀ` with `p = min(rows, cols)` triplets.
#[derive(Debug, Clone)]
pub struct Svd {
    /// rows × p, orthonormal columns.
    pub left_vectors: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// cols × p, orthonormal columns.
    pub right_vectors: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.left_vectors.clone();
        for r in 0..us.rows() {
            for (c, s) in self.singular_values.iter().enumerate() {
                let v = us.get(r, c) * s;
                us.set(r, c, v);
            }
        }
        us.matmul(&self.right_vectors.transpose())
            .expect("svd factors have consistent shapes")
    }
}

/// Computes the thin SVD. Signs are fixed so that the largest-magnitude entry
/// of every left singular vector is positive (first such entry on ties).
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("svd input has non-finite entries".into()));
    }
    let (mut u, sigma, mut v) = if a.rows() >= a.cols() {
        jacobi_tall(a)?
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose())?;
        (v, s, u)
    };
    for j in 0..sigma.len() {
        let col = &u[j];
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            u[j].iter_mut().for_each(|x| *x = -*x);
            v[j].iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(Svd {
        left_vectors: from_columns(&u, a.rows()),
        singular_values: sigma,
        right_vectors: from_columns(&v, a.cols()),
    })
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |r, c| cols[c][r])
}

type Factors = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// Jacobi on a matrix with rows ≥ cols. Returns column lists for U and V.
fn jacobi_tall(a: &Matrix) -> Result<Factors> {
    let (m, n) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0_f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&w[p], &w[q]);
                let ratio = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                off = off.max(ratio);
                if ratio <= ROTATE_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = off < CONVERGENCE_TOL;
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "jacobi svd did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let cutoff = sigma_max * f64::EPSILON * m as f64;

    let mut u: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (rank, &i) in order.iter().enumerate() {
        let candidate = if sigma[rank] > cutoff {
            let mut col: Vec<f64> = w[i].iter().map(|x| x / sigma[rank]).collect();
            if orthogonalize_against(&mut col, &u) > 0.5 {
                Some(col)
            } else {
                None
            }
        } else {
            None
        };
        match candidate {
            Some(col) => u.push(col),
            None => u.push(complete_basis(&u, m)),
        }
    }
    let v_sorted = order.iter().map(|&i| v[i].clone()).collect();
    Ok((u, sigma, v_sorted))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Two passes of modified Gram-Schmidt against `basis`, then normalization.
/// Returns the norm left after projection (relative to the input norm).
fn orthogonalize_against(col: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    let start = norm(col);
    if start == 0.0 {
        return 0.0;
    }
    for _ in 0..2 {
        for b in basis {
            let proj = dot(col, b);
            for (x, y) in col.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
    }
    let left = norm(col);
    if left > 0.0 {
        col.iter_mut().for_each(|x| *x /= left);
    }
    left / start
}

/// A unit vector orthogonal to every column of `basis`: the standard basis
/// vector with the largest residual after projection (lowest index on ties).
/// With r < m orthonormal columns some residual is at least √((m−r)/m).
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        let left = orthogonalize_against(&mut e, basis);
        if best.as_ref().map_or(true, |(b, _)| left > *b) {
            best = Some((left, e));
        }
    }
    let (left, e) = best.expect("m >= 1");
    assert!(left > 1e-8, "fewer than m orthonormal vectors always leave room");
    e
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.singular_values.iter().sum())
}

/// `U₁V₁ᵀ` over the singular triplets with `σ > tol`: an element of the
/// subdifferential of the nuclear norm at `a`.
pub fn nuclear_norm_subgradient(a: &Matrix, tol: f64) -> Result<Matrix> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("subgradient tolerance must be positive, got {tol}")));
    }
    let dec = svd(a)?;
    Ok(subgradient_from(&dec, tol))
}

pub(crate) fn subgradient_from(dec: &Svd, tol: f64) -> Matrix {
    let u = &dec.left_vectors;
    let v = &dec.right_vectors;
    let mut g = Matrix::zeros(u.rows(), v.rows());
    for (k, s) in dec.singular_values.iter().enumerate() {
        if *s <= tol {
            break;
        }
        for r in 0..u.rows() {
            let ur = u.get(r, k);
            if ur == 0.0 {
                continue;
            }
            for c in 0..v.rows() {
                let val = g.get(r, c) + ur * v.get(c, k);
                g.set(r, c, val);
            }
        }
    }
    g
}

/// Number of singular values above `tol · σ_max`; zero for the zero matrix.
pub fn effective_rank(a: &Matrix, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("rank tolerance must be positive, got {tol}")));
    }
    let sigma = svd(a)?.singular_values;
    let max = sigma.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sigma.iter().filter(|s| **s > tol * max).count())
}

/// Eigenvalues of a symmetric matrix (upper triangle is read), ascending.
/// Cyclic two-sided Jacobi.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "symmetric eigenvalues (square matrix)",
            expected: n,
            found: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("eigenvalue input has non-finite entries".into()));
    }
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if j >= i { a.get(i, j) } else { a.get(j, i) }).collect())
        .collect();
    let scale = a.frobenius_norm();
    let mut converged = scale == 0.0 || n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p][q] * m[p][q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k][p];
                    let akq = m[k][q];
                    m[k][p] = c * akp - s * akq;
                    m[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p][k];
                    let aqk = m[q][k];
                    m[p][k] = c * apk - s * aqk;
                    m[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "jacobi eigenvalue iteration did not converge within {MAX_SWEEPS} sweeps"
        )));
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Orthonormal basis for the column span of a full-column-rank matrix
/// (modified Gram-Schmidt with reorthogonalization).
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(a.cols());
    for c in 0..a.cols() {
        let mut col = a.column(c);
        if orthogonalize_against(&mut col, &basis) < 1e-10 {
            return Err(Error::NumericalFailure(format!(
                "column {c} is linearly dependent on the preceding columns"
            )));
        }
        basis.push(col);
    }
    Ok(from_columns(&basis, a.rows()))
}
