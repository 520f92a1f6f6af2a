//! Dense symmetric-definite generalized eigenproblem `A x = lambda S x`.
//!
//! `S = L L^T` is factored, the standard problem for `L^{-1} A L^{-T}` is
//! diagonalized by cyclic Jacobi rotations and the eigenvectors are mapped
//! back with `L^{-T}`, which makes them `S`-orthonormal.

use super::dense::DenseMatrix;
use super::solve::Cholesky;
use crate::error::{Error, Result};

/// Relative asymmetry tolerated in the input matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order and matching `S`-orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }
}

fn check_symmetric(name: &str, m: &DenseMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "{name} is {}x{}, expected square",
            m.rows(),
            m.cols()
        )));
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!(
            "{name} is not symmetric (max |m_ij - m_ji| = {asym:e})"
        )));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns unsorted eigenvalues and the orthogonal matrix of eigenvectors.
pub fn symmetric_jacobi(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = m.rows();
    let mut a = m.clone();
    a.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    let abs_floor = 1e-22 * scale;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= abs_floor
                    || apq.abs() <= 0.5 * f64::EPSILON * (a[(p, p)] * a[(q, q)]).abs().sqrt()
                {
                    if apq != 0.0 {
                        a[(p, q)] = 0.0;
                        a[(q, p)] = 0.0;
                    }
                    continue;
                }
                rotated = true;
                let theta = 0.5 * (a[(q, q)] - a[(p, p)]) / apq;
                let mut t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
                if theta < 0.0 {
                    t = -t;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let g = a[(k, p)];
                    let h = a[(k, q)];
                    let new_kp = g - s * (h + g * tau);
                    let new_kq = h + s * (g - h * tau);
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq;
                }
                for k in 0..n {
                    let g = v[(k, p)];
                    let h = v[(k, q)];
                    v[(k, p)] = g - s * (h + g * tau);
                    v[(k, q)] = h + s * (g - h * tau);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// All eigenpairs of `A x = lambda S x` with `A` symmetric and `S` SPD.
pub fn generalized_eig(a: &DenseMatrix, s: &DenseMatrix) -> Result<EigenPairs> {
    check_symmetric("A", a)?;
    check_symmetric("S", s)?;
    if a.rows() != s.rows() {
        return Err(Error::invalid(format!(
            "A is {}x{} but S is {}x{}",
            a.rows(),
            a.cols(),
            s.rows(),
            s.cols()
        )));
    }
    let n = a.rows();
    let mut s_sym = s.clone();
    s_sym.symmetrize();
    let chol = Cholesky::factor_dense(&s_sym).map_err(|e| {
        Error::invalid(format!("S is not positive definite ({e})"))
    })?;

    // C = L^{-1} A L^{-T} = L^{-1} (L^{-1} A)^T
    let x = chol.forward_dense(a);
    let mut c = chol.forward_dense(&x.transpose());
    c.symmetrize();

    let (values, q) = symmetric_jacobi(&c);
    let vectors = chol.backward_dense(&q);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut sorted = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        sorted.set_column(dst, &vectors.column(src));
    }
    Ok(EigenPairs {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: sorted,
    })
}
