use super::matrix::{dot, Matrix};
use crate::error::{dim_mismatch, Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(dim_mismatch("cholesky", "square", format!("{:?}", a.shape())));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = &l.row(j)[..j];
            let pivot = a[(j, j)] - dot(lj, lj);
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    value: pivot,
                });
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `A·x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        // L y = b
        for i in 0..n {
            let s = b[i] - dot(&self.l.row(i)[..i], &b[..i]);
            b[i] = s / self.l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }
}

/// Computes `X = B·A⁻¹` for symmetric positive definite `A` without forming the inverse.
///
/// Since `A` is symmetric, each row `x` of `X` solves `A·xᵀ = bᵀ`.
pub fn spd_solve_right(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(dim_mismatch(
            "spd_solve_right",
            "square A",
            format!("{:?}", a.shape()),
        ));
    }
    if b.cols() != a.rows() {
        return Err(dim_mismatch("spd_solve_right", a.rows(), b.cols()));
    }
    let chol = Cholesky::factor(a)?;
    let mut x = b.clone();
    for i in 0..x.rows() {
        chol.solve_in_place(x.row_mut(i));
    }
    Ok(x)
}
