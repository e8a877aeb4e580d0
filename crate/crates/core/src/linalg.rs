//! Small dense-matrix kit.
//!
//! Everything in this crate works on matrices with at most a few dozen rows,
//! so the implementations favour robustness and zero dependencies over
//! asymptotic speed: cyclic Jacobi for symmetric eigenproblems and a
//! one-sided Jacobi (Hestenes) SVD for the minimum-norm least-squares solve.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
#[allow(unused_imports)]
use crate::fmath::FloatExt;

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(CoreError::DimensionMismatch {
                what: "ragged rows".into(),
            });
        }
        Ok(Mat {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(CoreError::DimensionMismatch {
                what: format!("mat {}x{} times vec {}", self.rows, self.cols, v.len()),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn mul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(CoreError::DimensionMismatch {
                what: format!(
                    "mat {}x{} times mat {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * out.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky factor `L` (lower triangular, `L L' = a`) of a symmetric
/// positive semidefinite matrix. Semidefinite pivots within `tol` of zero
/// produce a zero column; pivots below `-tol` are an error carrying the
/// most negative eigenvalue for diagnostics.
pub fn cholesky_psd(a: &Mat, what: &str) -> Result<Mat> {
    if a.rows != a.cols {
        return Err(CoreError::DimensionMismatch {
            what: format!("{what} must be square"),
        });
    }
    let n = a.rows;
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(1.0, f64::max);
    let tol = 1e-12 * scale;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d < -tol {
            let (eigs, _) = jacobi_eigh(a);
            let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(CoreError::NotPositiveSemidefinite {
                what: what.into(),
                min_eigenvalue: min_eig,
            });
        }
        let d = if d > tol { d.sqrt() } else { 0.0 };
        l.set(j, j, d);
        for i in (j + 1)..n {
            if d == 0.0 {
                l.set(i, j, 0.0);
                continue;
            }
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in columns.
pub fn jacobi_eigh(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frob(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigs = (0..n).map(|i| m.get(i, i)).collect();
    (eigs, v)
}

fn frob(m: &Mat) -> f64 {
    m.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Principal (symmetric) square root of a PSD matrix. Slightly negative
/// eigenvalues from roundoff are clipped to zero; genuinely negative ones
/// are an error.
pub fn sqrtm_psd(a: &Mat, what: &str) -> Result<Mat> {
    let (eigs, v) = jacobi_eigh(a);
    let scale = eigs.iter().fold(1.0_f64, |acc, e| acc.max(e.abs()));
    let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * scale {
        return Err(CoreError::NotPositiveSemidefinite {
            what: what.into(),
            min_eigenvalue: min_eig,
        });
    }
    let n = a.rows;
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                let lam = eigs[k].max(0.0).sqrt();
                s += v.get(i, k) * lam * v.get(j, k);
            }
            out.set(i, j, s);
        }
    }
    Ok(out)
}

/// Thin SVD `a = u * diag(s) * v'` by one-sided Jacobi orthogonalization of
/// the columns. `u` is `rows x cols`, `s` and `v` are `cols`-sized.
pub fn jacobi_svd(a: &Mat) -> (Mat, Vec<f64>, Mat) {
    let mut u = a.clone();
    let n = a.cols;
    let mut v = Mat::identity(n);
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..u.rows {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    app += up * up;
                    aqq += uq * uq;
                    apq += up * uq;
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() + 1e-300 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..u.rows {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sig = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..u.rows {
            s += u.get(i, j) * u.get(i, j);
        }
        let s = s.sqrt();
        sig[j] = s;
        if s > 0.0 {
            for i in 0..u.rows {
                let val = u.get(i, j) / s;
                u.set(i, j, val);
            }
        }
    }
    (u, sig, v)
}

/// Minimum-norm least-squares solution of `a x ~ rhs`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// Numerical rank at the relative tolerance used.
    pub rank: usize,
    /// True when the system had fewer independent equations than unknowns.
    pub rank_deficient: bool,
    /// `||a x - rhs||_2` at the solution.
    pub residual_norm: f64,
}

/// Solve `min ||a x - rhs||_2`, returning the minimum-norm `x` when the
/// system is rank deficient. Singular values below `rel_tol * s_max` are
/// treated as zero.
pub fn lstsq_min_norm(a: &Mat, rhs: &[f64], rel_tol: f64) -> Result<LstsqSolution> {
    if rhs.len() != a.rows {
        return Err(CoreError::DimensionMismatch {
            what: format!("lstsq: {} rows vs rhs {}", a.rows, rhs.len()),
        });
    }
    let n = a.cols;
    let (u, sig, v) = jacobi_svd(a);
    let smax = sig.iter().copied().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let mut x = vec![0.0; n];
    let mut rank = 0;
    for k in 0..n {
        if sig[k] <= cut || sig[k] == 0.0 {
            continue;
        }
        rank += 1;
        let mut utb = 0.0;
        for i in 0..a.rows {
            utb += u.get(i, k) * rhs[i];
        }
        let coef = utb / sig[k];
        for j in 0..n {
            x[j] += coef * v.get(j, k);
        }
    }
    let fit = a.mul_vec(&x)?;
    let residual_norm = norm2(
        &fit.iter()
            .zip(rhs)
            .map(|(f, b)| f - b)
            .collect::<Vec<f64>>(),
    );
    Ok(LstsqSolution {
        x,
        rank,
        rank_deficient: rank < n,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Mat::from_rows(&[
            vec![4.0, 2.0, 0.6],
            vec![2.0, 2.0, 0.5],
            vec![0.6, 0.5, 1.0],
        ])
        .unwrap();
        let l = cholesky_psd(&a, "a").unwrap();
        let back = l.mul(&l.transpose()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                approx(back.get(i, j), a.get(i, j), 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match cholesky_psd(&a, "corr") {
            Err(CoreError::NotPositiveSemidefinite { min_eigenvalue, .. }) => {
                approx(min_eigenvalue, -1.0, 1e-9);
            }
            other => panic!("expected NotPositiveSemidefinite, got {other:?}"),
        }
    }

    #[test]
    fn eigh_diagonalizes() {
        let a = Mat::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5],
            vec![0.0, 0.5, 1.0],
        ])
        .unwrap();
        let (eigs, v) = jacobi_eigh(&a);
        // A v_k = lambda_k v_k
        for k in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| v.get(i, k)).collect();
            let av = a.mul_vec(&col).unwrap();
            for i in 0..3 {
                approx(av[i], eigs[k] * col[i], 1e-10);
            }
        }
    }

    #[test]
    fn sqrtm_squares_back() {
        let a = Mat::from_rows(&[vec![0.04, 0.01], vec![0.01, 0.09]]).unwrap();
        let r = sqrtm_psd(&a, "sigma").unwrap();
        let back = r.mul(&r).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                approx(back.get(i, j), a.get(i, j), 1e-12);
            }
        }
    }

    #[test]
    fn lstsq_exact_on_full_rank() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let x_true = [0.7, -1.3];
        let rhs = a.mul_vec(&x_true).unwrap();
        let sol = lstsq_min_norm(&a, &rhs, 1e-12).unwrap();
        assert_eq!(sol.rank, 2);
        assert!(!sol.rank_deficient);
        approx(sol.x[0], x_true[0], 1e-12);
        approx(sol.x[1], x_true[1], 1e-12);
    }

    #[test]
    fn lstsq_min_norm_on_deficient() {
        // One equation, two unknowns: x0 + x1 = 2. Minimum-norm answer (1, 1).
        let a = Mat::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let sol = lstsq_min_norm(&a, &[2.0], 1e-12).unwrap();
        assert!(sol.rank_deficient);
        approx(sol.x[0], 1.0, 1e-12);
        approx(sol.x[1], 1.0, 1e-12);
    }
}
