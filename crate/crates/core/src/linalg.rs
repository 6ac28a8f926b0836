//! Dense linear algebra kernels: Householder QR and Cholesky.
//!
//! Matrices here are small (a handful of grouped columns, residual Grams of a
//! few hundred), so plain dense kernels are used throughout. Projections and
//! least-squares solves go through the QR factorization rather than explicit
//! normal-equation inverses.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{dim_mismatch, Error, Result};

/// Relative pivot threshold below which a factorization is treated as rank
/// deficient / not positive definite.
const RANK_TOL: f64 = 1e-10;

/// Householder QR of an n x k matrix with n >= k and full column rank.
///
/// Stores the reflectors and the k x k triangular factor; `Q` is never formed
/// densely. `A = Q1 R` with `Q1` the thin orthonormal factor.
#[derive(Debug, Clone)]
pub struct QrFactor {
    reflectors: Vec<Array1<f64>>,
    taus: Vec<f64>,
    r: Array2<f64>,
    n: usize,
    k: usize,
}

impl QrFactor {
    pub fn new(a: &ArrayView2<f64>) -> Result<Self> {
        let (n, k) = a.dim();
        if k == 0 || n < k {
            return Err(dim_mismatch(format!(
                "QR requires n >= k >= 1, got {n} x {k}"
            )));
        }
        let mut work = a.to_owned();
        let mut reflectors = Vec::with_capacity(k);
        let mut taus = Vec::with_capacity(k);
        let col_scale = (0..k)
            .map(|j| work.column(j).dot(&work.column(j)).sqrt())
            .fold(0.0_f64, f64::max);

        for j in 0..k {
            // Householder vector for column j below the diagonal.
            let mut v = Array1::zeros(n);
            let mut norm_sq = 0.0;
            for i in j..n {
                v[i] = work[[i, j]];
                norm_sq += v[i] * v[i];
            }
            let norm = norm_sq.sqrt();
            if norm <= RANK_TOL * col_scale.max(1e-300) {
                return Err(Error::RankDeficient {
                    what: "QR input matrix".to_string(),
                });
            }
            let alpha = if v[j] > 0.0 { -norm } else { norm };
            v[j] -= alpha;
            let v_dot = v.dot(&v);
            let tau = if v_dot > 0.0 { 2.0 / v_dot } else { 0.0 };

            // Apply H_j = I - tau v v^T to the remaining columns.
            for c in j..k {
                let mut proj = 0.0;
                for i in j..n {
                    proj += v[i] * work[[i, c]];
                }
                proj *= tau;
                for i in j..n {
                    work[[i, c]] -= proj * v[i];
                }
            }
            work[[j, j]] = alpha;
            reflectors.push(v);
            taus.push(tau);
        }

        let mut r = Array2::zeros((k, k));
        for i in 0..k {
            for j in i..k {
                r[[i, j]] = work[[i, j]];
            }
        }
        let max_diag = (0..k).map(|i| r[[i, i]].abs()).fold(0.0_f64, f64::max);
        if (0..k).any(|i| r[[i, i]].abs() <= RANK_TOL * max_diag) {
            return Err(Error::RankDeficient {
                what: "QR input matrix".to_string(),
            });
        }
        Ok(QrFactor {
            reflectors,
            taus,
            r,
            n,
            k,
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> &Array2<f64> {
        &self.r
    }

    /// Q^T v, full length n.
    fn apply_qt(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        let mut w = v.to_owned();
        for j in 0..self.k {
            let refl = &self.reflectors[j];
            let proj = self.taus[j] * refl.dot(&w);
            if proj != 0.0 {
                w.scaled_add(-proj, refl);
            }
        }
        w
    }

    /// Q w for a full-length vector w (reflectors applied in reverse).
    fn apply_q(&self, w: &ArrayView1<f64>) -> Array1<f64> {
        let mut v = w.to_owned();
        for j in (0..self.k).rev() {
            let refl = &self.reflectors[j];
            let proj = self.taus[j] * refl.dot(&v);
            if proj != 0.0 {
                v.scaled_add(-proj, refl);
            }
        }
        v
    }

    /// First k entries of Q^T v.
    pub fn q1t_mul(&self, v: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.n {
            return Err(dim_mismatch(format!(
                "q1t_mul expects length {}, got {}",
                self.n,
                v.len()
            )));
        }
        let w = self.apply_qt(v);
        Ok(w.slice(ndarray::s![..self.k]).to_owned())
    }

    /// Q1 c = Q [c; 0] for c of length k.
    pub fn q1_mul(&self, c: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if c.len() != self.k {
            return Err(dim_mismatch(format!(
                "q1_mul expects length {}, got {}",
                self.k,
                c.len()
            )));
        }
        let mut padded = Array1::zeros(self.n);
        padded.slice_mut(ndarray::s![..self.k]).assign(c);
        Ok(self.apply_q(&padded.view()))
    }

    /// Back substitution for R x = b.
    pub fn solve_r(&self, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if b.len() != self.k {
            return Err(dim_mismatch(format!(
                "solve_r expects length {}, got {}",
                self.k,
                b.len()
            )));
        }
        let mut x = b.to_owned();
        for i in (0..self.k).rev() {
            for j in i + 1..self.k {
                let xj = x[j];
                x[i] -= self.r[[i, j]] * xj;
            }
            x[i] /= self.r[[i, i]];
        }
        Ok(x)
    }

    /// Forward substitution for R^T x = b.
    pub fn solve_rt(&self, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if b.len() != self.k {
            return Err(dim_mismatch(format!(
                "solve_rt expects length {}, got {}",
                self.k,
                b.len()
            )));
        }
        let mut x = b.to_owned();
        for i in 0..self.k {
            for j in 0..i {
                let xj = x[j];
                x[i] -= self.r[[j, i]] * xj;
            }
            x[i] /= self.r[[i, i]];
        }
        Ok(x)
    }

    /// Least-squares coefficients argmin_c ||y - A c||_2 = R^{-1} Q1^T y.
    pub fn least_squares(&self, y: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let c = self.q1t_mul(y)?;
        self.solve_r(&c.view())
    }

    /// Solve (A^T A) x = w through the triangular factor: R^T R x = w.
    pub fn solve_gram(&self, w: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let y = self.solve_rt(w)?;
        self.solve_r(&y.view())
    }

    /// (A^T A)^{-1} = R^{-1} R^{-T}, formed column by column.
    pub fn gram_inverse(&self) -> Array2<f64> {
        let k = self.k;
        let mut inv = Array2::zeros((k, k));
        for j in 0..k {
            let mut e = Array1::zeros(k);
            e[j] = 1.0;
            let col = self
                .solve_gram(&e.view())
                .expect("gram solve on validated factor");
            inv.column_mut(j).assign(&col);
        }
        // Symmetrize to kill round-off asymmetry.
        for i in 0..k {
            for j in i + 1..k {
                let s = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = s;
                inv[[j, i]] = s;
            }
        }
        inv
    }
}

/// Cholesky factorization A = L L^T of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
    k: usize,
}

impl Cholesky {
    pub fn new(a: &ArrayView2<f64>) -> Result<Self> {
        let (k, k2) = a.dim();
        if k != k2 || k == 0 {
            return Err(dim_mismatch(format!(
                "Cholesky expects a square matrix, got {k} x {k2}"
            )));
        }
        let max_diag = (0..k).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
        let mut l = Array2::zeros((k, k));
        for j in 0..k {
            let mut d = a[[j, j]];
            for t in 0..j {
                d -= l[[j, t]] * l[[j, t]];
            }
            if d <= RANK_TOL * RANK_TOL * max_diag.max(1e-300) {
                return Err(Error::NotPositiveDefinite {
                    what: "Cholesky input matrix".to_string(),
                });
            }
            let dj = d.sqrt();
            l[[j, j]] = dj;
            for i in j + 1..k {
                let mut s = a[[i, j]];
                for t in 0..j {
                    s -= l[[i, t]] * l[[j, t]];
                }
                l[[i, j]] = s / dj;
            }
        }
        Ok(Cholesky { l, k })
    }

    pub fn solve_vec(&self, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if b.len() != self.k {
            return Err(dim_mismatch(format!(
                "Cholesky solve expects length {}, got {}",
                self.k,
                b.len()
            )));
        }
        let mut x = b.to_owned();
        for i in 0..self.k {
            for t in 0..i {
                let xt = x[t];
                x[i] -= self.l[[i, t]] * xt;
            }
            x[i] /= self.l[[i, i]];
        }
        for i in (0..self.k).rev() {
            for t in i + 1..self.k {
                let xt = x[t];
                x[i] -= self.l[[t, i]] * xt;
            }
            x[i] /= self.l[[i, i]];
        }
        Ok(x)
    }

    pub fn solve_mat(&self, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.k {
            return Err(dim_mismatch(format!(
                "Cholesky solve expects {} rows, got {}",
                self.k,
                b.nrows()
            )));
        }
        let mut out = Array2::zeros(b.dim());
        for j in 0..b.ncols() {
            let col = self.solve_vec(&b.column(j))?;
            out.column_mut(j).assign(&col);
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Array2<f64> {
        let eye = Array2::eye(self.k);
        let mut inv = self
            .solve_mat(&eye.view())
            .expect("inverse of validated factor");
        for i in 0..self.k {
            for j in i + 1..self.k {
                let s = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = s;
                inv[[j, i]] = s;
            }
        }
        inv
    }
}

/// Operator infinity norm: max absolute row sum.
pub fn operator_inf_norm(a: &ArrayView2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

pub fn l1_norm(v: &ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn linf_norm(v: &ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn qr_reproduces_matrix() {
        let a = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.25], [-2.0, 1.5],];
        let qr = QrFactor::new(&a.view()).unwrap();
        // A e_j should equal Q1 (R e_j).
        for j in 0..2 {
            let r_col = qr.r().column(j).to_owned();
            let rebuilt = qr.q1_mul(&r_col.view()).unwrap();
            for i in 0..4 {
                assert!((rebuilt[i] - a[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qr_least_squares_matches_normal_equations() {
        let a = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0],];
        let y = array![1.0, 2.0, 2.0, 4.0];
        let beta = qr_ls(&a, &y);
        // Hand-solved normal equations: slope 0.9, intercept 0.9.
        assert!((beta[0] - 0.9).abs() < 1e-12);
        assert!((beta[1] - 0.9).abs() < 1e-12);
    }

    fn qr_ls(a: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
        QrFactor::new(&a.view())
            .unwrap()
            .least_squares(&y.view())
            .unwrap()
    }

    #[test]
    fn qr_rejects_rank_deficient() {
        let a = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        assert!(matches!(
            QrFactor::new(&a.view()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn cholesky_solve_and_inverse() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let ch = Cholesky::new(&a.view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = ch.solve_vec(&b.view()).unwrap();
        let back = a.dot(&x);
        for i in 0..3 {
            assert!((back[i] - b[i]).abs() < 1e-12);
        }
        let inv = ch.inverse();
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            Cholesky::new(&a.view()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn norms() {
        let a = array![[1.0, -2.0], [0.5, 0.25]];
        assert_eq!(operator_inf_norm(&a.view()), 3.0);
        assert_eq!(max_abs(&a.view()), 2.0);
        let v = array![1.0, -3.0, 2.0];
        assert_eq!(l1_norm(&v.view()), 6.0);
        assert_eq!(linf_norm(&v.view()), 3.0);
    }
}
