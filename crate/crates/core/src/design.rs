//! Design-matrix algebra for a column group G that is kept unpenalized.
//!
//! A [`PartitionedDesign`] owns the column-normalized design, the split into
//! the grouped block `X_G` and the remaining block, and a QR factorization of
//! `X_G` that backs all projections and grouped least-squares solves. The
//! regression-coefficient matrix of the remaining columns on `X_G` (the theta
//! matrix) is computed lazily and cached.

use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::linalg::{Cholesky, QrFactor};

/// Structural tolerance for exact linear-algebra identities.
pub const STRUCT_TOL: f64 = 1e-10;

/// Rescale every column to Euclidean norm sqrt(n).
///
/// Column directions are preserved; a zero column is rejected with its index.
pub fn normalize_columns(x_raw: &ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(normalize_columns_with_scales(x_raw)?.0)
}

/// As [`normalize_columns`], also returning the per-column factors c_j with
/// `X_norm[:, j] = c_j * X_raw[:, j]`.
pub fn normalize_columns_with_scales(
    x_raw: &ArrayView2<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (n, p) = x_raw.dim();
    if n == 0 || p == 0 {
        return Err(dim_mismatch(format!("empty design matrix {n} x {p}")));
    }
    let target = (n as f64).sqrt();
    let mut x = x_raw.to_owned();
    let mut scale = Array1::zeros(p);
    for j in 0..p {
        let norm = x.column(j).dot(&x.column(j)).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroColumn(j));
        }
        let c = target / norm;
        scale[j] = c;
        x.column_mut(j).mapv_inplace(|v| v * c);
    }
    Ok((x, scale))
}

/// A normalized design matrix partitioned into an unpenalized group G and the
/// remaining columns, with cached factorizations.
///
/// Immutable after construction; safe to share across threads. The theta
/// matrix is computed at most once behind a [`OnceLock`].
#[derive(Debug, Clone)]
pub struct PartitionedDesign {
    n: usize,
    p: usize,
    g: Vec<usize>,
    minus_g: Vec<usize>,
    x: Array2<f64>,
    scale: Array1<f64>,
    x_g: Array2<f64>,
    x_mg: Array2<f64>,
    qr_g: QrFactor,
    gram_g: Array2<f64>,
    theta: OnceLock<Array2<f64>>,
}

impl PartitionedDesign {
    /// Build from a raw design matrix and strictly increasing group indices
    /// (0-based). Columns are normalized to length sqrt(n) here.
    pub fn new(x_raw: Array2<f64>, g: &[usize]) -> Result<Self> {
        let (n, p) = x_raw.dim();
        if g.is_empty() {
            return Err(invalid("g", "group index set must be nonempty"));
        }
        if g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("g", "group indices must be strictly increasing"));
        }
        if *g.last().unwrap() >= p {
            return Err(invalid(
                "g",
                format!("group index {} out of range for p = {p}", g.last().unwrap()),
            ));
        }
        if g.len() > n {
            return Err(invalid(
                "g",
                format!(
                    "|G| = {} exceeds n = {n}; the grouped Gram cannot be positive definite",
                    g.len()
                ),
            ));
        }
        if g.len() == p {
            return Err(invalid(
                "g",
                "group covers every column; nothing to penalize",
            ));
        }

        let (x, scale) = normalize_columns_with_scales(&x_raw.view())?;
        let minus_g: Vec<usize> = (0..p).filter(|j| !g.contains(j)).collect();
        let x_g = gather_columns(&x.view(), g);
        let x_mg = gather_columns(&x.view(), &minus_g);

        let qr_g = QrFactor::new(&x_g.view()).map_err(|e| match e {
            Error::RankDeficient { .. } => Error::RankDeficient {
                what: "grouped block X_G (its Gram matrix is not positive definite)".to_string(),
            },
            other => other,
        })?;
        let gram_g = x_g.t().dot(&x_g);

        Ok(PartitionedDesign {
            n,
            p,
            g: g.to_vec(),
            minus_g,
            x,
            scale,
            x_g,
            x_mg,
            qr_g,
            gram_g,
            theta: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of grouped (unpenalized) columns.
    pub fn g_len(&self) -> usize {
        self.g.len()
    }

    /// Number of remaining (penalized) columns.
    pub fn m(&self) -> usize {
        self.minus_g.len()
    }

    pub fn g(&self) -> &[usize] {
        &self.g
    }

    pub fn minus_g(&self) -> &[usize] {
        &self.minus_g
    }

    /// The normalized design matrix.
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    /// Per-column normalization factors c_j (normalized = c_j * raw).
    pub fn scale(&self) -> &Array1<f64> {
        &self.scale
    }

    pub fn x_g(&self) -> &Array2<f64> {
        &self.x_g
    }

    pub fn x_minus_g(&self) -> &Array2<f64> {
        &self.x_mg
    }

    /// Gram matrix of the grouped block, X_G^T X_G.
    pub fn gram_g(&self) -> &Array2<f64> {
        &self.gram_g
    }

    /// Orthogonal projection of `v` onto the column space of X_G.
    pub fn project_g(&self, v: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.n {
            return Err(dim_mismatch(format!(
                "project_g expects length {}, got {}",
                self.n,
                v.len()
            )));
        }
        let c = self.qr_g.q1t_mul(v)?;
        self.qr_g.q1_mul(&c.view())
    }

    /// v minus its projection onto the grouped block.
    pub fn residualize_vec(&self, v: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let proj = self.project_g(v)?;
        Ok(v.to_owned() - proj)
    }

    /// Residualized remaining block: each column of X_{-G} with its
    /// X_G-projection removed.
    pub fn residualize_minus_g(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.m()));
        for (c, col) in self.x_mg.columns().into_iter().enumerate() {
            let resid = self
                .residualize_vec(&col)
                .expect("column length matches by construction");
            out.column_mut(c).assign(&resid);
        }
        out
    }

    /// Least-squares coefficients of `w` on the grouped block:
    /// (X_G^T X_G)^{-1} X_G^T w.
    pub fn ols_g(&self, w: &ArrayView1<f64>) -> Result<Array1<f64>> {
        self.qr_g.least_squares(w)
    }

    /// Solve (X_G^T X_G) z = w through the triangular factor.
    pub fn solve_gram_g(&self, w: &ArrayView1<f64>) -> Result<Array1<f64>> {
        self.qr_g.solve_gram(w)
    }

    /// (X_G^T X_G)^{-1}.
    pub fn gram_g_inverse(&self) -> Array2<f64> {
        self.qr_g.gram_inverse()
    }

    /// Coefficient matrix of the remaining columns regressed on the grouped
    /// block: column j holds argmin_c ||X_j - X_G c||_2. Cached after the
    /// first call; the computation is race-free under concurrent readers.
    pub fn theta(&self) -> &Array2<f64> {
        self.theta.get_or_init(|| {
            let m = self.m();
            let k = self.g_len();
            let mut th = Array2::zeros((k, m));
            for (c, col) in self.x_mg.columns().into_iter().enumerate() {
                let coef = self
                    .qr_g
                    .least_squares(&col)
                    .expect("validated grouped factor");
                th.column_mut(c).assign(&coef);
            }
            th
        })
    }

    /// Blocks of the sample covariance X^T X / n together with the
    /// residualized Gram of the remaining columns.
    pub fn partitioned_covariance(&self) -> Result<PartitionedCovariance> {
        PartitionedCovariance::new(self)
    }
}

fn gather_columns(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, idx.len()));
    for (c, &j) in idx.iter().enumerate() {
        out.column_mut(c).assign(&x.column(j));
    }
    out
}

/// Blocked sample covariance of a partitioned design.
///
/// `sigma_tilde` is computed from the covariance blocks (with a Cholesky
/// solve for the grouped block) and cross-checked against the residualized
/// Gram from the QR path; the two routes must agree elementwise.
#[derive(Debug, Clone)]
pub struct PartitionedCovariance {
    sigma_gg: Array2<f64>,
    sigma_g_mg: Array2<f64>,
    sigma_mg_mg: Array2<f64>,
    sigma_tilde: Array2<f64>,
}

impl PartitionedCovariance {
    fn new(design: &PartitionedDesign) -> Result<Self> {
        let n = design.n() as f64;
        let sigma_gg = design.x_g().t().dot(design.x_g()) / n;
        let sigma_g_mg = design.x_g().t().dot(design.x_minus_g()) / n;
        let sigma_mg_mg = design.x_minus_g().t().dot(design.x_minus_g()) / n;

        // Block route: Sigma_{-G,-G} - Sigma_{-G,G} Sigma_{G,G}^{-1} Sigma_{G,-G}.
        let chol = Cholesky::new(&sigma_gg.view()).map_err(|_| Error::NotPositiveDefinite {
            what: "grouped covariance block".to_string(),
        })?;
        let solved = chol.solve_mat(&sigma_g_mg.view())?;
        let sigma_tilde = &sigma_mg_mg - &sigma_g_mg.t().dot(&solved);

        // QR route for the cross-check.
        let xt = design.residualize_minus_g();
        let gram_resid = xt.t().dot(&xt) / n;
        let mut max_err = 0.0_f64;
        for (a, b) in sigma_tilde.iter().zip(gram_resid.iter()) {
            max_err = max_err.max((a - b).abs());
        }
        if max_err > STRUCT_TOL {
            return Err(Error::NumericalInconsistency {
                context: "residualized Gram vs covariance-block route".to_string(),
                max_err,
            });
        }

        // Diagonal entries of n * sigma_tilde never exceed n.
        let m = sigma_tilde.nrows();
        for j in 0..m {
            if sigma_tilde[[j, j]] > 1.0 + 1e-8 {
                return Err(Error::NumericalInconsistency {
                    context: format!("residualized Gram diagonal {j} exceeds its column norm"),
                    max_err: sigma_tilde[[j, j]] - 1.0,
                });
            }
        }

        Ok(PartitionedCovariance {
            sigma_gg,
            sigma_g_mg,
            sigma_mg_mg,
            sigma_tilde,
        })
    }

    pub fn sigma_gg(&self) -> &Array2<f64> {
        &self.sigma_gg
    }

    pub fn sigma_g_mg(&self) -> &Array2<f64> {
        &self.sigma_g_mg
    }

    /// Transposed view of the cross block; shares storage with
    /// [`Self::sigma_g_mg`], so the two are equal by construction.
    pub fn sigma_mg_g(&self) -> ArrayView2<'_, f64> {
        self.sigma_g_mg.t()
    }

    pub fn sigma_mg_mg(&self) -> &Array2<f64> {
        &self.sigma_mg_mg
    }

    /// Residualized Gram of the remaining columns divided by n.
    pub fn sigma_tilde(&self) -> &Array2<f64> {
        &self.sigma_tilde
    }
}

/// Read a numeric matrix from a CSV file: rows of comma-separated decimals,
/// optional single header row, `#` comment lines skipped.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut header_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(w) = width {
                    if vals.len() != w {
                        return Err(Error::DataParse {
                            path: path.to_path_buf(),
                            line: lineno + 1,
                            message: format!("expected {w} fields, got {}", vals.len()),
                        });
                    }
                } else {
                    width = Some(vals.len());
                }
                rows.push(vals);
            }
            Err(_) => {
                // A single non-numeric leading row is treated as a header.
                if rows.is_empty() && !header_seen {
                    header_seen = true;
                    continue;
                }
                return Err(Error::DataParse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: "non-numeric field in data row".to_string(),
                });
            }
        }
    }
    let n = rows.len();
    let p = width.unwrap_or(0);
    if n == 0 || p == 0 {
        return Err(Error::DataParse {
            path: path.to_path_buf(),
            line: 0,
            message: "no data rows found".to_string(),
        });
    }
    let mut out = Array2::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    Ok(out)
}

/// Read a numeric vector from CSV: one value per row (or a single row).
pub fn read_vector_csv(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() == 1 {
        Ok(m.column(0).to_owned())
    } else if m.nrows() == 1 {
        Ok(m.row(0).to_owned())
    } else {
        Err(Error::DataParse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("expected a vector, got {} x {}", m.nrows(), m.ncols()),
        })
    }
}
