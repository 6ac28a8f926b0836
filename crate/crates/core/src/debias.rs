//! De-biasing of the penalized block and its feedback into the grouped
//! estimate.
//!
//! The penalized coefficients carry shrinkage bias; adding back a scaled
//! correlation of the residual produces the de-biased vector
//!
//! ```text
//! b_mg = beta_mg + (1/n) M Xt^T (yt - Xt beta_mg)
//! ```
//!
//! with `Xt` the residualized penalized block and `M` an approximate inverse
//! of its Gram `sigma_tilde = Xt^T Xt / n`. Re-fitting the grouped block
//! against the de-biased vector gives `b_g`, whose error splits into two
//! independent Gaussian terms plus a remainder controlled by the matrix
//! `R = Theta (I - M sigma_tilde)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::design::PartitionedDesign;
use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::lasso::{solve, LassoFit, LassoProblem, SolveOptions};
use crate::linalg::{l1_norm, operator_inf_norm};
use crate::theory::l1_error_bound;

/// Residual variance below which a nodewise regression is treated as
/// collinear.
pub const TAU_SQ_FLOOR: f64 = 1e-12;

/// Everything produced by a de-biasing pass.
#[derive(Debug, Clone)]
pub struct DebiasResult {
    /// Approximate inverse of the residualized Gram used for the correction.
    pub m_matrix: Array2<f64>,
    /// De-biased penalized-block coefficients.
    pub b_minus_g: Array1<f64>,
    /// Grouped coefficients re-fitted against the de-biased block.
    pub b_g: Array1<f64>,
    /// Remainder matrix coupling penalized-block error into the group.
    pub r_matrix: Array2<f64>,
    /// Max absolute row sum of the remainder matrix.
    pub r_inf_norm: f64,
    /// Bound on the remainder term's max coordinate.
    pub delta_bound: f64,
    /// True when `delta_bound` rests on an assumed sparsity/compatibility
    /// plug-in rather than the known truth.
    pub delta_bound_heuristic: bool,
    /// Covariance of the two Gaussian terms in the grouped decomposition.
    pub cov: Array2<f64>,
}

/// How to bound the remainder term `R (beta_mg_hat - beta0_mg)`.
#[derive(Debug, Clone, Copy)]
pub enum DeltaBoundSpec<'a> {
    /// True penalized coefficients are known (simulation): bound by
    /// `||R||_inf * ||beta_mg_hat - beta0_mg||_1`.
    KnownTruth(ArrayView1<'a, f64>),
    /// Truth unknown: bound the l1 error by the oracle inequality with
    /// user-supplied sparsity and compatibility constant. Assumption
    /// dependent; the result is flagged heuristic.
    Plugin {
        s: usize,
        phi0: f64,
        a: f64,
        sigma: f64,
    },
}

/// De-biased penalized-block coefficients for a given correction matrix.
pub fn debias_minus_g(
    design: &PartitionedDesign,
    y: &ArrayView1<f64>,
    lasso_fit: &LassoFit,
    m_matrix: &ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let m = design.m();
    check_m_shape(m_matrix, m)?;
    if y.len() != design.n() {
        return Err(dim_mismatch(format!(
            "response length {} does not match n = {}",
            y.len(),
            design.n()
        )));
    }
    if lasso_fit.beta.len() != m {
        return Err(dim_mismatch(format!(
            "penalized fit has {} coordinates, expected {m}",
            lasso_fit.beta.len()
        )));
    }
    let n = design.n() as f64;
    // (I - P_G)(y - X_mg beta) equals yt - Xt beta; the projector route
    // avoids materializing Xt.
    let fitted = design.x_minus_g().dot(&lasso_fit.beta);
    let resid = design.residualize_vec(&(y.to_owned() - fitted).view())?;
    let score = design.x_minus_g().t().dot(&resid) / n;
    Ok(&lasso_fit.beta + &m_matrix.dot(&score))
}

/// Grouped coefficients re-fitted against a de-biased penalized block.
pub fn debias_g(
    design: &PartitionedDesign,
    y: &ArrayView1<f64>,
    b_minus_g: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if y.len() != design.n() {
        return Err(dim_mismatch(format!(
            "response length {} does not match n = {}",
            y.len(),
            design.n()
        )));
    }
    if b_minus_g.len() != design.m() {
        return Err(dim_mismatch(format!(
            "de-biased block has {} coordinates, expected {}",
            b_minus_g.len(),
            design.m()
        )));
    }
    let partial = y.to_owned() - design.x_minus_g().dot(b_minus_g);
    design.ols_g(&partial.view())
}

/// Remainder matrix `R = Theta (I - M sigma_tilde)` and its max absolute
/// row sum.
///
/// Two algebraically equal routes are evaluated, one through the regression
/// coefficients and one through the covariance blocks, and must agree
/// elementwise to 1e-9; disagreement reports a numerical inconsistency.
pub fn remainder_matrix(
    design: &PartitionedDesign,
    m_matrix: &ArrayView2<f64>,
) -> Result<(Array2<f64>, f64)> {
    let m = design.m();
    check_m_shape(m_matrix, m)?;
    let cov = design.partitioned_covariance()?;
    let sigma_tilde = cov.sigma_tilde();
    let theta = design.theta();

    // Route 1: through the regression-coefficient matrix.
    let correction = theta.dot(&m_matrix.dot(sigma_tilde));
    let r_matrix = theta - &correction;

    // Route 2: through the covariance blocks. Theta equals
    // sigma_gg^{-1} sigma_g_mg, so the two must agree.
    let chol = crate::linalg::Cholesky::new(&cov.sigma_gg().view())?;
    let theta_cov = chol.solve_mat(&cov.sigma_g_mg().view())?;
    let i_minus = Array2::eye(m) - m_matrix.dot(sigma_tilde);
    let r_alt = theta_cov.dot(&i_minus);
    let mut max_err = 0.0_f64;
    for (a, b) in r_matrix.iter().zip(r_alt.iter()) {
        max_err = max_err.max((a - b).abs());
    }
    if max_err > 1e-9 {
        return Err(Error::NumericalInconsistency {
            context: "remainder matrix: regression route vs covariance route".to_string(),
            max_err,
        });
    }

    let r_inf = operator_inf_norm(&r_matrix.view());
    Ok((r_matrix, r_inf))
}

/// Default penalty for the nodewise regressions: the usual rate with unit
/// noise scale and multiplier 2 at the residualized block's dimensions.
pub fn default_lambda_node(design: &PartitionedDesign) -> Result<f64> {
    crate::lasso::lambda_rule(2.0, 1.0, design.n(), design.m().max(2))
}

/// Build `M` by nodewise regressions with default solver settings.
pub fn choose_m_nodewise(design: &PartitionedDesign, lambda_node: f64) -> Result<Array2<f64>> {
    choose_m_nodewise_with(design, lambda_node, &SolveOptions::default())
}

/// Build `M` row by row: regress each residualized column on the others with
/// an l1 penalty, then scale by the nodewise residual variance
/// `tau_j^2 = Xt_j^T (Xt_j - Xt_{-j} kappa_j) / n` so that row j satisfies
/// `(M sigma_tilde)_{jj} = 1` up to solver tolerance.
///
/// Rows are independent and computed in parallel when the `parallel` feature
/// is active; assembly order is fixed by index either way.
pub fn choose_m_nodewise_with(
    design: &PartitionedDesign,
    lambda_node: f64,
    opts: &SolveOptions,
) -> Result<Array2<f64>> {
    if !(lambda_node > 0.0) || !lambda_node.is_finite() {
        return Err(invalid(
            "lambda_node",
            format!("nodewise penalty must be positive and finite, got {lambda_node}"),
        ));
    }
    let m = design.m();
    let n = design.n() as f64;
    let xt = design.residualize_minus_g();

    if m == 1 {
        // No other columns to regress on: tau^2 is the column's own scale.
        let tau_sq = xt.column(0).dot(&xt.column(0)) / n;
        if tau_sq < TAU_SQ_FLOOR {
            return Err(Error::NearCollinear { column: 0 });
        }
        return Ok(Array2::from_elem((1, 1), 1.0 / tau_sq));
    }

    let row_of = |j: usize| -> Result<Array1<f64>> {
        // Residualized column j regressed on all the others.
        let mut others = Array2::zeros((design.n(), m - 1));
        let mut c = 0;
        for k in 0..m {
            if k != j {
                others.column_mut(c).assign(&xt.column(k));
                c += 1;
            }
        }
        let target = xt.column(j);
        let problem = LassoProblem::new(others.view(), target, lambda_node)?;
        let fit = solve(&problem, opts)?;
        let fitted = others.dot(&fit.beta);
        let tau_sq = target.dot(&(&target.to_owned() - &fitted)) / n;
        if tau_sq < TAU_SQ_FLOOR {
            return Err(Error::NearCollinear { column: j });
        }
        let mut row = Array1::zeros(m);
        row[j] = 1.0 / tau_sq;
        let mut c = 0;
        for k in 0..m {
            if k != j {
                row[k] = -fit.beta[c] / tau_sq;
                c += 1;
            }
        }
        Ok(row)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<Result<Array1<f64>>> = (0..m).into_par_iter().map(row_of).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<Array1<f64>>> = (0..m).map(row_of).collect();

    let mut m_matrix = Array2::zeros((m, m));
    for (j, row) in rows.into_iter().enumerate() {
        m_matrix.row_mut(j).assign(&row?);
    }

    // Normalization check: each diagonal of M sigma_tilde is 1 by
    // construction; verify against the residualized Gram.
    let sigma_tilde = xt.t().dot(&xt) / n;
    let prod = m_matrix.dot(&sigma_tilde);
    for j in 0..m {
        let err = (prod[[j, j]] - 1.0).abs();
        if err > 1e-6 {
            return Err(Error::NumericalInconsistency {
                context: format!("nodewise normalization (M sigma_tilde)[{j},{j}]"),
                max_err: err,
            });
        }
    }
    Ok(m_matrix)
}

/// Covariance of the grouped de-biased estimate's Gaussian part:
/// `sigma^2 [ (X_G^T X_G)^{-1} + (1/n) Theta M sigma_tilde M^T Theta^T ]`.
///
/// The two terms come from independent Gaussian vectors: the grouped score
/// and the residualized score are orthogonal by construction.
pub fn debias_covariance(
    design: &PartitionedDesign,
    m_matrix: &ArrayView2<f64>,
    sigma: f64,
) -> Result<Array2<f64>> {
    check_m_shape(m_matrix, design.m())?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(
            "sigma",
            format!("noise level must be positive and finite, got {sigma}"),
        ));
    }
    let n = design.n() as f64;
    let cov = design.partitioned_covariance()?;
    let theta = design.theta();
    let tm = theta.dot(m_matrix);
    let second = tm.dot(cov.sigma_tilde()).dot(&tm.t()) / n;
    let first = design.gram_g_inverse();
    Ok((first + second) * (sigma * sigma))
}

/// Full de-biasing pass: correction, grouped re-fit, remainder diagnostics,
/// and the Gaussian covariance.
pub fn debias(
    design: &PartitionedDesign,
    y: &ArrayView1<f64>,
    lasso_fit: &LassoFit,
    m_matrix: &ArrayView2<f64>,
    bound: DeltaBoundSpec<'_>,
    sigma: f64,
) -> Result<DebiasResult> {
    let b_minus_g = debias_minus_g(design, y, lasso_fit, m_matrix)?;
    let b_g = debias_g(design, y, &b_minus_g.view())?;
    let (r_matrix, r_inf_norm) = remainder_matrix(design, m_matrix)?;
    let (delta_bound, delta_bound_heuristic) = match bound {
        DeltaBoundSpec::KnownTruth(beta0_mg) => {
            if beta0_mg.len() != design.m() {
                return Err(dim_mismatch(format!(
                    "true coefficient vector has length {}, expected {}",
                    beta0_mg.len(),
                    design.m()
                )));
            }
            let diff = &lasso_fit.beta - &beta0_mg;
            (r_inf_norm * l1_norm(&diff.view()), false)
        }
        DeltaBoundSpec::Plugin { s, phi0, a, sigma } => {
            let l1_bound =
                l1_error_bound(a, sigma, s, design.n(), design.p(), phi0, lasso_fit.lambda)?;
            (r_inf_norm * l1_bound, true)
        }
    };
    let cov = debias_covariance(design, m_matrix, sigma)?;
    Ok(DebiasResult {
        m_matrix: m_matrix.to_owned(),
        b_minus_g,
        b_g,
        r_matrix,
        r_inf_norm,
        delta_bound,
        delta_bound_heuristic,
        cov,
    })
}

fn check_m_shape(m_matrix: &ArrayView2<f64>, m: usize) -> Result<()> {
    if m_matrix.dim() != (m, m) {
        return Err(dim_mismatch(format!(
            "correction matrix is {} x {}, expected {m} x {m}",
            m_matrix.nrows(),
            m_matrix.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lasso::SolveOptions;
    use crate::linalg::Cholesky;
    use ndarray::array;

    fn design_and_response() -> (PartitionedDesign, Array1<f64>) {
        let x = array![
            [1.0, 0.3, -0.7, 2.0, 0.4],
            [-0.5, 1.2, 0.8, -0.3, 1.5],
            [2.0, -0.4, 1.1, 0.6, -0.9],
            [0.7, 0.9, -1.3, 1.4, 0.2],
            [-1.1, 0.5, 0.6, -0.8, 1.0],
            [0.4, -1.5, 0.9, 0.5, -0.6],
            [0.9, 0.2, -0.4, 1.1, 0.8],
            [-0.3, 0.7, 1.5, -0.6, -1.2],
        ];
        let y = array![1.0, -0.2, 0.8, 0.4, -0.6, 0.3, 0.9, -0.5];
        (PartitionedDesign::new(x, &[0, 1]).unwrap(), y)
    }

    fn residualized_fit(design: &PartitionedDesign, y: &Array1<f64>, lambda: f64) -> LassoFit {
        let xt = design.residualize_minus_g();
        let yt = design.residualize_vec(&y.view()).unwrap();
        let problem = LassoProblem::new(xt.view(), yt.view(), lambda).unwrap();
        solve(&problem, &SolveOptions::default()).unwrap()
    }

    #[test]
    fn zero_m_is_identity_on_the_fit() {
        let (design, y) = design_and_response();
        let fit = residualized_fit(&design, &y, 0.3);
        let m0 = Array2::zeros((3, 3));
        let b = debias_minus_g(&design, &y.view(), &fit, &m0.view()).unwrap();
        for j in 0..3 {
            assert_eq!(b[j], fit.beta[j]);
        }
        let (r, _) = remainder_matrix(&design, &m0.view()).unwrap();
        let theta = design.theta();
        for (a, b) in r.iter().zip(theta.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_leaves_fit_unchanged() {
        let (design, _) = design_and_response();
        // Response exactly in the grouped span: residualized response is 0,
        // so a huge penalty gives beta = 0 and a zero score.
        let y = design.x_g().column(0).to_owned() - design.x_g().column(1).to_owned() * 0.5;
        let fit = residualized_fit(&design, &y, 50.0);
        assert!(fit.beta.iter().all(|v| *v == 0.0));
        let m = Array2::eye(3);
        let b = debias_minus_g(&design, &y.view(), &fit, &m.view()).unwrap();
        for v in b.iter() {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn correction_equals_lambda_m_gamma_at_stationarity() {
        let (design, y) = design_and_response();
        let lambda = 0.25;
        let fit = residualized_fit(&design, &y, lambda);
        assert!(fit.kkt_gap <= 1e-10);
        let m = array![[1.0, 0.2, -0.1], [0.0, 1.3, 0.4], [-0.2, 0.1, 0.8],];
        let b = debias_minus_g(&design, &y.view(), &fit, &m.view()).unwrap();
        let predicted = &fit.beta + &(m.dot(&fit.gamma) * lambda);
        for j in 0..3 {
            assert!(
                (b[j] - predicted[j]).abs() < 1e-8,
                "coordinate {j}: {} vs {}",
                b[j],
                predicted[j]
            );
        }
    }

    #[test]
    fn grouped_refit_reduces_to_partial_fit_when_unchanged() {
        let (design, y) = design_and_response();
        let fit = residualized_fit(&design, &y, 0.3);
        let b_g = debias_g(&design, &y.view(), &fit.beta.view()).unwrap();
        let partial = y.clone() - design.x_minus_g().dot(&fit.beta);
        let ols = design.ols_g(&partial.view()).unwrap();
        for j in 0..2 {
            assert!((b_g[j] - ols[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_blocks_make_grouped_refit_invariant() {
        let x = array![
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0],
            [0.0, -1.0, 1.0],
        ];
        let y = array![2.0, 1.0, 0.5, -0.3];
        let design = PartitionedDesign::new(x, &[0]).unwrap();
        let ols = design.ols_g(&y.view()).unwrap();
        for b_mg in [array![0.0, 0.0], array![1.0, -2.0], array![5.0, 5.0]] {
            let b_g = debias_g(&design, &y.view(), &b_mg.view()).unwrap();
            assert!((b_g[0] - ols[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_inverse_annihilates_the_remainder() {
        let (design, _) = design_and_response();
        let cov = design.partitioned_covariance().unwrap();
        let chol = Cholesky::new(&cov.sigma_tilde().view()).unwrap();
        let m_inv = chol.inverse();
        let (r, r_inf) = remainder_matrix(&design, &m_inv.view()).unwrap();
        assert!(r_inf <= 1e-9, "r_inf = {r_inf}");
        for v in r.iter() {
            assert!(v.abs() <= 1e-9);
        }
    }

    #[test]
    fn orthogonal_residualized_block_gives_identity_m() {
        // Disjoint-support columns: residualizing leaves the penalized block
        // orthogonal, so all nodewise regressions are zero and tau^2 = 1.
        let x = array![
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0],
            [0.0, 1.0, -1.0],
        ];
        let design = PartitionedDesign::new(x, &[0]).unwrap();
        let m = choose_m_nodewise(&design, 0.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn duplicate_columns_are_reported_collinear() {
        let x = array![
            [1.0, 0.3, 0.3],
            [-0.5, 1.2, 1.2],
            [2.0, -0.4, -0.4],
            [0.7, 0.9, 0.9],
            [0.2, -0.8, -0.8],
        ];
        let design = PartitionedDesign::new(x, &[0]).unwrap();
        // With exact duplicates the nodewise residual variance equals the
        // penalty, so a penalty below the collinearity floor must trip it.
        match choose_m_nodewise(&design, 1e-13) {
            Err(Error::NearCollinear { .. }) => {}
            other => panic!("expected NearCollinear, got {other:?}"),
        }
        // A moderate penalty keeps the variance at the penalty level and
        // succeeds, with the diagonal equal to its reciprocal.
        let m = choose_m_nodewise(&design, 1e-6).unwrap();
        assert!((m[[0, 0]] - 1e6).abs() / 1e6 < 1e-6);
    }

    #[test]
    fn vanishing_penalty_recovers_the_dense_inverse() {
        let (design, _) = design_and_response();
        let opts = SolveOptions {
            tol: 1e-12,
            max_sweeps: 200_000,
        };
        let m = choose_m_nodewise_with(&design, 1e-9, &opts).unwrap();
        let cov = design.partitioned_covariance().unwrap();
        let chol = Cholesky::new(&cov.sigma_tilde().view()).unwrap();
        let inv = chol.inverse();
        for (a, b) in m.iter().zip(inv.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn single_penalized_column_m_is_reciprocal_scale() {
        let x = array![[1.0, 0.4], [1.0, -0.2], [-1.0, 0.9], [1.0, 0.1],];
        let design = PartitionedDesign::new(x, &[0]).unwrap();
        let m = choose_m_nodewise(&design, 0.3).unwrap();
        let cov = design.partitioned_covariance().unwrap();
        let want = 1.0 / cov.sigma_tilde()[[0, 0]];
        assert_eq!(m.dim(), (1, 1));
        assert!((m[[0, 0]] - want).abs() < 1e-10);
    }

    #[test]
    fn known_truth_bound_dominates_remainder_term() {
        let (design, y) = design_and_response();
        let fit = residualized_fit(&design, &y, 0.3);
        let m = choose_m_nodewise(&design, 0.2).unwrap();
        let beta0 = array![0.5, 0.0, -0.25];
        let result = debias(
            &design,
            &y.view(),
            &fit,
            &m.view(),
            DeltaBoundSpec::KnownTruth(beta0.view()),
            1.0,
        )
        .unwrap();
        assert!(!result.delta_bound_heuristic);
        let diff = &fit.beta - &beta0;
        let rem = result.r_matrix.dot(&diff);
        let rem_inf = rem.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        assert!(rem_inf <= result.delta_bound + 1e-12);
    }

    #[test]
    fn covariance_is_symmetric_positive_definite() {
        let (design, y) = design_and_response();
        let fit = residualized_fit(&design, &y, 0.3);
        let m = choose_m_nodewise(&design, 0.2).unwrap();
        let result = debias(
            &design,
            &y.view(),
            &fit,
            &m.view(),
            DeltaBoundSpec::Plugin {
                s: 1,
                phi0: 1.0,
                a: 4.0,
                sigma: 1.0,
            },
            1.0,
        )
        .unwrap();
        assert!(result.delta_bound_heuristic);
        for i in 0..2 {
            for j in 0..2 {
                assert!((result.cov[[i, j]] - result.cov[[j, i]]).abs() < 1e-12);
            }
        }
        assert!(Cholesky::new(&result.cov.view()).is_ok());
        // The correction term is positive semidefinite, so the de-biased
        // covariance diagonal dominates the plain grouped covariance.
        let plain = design.gram_g_inverse();
        for j in 0..2 {
            assert!(result.cov[[j, j]] >= plain[[j, j]] - 1e-12);
        }
    }
}
