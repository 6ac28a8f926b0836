//! Exact Gaussian inference for the unpenalized coefficient block.
//!
//! Once the penalized block is fitted, the grouped coefficients are the
//! least-squares solution on the partialled-out response, and under Gaussian
//! noise with known sigma their sampling covariance is
//! `sigma^2 (X_G^T X_G)^{-1}` exactly. This module recovers that estimate,
//! builds per-coordinate intervals and the joint ellipsoid, and evaluates the
//! bias diagnostic that measures how penalized-block error leaks into the
//! grouped block.

use ndarray::{Array1, Array2, ArrayView1};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::design::PartitionedDesign;
use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::lasso::LassoFit;
use crate::linalg::{l1_norm, linf_norm, operator_inf_norm, Cholesky};

/// Grouped-block estimate with its exact covariance.
#[derive(Debug, Clone)]
pub struct PartialFit {
    /// Estimated coefficients for the grouped columns.
    pub beta_g: Array1<f64>,
    /// Sampling covariance `sigma^2 (X_G^T X_G)^{-1}`.
    pub cov: Array2<f64>,
    /// Noise standard deviation the covariance was built with.
    pub sigma: f64,
    /// Penalized-block fit this estimate was derived from.
    pub lasso_fit: LassoFit,
    /// Bias diagnostic `sqrt(n) * Theta * (penalized error)`, available only
    /// when the true coefficients are known.
    pub delta: Option<Array1<f64>>,
    /// Set when the penalized solve did not converge; inference proceeds but
    /// should be treated as untrusted.
    pub warning: Option<String>,
}

impl PartialFit {
    /// Interval half-widths at the given level, one per grouped coordinate.
    pub fn half_widths(&self, level: f64) -> Result<Array1<f64>> {
        let z = normal_quantile((1.0 + level) / 2.0)?;
        Ok(Array1::from_iter(
            (0..self.beta_g.len()).map(|j| z * self.cov[[j, j]].sqrt()),
        ))
    }
}

/// Recover the grouped-block estimate from a penalized fit.
///
/// Computes `(X_G^T X_G)^{-1} X_G^T (y - X_{-G} beta_mg)` and the exact
/// covariance `sigma^2 (X_G^T X_G)^{-1}`. A non-converged penalized fit is
/// carried through as a warning rather than an error.
pub fn fit_partial(
    design: &PartitionedDesign,
    y: &ArrayView1<f64>,
    lasso_fit: &LassoFit,
    sigma: f64,
) -> Result<PartialFit> {
    if y.len() != design.n() {
        return Err(dim_mismatch(format!(
            "response length {} does not match n = {}",
            y.len(),
            design.n()
        )));
    }
    if lasso_fit.beta.len() != design.m() {
        return Err(dim_mismatch(format!(
            "penalized fit has {} coordinates, design has {}",
            lasso_fit.beta.len(),
            design.m()
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(
            "sigma",
            format!("noise level must be positive and finite, got {sigma}"),
        ));
    }
    let partial = y.to_owned() - design.x_minus_g().dot(&lasso_fit.beta);
    let beta_g = design.ols_g(&partial.view())?;
    let cov = design.gram_g_inverse() * (sigma * sigma);
    let warning = if lasso_fit.converged {
        None
    } else {
        Some(format!(
            "penalized solve stopped at {} sweeps with stationarity gap {:.3e}",
            lasso_fit.sweeps, lasso_fit.kkt_gap
        ))
    };
    Ok(PartialFit {
        beta_g,
        cov,
        sigma,
        lasso_fit: lasso_fit.clone(),
        delta: None,
        warning,
    })
}

/// One per-coordinate confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower() && v <= self.upper()
    }
}

/// Joint confidence set: per-coordinate intervals plus the exact ellipsoid.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    pub level: f64,
    pub intervals: Vec<Interval>,
    /// Ellipsoid center (the grouped estimate).
    pub center: Array1<f64>,
    /// Inverse covariance defining the ellipsoid's quadratic form.
    pub precision: Array2<f64>,
    /// Chi-square quantile bounding the quadratic form.
    pub radius_sq: f64,
}

impl ConfidenceRegion {
    /// Quadratic form `(center - point)^T precision (center - point)`.
    pub fn mahalanobis_sq(&self, point: &ArrayView1<f64>) -> Result<f64> {
        if point.len() != self.center.len() {
            return Err(dim_mismatch(format!(
                "point length {} does not match dimension {}",
                point.len(),
                self.center.len()
            )));
        }
        let d = &self.center - point;
        Ok(d.dot(&self.precision.dot(&d)))
    }

    /// Whether the point lies in the ellipsoid.
    pub fn ellipsoid_contains(&self, point: &ArrayView1<f64>) -> Result<bool> {
        Ok(self.mahalanobis_sq(point)? <= self.radius_sq)
    }
}

/// Build the confidence region at the given level in (0, 1).
///
/// Intervals use the normal quantile `z_{(1+level)/2}` with per-coordinate
/// standard errors; the ellipsoid uses the chi-square quantile with |G|
/// degrees of freedom.
pub fn confidence_region(fit: &PartialFit, level: f64) -> Result<ConfidenceRegion> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(
            "level",
            format!("confidence level must lie in (0, 1), got {level}"),
        ));
    }
    let k = fit.beta_g.len();
    let z = normal_quantile((1.0 + level) / 2.0)?;
    let intervals: Vec<Interval> = (0..k)
        .map(|j| Interval {
            center: fit.beta_g[j],
            half_width: z * fit.cov[[j, j]].sqrt(),
        })
        .collect();
    let chol = Cholesky::new(&fit.cov.view()).map_err(|_| Error::NotPositiveDefinite {
        what: "grouped-estimate covariance".to_string(),
    })?;
    let precision = chol.inverse();
    let radius_sq = chi_squared_quantile(k as f64, level)?;
    Ok(ConfidenceRegion {
        level,
        intervals,
        center: fit.beta_g.clone(),
        precision,
        radius_sq,
    })
}

/// Bias diagnostic for the grouped block when the true penalized
/// coefficients are known.
///
/// Returns `delta = sqrt(n) * Theta * (beta_mg_hat - beta0_mg)` together with
/// the bound `||Theta||_inf * sqrt(n) * ||beta_mg_hat - beta0_mg||_1`, where
/// the matrix norm is the maximum absolute row sum. The bound dominates the
/// max coordinate of `delta` by construction; that relation is re-checked and
/// a violation reported as a numerical inconsistency.
pub fn delta_diagnostic(
    design: &PartitionedDesign,
    lasso_fit: &LassoFit,
    beta0_minus_g: &ArrayView1<f64>,
) -> Result<(Array1<f64>, f64)> {
    if beta0_minus_g.len() != design.m() {
        return Err(dim_mismatch(format!(
            "true coefficient vector has length {}, expected {}",
            beta0_minus_g.len(),
            design.m()
        )));
    }
    if lasso_fit.beta.len() != design.m() {
        return Err(dim_mismatch(format!(
            "penalized fit has {} coordinates, expected {}",
            lasso_fit.beta.len(),
            design.m()
        )));
    }
    let sqrt_n = (design.n() as f64).sqrt();
    let diff = &lasso_fit.beta - beta0_minus_g;
    let theta = design.theta();
    let delta = theta.dot(&diff) * sqrt_n;
    let bound = operator_inf_norm(&theta.view()) * sqrt_n * l1_norm(&diff.view());
    let delta_inf = linf_norm(&delta.view());
    if delta_inf > bound + 1e-9 * (1.0 + bound) {
        return Err(Error::NumericalInconsistency {
            context: "bias diagnostic exceeded its norm bound".to_string(),
            max_err: delta_inf - bound,
        });
    }
    Ok((delta, bound))
}

/// Plug-in noise estimate from the penalized-block residual:
/// `||(I - P_G)(y - X_{-G} beta_mg)||^2 / (n - |G| - |active|)`.
///
/// This estimator sits outside the known-sigma theory the rest of the crate
/// verifies; callers should treat it as a convenience for data analysis.
pub fn estimate_sigma(
    design: &PartitionedDesign,
    y: &ArrayView1<f64>,
    lasso_fit: &LassoFit,
) -> Result<f64> {
    if y.len() != design.n() {
        return Err(dim_mismatch(format!(
            "response length {} does not match n = {}",
            y.len(),
            design.n()
        )));
    }
    let active = lasso_fit.active_set().len();
    let dof = design.n() as isize - design.g_len() as isize - active as isize;
    if dof <= 0 {
        return Err(invalid(
            "degrees_of_freedom",
            format!("n - |G| - |active| = {dof} must be positive to estimate the noise level"),
        ));
    }
    let partial = y.to_owned() - design.x_minus_g().dot(&lasso_fit.beta);
    let resid = design.residualize_vec(&partial.view())?;
    Ok((resid.dot(&resid) / dof as f64).sqrt())
}

/// Standard normal quantile.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(
            "q",
            format!("quantile argument must lie in (0, 1), got {q}"),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal parameters are valid");
    Ok(normal.inverse_cdf(q))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal parameters are valid");
    normal.cdf(x)
}

/// Chi-square quantile with `df` degrees of freedom.
pub fn chi_squared_quantile(df: f64, q: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(invalid("df", "degrees of freedom must be positive"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(
            "q",
            format!("quantile argument must lie in (0, 1), got {q}"),
        ));
    }
    let chi = ChiSquared::new(df)
        .map_err(|e| invalid("df", format!("invalid chi-square parameter: {e}")))?;
    Ok(chi.inverse_cdf(q))
}
