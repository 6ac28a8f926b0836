//! Synthetic-data lab: design generators with known structure, ground-truth
//! models, and replicated experiments that verify the estimator's guarantees
//! empirically.
//!
//! Reproducibility contract: replicate r derives its seed as
//! `base_seed + r` (wrapping); the design is drawn on generator stream 0 and
//! the noise on stream 1, so the same seed always gives the same instance
//! regardless of what else ran. Replicates may execute in parallel; records
//! are assembled in replicate order and aggregated sequentially, so summaries
//! are identical with and without the `parallel` feature.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use crate::debias::{choose_m_nodewise, debias, DeltaBoundSpec};
use crate::design::PartitionedDesign;
use crate::error::{invalid, Error, Result};
use crate::inference::{
    confidence_region, delta_diagnostic, fit_partial, normal_cdf, normal_quantile,
};
use crate::lasso::{lambda_rule, solve, LassoProblem, SolveOptions};
use crate::linalg::linf_norm;
use crate::theory::{corollary_bias_bound, estimate_phi0, theorem1_check, ConeSearchOptions};

/// Families of synthetic designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignSpec {
    /// Exactly orthogonal columns scaled to norm sqrt(n); requires p <= n.
    /// The residualized Gram is the identity, so the compatibility constant
    /// is exactly 1.
    Orthogonal,
    /// Rows i.i.d. standard Gaussian, then column-normalized.
    GaussianIid,
    /// Rows i.i.d. Gaussian with AR(1) covariance `rho^|i-j|`, then
    /// column-normalized. Requires |rho| < 1.
    GaussianAr1 { rho: f64 },
    /// Grouped block orthonormal (scaled), remaining block built as
    /// `X_G * T + E` with `E` orthonormal (scaled) and orthogonal to the
    /// grouped block, where `T` has constant entries `tau / m` so its max
    /// absolute row sum is exactly `tau`. The residualized Gram is diagonal,
    /// giving a certified compatibility constant. Requires p <= n.
    ThetaControlled { tau: f64 },
}

/// A generated design plus, for families with exact structure, a certified
/// lower bound on the compatibility constant.
#[derive(Debug)]
pub struct GeneratedDesign {
    pub design: PartitionedDesign,
    pub certified_phi0: Option<f64>,
}

/// Draw a design of the given family. Deterministic given `seed` (generator
/// stream 0).
pub fn generate_design(
    spec: &DesignSpec,
    n: usize,
    p: usize,
    g: &[usize],
    seed: u64,
) -> Result<GeneratedDesign> {
    if n == 0 || p == 0 {
        return Err(invalid("n/p", "design dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    match spec {
        DesignSpec::Orthogonal => {
            if p > n {
                return Err(invalid(
                    "p",
                    format!("orthogonal designs need p <= n, got p = {p}, n = {n}"),
                ));
            }
            let x = scaled_orthonormal(n, p, &mut rng)?;
            let design = PartitionedDesign::new(x, g)?;
            Ok(GeneratedDesign {
                design,
                certified_phi0: Some(1.0),
            })
        }
        DesignSpec::GaussianIid => {
            let x = gaussian_matrix(n, p, &mut rng);
            let design = PartitionedDesign::new(x, g)?;
            Ok(GeneratedDesign {
                design,
                certified_phi0: None,
            })
        }
        DesignSpec::GaussianAr1 { rho } => {
            if !(rho.abs() < 1.0) {
                return Err(invalid(
                    "rho",
                    format!("autoregression parameter must satisfy |rho| < 1, got {rho}"),
                ));
            }
            let mut x = Array2::zeros((n, p));
            let scale = (1.0 - rho * rho).sqrt();
            for i in 0..n {
                let mut prev: f64 = StandardNormal.sample(&mut rng);
                x[[i, 0]] = prev;
                for j in 1..p {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    prev = rho * prev + scale * e;
                    x[[i, j]] = prev;
                }
            }
            let design = PartitionedDesign::new(x, g)?;
            Ok(GeneratedDesign {
                design,
                certified_phi0: None,
            })
        }
        DesignSpec::ThetaControlled { tau } => {
            if *tau < 0.0 {
                return Err(invalid("tau", "coupling strength must be nonnegative"));
            }
            if p > n {
                return Err(invalid(
                    "p",
                    format!("controlled-coupling designs need p <= n, got p = {p}, n = {n}"),
                ));
            }
            let k = g.len();
            if k >= p {
                return Err(invalid(
                    "g",
                    "group must leave at least one penalized column",
                ));
            }
            let m = p - k;
            // One orthonormal frame split into the grouped block and the
            // residual directions for the penalized block.
            let q = scaled_orthonormal(n, p, &mut rng)?;
            let x_g = q.slice(ndarray::s![.., ..k]).to_owned();
            let e = q.slice(ndarray::s![.., k..]).to_owned();
            let coupling = tau / m as f64;
            let mut x = Array2::zeros((n, p));
            for (c, &j) in g.iter().enumerate() {
                x.column_mut(j).assign(&x_g.column(c));
            }
            let mut c_mg = 0usize;
            for j in 0..p {
                if g.contains(&j) {
                    continue;
                }
                // Column = coupling * (sum of grouped columns) + residual direction.
                let mut col = e.column(c_mg).to_owned();
                for gc in x_g.columns() {
                    col.zip_mut_with(&gc, |v, w| *v += coupling * w);
                }
                x.column_mut(j).assign(&col);
                c_mg += 1;
            }
            let design = PartitionedDesign::new(x, g)?;
            // After normalization each residualized column has squared norm
            // n * c_j^2 with c_j <= 1, so the residualized Gram is diagonal
            // and the compatibility constant is at least min_j c_j.
            let mut c_min = f64::INFINITY;
            for (pos, &j) in design.minus_g().iter().enumerate() {
                let _ = pos;
                c_min = c_min.min(design.scale()[j]);
            }
            Ok(GeneratedDesign {
                design,
                certified_phi0: Some(c_min),
            })
        }
    }
}

fn gaussian_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| StandardNormal.sample(rng))
}

/// Random matrix with orthonormal columns scaled by sqrt(n).
fn scaled_orthonormal(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let raw = gaussian_matrix(n, p, rng);
    let qr = crate::linalg::QrFactor::new(&raw.view())?;
    let sqrt_n = (n as f64).sqrt();
    let mut q = Array2::zeros((n, p));
    for j in 0..p {
        let mut e = Array1::zeros(p);
        e[j] = 1.0;
        let col = qr.q1_mul(&e.view())?;
        q.column_mut(j).assign(&(col * sqrt_n));
    }
    Ok(q)
}

/// Where the nonzero penalized coefficients sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Lowest penalized column indices.
    Lowest,
    /// Highest penalized column indices.
    Highest,
}

/// Ground-truth coefficient layout.
#[derive(Debug, Clone, Copy)]
pub struct Beta0Spec {
    /// Number of nonzero penalized coefficients.
    pub s: usize,
    /// Their magnitude; signs alternate starting positive.
    pub beta_min: f64,
    pub placement: Placement,
    /// Value given to every grouped coefficient.
    pub g_value: f64,
}

impl Default for Beta0Spec {
    fn default() -> Self {
        Beta0Spec {
            s: 3,
            beta_min: 1.0,
            placement: Placement::Lowest,
            g_value: 1.0,
        }
    }
}

/// Build the true coefficient vector over all p columns.
pub fn build_beta0(spec: &Beta0Spec, p: usize, g: &[usize]) -> Result<Array1<f64>> {
    let minus_g: Vec<usize> = (0..p).filter(|j| !g.contains(j)).collect();
    if spec.s > minus_g.len() {
        return Err(invalid(
            "s",
            format!(
                "requested {} signal coordinates but only {} penalized columns exist",
                spec.s,
                minus_g.len()
            ),
        ));
    }
    if spec.beta_min < 0.0 {
        return Err(invalid("beta_min", "signal magnitude must be nonnegative"));
    }
    let mut beta0 = Array1::zeros(p);
    for &j in g {
        beta0[j] = spec.g_value;
    }
    let chosen: Vec<usize> = match spec.placement {
        Placement::Lowest => minus_g.iter().copied().take(spec.s).collect(),
        Placement::Highest => {
            let mut v: Vec<usize> = minus_g.iter().rev().copied().take(spec.s).collect();
            v.reverse();
            v
        }
    };
    for (i, &j) in chosen.iter().enumerate() {
        beta0[j] = if i % 2 == 0 {
            spec.beta_min
        } else {
            -spec.beta_min
        };
    }
    Ok(beta0)
}

/// One synthetic instance: design, truth, noise, response.
#[derive(Debug)]
pub struct ModelInstance {
    pub design: PartitionedDesign,
    pub y: Array1<f64>,
    pub beta0: Array1<f64>,
    pub sigma: f64,
    pub epsilon: Array1<f64>,
    /// Support of the full coefficient vector, ascending.
    pub s_set: Vec<usize>,
    pub seed: u64,
}

impl ModelInstance {
    /// True grouped coefficients.
    pub fn beta0_g(&self) -> Array1<f64> {
        Array1::from_iter(self.design.g().iter().map(|&j| self.beta0[j]))
    }

    /// True penalized coefficients in block order.
    pub fn beta0_minus_g(&self) -> Array1<f64> {
        Array1::from_iter(self.design.minus_g().iter().map(|&j| self.beta0[j]))
    }

    /// Support restricted to penalized columns (original indices).
    pub fn s_set_minus_g(&self) -> Vec<usize> {
        self.s_set
            .iter()
            .copied()
            .filter(|j| !self.design.g().contains(j))
            .collect()
    }

    /// Max deviation of `y - X beta0 - epsilon` from zero; exactly zero by
    /// construction up to float association.
    pub fn construction_residual(&self) -> f64 {
        let fitted = self.design.x().dot(&self.beta0) + &self.epsilon;
        let mut err = 0.0_f64;
        for (a, b) in self.y.iter().zip(fitted.iter()) {
            err = err.max((a - b).abs());
        }
        err
    }
}

/// Draw noise on generator stream 1 and assemble the response
/// `y = X beta0 + epsilon`. `sigma = 0` produces an exact noiseless model.
pub fn generate_response(
    design: PartitionedDesign,
    beta0: &Array1<f64>,
    sigma: f64,
    seed: u64,
) -> Result<ModelInstance> {
    if beta0.len() != design.p() {
        return Err(crate::error::dim_mismatch(format!(
            "coefficient vector has length {}, design has {} columns",
            beta0.len(),
            design.p()
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(
            "sigma",
            format!("noise level must be nonnegative and finite, got {sigma}"),
        ));
    }
    let n = design.n();
    let epsilon = if sigma == 0.0 {
        Array1::zeros(n)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Array1::from_shape_fn(n, |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            sigma * g
        })
    };
    let y = design.x().dot(beta0) + &epsilon;
    let s_set: Vec<usize> = beta0
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect();
    let instance = ModelInstance {
        design,
        y,
        beta0: beta0.clone(),
        sigma,
        epsilon,
        s_set,
        seed,
    };
    let err = instance.construction_residual();
    if err > 1e-12 {
        return Err(Error::NumericalInconsistency {
            context: "response construction identity".to_string(),
            max_err: err,
        });
    }
    Ok(instance)
}

/// How the per-replicate compatibility constant is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiPolicy {
    /// Use the generator's certified value when present, otherwise search
    /// with the configured options.
    CertifiedOrSearch,
    /// Use a caller-supplied value; no search. The theory checks are then
    /// conditional on this value being a valid lower bound.
    Fixed(f64),
}

/// Nodewise de-biasing settings for the replicate pipeline.
#[derive(Debug, Clone, Copy)]
pub struct DebiasParams {
    /// Penalty multiplier for the nodewise regressions.
    pub a_node: f64,
}

/// Everything a Monte Carlo run needs.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub design: DesignSpec,
    pub n: usize,
    pub p: usize,
    pub g: Vec<usize>,
    pub beta0: Beta0Spec,
    pub sigma: f64,
    /// Penalty multiplier for the main fit.
    pub a: f64,
    /// Confidence level for the grouped intervals.
    pub level: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub solver: SolveOptions,
    pub phi0_policy: PhiPolicy,
    pub phi0_search: ConeSearchOptions,
    pub debias: Option<DebiasParams>,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "sample size must be positive"));
        }
        if self.p < 2 {
            return Err(invalid("p", "need at least two columns"));
        }
        if self.g.is_empty() {
            return Err(invalid("group.indices", "group index set must be nonempty"));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid(
                "sigma",
                "noise level must be positive for simulation",
            ));
        }
        if !(self.a > 0.0) {
            return Err(invalid("a", "penalty multiplier must be positive"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(invalid("level", "confidence level must lie in (0, 1)"));
        }
        if let PhiPolicy::Fixed(v) = self.phi0_policy {
            if !(v > 0.0) {
                return Err(invalid(
                    "phi0.value",
                    "fixed compatibility constant must be positive",
                ));
            }
        }
        if let Some(d) = &self.debias {
            if !(d.a_node > 0.0) {
                return Err(invalid(
                    "debias.a_node",
                    "nodewise multiplier must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// Everything recorded about one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub seed: u64,
    /// Noise-control event held.
    pub omega0: bool,
    /// Oracle-inequality bound held.
    pub bound_holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// Max coordinate of the grouped bias diagnostic.
    pub delta_inf: f64,
    /// Middle term of the bias chain: `||Theta||_inf sqrt(n) ||error||_1`.
    pub delta_mid: f64,
    /// Worst-case bias bound (noise-scaled); None when sparsity is zero.
    pub corollary_bound: Option<f64>,
    /// Whether `delta_mid <= corollary_bound`; None off the noise event or
    /// when the bound is undefined.
    pub corollary_ok: Option<bool>,
    /// `delta_inf <= delta_mid` with rounding slack; holds unconditionally.
    pub chain_ok: bool,
    /// Max deviation in the error-decomposition identity for the grouped
    /// block.
    pub decomposition_err: f64,
    /// Per grouped coordinate: interval covered the truth.
    pub covered: Vec<bool>,
    /// Per grouped coordinate: interval width.
    pub width: Vec<f64>,
    /// Per grouped coordinate: standardized estimation error, distributed
    /// standard normal when the bias diagnostic vanishes.
    pub pivot: Vec<f64>,
    pub kkt_gap: f64,
    pub converged: bool,
    /// Compatibility constant used by the theory checks.
    pub phi0_used: f64,
    /// Per grouped coordinate: de-biased interval covered the truth.
    pub debias_covered: Option<Vec<bool>>,
}

/// A replicate that could not be completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicateFailure {
    pub seed: u64,
    pub message: String,
}

/// Aggregated results of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    /// Replicates that completed.
    pub replicates: usize,
    /// Replicates that failed.
    pub failed: usize,
    pub coverage_per_coord: Vec<f64>,
    pub omega0_frequency: f64,
    /// Fraction of noise-event replicates where the oracle bound failed.
    pub theorem1_violation_rate_given_omega0: f64,
    pub mean_delta_inf: f64,
    pub mean_interval_width: Vec<f64>,
    pub debias_coverage: Option<Vec<f64>>,
    pub base_seed: u64,
    pub seed_first: u64,
    pub seed_last: u64,
}

/// Full output of a run: summary, per-replicate records, failures.
#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

/// Run one replicate end to end.
pub fn run_one_replicate(params: &SimParams, rep: usize) -> Result<ReplicateRecord> {
    let seed = params.base_seed.wrapping_add(rep as u64);
    let generated = generate_design(&params.design, params.n, params.p, &params.g, seed)?;
    let beta0 = build_beta0(&params.beta0, params.p, &params.g)?;
    let instance = generate_response(generated.design, &beta0, params.sigma, seed)?;
    let design = &instance.design;

    let lambda = lambda_rule(params.a, params.sigma, params.n, params.p)?;
    let xt = design.residualize_minus_g();
    let yt = design.residualize_vec(&instance.y.view())?;
    let problem = LassoProblem::new(xt.view(), yt.view(), lambda)?;
    let fit = solve(&problem, &params.solver)?;

    let partial = fit_partial(design, &instance.y.view(), &fit, params.sigma)?;
    let beta0_mg = instance.beta0_minus_g();
    let beta0_g = instance.beta0_g();
    let (delta, delta_mid) = delta_diagnostic(design, &fit, &beta0_mg.view())?;
    let delta_inf = linf_norm(&delta.view());
    let chain_ok = delta_inf <= delta_mid + 1e-9 * (1.0 + delta_mid);

    // Error decomposition for the grouped block: estimation error plus the
    // bias diagnostic equals the pure noise term.
    let sqrt_n = (params.n as f64).sqrt();
    let noise_term = design.ols_g(&instance.epsilon.view())? * sqrt_n;
    let lhs_vec = (&partial.beta_g - &beta0_g) * sqrt_n + &delta;
    let mut decomposition_err = 0.0_f64;
    for (a, b) in lhs_vec.iter().zip(noise_term.iter()) {
        decomposition_err = decomposition_err.max((a - b).abs());
    }

    let region = confidence_region(&partial, params.level)?;
    let k = design.g_len();
    let mut covered = Vec::with_capacity(k);
    let mut width = Vec::with_capacity(k);
    let mut pivot = Vec::with_capacity(k);
    for j in 0..k {
        let iv = &region.intervals[j];
        covered.push(iv.contains(beta0_g[j]));
        width.push(2.0 * iv.half_width);
        let sd = partial.cov[[j, j]].sqrt();
        pivot.push((partial.beta_g[j] - beta0_g[j]) / sd);
    }

    let s_mg = instance.s_set_minus_g();
    let s_count = s_mg.len();
    let phi0_used = match params.phi0_policy {
        PhiPolicy::Fixed(v) => v,
        PhiPolicy::CertifiedOrSearch => match generated.certified_phi0 {
            Some(v) => v,
            None => {
                if s_count == 0 {
                    1.0
                } else {
                    let mut opts = params.phi0_search;
                    opts.seed = seed ^ 0x9e37_79b9_7f4a_7c15;
                    estimate_phi0(design, &s_mg, &opts)?.phi0_lower
                }
            }
        },
    };

    let theorem = theorem1_check(
        design,
        &fit,
        &beta0_mg.view(),
        &instance.epsilon.view(),
        params.a,
        params.sigma,
        phi0_used,
        s_count,
    )?;

    let corollary_bound = if s_count >= 1 {
        Some(params.sigma * corollary_bias_bound(design, params.a, phi0_used, s_count)?)
    } else {
        None
    };
    let corollary_ok = match (theorem.omega0_holds, corollary_bound) {
        (true, Some(b)) => Some(delta_mid <= b + 1e-9 * (1.0 + b)),
        _ => None,
    };

    let debias_covered = match &params.debias {
        None => None,
        Some(dp) => {
            let lambda_node = lambda_rule(dp.a_node, 1.0, params.n, design.m().max(2))?;
            let m_matrix = choose_m_nodewise(design, lambda_node)?;
            let result = debias(
                design,
                &instance.y.view(),
                &fit,
                &m_matrix.view(),
                DeltaBoundSpec::KnownTruth(beta0_mg.view()),
                params.sigma,
            )?;
            let z = normal_quantile((1.0 + params.level) / 2.0)?;
            let mut cov_flags = Vec::with_capacity(k);
            for j in 0..k {
                let hw = z * result.cov[[j, j]].sqrt();
                cov_flags.push((result.b_g[j] - beta0_g[j]).abs() <= hw);
            }
            Some(cov_flags)
        }
    };

    Ok(ReplicateRecord {
        seed,
        omega0: theorem.omega0_holds,
        bound_holds: theorem.bound_holds,
        lhs: theorem.lhs,
        rhs: theorem.rhs,
        delta_inf,
        delta_mid,
        corollary_bound,
        corollary_ok,
        chain_ok,
        decomposition_err,
        covered,
        width,
        pivot,
        kkt_gap: fit.kkt_gap,
        converged: fit.converged,
        phi0_used,
        debias_covered,
    })
}

type RepOutcome = std::result::Result<ReplicateRecord, ReplicateFailure>;

fn run_replicate_outcome(params: &SimParams, rep: usize) -> RepOutcome {
    run_one_replicate(params, rep).map_err(|e| ReplicateFailure {
        seed: params.base_seed.wrapping_add(rep as u64),
        message: e.to_string(),
    })
}

/// Run all replicates on the current thread, in order.
pub fn run_replicates_seq(params: &SimParams) -> Vec<RepOutcome> {
    (0..params.replicates)
        .map(|r| run_replicate_outcome(params, r))
        .collect()
}

/// Run replicates across the thread pool; results are collected in
/// replicate order, so downstream aggregation matches the sequential path
/// exactly.
#[cfg(feature = "parallel")]
pub fn run_replicates_par(params: &SimParams) -> Vec<RepOutcome> {
    (0..params.replicates)
        .into_par_iter()
        .map(|r| run_replicate_outcome(params, r))
        .collect()
}

/// Run the experiment and aggregate. Replicate failures are recorded and
/// tolerated up to 1% of the requested count; beyond that the whole run
/// fails.
pub fn run_monte_carlo(params: &SimParams) -> Result<MonteCarloRun> {
    params.validate()?;
    #[cfg(feature = "parallel")]
    let outcomes = run_replicates_par(params);
    #[cfg(not(feature = "parallel"))]
    let outcomes = run_replicates_seq(params);

    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let total = params.replicates;
    if failures.len() * 100 > total {
        return Err(Error::ExperimentFailure {
            failed: failures.len(),
            total,
        });
    }
    let summary = summarize(params, &records, failures.len());
    Ok(MonteCarloRun {
        summary,
        records,
        failures,
    })
}

/// Aggregate records (already in replicate order) into a summary with a
/// fixed accumulation order.
pub fn summarize(
    params: &SimParams,
    records: &[ReplicateRecord],
    failed: usize,
) -> MonteCarloSummary {
    let k = params.g.len();
    let n_rec = records.len();
    let denom = n_rec.max(1) as f64;
    let mut coverage = vec![0.0_f64; k];
    let mut width = vec![0.0_f64; k];
    let mut omega0_count = 0usize;
    let mut violations_given_omega0 = 0usize;
    let mut delta_sum = 0.0_f64;
    let mut debias_cov = vec![0.0_f64; k];
    let mut debias_seen = false;
    for rec in records {
        for j in 0..k {
            if rec.covered[j] {
                coverage[j] += 1.0;
            }
            width[j] += rec.width[j];
        }
        if rec.omega0 {
            omega0_count += 1;
            if !rec.bound_holds {
                violations_given_omega0 += 1;
            }
        }
        delta_sum += rec.delta_inf;
        if let Some(flags) = &rec.debias_covered {
            debias_seen = true;
            for j in 0..k {
                if flags[j] {
                    debias_cov[j] += 1.0;
                }
            }
        }
    }
    for j in 0..k {
        coverage[j] /= denom;
        width[j] /= denom;
        debias_cov[j] /= denom;
    }
    MonteCarloSummary {
        replicates: n_rec,
        failed,
        coverage_per_coord: coverage,
        omega0_frequency: omega0_count as f64 / denom,
        theorem1_violation_rate_given_omega0: if omega0_count > 0 {
            violations_given_omega0 as f64 / omega0_count as f64
        } else {
            0.0
        },
        mean_delta_inf: delta_sum / denom,
        mean_interval_width: width,
        debias_coverage: if debias_seen { Some(debias_cov) } else { None },
        base_seed: params.base_seed,
        seed_first: params.base_seed,
        seed_last: params
            .base_seed
            .wrapping_add(params.replicates.saturating_sub(1) as u64),
    }
}

/// One-sample Kolmogorov-Smirnov statistic against the standard normal.
pub fn ks_statistic(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("samples", "need at least one observation"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = normal_cdf(*x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    Ok(d)
}

/// Asymptotic two-sided p-value for the one-sample statistic, with the
/// standard small-sample correction to the effective sample size.
pub fn ks_p_value(d: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "sample size must be positive"));
    }
    if d <= 0.0 {
        return Ok(1.0);
    }
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut sum = 0.0_f64;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    Ok((2.0 * sum).clamp(0.0, 1.0))
}
