//! Finite-sample guarantees for the penalized block, evaluated numerically.
//!
//! Three ingredients are covered:
//! - the compatibility constant phi0 of the residualized design over the
//!   cone of directions whose off-signal l1 mass is at most a constant
//!   multiple of the signal mass;
//! - the oracle inequality bounding prediction error plus a scaled l1 error
//!   by `3 A^2 sigma^2 s ln(p) / (n phi0^2)`, which holds deterministically
//!   on the noise-control event below whenever phi0 is valid;
//! - the noise-control event `||Xt^T eps||_inf / n <= lambda / 2`.
//!
//! The deterministic implication (event holds and phi0 certified, therefore
//! the bound holds) is checked per replicate by the simulation lab; the
//! probability floor `1 - p^{-(A^2/8 - 1)}` is only verified as a Monte
//! Carlo frequency.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::design::PartitionedDesign;
use crate::error::{invalid, Result};
use crate::lasso::{lambda_rule, LassoFit};
use crate::linalg::{l1_norm, linf_norm, operator_inf_norm};

/// Which search produced a compatibility estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiMethod {
    /// Deterministic mesh over the cone's sign patterns and weight
    /// compositions, plus local random refinement. Reference-quality for
    /// small blocks.
    ExactSmall,
    /// Random directions sampled inside the cone, plus refinement. A
    /// heuristic estimate for larger blocks.
    RandomConeSearch,
}

/// How to pick the search method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiSearchMode {
    /// Mesh search when the block has at most [`EXACT_SMALL_LIMIT`] columns,
    /// random search otherwise.
    #[default]
    Auto,
    ForceExactSmall,
    ForceRandom,
}

/// Largest penalized-block size the mesh search accepts.
pub const EXACT_SMALL_LIMIT: usize = 8;

/// Block size at or below which `Auto` picks the mesh search.
pub const AUTO_EXACT_LIMIT: usize = 6;

/// Knobs for the compatibility search.
#[derive(Debug, Clone, Copy)]
pub struct ConeSearchOptions {
    /// Multiple of the signal l1 mass allowed off-signal. The guarantees
    /// here are stated for 3; other values are searched but carry no theory.
    pub cone_constant: f64,
    /// Random directions for the sampled search.
    pub n_directions: usize,
    /// Seed for all randomized parts; identical seeds reproduce the report.
    pub seed: u64,
    /// Weight-grid resolution for the mesh search.
    pub mesh_resolution: usize,
    pub mode: PhiSearchMode,
}

impl Default for ConeSearchOptions {
    fn default() -> Self {
        ConeSearchOptions {
            cone_constant: 3.0,
            n_directions: 100_000,
            seed: 0x0c0_1d5eed,
            mesh_resolution: 8,
            mode: PhiSearchMode::Auto,
        }
    }
}

/// Result of a compatibility search.
#[derive(Debug, Clone)]
pub struct CompatibilityReport {
    /// Smallest ratio found; an upper estimate of the true infimum that
    /// serves as the working value of phi0.
    pub phi0_lower: f64,
    pub method: PhiMethod,
    /// Direction attaining the reported ratio, in penalized-block
    /// coordinates; satisfies the cone constraint.
    pub worst_direction: Array1<f64>,
    /// Directions evaluated.
    pub n_directions: usize,
}

struct ConeProblem {
    sigma_tilde: Array2<f64>,
    s_pos: Vec<usize>,
    in_s: Vec<bool>,
    s_len: f64,
    cone_constant: f64,
}

impl ConeProblem {
    /// Ratio sqrt(s * b' sigma_tilde b) / ||b_S||_1, or None when the
    /// direction is outside the cone or has no signal mass.
    fn ratio(&self, b: &ArrayView1<f64>) -> Option<f64> {
        let mut s_mass = 0.0;
        let mut n_mass = 0.0;
        for (j, v) in b.iter().enumerate() {
            if self.in_s[j] {
                s_mass += v.abs();
            } else {
                n_mass += v.abs();
            }
        }
        if s_mass <= 1e-300 || n_mass > self.cone_constant * s_mass + 1e-10 * s_mass {
            return None;
        }
        let quad = b.dot(&self.sigma_tilde.dot(b)).max(0.0);
        Some((self.s_len * quad).sqrt() / s_mass)
    }

    /// Scale the off-signal part down to the cone boundary when it
    /// protrudes; returns None when there is no signal mass to anchor to.
    fn clip_to_cone(&self, b: &mut Array1<f64>) -> Option<()> {
        let mut s_mass = 0.0;
        let mut n_mass = 0.0;
        for (j, v) in b.iter().enumerate() {
            if self.in_s[j] {
                s_mass += v.abs();
            } else {
                n_mass += v.abs();
            }
        }
        if s_mass <= 1e-300 {
            return None;
        }
        let limit = self.cone_constant * s_mass;
        if n_mass > limit {
            let scale = limit / n_mass;
            for (j, v) in b.iter_mut().enumerate() {
                if !self.in_s[j] {
                    *v *= scale;
                }
            }
        }
        Some(())
    }
}

/// Search for the compatibility constant of the residualized design over
/// the cone anchored at signal set `s_set` (original column indices, none
/// of them grouped).
///
/// Returns the smallest ratio `sqrt(|S| * b' sigma_tilde b) / ||b_S||_1`
/// found. For small blocks a deterministic mesh over sign patterns and
/// weight compositions is scanned and then refined locally; larger blocks
/// use seeded random cone directions plus the same refinement. Identical
/// options produce identical reports.
pub fn estimate_phi0(
    design: &PartitionedDesign,
    s_set: &[usize],
    opts: &ConeSearchOptions,
) -> Result<CompatibilityReport> {
    if s_set.is_empty() {
        return Err(invalid("s_set", "signal index set must be nonempty"));
    }
    if !(opts.cone_constant > 0.0) {
        return Err(invalid("cone_constant", "cone constant must be positive"));
    }
    if opts.mesh_resolution == 0 {
        return Err(invalid(
            "mesh_resolution",
            "mesh resolution must be positive",
        ));
    }
    let m = design.m();
    // Map original column indices to penalized-block positions.
    let mut s_pos = Vec::with_capacity(s_set.len());
    for &j in s_set {
        match design.minus_g().binary_search(&j) {
            Ok(pos) => s_pos.push(pos),
            Err(_) => {
                return Err(invalid(
                    "s_set",
                    format!("index {j} is not a penalized column of this design"),
                ))
            }
        }
    }
    s_pos.sort_unstable();
    s_pos.dedup();
    if s_pos.len() != s_set.len() {
        return Err(invalid("s_set", "signal indices must be distinct"));
    }

    let method = match opts.mode {
        PhiSearchMode::Auto => {
            if m <= AUTO_EXACT_LIMIT {
                PhiMethod::ExactSmall
            } else {
                PhiMethod::RandomConeSearch
            }
        }
        PhiSearchMode::ForceExactSmall => {
            if m > EXACT_SMALL_LIMIT {
                return Err(invalid(
                    "mode",
                    format!(
                        "mesh search supports at most {EXACT_SMALL_LIMIT} penalized columns, got {m}"
                    ),
                ));
            }
            PhiMethod::ExactSmall
        }
        PhiSearchMode::ForceRandom => PhiMethod::RandomConeSearch,
    };

    let cov = design.partitioned_covariance()?;
    let mut in_s = vec![false; m];
    for &pos in &s_pos {
        in_s[pos] = true;
    }
    let problem = ConeProblem {
        sigma_tilde: cov.sigma_tilde().clone(),
        s_len: s_pos.len() as f64,
        s_pos,
        in_s,
        cone_constant: opts.cone_constant,
    };

    let mut best: Option<(f64, Array1<f64>)> = None;
    let mut evaluated = 0usize;
    let mut consider = |b: &Array1<f64>, best: &mut Option<(f64, Array1<f64>)>| {
        if let Some(r) = problem.ratio(&b.view()) {
            if best.as_ref().is_none_or(|(v, _)| r < *v) {
                *best = Some((r, b.clone()));
            }
        }
    };

    // Seed candidates shared by both methods: coordinate directions on S and
    // sign-uniform weights over every subset of S with no off-signal mass.
    // These hit the exact minimizer for designs with orthogonal residualized
    // columns and catch degenerate (zero) columns.
    for &pos in &problem.s_pos {
        let mut e = Array1::zeros(m);
        e[pos] = 1.0;
        evaluated += 1;
        consider(&e, &mut best);
    }
    let s_card = problem.s_pos.len();
    if s_card <= 16 {
        for mask in 1u32..(1 << s_card) {
            let mut b = Array1::zeros(m);
            for (i, &pos) in problem.s_pos.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    b[pos] = 1.0;
                }
            }
            evaluated += 1;
            consider(&b, &mut best);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    match method {
        PhiMethod::ExactSmall => {
            evaluated += mesh_scan(&problem, m, opts.mesh_resolution, &mut consider, &mut best);
        }
        PhiMethod::RandomConeSearch => {
            for _ in 0..opts.n_directions {
                let b = random_cone_direction(&problem, m, &mut rng);
                evaluated += 1;
                consider(&b, &mut best);
            }
        }
    }

    // Local refinement around the incumbent with shrinking radius.
    let stages = 6;
    let per_stage = 800;
    let mut radius = 0.5;
    for _ in 0..stages {
        let center = match &best {
            Some((_, c)) => c.clone(),
            None => break,
        };
        let scale = linf_norm(&center.view()).max(1e-12);
        for _ in 0..per_stage {
            let mut b = center.clone();
            for v in b.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += radius * scale * g;
            }
            if problem.clip_to_cone(&mut b).is_none() {
                continue;
            }
            evaluated += 1;
            consider(&b, &mut best);
        }
        radius *= 0.5;
    }

    let (phi0_lower, worst_direction) =
        best.expect("coordinate candidates always include a feasible direction");
    Ok(CompatibilityReport {
        phi0_lower,
        method,
        worst_direction,
        n_directions: evaluated,
    })
}

/// Deterministic scan: every sign pattern in {-1,0,1}^m crossed with weight
/// compositions of the grid resolution over the pattern's support.
/// Off-signal mass beyond the cone is clipped to the boundary. Returns the
/// number of directions evaluated.
fn mesh_scan(
    problem: &ConeProblem,
    m: usize,
    resolution: usize,
    consider: &mut impl FnMut(&Array1<f64>, &mut Option<(f64, Array1<f64>)>),
    best: &mut Option<(f64, Array1<f64>)>,
) -> usize {
    let mut evaluated = 0usize;
    let mut signs = vec![0i8; m];
    let mut pattern = 0u64;
    let n_patterns = 3u64.pow(m as u32);
    while pattern < n_patterns {
        let mut code = pattern;
        let mut support = Vec::with_capacity(m);
        let mut touches_s = false;
        for (j, sign) in signs.iter_mut().enumerate().take(m) {
            let digit = (code % 3) as i8;
            code /= 3;
            *sign = digit - 1;
            if *sign != 0 {
                support.push(j);
                if problem.in_s[j] {
                    touches_s = true;
                }
            }
        }
        pattern += 1;
        if support.is_empty() || !touches_s {
            continue;
        }
        // Compositions of `resolution` into |support| positive parts.
        let k = support.len();
        if k > resolution {
            continue;
        }
        let mut weights = Vec::with_capacity(k);
        for_each_composition(resolution, k, &mut weights, &mut |w: &[usize]| {
            let mut b = Array1::zeros(m);
            for (i, &j) in support.iter().enumerate() {
                b[j] = signs[j] as f64 * w[i] as f64;
            }
            if problem.clip_to_cone(&mut b).is_some() {
                evaluated += 1;
                consider(&b, best);
            }
        });
    }
    evaluated
}

/// Enumerate every way to write `total` as an ordered sum of `parts`
/// positive integers, calling `f` with each weight vector.
fn for_each_composition(
    total: usize,
    parts: usize,
    prefix: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if parts == 1 {
        prefix.push(total);
        f(prefix);
        prefix.pop();
        return;
    }
    for w in 1..=(total - (parts - 1)) {
        prefix.push(w);
        for_each_composition(total - w, parts - 1, prefix, f);
        prefix.pop();
    }
}

/// Draw a direction inside the cone: unit signal l1 mass, off-signal mass a
/// uniform fraction of the allowance.
fn random_cone_direction(problem: &ConeProblem, m: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut b = Array1::zeros(m);
    let mut s_mass = 0.0;
    for &pos in &problem.s_pos {
        let g: f64 = StandardNormal.sample(rng);
        b[pos] = g;
        s_mass += g.abs();
    }
    if s_mass <= 1e-300 {
        b[problem.s_pos[0]] = 1.0;
        s_mass = 1.0;
    }
    for &pos in &problem.s_pos {
        b[pos] /= s_mass;
    }
    let n_count = m - problem.s_pos.len();
    if n_count > 0 {
        let t: f64 = rng.random::<f64>();
        let mut n_mass = 0.0;
        let mut raw = Vec::with_capacity(n_count);
        for j in 0..m {
            if !problem.in_s[j] {
                let g: f64 = StandardNormal.sample(rng);
                raw.push((j, g));
                n_mass += g.abs();
            }
        }
        if n_mass > 1e-300 {
            let target = t * problem.cone_constant;
            for (j, g) in raw {
                b[j] = g / n_mass * target;
            }
        }
    }
    b
}

/// Outcome of evaluating the oracle inequality on one fitted instance.
#[derive(Debug, Clone)]
pub struct TheoremOneCheck {
    /// Prediction term plus half-penalty-scaled l1 error.
    pub lhs: f64,
    /// `3 A^2 sigma^2 s ln(p) / (n phi0^2)`.
    pub rhs: f64,
    /// Whether the noise-control event held for this noise vector.
    pub omega0_holds: bool,
    /// Whether lhs <= rhs.
    pub bound_holds: bool,
    /// `1 - p^{-(A^2/8 - 1)}`, the guaranteed probability of the event.
    pub prob_floor: f64,
}

/// Evaluate the oracle inequality for a fitted penalized block.
///
/// `beta0_minus_g` are the true penalized coefficients, `epsilon` the noise
/// vector (both known in simulation), `s` the sparsity entering the bound,
/// and `phi0` a valid compatibility constant. The fit's penalty must match
/// `lambda_rule(a, sigma, n, p)` for the stated guarantee to apply.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_check(
    design: &PartitionedDesign,
    fit: &LassoFit,
    beta0_minus_g: &ArrayView1<f64>,
    epsilon: &ArrayView1<f64>,
    a: f64,
    sigma: f64,
    phi0: f64,
    s: usize,
) -> Result<TheoremOneCheck> {
    if !(phi0 > 0.0) {
        return Err(invalid("phi0", "compatibility constant must be positive"));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "noise level must be positive"));
    }
    if beta0_minus_g.len() != design.m() {
        return Err(crate::error::dim_mismatch(format!(
            "true coefficient vector has length {}, expected {}",
            beta0_minus_g.len(),
            design.m()
        )));
    }
    let n = design.n() as f64;
    let p = design.p();
    let rule = lambda_rule(a, sigma, design.n(), p)?;
    if (fit.lambda - rule).abs() > 1e-9 * rule.max(1.0) {
        return Err(invalid(
            "lambda",
            format!(
                "fit used penalty {}, but the guarantee requires {rule} for these parameters",
                fit.lambda
            ),
        ));
    }

    let d = &fit.beta - beta0_minus_g;
    let xd = design.residualize_minus_g().dot(&d);
    let lhs = xd.dot(&xd) / n + fit.lambda / 2.0 * l1_norm(&d.view());
    let rhs = 3.0 * a * a * sigma * sigma * s as f64 * (p as f64).ln() / (n * phi0 * phi0);
    let omega0_holds = omega0_check(design, epsilon, fit.lambda)?;
    Ok(TheoremOneCheck {
        lhs,
        rhs,
        omega0_holds,
        bound_holds: lhs <= rhs,
        prob_floor: prob_floor(a, p),
    })
}

/// Noise-control event: `||Xt^T epsilon||_inf / n <= lambda / 2`.
pub fn omega0_check(
    design: &PartitionedDesign,
    epsilon: &ArrayView1<f64>,
    lambda: f64,
) -> Result<bool> {
    if epsilon.len() != design.n() {
        return Err(crate::error::dim_mismatch(format!(
            "noise vector has length {}, expected {}",
            epsilon.len(),
            design.n()
        )));
    }
    if !(lambda > 0.0) {
        return Err(invalid("lambda", "penalty must be positive"));
    }
    let resid = design.residualize_vec(epsilon)?;
    let score = design.x_minus_g().t().dot(&resid) / design.n() as f64;
    Ok(linf_norm(&score.view()) <= lambda / 2.0)
}

/// Probability floor `1 - p^{-(A^2/8 - 1)}` for the noise-control event.
pub fn prob_floor(a: f64, p: usize) -> f64 {
    1.0 - (p as f64).powf(-(a * a / 8.0 - 1.0))
}

/// Worst-case leakage of penalized-block error into the grouped estimate:
/// `(6 A / phi0^2) * ||Theta||_inf * s * sqrt(ln p)`, with the matrix norm
/// the max absolute row sum.
///
/// Stated at unit noise scale; for other sigma the l1 error budget scales
/// accordingly and this value should be multiplied by sigma^2 by the caller
/// comparing against it.
pub fn corollary_bias_bound(
    design: &PartitionedDesign,
    a: f64,
    phi0: f64,
    s: usize,
) -> Result<f64> {
    if !(phi0 > 0.0) {
        return Err(invalid("phi0", "compatibility constant must be positive"));
    }
    if s == 0 {
        return Err(invalid("s", "sparsity must be at least 1"));
    }
    if !(a > 0.0) {
        return Err(invalid("a", "penalty multiplier must be positive"));
    }
    let theta_inf = operator_inf_norm(&design.theta().view());
    let p = design.p() as f64;
    Ok(6.0 * a / (phi0 * phi0) * theta_inf * s as f64 * p.ln().sqrt())
}

/// l1 error budget implied by the oracle inequality:
/// `(2 / lambda) * 3 A^2 sigma^2 s ln(p) / (n phi0^2)`.
pub fn l1_error_bound(
    a: f64,
    sigma: f64,
    s: usize,
    n: usize,
    p: usize,
    phi0: f64,
    lambda: f64,
) -> Result<f64> {
    if !(phi0 > 0.0) {
        return Err(invalid("phi0", "compatibility constant must be positive"));
    }
    if !(lambda > 0.0) {
        return Err(invalid("lambda", "penalty must be positive"));
    }
    if p < 2 {
        return Err(invalid("p", "bound needs at least two columns"));
    }
    if n == 0 {
        return Err(invalid("n", "sample size must be positive"));
    }
    Ok(
        2.0 / lambda * 3.0 * a * a * sigma * sigma * s as f64 * (p as f64).ln()
            / (n as f64 * phi0 * phi0),
    )
}
