//! Independent oracles for integration tests.
//!
//! Everything here is deliberately written with different algorithms than the
//! library under test: dense Gauss-Jordan instead of QR/Cholesky, exhaustive
//! sign-pattern enumeration instead of coordinate descent, proximal-gradient
//! on the joint objective instead of profiling, cyclic Jacobi rotations for
//! eigenvalues. Slow and simple on purpose.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Invert a square matrix by Gauss-Jordan elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-12` of the largest entry.
pub fn gauss_jordan_inverse(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "inverse of a non-square matrix");
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    // Augmented [A | I].
    let mut w = Array2::<f64>::zeros((n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            w[[i, j]] = a[[i, j]];
        }
        w[[i, n + i]] = 1.0;
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| w[[i, col]].abs().total_cmp(&w[[j, col]].abs()))
            .unwrap();
        if w[[pivot_row, col]].abs() < 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            for j in 0..2 * n {
                w.swap([pivot_row, j], [col, j]);
            }
        }
        let pivot = w[[col, col]];
        for j in 0..2 * n {
            w[[col, j]] /= pivot;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = w[[i, col]];
            if factor == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                w[[i, j]] -= factor * w[[col, j]];
            }
        }
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            inv[[i, j]] = w[[i, n + j]];
        }
    }
    Some(inv)
}

/// Solve `A z = b` through the Gauss-Jordan inverse.
pub fn gauss_jordan_solve(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Option<Array1<f64>> {
    Some(gauss_jordan_inverse(a)?.dot(b))
}

/// A solution found by exhaustive sign-pattern enumeration.
pub struct BruteForceSolution {
    pub beta: Array1<f64>,
    pub objective: f64,
    /// True when two sign patterns produced stationary points with equal
    /// objective but different coefficients (non-unique minimizer).
    pub degenerate: bool,
}

/// Exhaustive lasso solver for `(1/2n)||y - X b||^2 + lambda ||b||_1`:
/// enumerate all 3^p sign patterns, solve the stationarity equations on each
/// active set, keep candidates whose signs and inactive gradients are
/// consistent, and return the lowest objective. Only usable for tiny `p`.
pub fn brute_force_lasso(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    lambda: f64,
) -> Option<BruteForceSolution> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    assert!(p <= 12, "3^p enumeration is exponential; keep p tiny");
    let xty = x.t().dot(y) / n;
    let gram = x.t().dot(x) / n;

    let mut best: Option<BruteForceSolution> = None;
    let mut degenerate = false;
    let total = 3usize.pow(p as u32);
    'patterns: for code in 0..total {
        let mut sign = vec![0i8; p];
        let mut c = code;
        for s in sign.iter_mut() {
            *s = match c % 3 {
                0 => 0,
                1 => 1,
                _ => -1,
            };
            c /= 3;
        }
        let active: Vec<usize> = (0..p).filter(|&j| sign[j] != 0).collect();
        let mut beta = Array1::<f64>::zeros(p);
        if !active.is_empty() {
            let k = active.len();
            let mut g_aa = Array2::<f64>::zeros((k, k));
            let mut rhs = Array1::<f64>::zeros(k);
            for (ai, &i) in active.iter().enumerate() {
                for (aj, &j) in active.iter().enumerate() {
                    g_aa[[ai, aj]] = gram[[i, j]];
                }
                rhs[ai] = xty[i] - lambda * sign[i] as f64;
            }
            let sol = match gauss_jordan_solve(&g_aa.view(), &rhs.view()) {
                Some(s) => s,
                None => continue 'patterns,
            };
            for (ai, &i) in active.iter().enumerate() {
                // The fitted coefficient must not contradict its declared sign.
                if sol[ai] * f64::from(sign[i]) < -1e-12 {
                    continue 'patterns;
                }
                beta[i] = sol[ai];
            }
        }
        // Inactive coordinates must satisfy |gradient| <= lambda.
        let grad = &xty - &gram.dot(&beta);
        for j in 0..p {
            if sign[j] == 0 && grad[j].abs() > lambda * (1.0 + 1e-9) + 1e-12 {
                continue 'patterns;
            }
        }
        let r = y.to_owned() - x.dot(&beta);
        let obj = r.dot(&r) / (2.0 * n) + lambda * beta.iter().map(|v| v.abs()).sum::<f64>();
        match &mut best {
            None => {
                best = Some(BruteForceSolution {
                    beta,
                    objective: obj,
                    degenerate: false,
                })
            }
            Some(b) => {
                let d = beta
                    .iter()
                    .zip(b.beta.iter())
                    .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
                if obj < b.objective - 1e-12 {
                    b.beta = beta;
                    b.objective = obj;
                } else if (obj - b.objective).abs() <= 1e-10 && d > 1e-8 {
                    degenerate = true;
                }
            }
        }
    }
    best.map(|mut b| {
        b.degenerate = degenerate;
        b
    })
}

/// Largest eigenvalue of `X^T X / n` by power iteration, for step sizes.
fn lipschitz(x: &ArrayView2<f64>) -> f64 {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut v = Array1::<f64>::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut lam = 1.0;
    for _ in 0..500 {
        let w = x.t().dot(&x.dot(&v)) / n;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lam = norm;
        v = w / norm;
    }
    lam
}

/// Accelerated proximal-gradient solver for the JOINT partially penalized
/// objective `(1/2n)||y - X b||^2 + lambda * sum_{j not in G} |b_j|`,
/// leaving coordinates in `g` unpenalized. Works on the full design, no
/// profiling, no residualization — an independent route to the same optimum.
pub fn fista_partial(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    g: &[usize],
    lambda: f64,
    max_iter: usize,
) -> Array1<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let in_g: Vec<bool> = {
        let mut v = vec![false; p];
        for &j in g {
            v[j] = true;
        }
        v
    };
    let step = 1.0 / (lipschitz(x) * 1.01);
    let mut beta = Array1::<f64>::zeros(p);
    let mut momentum = beta.clone();
    let mut t = 1.0_f64;
    for _ in 0..max_iter {
        let grad = x.t().dot(&(x.dot(&momentum) - y)) / n;
        let mut next = &momentum - &(grad * step);
        for j in 0..p {
            if !in_g[j] {
                let v = next[j];
                let thr = lambda * step;
                next[j] = if v > thr {
                    v - thr
                } else if v < -thr {
                    v + thr
                } else {
                    0.0
                };
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        momentum = &next + &((&next - &beta) * ((t - 1.0) / t_next));
        beta = next;
        t = t_next;
    }
    beta
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn symmetric_eigenvalues(a: &ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.iter().fold(0.0_f64, |s, v| s.max(v.abs()))) {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if m[[i, j]].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (m[[j, j]] - m[[i, i]]) / m[[i, j]];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mik = m[[i, k]];
                    let mjk = m[[j, k]];
                    m[[i, k]] = c * mik - s * mjk;
                    m[[j, k]] = s * mik + c * mjk;
                }
                for k in 0..n {
                    let mki = m[[k, i]];
                    let mkj = m[[k, j]];
                    m[[k, i]] = c * mki - s * mkj;
                    m[[k, j]] = s * mki + c * mkj;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

/// Deterministic standard-normal matrix for test problems.
pub fn gaussian_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
}

/// Deterministic standard-normal vector for test problems.
pub fn gaussian_vector(n: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut rng))
}

/// Uniform value in `[lo, hi)` from a seeded stream, for scalar test knobs.
pub fn uniform_in(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(lo..hi)
}

pub fn max_abs_diff(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()))
}
