//! Minimum-norm least squares and the projection identities the closed-form
//! risks are built on.
//!
//! Features are stored one sample per column, so a design `X` is `p × n` and
//! the fitted labels are `Xᵀ w`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::domain::Check;
use crate::taskgen::sub_seed;

/// Relative singular-value cutoff of the SVD route.
pub const DEFAULT_RCOND: f64 = 1e-12;
/// Largest Gram condition number accepted before switching to SVD.
pub const DEFAULT_MAX_GRAM_CONDITION: f64 = 1e12;
/// An interpolating Gram solution is rejected when its residual exceeds this
/// multiple of `1 + ‖y‖∞`.
const INTERPOLATION_REL_TOL: f64 = 1e-9;
const EIGEN_ITERATIONS: usize = 12;

/// Which factorisation produced a solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveRoute {
    Empty,
    Gram,
    Svd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// Number of singular directions used.
    pub rank: usize,
    /// `min(p, n)`.
    pub max_rank: usize,
    pub sigma_max: f64,
    /// Smallest retained singular value.
    pub sigma_min: f64,
    /// `sigma_max / sigma_min` (estimated on the Gram route).
    pub condition: f64,
    /// Singular values discarded by the cutoff.
    pub truncated: usize,
    pub route: SolveRoute,
}

impl SolveDiagnostics {
    fn empty(max_rank: usize) -> Self {
        Self {
            rank: 0,
            max_rank,
            sigma_max: 0.0,
            sigma_min: 0.0,
            condition: f64::NAN,
            truncated: max_rank,
            route: SolveRoute::Empty,
        }
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < self.max_rank
    }
}

/// Minimum-norm solution of `min ‖Xᵀw − y‖` plus diagnostics.
#[derive(Clone, Debug)]
pub struct MinNormFit {
    pub weights: DVector<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Solver for `w = pinv(Xᵀ) y`.
///
/// Uses a Cholesky factorisation of the smaller Gram matrix (`XᵀX` or `XXᵀ`)
/// when it is well conditioned, and a truncated SVD of `X` otherwise. In the
/// interpolating regime the Gram solution is additionally checked to fit the
/// labels; if it does not, the SVD route is used.
#[derive(Clone, Copy, Debug)]
pub struct MinNormSolver {
    pub rcond: f64,
    pub max_gram_condition: f64,
}

impl Default for MinNormSolver {
    fn default() -> Self {
        Self {
            rcond: DEFAULT_RCOND,
            max_gram_condition: DEFAULT_MAX_GRAM_CONDITION,
        }
    }
}

impl MinNormSolver {
    /// Solver that always takes the SVD route.
    pub fn svd_only(rcond: f64) -> Self {
        Self {
            rcond,
            max_gram_condition: 0.0,
        }
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> MinNormFit {
        let (p, n) = x.shape();
        assert_eq!(y.len(), n, "label count must equal the number of columns of X");
        let max_rank = p.min(n);
        if max_rank == 0 {
            return MinNormFit {
                weights: DVector::zeros(p),
                diagnostics: SolveDiagnostics::empty(max_rank),
            };
        }
        if self.max_gram_condition > 0.0 {
            if let Some(fit) = self.gram_fit(x, y) {
                return fit;
            }
        }
        self.svd_fit(x, y)
    }

    /// `w0 + fit(X, y − Xᵀ w0)`: the point closest to `w0` among the
    /// least-squares solutions.
    pub fn fit_offset(&self, x: &DMatrix<f64>, y: &DVector<f64>, w0: &DVector<f64>) -> MinNormFit {
        assert_eq!(w0.len(), x.nrows(), "offset must live in R^p");
        let r = y - x.tr_mul(w0);
        let mut fit = self.fit(x, &r);
        fit.weights += w0;
        fit
    }

    fn gram_fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Option<MinNormFit> {
        let (p, n) = x.shape();
        let overparam = p >= n;
        // `transpose() * x` runs through the blocked matmul kernel, which is
        // several times faster than `tr_mul` for matrix products.
        let gram = if overparam {
            x.transpose() * x
        } else {
            x * x.transpose()
        };
        let chol = gram.clone().cholesky()?;
        let (lmax, lmin) = extreme_eigenvalues(&gram, &chol);
        if lmin.is_nan() || lmin <= 0.0 || lmax / lmin > self.max_gram_condition {
            return None;
        }
        let weights = if overparam {
            let w = x * chol.solve(y);
            let tol = INTERPOLATION_REL_TOL * (1.0 + y.amax());
            if (x.tr_mul(&w) - y).amax() > tol {
                return None;
            }
            w
        } else {
            chol.solve(&(x * y))
        };
        Some(MinNormFit {
            weights,
            diagnostics: SolveDiagnostics {
                rank: gram.nrows(),
                max_rank: gram.nrows(),
                sigma_max: lmax.sqrt(),
                sigma_min: lmin.sqrt(),
                condition: (lmax / lmin).sqrt(),
                truncated: 0,
                route: SolveRoute::Gram,
            },
        })
    }

    fn svd_fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> MinNormFit {
        let (p, n) = x.shape();
        let max_rank = p.min(n);
        let svd = x.clone().svd(true, true);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
        let s = &svd.singular_values;
        let sigma_max = s.max();
        let cutoff = self.rcond * sigma_max;
        let mut weights = DVector::zeros(p);
        let mut rank = 0;
        let mut sigma_min = f64::INFINITY;
        for i in 0..s.len() {
            if s[i] > cutoff {
                let coef = v_t.row(i).transpose().dot(y) / s[i];
                weights.axpy(coef, &u.column(i), 1.0);
                rank += 1;
                sigma_min = sigma_min.min(s[i]);
            }
        }
        if rank == 0 {
            sigma_min = 0.0;
        }
        MinNormFit {
            weights,
            diagnostics: SolveDiagnostics {
                rank,
                max_rank,
                sigma_max,
                sigma_min,
                condition: if rank > 0 { sigma_max / sigma_min } else { f64::NAN },
                truncated: max_rank - rank,
                route: SolveRoute::Svd,
            },
        }
    }
}

/// Power iteration for the largest eigenvalue and inverse iteration for the
/// smallest eigenvalue of a symmetric positive definite matrix.
fn extreme_eigenvalues(gram: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> (f64, f64) {
    let k = gram.nrows();
    // Alternating signs avoid starting orthogonal to the top eigenvector of
    // matrices with a dominant all-ones direction.
    let start = DVector::from_fn(k, |i, _| 1.0 + 0.5 * ((i % 3) as f64));
    let mut v = start.normalize();
    let mut lmax = 0.0;
    for _ in 0..EIGEN_ITERATIONS {
        let gv = gram * &v;
        lmax = v.dot(&gv);
        let norm = gv.norm();
        if norm == 0.0 {
            break;
        }
        v = gv / norm;
    }
    let mut u = start.normalize();
    let mut inv_max = 0.0;
    for _ in 0..EIGEN_ITERATIONS {
        let su = chol.solve(&u);
        inv_max = u.dot(&su);
        let norm = su.norm();
        if !norm.is_finite() || norm == 0.0 {
            return (lmax, 0.0);
        }
        u = su / norm;
    }
    (lmax, 1.0 / inv_max)
}

/// `pinv(Xᵀ) y` with the default solver.
pub fn min_norm_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> MinNormFit {
    MinNormSolver::default().fit(x, y)
}

/// `w0 + pinv(Xᵀ)(y − Xᵀ w0)` with the default solver.
pub fn offset_min_norm_fit(x: &DMatrix<f64>, y: &DVector<f64>, w0: &DVector<f64>) -> MinNormFit {
    MinNormSolver::default().fit_offset(x, y, w0)
}

/// Sizes of the random designs used by [`projection_identity_suite`].
#[derive(Clone, Copy, Debug)]
pub struct IdentitySizes {
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl Default for IdentitySizes {
    fn default() -> Self {
        Self {
            p: 64,
            n1: 10,
            n2: 12,
            n3: 8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IdentitySuiteOptions {
    pub sizes: IdentitySizes,
    pub instances: usize,
    pub tolerance: f64,
    /// Flips the sign of one correction term so the harness can be shown to
    /// catch a wrong identity.
    pub perturb: bool,
}

impl Default for IdentitySuiteOptions {
    fn default() -> Self {
        Self {
            sizes: IdentitySizes::default(),
            instances: 20,
            tolerance: 1e-8,
            perturb: false,
        }
    }
}

/// `X (XᵀX)^{-1}`, i.e. `pinv(Xᵀ)` for full column rank `X`.
fn right_pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = x.transpose() * x;
    let inv = gram
        .cholesky()
        .expect("random Gaussian design has full column rank")
        .inverse();
    x * inv
}

fn projector(x: &DMatrix<f64>) -> DMatrix<f64> {
    right_pinv(x) * x.transpose()
}

fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Numerically checks the block-projection identities on random Gaussian
/// designs `X_1, X_2, X_3`. For each identity the largest absolute entrywise
/// discrepancy across all instances is reported.
///
/// With `P_1` the projector onto `span(X_1)`, `H = X_2ᵀ(I−P_1)X_2`,
/// `X_{12} = [X_1, X_2]` and `P_{0|t}` the map `X_{12}(X_{12}ᵀX_{12})^{-1}`
/// applied to the block design that keeps only task `t`'s columns:
///
/// 1. `P_{12} = P_1 + (I−P_1)X_2 H^{-1} X_2ᵀ(I−P_1)`
/// 2. `P_{0|1} = P_1 − (I−P_1)X_2 H^{-1} X_2ᵀ P_1`
/// 3. `P_{0|2} = (I−P_1)X_2 H^{-1} X_2ᵀ`
/// 4. `P_{0|1}ᵀP_{0|1} = P_1 + P_1 X_2 H^{-1} X_2ᵀ P_1`
/// 5. `pinv(X_{12}ᵀ) = [pinv(X_1ᵀ) − (I−P_1)X_2 H^{-1}X_2ᵀ pinv(X_1ᵀ), (I−P_1)X_2 H^{-1}]`
/// 6. the three-block cross term
///    `P_{0|1}ᵀP_{0|3} = −P_1(I−P̂)X_3 (X_3ᵀ(I−P_1)(I−P̂)X_3)^{-1} X_3ᵀ`
///    with `P̂ = X_2 H^{-1} X_2ᵀ(I−P_1)`, where now `X_{123} = [X_1, X_2, X_3]`.
pub fn projection_identity_suite(seed: u64, opts: &IdentitySuiteOptions) -> Vec<Check> {
    const NAMES: [&str; 6] = [
        "joint projector split",
        "task-1 restricted projector",
        "task-2 restricted projector",
        "restricted projector gram",
        "joint pseudoinverse blocks",
        "three-block cross term",
    ];
    let mut worst = [0.0f64; 6];
    let IdentitySizes { p, n1, n2, n3 } = opts.sizes;
    let flip = if opts.perturb { -1.0 } else { 1.0 };
    for inst in 0..opts.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, inst as u64));
        let x1 = gaussian(&mut rng, p, n1);
        let x2 = gaussian(&mut rng, p, n2);
        let x3 = gaussian(&mut rng, p, n3);
        let eye = DMatrix::<f64>::identity(p, p);

        let p1 = projector(&x1);
        let q1 = &eye - &p1;
        let x12 = hcat(&[&x1, &x2]);
        let x12_pinv = right_pinv(&x12);
        let p12 = &x12_pinv * x12.transpose();

        // (I−P_1) X_2 H^{-1}
        let (c2, h_inv) = if n2 > 0 {
            let q1x2 = &q1 * &x2;
            let h = x2.transpose() * &q1x2;
            let h_inv = h.cholesky().expect("H is positive definite").inverse();
            (&q1x2 * &h_inv, h_inv)
        } else {
            (DMatrix::zeros(p, 0), DMatrix::zeros(0, 0))
        };

        let x01 = hcat(&[&x1, &DMatrix::zeros(p, n2)]);
        let x02 = hcat(&[&DMatrix::zeros(p, n1), &x2]);
        let p01 = &x12_pinv * x01.transpose();
        let p02 = &x12_pinv * x02.transpose();

        let rhs1 = &p1 + flip * (&c2 * x2.transpose() * &q1);
        worst[0] = worst[0].max((&p12 - rhs1).amax());

        let rhs2 = &p1 - &c2 * x2.transpose() * &p1;
        worst[1] = worst[1].max((&p01 - rhs2).amax());

        let rhs3 = &c2 * x2.transpose();
        worst[2] = worst[2].max((&p02 - rhs3).amax());

        let lhs4 = p01.transpose() * &p01;
        let rhs4 = &p1 + &p1 * &x2 * &h_inv * x2.transpose() * &p1;
        worst[3] = worst[3].max((lhs4 - rhs4).amax());

        let x1_pinv = right_pinv(&x1);
        let top = &x1_pinv - &c2 * x2.transpose() * &x1_pinv;
        let rhs5 = hcat(&[&top, &c2]);
        worst[4] = worst[4].max((&x12_pinv - rhs5).amax());

        if n3 > 0 {
            let x123 = hcat(&[&x1, &x2, &x3]);
            let x123_pinv = right_pinv(&x123);
            let x01_3 = hcat(&[&x1, &DMatrix::zeros(p, n2 + n3)]);
            let x03_3 = hcat(&[&DMatrix::zeros(p, n1 + n2), &x3]);
            let p01_3 = &x123_pinv * x01_3.transpose();
            let p03_3 = &x123_pinv * x03_3.transpose();
            let lhs6 = p01_3.transpose() * p03_3;

            let p_hat = &x2 * &h_inv * x2.transpose() * &q1;
            let q_hat = &eye - &p_hat;
            let m = x3.transpose() * &q1 * &q_hat * &x3;
            let m_inv = m.try_inverse().expect("three-block Schur complement is invertible");
            let rhs6 = -(&p1 * &q_hat * &x3 * m_inv * x3.transpose());
            worst[5] = worst[5].max((lhs6 - rhs6).amax());
        }
    }
    let count = if n3 > 0 { 6 } else { 5 };
    NAMES
        .iter()
        .zip(worst)
        .take(count)
        .map(|(name, err)| Check::new(*name, err, opts.tolerance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_matrix(seed: u64, p: usize, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian(&mut rng, p, n)
    }

    #[test]
    fn single_sample_fit() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = DVector::from_element(1, 3.0);
        let fit = min_norm_fit(&x, &y);
        assert!((fit.weights - DVector::from_vec(vec![3.0, 0.0])).amax() < 1e-15);
        assert!(!fit.diagnostics.rank_deficient());
    }

    #[test]
    fn duplicated_sample_truncates() {
        // Two identical samples with conflicting labels: least squares
        // averages them.
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let fit = min_norm_fit(&x, &y);
        assert!((fit.weights - DVector::from_vec(vec![2.0, 0.0])).amax() < 1e-12);
        assert_eq!(fit.diagnostics.route, SolveRoute::Svd);
        assert_eq!(fit.diagnostics.rank, 1);
        assert!(fit.diagnostics.rank_deficient());
    }

    #[test]
    fn offset_fixed_point() {
        let x = rng_matrix(1, 30, 5);
        let w0 = DVector::from_fn(30, |i, _| (i as f64).sin());
        let y = x.tr_mul(&w0);
        let fit = offset_min_norm_fit(&x, &y, &w0);
        assert_eq!(fit.weights, w0);
    }

    #[test]
    fn empty_design() {
        let fit = min_norm_fit(&DMatrix::zeros(4, 0), &DVector::zeros(0));
        assert_eq!(fit.weights, DVector::zeros(4));
        assert_eq!(fit.diagnostics.route, SolveRoute::Empty);
    }

    #[test]
    fn gram_and_svd_routes_agree() {
        for &(p, n) in &[(40, 10), (100, 90), (20, 60), (50, 50)] {
            let x = rng_matrix(p as u64 * 1000 + n as u64, p, n);
            let y = DVector::from_fn(n, |i, _| (i as f64 * 0.37).cos());
            let a = min_norm_fit(&x, &y);
            let b = MinNormSolver::svd_only(DEFAULT_RCOND).fit(&x, &y);
            assert_eq!(a.diagnostics.route, SolveRoute::Gram);
            let rel = (&a.weights - &b.weights).norm() / b.weights.norm();
            assert!(rel < 1e-8, "p={p} n={n} rel={rel}");
        }
    }

    #[test]
    fn underparam_matches_normal_equations() {
        let x = rng_matrix(9, 10, 40);
        let y = DVector::from_fn(40, |i, _| i as f64 / 40.0);
        let fit = MinNormSolver::svd_only(DEFAULT_RCOND).fit(&x, &y);
        let normal = (&x * x.transpose()).try_inverse().unwrap() * (&x * &y);
        assert!((&fit.weights - &normal).norm() / normal.norm() < 1e-10);
    }

    #[test]
    fn condition_estimate_is_reasonable() {
        let x = rng_matrix(3, 80, 20);
        let fit = min_norm_fit(&x, &DVector::from_element(20, 1.0));
        let s = x.singular_values();
        let exact = s.max() / s.min();
        let est = fit.diagnostics.condition;
        assert!(est <= exact * 1.0001 && est > 0.5 * exact, "est={est} exact={exact}");
    }

    #[test]
    fn identity_suite_passes_and_catches_perturbation() {
        let opts = IdentitySuiteOptions {
            instances: 3,
            ..Default::default()
        };
        let checks = projection_identity_suite(5, &opts);
        assert_eq!(checks.len(), 6);
        for c in &checks {
            assert!(c.passed(), "{c}");
        }
        let bad = projection_identity_suite(5, &IdentitySuiteOptions { perturb: true, ..opts });
        assert!(!bad[0].passed());
    }

    #[test]
    fn identity_suite_without_second_block() {
        let opts = IdentitySuiteOptions {
            sizes: IdentitySizes {
                p: 20,
                n1: 5,
                n2: 0,
                n3: 0,
            },
            instances: 2,
            ..Default::default()
        };
        let checks = projection_identity_suite(1, &opts);
        assert!(checks.iter().all(Check::passed));
    }
}
