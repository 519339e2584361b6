//! Monte-Carlo checks of the projection expectations the closed forms rest
//! on. With `P_1` the projector onto the span of a `p × n_1` Gaussian design
//! and `P_{0|1}` the joint-fit map restricted to task 1's block:
//!
//! * `E‖P_1 w‖² = (n_1/p) ‖w‖²`
//! * `E‖(I − P_1) w‖² = (1 − n_1/p) ‖w‖²`
//! * `E‖P_{0|1} w‖² = (n_1/p)(1 + n_2/(p − n_1 − n_2 − 1)) ‖w‖²`
//! * `E[wᵀ P_{0|1}ᵀ P_{0|3} w'] = −n_1 n_3 / (p (p − n_1 − n_2 − n_3 − 1)) ⟨w, w'⟩`

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::taskgen::sub_seed;

/// Outcome of one expectation check.
#[derive(Clone, Debug, Serialize)]
pub struct ExpectationCheck {
    pub name: String,
    pub expected: f64,
    pub mean: f64,
    pub stderr: f64,
    pub draws: usize,
    /// Allowed `|mean − expected| / stderr`.
    pub z_limit: f64,
}

impl ExpectationCheck {
    pub fn z_score(&self) -> f64 {
        (self.mean - self.expected).abs() / self.stderr
    }

    pub fn passed(&self) -> bool {
        self.z_score() <= self.z_limit
    }
}

impl fmt::Display for ExpectationCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: mean {:.6} ± {:.2e} vs {:.6} (z = {:.2}, limit {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.mean,
            self.stderr,
            self.expected,
            self.z_score(),
            self.z_limit
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExpectationSuiteOptions {
    pub draws: usize,
    pub z_limit: f64,
}

impl Default for ExpectationSuiteOptions {
    fn default() -> Self {
        Self {
            draws: 100_000,
            z_limit: 4.0,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn unit(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| StandardNormal.sample(rng)).normalize()
}

/// Sample mean and standard error.
fn summarise(samples: &[f64]) -> (f64, f64) {
    let r = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / r;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// `a_1ᵀ G^{-1} a_2` where `G = XᵀX` and `a_k = X_kᵀ v_k` placed in the
/// column block of `X` that belongs to design `k`.
fn block_form(x: &DMatrix<f64>, blocks: &[(usize, usize, &DVector<f64>)]) -> Vec<DVector<f64>> {
    blocks
        .iter()
        .map(|&(start, len, v)| {
            let mut a = DVector::zeros(x.ncols());
            a.rows_mut(start, len).copy_from(&x.columns(start, len).tr_mul(v));
            a
        })
        .collect()
}

fn check(
    name: &str,
    expected: f64,
    samples: Vec<f64>,
    opts: &ExpectationSuiteOptions,
) -> ExpectationCheck {
    let (mean, stderr) = summarise(&samples);
    ExpectationCheck {
        name: name.to_string(),
        expected,
        mean,
        stderr,
        draws: samples.len(),
        z_limit: opts.z_limit,
    }
}

/// Runs the four expectation checks at the reference sizes
/// (`p = 20, n_1 = 5` for the single projector, `p = 20, n_1 = n_2 = 5` for
/// the restricted projector, `p = 30, n_1 = n_2 = n_3 = 5` for the cross
/// term).
pub fn expectation_lemma_suite(seed: u64, opts: &ExpectationSuiteOptions) -> Vec<ExpectationCheck> {
    let mut out = Vec::with_capacity(4);

    // Single projector.
    {
        let (p, n1) = (20usize, 5usize);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0));
        let w = unit(&mut rng, p);
        let mut inside = Vec::with_capacity(opts.draws);
        let mut outside = Vec::with_capacity(opts.draws);
        for _ in 0..opts.draws {
            let x = gaussian(&mut rng, p, n1);
            let chol = (x.transpose() * &x).cholesky().expect("full rank");
            let a = x.tr_mul(&w);
            let proj = a.dot(&chol.solve(&a));
            inside.push(proj);
            outside.push(1.0 - proj);
        }
        let r = n1 as f64 / p as f64;
        out.push(check("projector onto one design", r, inside, opts));
        out.push(check("complement of one design", 1.0 - r, outside, opts));
    }

    // Restricted projector of the joint fit.
    {
        let (p, n1, n2) = (20usize, 5usize, 5usize);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
        let w = unit(&mut rng, p);
        let mut samples = Vec::with_capacity(opts.draws);
        for _ in 0..opts.draws {
            let x = gaussian(&mut rng, p, n1 + n2);
            let chol = (x.transpose() * &x).cholesky().expect("full rank");
            let a = &block_form(&x, &[(0, n1, &w)])[0];
            samples.push(a.dot(&chol.solve(a)));
        }
        let (pf, a, b) = (p as f64, n1 as f64, n2 as f64);
        let expected = a / pf * (1.0 + b / (pf - a - b - 1.0));
        out.push(check("restricted joint projector", expected, samples, opts));
    }

    // Cross term between the first and third blocks.
    {
        let (p, n1, n2, n3) = (30usize, 5usize, 5usize, 5usize);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
        let w = unit(&mut rng, p);
        let w2 = (&w + unit(&mut rng, p)).normalize();
        let mut samples = Vec::with_capacity(opts.draws);
        for _ in 0..opts.draws {
            let x = gaussian(&mut rng, p, n1 + n2 + n3);
            let chol = (x.transpose() * &x).cholesky().expect("full rank");
            let a = block_form(&x, &[(0, n1, &w), (n1 + n2, n3, &w2)]);
            samples.push(a[0].dot(&chol.solve(&a[1])));
        }
        let (pf, a, b, c) = (p as f64, n1 as f64, n2 as f64, n3 as f64);
        let expected = -a * c / (pf * (pf - a - b - c - 1.0)) * w.dot(&w2);
        out.push(check("cross term of restricted projectors", expected, samples, opts));
    }

    out
}
