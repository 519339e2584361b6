//! Self-consistency checks: exact projection identities, Monte-Carlo checks
//! of the projection expectations, and the web of limits that connect the
//! closed forms to one another.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{Check, GramSpec};
use crate::solver::{projection_identity_suite, IdentitySizes, IdentitySuiteOptions};
use crate::taskgen::sub_seed;
use crate::theory::{
    expectation_lemma_suite, mean, mtl_g, mtl_k, mtl_prediction, mtl_task_loss, pure_replay_prediction,
    pure_replay_task_loss, pure_replay_two_task, replay_reg_prediction, replay_reg_two_task,
    sequential_finetune_prediction, stl_loss, ExpectationCheck, ExpectationSuiteOptions, TheoryInputs,
};

/// Tolerance of the reduction web, relative to the magnitude of the compared
/// quantities.
pub const REDUCTION_TOL: f64 = 1e-12;
/// Tolerance of the identity suite at the reference sizes.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance of the identity suite at the narrowest sizes `p = n_1 + n_2 + 2`.
pub const NARROW_IDENTITY_TOL: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, scale)`.
fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let err = (a - b).abs() / a.abs().max(b.abs()).max(scale);
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

struct Draw {
    p: f64,
    n: usize,
    m: usize,
    t: usize,
    sigma: f64,
    /// Random PSD geometry with unequal norms.
    gram: GramSpec,
    /// Equal-norm two-task geometry.
    pair: GramSpec,
}

fn random_draw(rng: &mut ChaCha8Rng) -> Draw {
    let t = rng.random_range(2..=6);
    let n = rng.random_range(1..=60);
    let m = rng.random_range(0..=n);
    let sigma = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) };
    // Large enough for the joint fit of every task.
    let p = (t * n + 2 + rng.random_range(0..400)) as f64;
    let factor = DMatrix::from_fn(t, t + 2, |_, _| rng.random_range(-1.0..1.0));
    let gram = GramSpec::explicit(&factor * factor.transpose()).expect("PSD by construction");
    let norm = rng.random_range(0.1..4.0);
    let c = rng.random_range(-1.0..1.0);
    let pair = GramSpec::equi_with_norms(c, &[norm, norm]).expect("valid cosine");
    Draw {
        p,
        n,
        m,
        t,
        sigma,
        gram,
        pair,
    }
}

struct Web {
    names: Vec<&'static str>,
    worst: Vec<f64>,
}

impl Web {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            worst: Vec::new(),
        }
    }

    fn record(&mut self, name: &'static str, err: f64) {
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.worst[i] = self.worst[i].max(err),
            None => {
                self.names.push(name);
                self.worst.push(err);
            }
        }
    }
}

/// Evaluates every reduction at `draws` random parameter sets and reports
/// the worst relative discrepancy of each.
pub fn reduction_web(seed: u64, draws: usize) -> Vec<Check> {
    let mut web = Web::new();
    for k in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, k as u64));
        let d = random_draw(&mut rng);
        let s2 = d.sigma * d.sigma;
        let counts = vec![d.n; d.t];

        // One task: joint fit equals the single-task fit and has no gain.
        let one = GramSpec::explicit(DMatrix::from_element(1, 1, d.gram.inner()[(0, 0)])).unwrap();
        let single = TheoryInputs::new(d.p, vec![d.n], d.sigma, one).unwrap();
        let stl = stl_loss(d.p, d.n, d.sigma, d.gram.inner()[(0, 0)]).0.value;
        web.record("joint fit of one task equals single-task fit", rel_err(mtl_g(&single).value, stl, 0.0));
        let scale = d.gram.inner()[(0, 0)] + s2;
        web.record("transfer gain vanishes for one task", rel_err(mtl_k(&single).value, 0.0, scale));

        // Multi-task identities on the general geometry.
        let inp = TheoryInputs::new(d.p, counts.clone(), d.sigma, d.gram.clone()).unwrap();
        let g = mtl_g(&inp).value;
        let pred = mtl_prediction(&inp);
        web.record(
            "mean task loss equals generalisation error",
            rel_err(mean(pred.per_task_loss.iter().map(|e| e.value)), g, 0.0),
        );
        let stl_mean = mean((0..d.t).map(|t| stl_loss(d.p, d.n, d.sigma, d.gram.inner()[(t, t)]).0.value));
        web.record(
            "transfer gain equals single-task minus joint error",
            rel_err(mtl_k(&inp).value, stl_mean - g, stl_mean),
        );

        // Pure replay on the general geometry.
        let replay = inp.clone().with_uniform_memory(d.m);
        let seen = rng.random_range(1..=d.t);
        let i = rng.random_range(0..d.t);
        let direct = pure_replay_task_loss(&replay, i, seen).unwrap().value;
        let mut sub_counts = vec![0; d.t];
        sub_counts[..seen - 1].fill(d.m);
        sub_counts[seen - 1] = d.n;
        let sub = TheoryInputs::new(d.p, sub_counts, d.sigma, d.gram.clone()).unwrap();
        web.record(
            "pure replay equals joint fit on replayed counts",
            rel_err(direct, mtl_task_loss(&sub, i).value, 0.0),
        );
        let full = inp.clone().with_uniform_memory(d.n);
        web.record(
            "full-memory pure replay equals joint fit",
            rel_err(pure_replay_prediction(&full).unwrap().g.value, g, 0.0),
        );

        // Replay with minimum-movement updates on the general geometry.
        let none = inp.clone().with_uniform_memory(0);
        let rec = replay_reg_prediction(&none).unwrap();
        let seq = sequential_finetune_prediction(&none);
        let seq_scale = scale;
        for t in 0..d.t {
            web.record(
                "replay recursion without memory equals fine-tuning",
                rel_err(rec.per_task_loss[t].value, seq.per_task_loss[t].value, 0.0),
            );
        }
        web.record(
            "replay recursion without memory equals fine-tuning",
            rel_err(rec.f.unwrap().value, seq.f.unwrap().value, seq_scale),
        );
        let full_rec = replay_reg_prediction(&full).unwrap();
        web.record(
            "full-memory replay recursion equals joint fit",
            rel_err(full_rec.g.value, g, 0.0),
        );

        // Two-task closed forms.
        let two = TheoryInputs::new(d.p, vec![d.n; 2], d.sigma, d.pair.clone()).unwrap();
        let two_scale = d.pair.inner()[(0, 0)] + s2;
        let full_two = two.clone().with_uniform_memory(d.n);
        web.record(
            "two-task full-memory pure replay equals joint fit",
            rel_err(pure_replay_two_task(&full_two).unwrap().g.value, mtl_g(&two).value, 0.0),
        );
        let two_m = two.clone().with_uniform_memory(d.m);
        let closed = pure_replay_two_task(&two_m).unwrap();
        let general = pure_replay_prediction(&two_m).unwrap();
        web.record(
            "two-task pure replay matches general formula",
            rel_err(closed.g.value, general.g.value, 0.0)
                .max(rel_err(closed.f.unwrap().value, general.f.unwrap().value, two_scale)),
        );
        let clean = TheoryInputs { sigma: 0.0, ..two_m.clone() };
        let closed = replay_reg_two_task(&clean).unwrap();
        let rec = replay_reg_prediction(&clean).unwrap();
        let clean_scale = d.pair.inner()[(0, 0)];
        web.record(
            "two-task replay closed form matches recursion",
            rel_err(closed.g.value, rec.g.value, 0.0)
                .max(rel_err(closed.f.unwrap().value, rec.f.unwrap().value, clean_scale)),
        );
        let clean0 = TheoryInputs { sigma: 0.0, ..two.clone() }.with_uniform_memory(0);
        let closed0 = replay_reg_two_task(&clean0).unwrap();
        let seq0 = sequential_finetune_prediction(&clean0);
        web.record(
            "two-task replay closed form without memory equals fine-tuning",
            rel_err(closed0.g.value, seq0.g.value, 0.0)
                .max(rel_err(closed0.f.unwrap().value, seq0.f.unwrap().value, clean_scale)),
        );
    }
    web.names
        .into_iter()
        .zip(web.worst)
        .map(|(name, err)| Check::new(name, err, REDUCTION_TOL))
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    pub identity_instances: usize,
    pub expectation_draws: usize,
    pub reduction_draws: usize,
    /// Deliberately corrupt one identity to exercise the failure path.
    pub perturb: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            identity_instances: 20,
            expectation_draws: 100_000,
            reduction_draws: 100,
            perturb: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub identities: Vec<Check>,
    pub narrow_identities: Vec<Check>,
    pub expectations: Vec<ExpectationCheck>,
    pub reductions: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.identities
            .iter()
            .chain(&self.narrow_identities)
            .chain(&self.reductions)
            .all(Check::passed)
            && self.expectations.iter().all(ExpectationCheck::passed)
    }

    /// One line per check.
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut section = |title: &str, items: Vec<String>| {
            out.push(format!("== {title}"));
            out.extend(items);
        };
        section("projection identities (p = 64)", self.identities.iter().map(|c| c.to_string()).collect());
        section(
            "projection identities (p = n1 + n2 + 2)",
            self.narrow_identities.iter().map(|c| c.to_string()).collect(),
        );
        section("projection expectations", self.expectations.iter().map(|c| c.to_string()).collect());
        section("reduction web", self.reductions.iter().map(|c| c.to_string()).collect());
        out
    }
}

/// Runs the full validation battery.
pub fn run_validation(seed: u64, opts: &ValidationOptions) -> ValidationReport {
    let identities = projection_identity_suite(
        sub_seed(seed, 0),
        &IdentitySuiteOptions {
            sizes: IdentitySizes::default(),
            instances: opts.identity_instances,
            tolerance: IDENTITY_TOL,
            perturb: opts.perturb,
        },
    );
    let narrow_identities = projection_identity_suite(
        sub_seed(seed, 1),
        &IdentitySuiteOptions {
            sizes: IdentitySizes {
                p: 22,
                n1: 10,
                n2: 10,
                n3: 0,
            },
            instances: opts.identity_instances,
            tolerance: NARROW_IDENTITY_TOL,
            perturb: opts.perturb,
        },
    );
    let expectations = expectation_lemma_suite(
        sub_seed(seed, 2),
        &ExpectationSuiteOptions {
            draws: opts.expectation_draws,
            ..Default::default()
        },
    );
    let reductions = reduction_web(sub_seed(seed, 3), opts.reduction_draws);
    ValidationReport {
        identities,
        narrow_identities,
        expectations,
        reductions,
    }
}
