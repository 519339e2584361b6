//! Statistical soundness: Monte-Carlo means agree with the closed forms
//! across a spread of methods, geometries and dimensions.

use overparam::learners::Learner;
use overparam::montecarlo::{compare, run_trials, CompareRule, TrialPlan, TrialSpec, Verdict};
use overparam::theory::{predict, TheoryInputs};
use overparam::{BufferPolicy, GramSpec, Method};

const PAIRS: usize = 30;
const TRIALS: usize = 500;

struct Case {
    method: Method,
    t: usize,
    n: usize,
    c: f64,
    sigma: f64,
    p: usize,
    m: usize,
}

fn case(k: usize) -> Case {
    let method = Method::ALL[k % Method::ALL.len()];
    let t = 2 + k % 3;
    let n = 6 + (k * 7) % 10;
    let c = [0.2, 0.7, 0.0][k % 3];
    let sigma = [0.0, 0.5][(k / 5) % 2];
    let m = if method.uses_memory() { n / 2 } else { 0 };
    let p = if method == Method::Stl && k % 2 == 1 {
        n.saturating_sub(6).max(1)
    } else {
        t * n + 8 + (k * 13) % 60
    };
    Case { method, t, n, c, sigma, p, m }
}

#[test]
fn monte_carlo_agrees_with_theory() {
    let learner = Learner::default();
    let rule = CompareRule::default();
    let mut passed = 0;
    let mut report = Vec::new();
    for k in 0..PAIRS {
        let cs = case(k);
        let gram = GramSpec::equi(cs.t, cs.c).unwrap();
        let inp = TheoryInputs::new(cs.p as f64, vec![cs.n; cs.t], cs.sigma, gram.clone())
            .unwrap()
            .with_uniform_memory(cs.m);
        let theory = predict(cs.method, &inp).unwrap().g;
        let plan = TrialPlan {
            spec: TrialSpec {
                method: cs.method,
                gram,
                p: cs.p,
                sample_counts: vec![cs.n; cs.t],
                sigma: cs.sigma,
                memory: vec![cs.m; cs.t - 1],
                policy: BufferPolicy::Prefix,
            },
            trials: TRIALS,
            base_seed: 1000 + k as u64,
        };
        let mc = run_trials(&plan, &learner).unwrap();
        let est = mc.get("G").unwrap();
        let cmp = compare(theory, est, rule);
        if cmp.verdict == Verdict::Pass {
            passed += 1;
        }
        report.push(format!(
            "{} T={} n={} c={} sigma={} p={} m={}: theory {:.5} mc {:.5} +- {:.5} {:?}",
            cs.method, cs.t, cs.n, cs.c, cs.sigma, cs.p, cs.m, theory.value, est.mean, est.stderr, cmp.verdict
        ));
    }
    assert!(passed >= PAIRS - 2, "{passed}/{PAIRS} passed:\n{}", report.join("\n"));
}
