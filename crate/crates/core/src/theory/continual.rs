//! Expected losses of sequential fine-tuning, pure replay and
//! replay with minimum-movement regularisation.

use super::{guarded, mean, mtl_task_loss, TheoryInputs};
use crate::domain::{Estimate, Regime, TheoryPrediction};
use crate::error::{Error, Result};

fn require_common(inp: &TheoryInputs, what: &str) -> Result<(f64, f64)> {
    match (inp.common_count(), inp.common_memory()) {
        (Some(n), Some(m)) => Ok((n as f64, m as f64)),
        _ => Err(Error::Structural(format!(
            "{what} needs equal sample counts and equal memory sizes"
        ))),
    }
}

fn check_step(inp: &TheoryInputs, seen: usize) -> Result<()> {
    if seen == 0 || seen > inp.num_tasks() {
        return Err(Error::Structural(format!(
            "step {seen} outside 1..={}",
            inp.num_tasks()
        )));
    }
    if inp.memory.len() + 1 != inp.num_tasks() {
        return Err(Error::Structural(format!(
            "{} memory sizes given for {} tasks",
            inp.memory.len(),
            inp.num_tasks()
        )));
    }
    Ok(())
}

/// Expected `L_i` after fine-tuning on tasks `1..=seen` in order, each step
/// moving the previous model as little as possible to fit the new task:
///
/// `Σ_{k≤seen} Π_{k<j≤seen}(1 − n_j/p) [(n_k/p) ‖w_k − w_i‖² + n_k σ²/(p − n_k − 1)]`
/// `+ Π_{j≤seen}(1 − n_j/p) ‖w_i‖²`.
pub fn sequential_finetune_task_loss(inp: &TheoryInputs, i: usize, seen: usize) -> Estimate {
    let p = inp.p;
    let s2 = inp.sigma * inp.sigma;
    let counts: Vec<f64> = inp.sample_counts[..seen].iter().map(|&n| n as f64).collect();
    let denoms: Vec<f64> = counts.iter().map(|n| p - n - 1.0).collect();
    let value = guarded(&denoms, || {
        let mut acc = inp.gram.inner()[(i, i)];
        for (k, &nk) in counts.iter().enumerate() {
            acc = (1.0 - nk / p) * acc + nk / p * inp.gram.dist_sq(k, i) + nk * s2 / (p - nk - 1.0);
        }
        acc
    });
    Estimate::new(value, counts.iter().all(|n| p >= n + 2.0))
}

fn summarise(
    inp: &TheoryInputs,
    table: impl Fn(usize, usize) -> Estimate,
    regime_samples: f64,
    noise_extension: bool,
) -> TheoryPrediction {
    let tasks = inp.num_tasks();
    let per_task_loss: Vec<Estimate> = (0..tasks).map(|i| table(i, tasks)).collect();
    let g = Estimate::new(
        mean(per_task_loss.iter().map(|e| e.value)),
        per_task_loss.iter().all(|e| e.valid),
    );
    let f = if tasks > 1 {
        let parts: Vec<(Estimate, Estimate)> = (0..tasks - 1)
            .map(|t| (per_task_loss[t], table(t, t + 1)))
            .collect();
        Estimate::new(
            mean(parts.iter().map(|(end, then)| end.value - then.value)),
            parts.iter().all(|(a, b)| a.valid && b.valid),
        )
    } else {
        Estimate::new(0.0, g.valid)
    };
    TheoryPrediction {
        per_task_loss,
        g,
        k: None,
        f: Some(f),
        regime: Regime::classify(inp.p, regime_samples),
        noise_extension,
    }
}

/// Final losses, `G` and forgetting of sequential fine-tuning.
pub fn sequential_finetune_prediction(inp: &TheoryInputs) -> TheoryPrediction {
    let n_max = inp.sample_counts.iter().copied().max().unwrap_or(0) as f64;
    summarise(inp, |i, seen| sequential_finetune_task_loss(inp, i, seen), n_max, false)
}

/// Expected `L_i` of pure replay after `seen` tasks, with `m` samples kept
/// from each earlier task and `n` from the current one. With
/// `n̄ = (seen − 1) m + n`, `D = p − n̄ − 1` and `c` the current task:
///
/// `(1/2p) Σ_{s,s'<c} m² d_ss'/D + (1/p) Σ_{s<c} m n d_cs/D + Σ_{s<c} (m/p) d_si`
/// `+ (n/p) d_ci + (1 − n̄/p) ‖w_i‖² + n̄ σ²/D`
/// with `d_ab = ‖w_a − w_b‖²`.
pub fn pure_replay_task_loss(inp: &TheoryInputs, i: usize, seen: usize) -> Result<Estimate> {
    check_step(inp, seen)?;
    let (n, m) = require_common(inp, "pure replay closed form")?;
    let p = inp.p;
    let c = seen - 1;
    let nbar = c as f64 * m + n;
    let d = p - nbar - 1.0;
    let value = guarded(&[d], || {
        let mut pair = 0.0;
        let mut to_cur = 0.0;
        let mut to_i = 0.0;
        for s in 0..c {
            for s2 in 0..c {
                pair += inp.gram.dist_sq(s, s2);
            }
            to_cur += inp.gram.dist_sq(c, s);
            to_i += inp.gram.dist_sq(s, i);
        }
        m * m * pair / (2.0 * p * d)
            + m * n * to_cur / (p * d)
            + m / p * to_i
            + n / p * inp.gram.dist_sq(c, i)
            + (1.0 - nbar / p) * inp.gram.inner()[(i, i)]
            + nbar * inp.sigma * inp.sigma / d
    });
    Ok(Estimate::new(value, p >= nbar + 2.0))
}

/// Pure replay step `seen` is a joint fit on the stored samples of earlier
/// tasks plus the current task, so its risk is the multi-task risk with
/// counts `(m_1, …, m_{seen−1}, n_seen, 0, …)`. Handles unequal sizes.
fn pure_replay_by_substitution(inp: &TheoryInputs, i: usize, seen: usize) -> Estimate {
    let counts: Vec<usize> = (0..inp.num_tasks())
        .map(|t| match t.cmp(&(seen - 1)) {
            std::cmp::Ordering::Less => inp.memory[t],
            std::cmp::Ordering::Equal => inp.sample_counts[t],
            std::cmp::Ordering::Greater => 0,
        })
        .collect();
    let sub = TheoryInputs {
        sample_counts: counts,
        memory: Vec::new(),
        ..inp.clone()
    };
    mtl_task_loss(&sub, i)
}

/// Final losses, `G` and forgetting of pure replay over all tasks.
pub fn pure_replay_prediction(inp: &TheoryInputs) -> Result<TheoryPrediction> {
    check_step(inp, inp.num_tasks())?;
    let equal = require_common(inp, "").is_ok();
    let table = |i: usize, seen: usize| {
        if equal {
            pure_replay_task_loss(inp, i, seen).expect("checked above")
        } else {
            pure_replay_by_substitution(inp, i, seen)
        }
    };
    let tasks = inp.num_tasks();
    let nbar = inp.memory.iter().sum::<usize>() + inp.sample_counts[tasks - 1];
    Ok(summarise(inp, table, nbar as f64, false))
}

fn two_task_inputs(inp: &TheoryInputs, what: &str) -> Result<(f64, f64, f64, f64)> {
    if inp.num_tasks() != 2 {
        return Err(Error::Structural(format!("{what} is stated for exactly two tasks")));
    }
    let (n, m) = require_common(inp, what)?;
    let g = inp.gram.inner();
    let a = g[(0, 0)];
    if (a - g[(1, 1)]).abs() > 1e-12 * a.abs().max(1.0) {
        return Err(Error::Structural(format!("{what} needs equal task norms")));
    }
    if n == 0.0 {
        return Err(Error::Structural(format!("{what} needs n >= 1")));
    }
    Ok((n, m, a, inp.gram.dist_sq(0, 1)))
}

/// Two-task pure replay with `m` stored samples of task 1. With
/// `Δ = ‖w_1 − w_2‖²`, `a = ‖w‖²` and `D = p − (n + m) − 1`:
///
/// * `G = (n/2p)(1 + m/n + 2m/D) Δ + (1 − (n + m)/p) a`
/// * `F = (n/p)(1 + m/D) Δ − (m/p) a`
///
/// For `σ > 0` the noise contributions `(n + m) σ²/D` (to `G`) and
/// `(n + m) σ²/D − n σ²/(p − n − 1)` (to `F`) are added and
/// `noise_extension` is set.
pub fn pure_replay_two_task(inp: &TheoryInputs) -> Result<TheoryPrediction> {
    let (n, m, a, delta) = two_task_inputs(inp, "two-task pure replay")?;
    let p = inp.p;
    let s2 = inp.sigma * inp.sigma;
    let d = p - (n + m) - 1.0;
    let valid = p >= n + m + 2.0;
    let g = guarded(&[d, p - n - 1.0], || {
        n / (2.0 * p) * (1.0 + m / n + 2.0 * m / d) * delta + (1.0 - (n + m) / p) * a + (n + m) * s2 / d
    });
    let f = guarded(&[d, p - n - 1.0], || {
        n / p * (1.0 + m / d) * delta - m / p * a + (n + m) * s2 / d - n * s2 / (p - n - 1.0)
    });
    let per_task = (0..2)
        .map(|i| pure_replay_task_loss(inp, i, 2))
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoryPrediction {
        per_task_loss: per_task,
        g: Estimate::new(g, valid),
        k: None,
        f: Some(Estimate::new(f, valid)),
        regime: Regime::classify(p, n + m),
        noise_extension: s2 > 0.0,
    })
}

/// Table `E[i][s]` of expected `L_i` after `s = 0..=T` tasks for replay with
/// minimum-movement updates, from the one-step recursion
///
/// `E_i(t+1) = (m/p)(1 − α_t) Σ_{s≤t} d_si + (n/p) d_{t+1,i}`
/// `+ m n/(p(p − N_t − 1)) Σ_{s≤t} d_{t+1,s}`
/// `+ (m²/2p)(1/(p − N_t − 1) − α_t/(p − tm − 1)) Σ_{s,s'≤t} d_ss'`
/// `+ N_t σ²/(p − N_t − 1) − α_t t m σ²/(p − tm − 1) + α_t E_i(t)`
///
/// with `α_t = 1 − n/(p − tm)`, `N_t = tm + n` and `E_i(0) = ‖w_i‖²`.
/// The returned flag is the validity of each step.
pub fn replay_reg_loss_table(inp: &TheoryInputs) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    check_step(inp, inp.num_tasks())?;
    let (n, m) = require_common(inp, "replay recursion")?;
    let p = inp.p;
    let s2 = inp.sigma * inp.sigma;
    let tasks = inp.num_tasks();
    let dist = |a: usize, b: usize| inp.gram.dist_sq(a, b);
    let mut table: Vec<Vec<f64>> = (0..tasks).map(|i| vec![inp.gram.inner()[(i, i)]]).collect();
    let mut step_valid = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let tf = t as f64;
        let big_n = tf * m + n;
        let dn = p - big_n - 1.0;
        let dm = p - tf * m - 1.0;
        let alpha = 1.0 - n / (p - tf * m);
        step_valid.push(p >= big_n + 2.0);
        let mut pair = 0.0;
        let mut to_new = 0.0;
        for s in 0..t {
            for s2i in 0..t {
                pair += dist(s, s2i);
            }
            to_new += dist(t, s);
        }
        for (i, row) in table.iter_mut().enumerate() {
            let prev = row[t];
            let value = guarded(&[dn, dm, p - tf * m], || {
                let to_i: f64 = (0..t).map(|s| dist(s, i)).sum();
                m / p * (1.0 - alpha) * to_i
                    + n / p * dist(t, i)
                    + m * n / (p * dn) * to_new
                    + m * m / (2.0 * p) * (1.0 / dn - alpha / dm) * pair
                    + big_n * s2 / dn
                    - alpha * tf * m * s2 / dm
                    + alpha * prev
            });
            row.push(value);
        }
    }
    Ok((table, step_valid))
}

/// Final losses, `G` and forgetting of replay with minimum-movement updates.
pub fn replay_reg_prediction(inp: &TheoryInputs) -> Result<TheoryPrediction> {
    let (table, step_valid) = replay_reg_loss_table(inp)?;
    let tasks = inp.num_tasks();
    let lookup = |i: usize, seen: usize| {
        Estimate::new(table[i][seen], step_valid[..seen].iter().all(|&v| v))
    };
    let nbar = inp.memory.iter().sum::<usize>() + inp.sample_counts[tasks - 1];
    Ok(summarise(inp, lookup, nbar as f64, false))
}

/// Two-task noiseless replay with minimum-movement updates. With `Δ`, `a`
/// as for [`pure_replay_two_task`]:
///
/// * `G = (n/2p)(2 − (n − m)/(p − m) + 2m/(p − (n + m) − 1)) Δ + (1 − n/(p − m))(1 − n/p) a`
/// * `F = (n/p)(1 + m/(p − (n + m) − 1)) Δ − (n/(p − m))(1 − n/p) a`
///
/// Only stated for `σ = 0`; with noise the result is flagged invalid.
pub fn replay_reg_two_task(inp: &TheoryInputs) -> Result<TheoryPrediction> {
    let (n, m, a, delta) = two_task_inputs(inp, "two-task replay closed form")?;
    let p = inp.p;
    let d = p - (n + m) - 1.0;
    let valid = p >= n + m + 2.0 && inp.sigma == 0.0;
    let g = guarded(&[d, p - m], || {
        n / (2.0 * p) * (2.0 - (n - m) / (p - m) + 2.0 * m / d) * delta
            + (1.0 - n / (p - m)) * (1.0 - n / p) * a
    });
    let f = guarded(&[d, p - m], || {
        n / p * (1.0 + m / d) * delta - n / (p - m) * (1.0 - n / p) * a
    });
    let (table, _) = replay_reg_loss_table(inp)?;
    Ok(TheoryPrediction {
        per_task_loss: (0..2).map(|i| Estimate::new(table[i][2], valid)).collect(),
        g: Estimate::new(g, valid),
        k: None,
        f: Some(Estimate::new(f, valid)),
        regime: Regime::classify(p, n + m),
        noise_extension: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GramSpec;
    use crate::theory::{mtl_g, mtl_task_loss, stl_loss};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn two_task(p: f64, m: usize, sigma: f64) -> TheoryInputs {
        TheoryInputs::new(p, vec![50, 50], sigma, GramSpec::equi(2, (PI / 8.0).cos()).unwrap())
            .unwrap()
            .with_uniform_memory(m)
    }

    #[test]
    fn two_task_reference_values() {
        let inp = two_task(202.0, 25, 0.0);
        let pr = pure_replay_two_task(&inp).unwrap();
        assert_relative_eq!(pr.g.value, 0.664452, max_relative = 1e-5);
        assert_relative_eq!(pr.f.unwrap().value, -0.078601, max_relative = 1e-4);
        let rr = replay_reg_two_task(&inp).unwrap();
        assert_relative_eq!(rr.g.value, 0.58241, max_relative = 1e-5);
        let seq = replay_reg_two_task(&two_task(202.0, 0, 0.0)).unwrap();
        assert_relative_eq!(seq.g.value, 0.599238, max_relative = 1e-5);
    }

    #[test]
    fn full_memory_pure_replay_is_mtl() {
        let inp = two_task(230.0, 50, 0.0);
        let pr = pure_replay_two_task(&inp).unwrap();
        assert_relative_eq!(pr.g.value, mtl_g(&inp).value, max_relative = 1e-13);
    }

    #[test]
    fn displayed_pure_replay_matches_substitution() {
        let gram = GramSpec::equi_with_norms(0.3, &[1.0, 2.0, 0.5, 1.5]).unwrap();
        let inp = TheoryInputs::new(400.0, vec![30; 4], 0.8, gram).unwrap().with_uniform_memory(12);
        for seen in 1..=4 {
            for i in 0..4 {
                let a = pure_replay_task_loss(&inp, i, seen).unwrap();
                let b = pure_replay_by_substitution(&inp, i, seen);
                assert_relative_eq!(a.value, b.value, max_relative = 1e-13);
                assert_eq!(a.valid, b.valid);
            }
        }
    }

    #[test]
    fn recursion_matches_closed_forms() {
        for &(p, m) in &[(202.0, 25), (150.0, 10), (400.0, 0), (300.0, 50)] {
            let inp = two_task(p, m, 0.0);
            let rec = replay_reg_prediction(&inp).unwrap();
            let closed = replay_reg_two_task(&inp).unwrap();
            assert_relative_eq!(rec.g.value, closed.g.value, max_relative = 1e-12);
            assert_relative_eq!(rec.f.unwrap().value, closed.f.unwrap().value, max_relative = 1e-11);
        }
    }

    #[test]
    fn recursion_without_memory_is_finetuning() {
        let gram = GramSpec::equi_with_norms(0.5, &[1.0, 3.0, 2.0]).unwrap();
        let inp = TheoryInputs::new(120.0, vec![20; 3], 0.6, gram).unwrap().with_uniform_memory(0);
        let rec = replay_reg_prediction(&inp).unwrap();
        let seq = sequential_finetune_prediction(&inp);
        for i in 0..3 {
            assert_relative_eq!(rec.per_task_loss[i].value, seq.per_task_loss[i].value, max_relative = 1e-13);
        }
        assert_relative_eq!(rec.f.unwrap().value, seq.f.unwrap().value, max_relative = 1e-12);
    }

    #[test]
    fn first_step_is_single_task() {
        let inp = two_task(180.0, 20, 0.9);
        let (table, _) = replay_reg_loss_table(&inp).unwrap();
        let stl = stl_loss(180.0, 50, 0.9, 1.0).0.value;
        assert_relative_eq!(table[0][1], stl, max_relative = 1e-13);
        assert_relative_eq!(pure_replay_task_loss(&inp, 0, 1).unwrap().value, stl, max_relative = 1e-13);
    }

    #[test]
    fn noisy_two_task_flags() {
        let inp = two_task(202.0, 25, 0.5);
        assert!(pure_replay_two_task(&inp).unwrap().noise_extension);
        assert!(!replay_reg_two_task(&inp).unwrap().g.valid);
        let pr = pure_replay_two_task(&inp).unwrap();
        let gen = pure_replay_prediction(&inp).unwrap();
        assert_relative_eq!(pr.g.value, gen.g.value, max_relative = 1e-13);
        assert_relative_eq!(pr.f.unwrap().value, gen.f.unwrap().value, max_relative = 1e-12);
    }

    #[test]
    fn mtl_loss_sanity_for_pure_replay_final() {
        let inp = two_task(300.0, 50, 0.3);
        let a = pure_replay_task_loss(&inp, 1, 2).unwrap().value;
        let b = mtl_task_loss(&inp, 1).value;
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn structural_errors() {
        let inp = two_task(202.0, 25, 0.0);
        assert!(pure_replay_task_loss(&inp, 0, 3).is_err());
        let mut bad = inp.clone();
        bad.memory = vec![];
        assert!(replay_reg_prediction(&bad).is_err());
        let three = TheoryInputs::new(300.0, vec![10; 3], 0.0, GramSpec::equi(3, 0.2).unwrap())
            .unwrap()
            .with_uniform_memory(5);
        assert!(pure_replay_two_task(&three).is_err());
    }
}
