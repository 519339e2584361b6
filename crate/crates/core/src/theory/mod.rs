//! Closed-form expected losses of the min-norm learners under isotropic
//! Gaussian features.
//!
//! All formulas take the task geometry only through squared norms and
//! pairwise distances, so they are evaluated for any symmetric [`GramSpec`],
//! including ones that no set of real vectors can realise. Every quantity
//! carries a validity flag: it is `true` exactly when the parameters lie in
//! the domain where the expectation is finite and the formula is exact.
//! Outside it the value is still computed when all denominators are
//! positive, and is `NaN` otherwise.

mod continual;
mod expectations;

pub use continual::{
    pure_replay_prediction, pure_replay_task_loss, pure_replay_two_task, replay_reg_loss_table,
    replay_reg_prediction, replay_reg_two_task, sequential_finetune_prediction,
    sequential_finetune_task_loss,
};
pub use expectations::{expectation_lemma_suite, ExpectationCheck, ExpectationSuiteOptions};

use crate::domain::{Estimate, GramSpec, Method, Regime, TheoryPrediction};
use crate::error::{Error, Result};

/// Parameters of a closed-form evaluation.
#[derive(Clone, Debug)]
pub struct TheoryInputs {
    /// Feature dimension; kept as `f64` so asymptotic limits can be probed.
    pub p: f64,
    /// `n_t` for every task.
    pub sample_counts: Vec<usize>,
    pub sigma: f64,
    pub gram: GramSpec,
    /// Replay memory `m_t` for tasks `1..T-1`; empty for learners without
    /// memory.
    pub memory: Vec<usize>,
}

impl TheoryInputs {
    pub fn new(p: f64, sample_counts: Vec<usize>, sigma: f64, gram: GramSpec) -> Result<Self> {
        if sample_counts.len() != gram.num_tasks() {
            return Err(Error::Structural(format!(
                "{} sample counts given for {} tasks",
                sample_counts.len(),
                gram.num_tasks()
            )));
        }
        if p.is_nan() || p <= 0.0 || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Structural(format!(
                "need p > 0 and finite sigma >= 0, got p = {p}, sigma = {sigma}"
            )));
        }
        Ok(Self {
            p,
            sample_counts,
            sigma,
            gram,
            memory: Vec::new(),
        })
    }

    /// The same memory size for every stored task.
    pub fn with_uniform_memory(mut self, m: usize) -> Self {
        self.memory = vec![m; self.num_tasks().saturating_sub(1)];
        self
    }

    pub fn num_tasks(&self) -> usize {
        self.sample_counts.len()
    }

    pub fn total_samples(&self) -> usize {
        self.sample_counts.iter().sum()
    }

    fn dist(&self, s: usize, t: usize) -> f64 {
        self.gram.dist_sq(s, t)
    }

    fn norm_sq(&self, t: usize) -> f64 {
        self.gram.inner()[(t, t)]
    }

    /// `n` when all tasks have the same sample count.
    pub fn common_count(&self) -> Option<usize> {
        common(&self.sample_counts)
    }

    /// `m` when all stored tasks keep the same number of samples (`0` when
    /// nothing is stored).
    pub fn common_memory(&self) -> Option<usize> {
        if self.memory.is_empty() {
            Some(0)
        } else {
            common(&self.memory)
        }
    }
}

fn common(v: &[usize]) -> Option<usize> {
    let first = *v.first()?;
    v.iter().all(|&x| x == first).then_some(first)
}

pub(crate) fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

/// `value` when every denominator is positive, `NaN` otherwise.
pub(crate) fn guarded(denominators: &[f64], value: impl FnOnce() -> f64) -> f64 {
    if denominators.iter().all(|&d| d > 0.0) {
        value()
    } else {
        f64::NAN
    }
}

/// Expected loss of the min-norm single-task learner with `n` samples.
///
/// * `n ≥ p + 2`: `p σ² / (n − p − 1)`
/// * `p ≥ n + 2`: `(1 − n/p) ‖w‖² + n σ² / (p − n − 1)`
/// * otherwise the expectation is infinite; the result is `NaN` and invalid.
pub fn stl_loss(p: f64, n: usize, sigma: f64, norm_sq: f64) -> (Estimate, Regime) {
    let n = n as f64;
    let regime = Regime::classify(p, n);
    let est = match regime {
        Regime::Underparam => Estimate::new(p * sigma * sigma / (n - p - 1.0), true),
        Regime::Overparam => Estimate::new(
            (1.0 - n / p) * norm_sq + n * sigma * sigma / (p - n - 1.0),
            true,
        ),
        Regime::Threshold => Estimate::invalid(),
    };
    (est, regime)
}

/// Single-task prediction for one task.
pub fn stl_error(p: f64, n: usize, sigma: f64, norm_sq: f64) -> TheoryPrediction {
    let (est, regime) = stl_loss(p, n, sigma, norm_sq);
    TheoryPrediction {
        per_task_loss: vec![est],
        g: est,
        k: None,
        f: None,
        regime,
        noise_extension: false,
    }
}

/// Every task fitted on its own data; `G` averages the per-task losses.
pub fn stl_prediction(inp: &TheoryInputs) -> TheoryPrediction {
    let per_task_loss: Vec<Estimate> = (0..inp.num_tasks())
        .map(|t| stl_loss(inp.p, inp.sample_counts[t], inp.sigma, inp.norm_sq(t)).0)
        .collect();
    let g = Estimate::new(
        mean(per_task_loss.iter().map(|e| e.value)),
        per_task_loss.iter().all(|e| e.valid),
    );
    let n_max = inp.sample_counts.iter().copied().max().unwrap_or(0);
    TheoryPrediction {
        per_task_loss,
        g,
        k: None,
        f: None,
        regime: Regime::classify(inp.p, n_max as f64),
        noise_extension: false,
    }
}

fn mtl_valid(inp: &TheoryInputs) -> bool {
    inp.p >= inp.total_samples() as f64 + 2.0
}

/// Expected loss on task `i` of the min-norm fit to all tasks' data:
///
/// `(1/2p) Σ_s Σ_s' n_s n_s' ‖w_s − w_s'‖² / (p − n̄ − 1)`
/// `+ Σ_s (n_s/p) ‖w_s − w_i‖² + (1 − n̄/p) ‖w_i‖² + n̄ σ² / (p − n̄ − 1)`
/// where `n̄ = Σ_s n_s`.
pub fn mtl_task_loss(inp: &TheoryInputs, i: usize) -> Estimate {
    let p = inp.p;
    let nbar = inp.total_samples() as f64;
    let d = p - nbar - 1.0;
    let counts: Vec<f64> = inp.sample_counts.iter().map(|&n| n as f64).collect();
    let value = guarded(&[d], || {
        let t = counts.len();
        let mut pair = 0.0;
        let mut to_i = 0.0;
        for s in 0..t {
            for s2 in 0..t {
                pair += counts[s] * counts[s2] * inp.dist(s, s2);
            }
            to_i += counts[s] / p * inp.dist(s, i);
        }
        pair / (2.0 * p * d)
            + to_i
            + (1.0 - nbar / p) * inp.norm_sq(i)
            + nbar * inp.sigma * inp.sigma / d
    });
    Estimate::new(value, mtl_valid(inp))
}

/// Generalisation error of the multi-task fit, evaluated from the summed
/// form
///
/// `Σ_t Σ_t' n_t'/(Tp) (1 + T n_t / (2(p − n̄ − 1))) ‖w_t − w_t'‖²`
/// `+ (1/T)(1 − n̄/p) Σ_t ‖w_t‖² + n̄ σ² / (p − n̄ − 1)`.
pub fn mtl_g(inp: &TheoryInputs) -> Estimate {
    let p = inp.p;
    let tf = inp.num_tasks() as f64;
    let nbar = inp.total_samples() as f64;
    let d = p - nbar - 1.0;
    let value = guarded(&[d], || {
        let mut g1 = 0.0;
        let mut norms = 0.0;
        for t in 0..inp.num_tasks() {
            let nt = inp.sample_counts[t] as f64;
            let w = 1.0 + tf * nt / (2.0 * d);
            for t2 in 0..inp.num_tasks() {
                let nt2 = inp.sample_counts[t2] as f64;
                g1 += nt2 / (tf * p) * w * inp.dist(t, t2);
            }
            norms += inp.norm_sq(t);
        }
        g1 + (1.0 - nbar / p) * norms / tf + nbar * inp.sigma * inp.sigma / d
    });
    Estimate::new(value, mtl_valid(inp))
}

/// Knowledge-transfer gain `K = mean_t STL_t − G` of the multi-task fit,
/// evaluated from its inner-product form
///
/// `2 Σ_t Σ_t' n_t'/(Tp) (1 + T n_t / (2(p − n̄ − 1))) ⟨w_t, w_t'⟩`
/// `− (1 + 1/T + n̄/(p − n̄ − 1)) Σ_t (n_t/p) ‖w_t‖²`
/// `− n̄ σ²/(p − n̄ − 1) + (1/T) Σ_t n_t σ²/(p − n_t − 1)`.
///
/// Valid when both the joint fit and every single-task fit are
/// overparameterised.
pub fn mtl_k(inp: &TheoryInputs) -> Estimate {
    let p = inp.p;
    let tasks = inp.num_tasks();
    let tf = tasks as f64;
    let nbar = inp.total_samples() as f64;
    let s2 = inp.sigma * inp.sigma;
    let d = p - nbar - 1.0;
    let mut denoms = vec![d];
    denoms.extend(inp.sample_counts.iter().map(|&n| p - n as f64 - 1.0));
    let value = guarded(&denoms, || {
        let g = inp.gram.inner();
        let mut k1 = 0.0;
        let mut k2 = 0.0;
        let mut stl_noise = 0.0;
        for t in 0..tasks {
            let nt = inp.sample_counts[t] as f64;
            let w = 1.0 + tf * nt / (2.0 * d);
            for t2 in 0..tasks {
                let nt2 = inp.sample_counts[t2] as f64;
                k1 += 2.0 * nt2 / (tf * p) * w * g[(t, t2)];
            }
            k2 += nt / p * g[(t, t)];
            stl_noise += nt * s2 / (p - nt - 1.0);
        }
        k1 - (1.0 + 1.0 / tf + nbar / d) * k2 - nbar * s2 / d + stl_noise / tf
    });
    let valid = mtl_valid(inp)
        && inp
            .sample_counts
            .iter()
            .all(|&n| p >= n as f64 + 2.0);
    Estimate::new(value, valid)
}

/// Per-task losses, `G` and `K` of the multi-task fit.
pub fn mtl_prediction(inp: &TheoryInputs) -> TheoryPrediction {
    TheoryPrediction {
        per_task_loss: (0..inp.num_tasks()).map(|i| mtl_task_loss(inp, i)).collect(),
        g: mtl_g(inp),
        k: Some(mtl_k(inp)),
        f: None,
        regime: Regime::classify(inp.p, inp.total_samples() as f64),
        noise_extension: false,
    }
}

/// Closed-form prediction for any learner at the final task.
pub fn predict(method: Method, inp: &TheoryInputs) -> Result<TheoryPrediction> {
    match method {
        Method::Stl => Ok(stl_prediction(inp)),
        Method::Mtl => Ok(mtl_prediction(inp)),
        Method::SeqFinetune => Ok(sequential_finetune_prediction(inp)),
        Method::PureReplay => pure_replay_prediction(inp),
        Method::ReplayReg => replay_reg_prediction(inp),
    }
}
