//! Shared value types: task geometry, sampled data, replay buffers, fitted
//! models, and the records produced by the theory and Monte-Carlo layers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolveDiagnostics;

/// Relative tolerance for the PSD test: `λ_min ≥ -PSD_REL_TOL · max|λ|`.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Slack allowed on symmetry and Cauchy–Schwarz checks, relative to the
/// largest entry of the matrix.
const STRUCTURE_REL_TOL: f64 = 1e-12;

/// How a [`GramSpec`] was specified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GramMode {
    /// All pairwise cosines equal `c`.
    Equi { c: f64 },
    /// A user-supplied inner-product matrix.
    Explicit,
}

/// Desired geometry of the `T` ground-truth task vectors: squared norms on
/// the diagonal and pairwise inner products off it.
///
/// The matrix is only required to be symmetric and to respect
/// Cauchy–Schwarz; positive semidefiniteness is checked separately by
/// [`GramSpec::feasibility`] because the closed-form risks stay well defined
/// for geometries that cannot be realised by actual vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSpec {
    inner: DMatrix<f64>,
    mode: GramMode,
}

impl GramSpec {
    /// Unit-norm tasks with all pairwise cosines equal to `c`.
    pub fn equi(num_tasks: usize, c: f64) -> Result<Self> {
        Self::equi_with_norms(c, &vec![1.0; num_tasks])
    }

    /// Tasks with the given squared norms and common pairwise cosine `c`.
    pub fn equi_with_norms(c: f64, norms_sq: &[f64]) -> Result<Self> {
        if !c.is_finite() || c.abs() > 1.0 {
            return Err(Error::Structural(format!(
                "pairwise cosine must lie in [-1, 1], got {c}"
            )));
        }
        let t = norms_sq.len();
        let inner = DMatrix::from_fn(t, t, |i, j| {
            if i == j {
                norms_sq[i]
            } else {
                c * (norms_sq[i] * norms_sq[j]).sqrt()
            }
        });
        Self::build(inner, GramMode::Equi { c })
    }

    /// Arbitrary symmetric inner-product matrix; squared norms are read from
    /// the diagonal.
    pub fn explicit(inner: DMatrix<f64>) -> Result<Self> {
        Self::build(inner, GramMode::Explicit)
    }

    fn build(inner: DMatrix<f64>, mode: GramMode) -> Result<Self> {
        let t = inner.nrows();
        if t == 0 {
            return Err(Error::Structural("at least one task is required".into()));
        }
        if inner.ncols() != t {
            return Err(Error::Structural(format!(
                "gram matrix must be square, got {}x{}",
                t,
                inner.ncols()
            )));
        }
        if inner.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structural("gram matrix has non-finite entries".into()));
        }
        let scale = inner.amax().max(f64::MIN_POSITIVE);
        let slack = STRUCTURE_REL_TOL * scale;
        for i in 0..t {
            if inner[(i, i)] < 0.0 {
                return Err(Error::Structural(format!(
                    "squared norm of task {} is negative ({})",
                    i + 1,
                    inner[(i, i)]
                )));
            }
            for j in 0..i {
                if (inner[(i, j)] - inner[(j, i)]).abs() > slack {
                    return Err(Error::Structural(format!(
                        "gram matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                let bound = (inner[(i, i)] * inner[(j, j)]).sqrt();
                if inner[(i, j)].abs() > bound + slack {
                    return Err(Error::Structural(format!(
                        "tasks {} and {} violate Cauchy-Schwarz: |{}| > {}",
                        j + 1,
                        i + 1,
                        inner[(i, j)],
                        bound
                    )));
                }
            }
        }
        // Store an exactly symmetric copy.
        let sym = (&inner + inner.transpose()) * 0.5;
        Ok(Self { inner: sym, mode })
    }

    pub fn num_tasks(&self) -> usize {
        self.inner.nrows()
    }

    pub fn inner(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn mode(&self) -> GramMode {
        self.mode
    }

    pub fn norms_sq(&self) -> Vec<f64> {
        self.inner.diagonal().iter().copied().collect()
    }

    /// `‖w_s − w_t‖²` implied by the geometry.
    pub fn dist_sq(&self, s: usize, t: usize) -> f64 {
        self.inner[(s, s)] + self.inner[(t, t)] - 2.0 * self.inner[(s, t)]
    }

    /// Eigenvalue-based PSD check.
    pub fn feasibility(&self) -> FeasibilityReport {
        let eig = SymmetricEigen::new(self.inner.clone());
        let min_eigenvalue = eig.eigenvalues.min();
        let max_abs_eigenvalue = eig.eigenvalues.amax();
        let tolerance = PSD_REL_TOL * max_abs_eigenvalue;
        FeasibilityReport {
            min_eigenvalue,
            max_abs_eigenvalue,
            tolerance,
            feasible: min_eigenvalue >= -tolerance,
        }
    }
}

/// Outcome of [`GramSpec::feasibility`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub min_eigenvalue: f64,
    pub max_abs_eigenvalue: f64,
    pub tolerance: f64,
    pub feasible: bool,
}

/// Ground-truth task vectors realising a feasible [`GramSpec`] in `R^p`.
#[derive(Clone, Debug)]
pub struct TaskEnsemble {
    pub(crate) truth: DMatrix<f64>,
    pub(crate) realized_gram: DMatrix<f64>,
    pub(crate) seed: u64,
}

impl TaskEnsemble {
    /// Wrap explicitly chosen task vectors (one per column).
    pub fn from_truth(truth: DMatrix<f64>, seed: u64) -> Self {
        let realized_gram = truth.transpose() * &truth;
        Self {
            truth,
            realized_gram,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.truth.nrows()
    }

    pub fn num_tasks(&self) -> usize {
        self.truth.ncols()
    }

    /// Task vectors as the columns of a `p × T` matrix.
    pub fn truth(&self) -> &DMatrix<f64> {
        &self.truth
    }

    pub fn task(&self, t: usize) -> DVectorView<'_, f64> {
        self.truth.column(t)
    }

    pub fn realized_gram(&self) -> &DMatrix<f64> {
        &self.realized_gram
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Per-task Gaussian designs and noisy labels `y_t = X_tᵀ w_t + z_t`.
#[derive(Clone, Debug)]
pub struct TaskDataset {
    /// `X_t`, shape `p × n_t`, one sample per column.
    pub features: Vec<DMatrix<f64>>,
    pub labels: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

impl TaskDataset {
    pub fn num_tasks(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |x| x.nrows())
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.features.iter().map(|x| x.ncols()).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.features.iter().map(|x| x.ncols()).sum()
    }
}

/// How replay samples are picked from a finished task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    /// The first `m_t` samples.
    #[default]
    Prefix,
    /// `m_t` samples drawn uniformly without replacement.
    Uniform,
}

/// Samples kept from one finished task.
#[derive(Clone, Debug)]
pub struct StoredTask {
    pub task: usize,
    /// Column indices into the task's design, ascending.
    pub indices: Vec<usize>,
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// Replay memory for tasks `1..T-1`; the contents for each task are chosen
/// once and never change.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    pub stored: Vec<StoredTask>,
}

impl ReplayBuffer {
    pub fn memory_sizes(&self) -> Vec<usize> {
        self.stored.iter().map(|s| s.indices.len()).collect()
    }

    /// Samples stored for the first `t` tasks.
    pub fn total_through(&self, t: usize) -> usize {
        self.stored.iter().take(t).map(|s| s.indices.len()).sum()
    }
}

/// Learning procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stl,
    Mtl,
    SeqFinetune,
    PureReplay,
    ReplayReg,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Stl,
        Method::Mtl,
        Method::SeqFinetune,
        Method::PureReplay,
        Method::ReplayReg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stl => "stl",
            Method::Mtl => "mtl",
            Method::SeqFinetune => "seq_finetune",
            Method::PureReplay => "pure_replay",
            Method::ReplayReg => "replay_reg",
        }
    }

    pub fn is_continual(self) -> bool {
        matches!(
            self,
            Method::SeqFinetune | Method::PureReplay | Method::ReplayReg
        )
    }

    /// Whether the method keeps a replay buffer.
    pub fn uses_memory(self) -> bool {
        matches!(self, Method::PureReplay | Method::ReplayReg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// A learned weight vector plus fit diagnostics.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub weights: DVector<f64>,
    pub method: Method,
    /// 1-based task step after which the model was produced; 0 for offline
    /// learners.
    pub timestep: usize,
    /// `max_j |x_jᵀ w − y_j|` over the constraint set used in the fit.
    pub fit_residual: f64,
    pub rank_deficit_flag: bool,
    pub diagnostics: SolveDiagnostics,
}

/// Models `w_<1>, …, w_<T>` of a continual learner.
pub type Trajectory = Vec<FittedModel>;

/// A closed-form quantity together with whether its closed form covers the
/// requested parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub valid: bool,
}

impl Estimate {
    pub fn new(value: f64, valid: bool) -> Self {
        Self { value, valid }
    }

    pub fn invalid() -> Self {
        Self {
            value: f64::NAN,
            valid: false,
        }
    }
}

/// Sample-size regime of a least-squares problem with `p` features and
/// `n` samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `n ≥ p + 2`
    Underparam,
    /// `p ≥ n + 2`
    Overparam,
    /// `|p − n| ≤ 1`, where the expected risk is infinite.
    Threshold,
}

impl Regime {
    pub fn classify(p: f64, n: f64) -> Self {
        if n >= p + 2.0 {
            Regime::Underparam
        } else if p >= n + 2.0 {
            Regime::Overparam
        } else {
            Regime::Threshold
        }
    }
}

/// Closed-form expected losses and summary metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryPrediction {
    /// Expected `‖w − w_t*‖²` for each task at the final model.
    pub per_task_loss: Vec<Estimate>,
    pub g: Estimate,
    /// Knowledge-transfer gain, multi-task learners only.
    pub k: Option<Estimate>,
    /// Forgetting, continual learners only.
    pub f: Option<Estimate>,
    pub regime: Regime,
    /// Set when noise terms were added on top of a closed form that is stated
    /// for noiseless labels only.
    pub noise_extension: bool,
}

impl TheoryPrediction {
    /// Looks up a metric by the names used in sweep output
    /// (`G`, `K`, `F`, `L1`, `L2`, …).
    pub fn metric(&self, name: &str) -> Option<Estimate> {
        match name {
            "G" => Some(self.g),
            "K" => self.k,
            "F" => self.f,
            _ => {
                let idx: usize = name.strip_prefix('L')?.parse().ok()?;
                self.per_task_loss.get(idx.checked_sub(1)?).copied()
            }
        }
    }
}

/// Sample mean and standard error of one metric across Monte-Carlo trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub base_seed: u64,
}

impl MCEstimate {
    pub fn from_samples(metric: impl Into<String>, samples: &[f64], base_seed: u64) -> Result<Self> {
        let r = samples.len();
        if r < 2 {
            return Err(Error::TooFewTrials(r));
        }
        let mean = samples.iter().sum::<f64>() / r as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        Ok(Self {
            metric: metric.into(),
            mean,
            stderr: (var / r as f64).sqrt(),
            trials: r,
            base_seed,
        })
    }
}

/// Named numerical check with its achieved error and tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            error,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: error {:.3e} (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance
        )
    }
}
