//! Experiment configuration and its JSON document form.
//!
//! ```json
//! {
//!   "name": "fig1a",
//!   "tasks": {"T": 10, "n": 50, "norms_sq": 1.0,
//!             "gram": {"mode": "equi", "c": 0.9238795325112867}},
//!   "sigma": [0.0, 1.0],
//!   "p_grid": [520, 600, 800],
//!   "method": "mtl",
//!   "memory": 0,
//!   "trials": 500,
//!   "seed": 1
//! }
//! ```
//!
//! `n`, `norms_sq`, `sigma` and `memory` accept a scalar or a list. `n` and
//! `norms_sq` lists give per-task values; `sigma` and `memory` lists are
//! grids swept over. Each memory value is applied to every stored task.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{BufferPolicy, GramMode, GramSpec, Method};
use crate::error::{Error, Result};
use crate::montecarlo::CompareRule;

pub const DEFAULT_TRIALS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    fn from_vec(v: Vec<T>) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v[0].clone())
        } else {
            OneOrMany::Many(v)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GramDoc {
    Equi { c: f64 },
    Explicit { inner: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksDoc {
    #[serde(rename = "T")]
    pub num_tasks: usize,
    pub n: OneOrMany<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms_sq: Option<OneOrMany<f64>>,
    pub gram: GramDoc,
}

/// On-disk form of an [`ExperimentConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tasks: TasksDoc,
    pub sigma: OneOrMany<f64>,
    pub p_grid: Vec<usize>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<OneOrMany<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_policy: Option<BufferPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<CompareRule>,
}

/// A validated experiment: task geometry, grids and Monte-Carlo settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Identifier written to the `sweep_id` column.
    pub name: String,
    pub gram: GramSpec,
    pub sample_counts: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub p_grid: Vec<usize>,
    pub method: Method,
    /// Memory sizes swept over; `[0]` for learners without memory.
    pub memory_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub buffer_policy: BufferPolicy,
    pub rule: CompareRule,
}

fn broadcast<T: Clone>(v: Vec<T>, t: usize, what: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); t]),
        k if k == t => Ok(v),
        k => Err(Error::Config(format!("{what} has {k} entries for {t} tasks"))),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ExperimentDoc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: ExperimentDoc) -> Result<Self> {
        let t = doc.tasks.num_tasks;
        if t == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        let sample_counts = broadcast(doc.tasks.n.to_vec(), t, "n")?;
        let gram = match doc.tasks.gram {
            GramDoc::Equi { c } => {
                let norms = match &doc.tasks.norms_sq {
                    Some(v) => broadcast(v.to_vec(), t, "norms_sq")?,
                    None => vec![1.0; t],
                };
                GramSpec::equi_with_norms(c, &norms)?
            }
            GramDoc::Explicit { inner } => {
                if inner.len() != t || inner.iter().any(|row| row.len() != t) {
                    return Err(Error::Config(format!("explicit gram must be {t}x{t}")));
                }
                let m = DMatrix::from_fn(t, t, |i, j| inner[i][j]);
                let spec = GramSpec::explicit(m)?;
                if let Some(v) = &doc.tasks.norms_sq {
                    let norms = broadcast(v.to_vec(), t, "norms_sq")?;
                    if norms.iter().zip(spec.norms_sq()).any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0)) {
                        return Err(Error::Config(
                            "norms_sq disagrees with the diagonal of the explicit gram".into(),
                        ));
                    }
                }
                spec
            }
        };
        let sigmas = doc.sigma.to_vec();
        if sigmas.is_empty() || sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("sigma values must be finite and non-negative".into()));
        }
        if doc.p_grid.is_empty() || doc.p_grid.contains(&0) {
            return Err(Error::Config("p_grid must be non-empty with positive entries".into()));
        }
        let memory_grid = doc.memory.map(|m| m.to_vec()).unwrap_or_else(|| vec![0]);
        if memory_grid.is_empty() {
            return Err(Error::Config("memory grid is empty".into()));
        }
        if !doc.method.uses_memory() && memory_grid.iter().any(|&m| m != 0) {
            return Err(Error::Config(format!(
                "memory only applies to pure_replay and replay_reg, not {}",
                doc.method
            )));
        }
        if doc.method.uses_memory() {
            let min_n = sample_counts[..t - 1].iter().copied().min().unwrap_or(usize::MAX);
            if let Some(&m) = memory_grid.iter().find(|&&m| m > min_n) {
                return Err(Error::Config(format!(
                    "memory size {m} exceeds the {min_n} samples of a stored task"
                )));
            }
        }
        Ok(Self {
            name: doc.name.unwrap_or_else(|| doc.method.to_string()),
            gram,
            sample_counts,
            sigmas,
            p_grid: doc.p_grid,
            method: doc.method,
            memory_grid,
            trials: doc.trials.unwrap_or(DEFAULT_TRIALS),
            seed: doc.seed,
            buffer_policy: doc.buffer_policy.unwrap_or_default(),
            rule: doc.tolerances.unwrap_or_default(),
        })
    }

    pub fn to_doc(&self) -> ExperimentDoc {
        let t = self.gram.num_tasks();
        let gram = match self.gram.mode() {
            GramMode::Equi { c } => GramDoc::Equi { c },
            GramMode::Explicit => GramDoc::Explicit {
                inner: (0..t)
                    .map(|i| (0..t).map(|j| self.gram.inner()[(i, j)]).collect())
                    .collect(),
            },
        };
        let norms_sq = match self.gram.mode() {
            GramMode::Equi { .. } => Some(OneOrMany::Many(self.gram.norms_sq())),
            GramMode::Explicit => None,
        };
        ExperimentDoc {
            name: Some(self.name.clone()),
            tasks: TasksDoc {
                num_tasks: t,
                n: OneOrMany::Many(self.sample_counts.clone()),
                norms_sq,
                gram,
            },
            sigma: OneOrMany::from_vec(self.sigmas.clone()),
            p_grid: self.p_grid.clone(),
            method: self.method,
            memory: Some(OneOrMany::from_vec(self.memory_grid.clone())),
            trials: Some(self.trials),
            seed: self.seed,
            buffer_policy: Some(self.buffer_policy),
            tolerances: Some(self.rule),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("config serialises")
    }

    pub fn num_tasks(&self) -> usize {
        self.gram.num_tasks()
    }

    /// Sweep points in output order: `sigma`, then memory, then `p`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &sigma in &self.sigmas {
            for &m in &self.memory_grid {
                for &p in &self.p_grid {
                    out.push(SweepPoint { p, m, sigma });
                }
            }
        }
        out
    }
}

/// One `(p, m, σ)` point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub p: usize,
    pub m: usize,
    pub sigma: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "tasks": {"T": 3, "n": 20, "gram": {"mode": "equi", "c": 0.5}},
        "sigma": 0.5, "p_grid": [100, 200], "method": "pure_replay",
        "memory": [0, 5, 10], "trials": 50, "seed": 9
    }"#;

    #[test]
    fn parses_example() {
        let cfg = ExperimentConfig::from_json(EXAMPLE).unwrap();
        assert_eq!(cfg.sample_counts, vec![20; 3]);
        assert_eq!(cfg.memory_grid, vec![0, 5, 10]);
        assert_eq!(cfg.sigmas, vec![0.5]);
        assert_eq!(cfg.points().len(), 6);
        assert_eq!(cfg.name, "pure_replay");
        assert_eq!(cfg.rule, CompareRule::default());
    }

    #[test]
    fn round_trips() {
        let cfg = ExperimentConfig::from_json(EXAMPLE).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        let explicit = r#"{"tasks": {"T": 2, "n": [5, 7], "gram": {"mode": "explicit",
            "inner": [[1.0, 0.3], [0.3, 2.0]]}}, "sigma": [0, 1], "p_grid": [30], "method": "mtl"}"#;
        let cfg = ExperimentConfig::from_json(explicit).unwrap();
        assert_eq!(cfg, ExperimentConfig::from_json(&cfg.to_json()).unwrap());
    }

    #[test]
    fn rejects_bad_documents() {
        let bad = [
            r#"{"tasks": {"T": 2, "n": [1,2,3], "gram": {"mode": "equi", "c": 0}}, "sigma": 0, "p_grid": [5], "method": "mtl"}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 0}}, "sigma": -1, "p_grid": [5], "method": "mtl"}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 0}}, "sigma": 0, "p_grid": [], "method": "mtl"}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 0}}, "sigma": 0, "p_grid": [5], "method": "mtl", "memory": 2}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 0}}, "sigma": 0, "p_grid": [5], "method": "pure_replay", "memory": 6}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 2}}, "sigma": 0, "p_grid": [5], "method": "mtl"}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 0}}, "sigma": 0, "p_grid": [5], "method": "ewc"}"#,
            r#"{"tasks": {"T": 2, "n": 5, "gram": {"mode": "equi", "c": 0}}, "sigma": 0, "p_grid": [5], "method": "mtl", "extra": 1}"#,
        ];
        for doc in bad {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
    }
}
