//! Built-in experiment grids for the four reference panels.
//!
//! All panels use `T = 10` unit-norm tasks with `n = 50` samples each and a
//! common pairwise cosine: `cos(π/8)` for the aligned panels (`fig1a`,
//! `fig1c`) and `cos(7π/8)` for the opposed ones (`fig1b`, `fig1d`). The
//! opposed geometry is not positive semidefinite for ten tasks, so those
//! panels are theory-only.

use std::f64::consts::PI;

use crate::config::{ExperimentConfig, DEFAULT_TRIALS};
use crate::domain::{BufferPolicy, GramSpec, Method};
use crate::error::{Error, Result};
use crate::montecarlo::CompareRule;

pub const PANELS: [&str; 4] = ["fig1a", "fig1b", "fig1c", "fig1d"];

pub const PANEL_TASKS: usize = 10;
pub const PANEL_SAMPLES: usize = 50;

/// Dimensions of the offline panels (`p > n̄ = 500`).
pub const OFFLINE_P_GRID: [usize; 12] = [520, 550, 600, 700, 800, 1000, 1250, 1500, 1750, 2000, 2500, 3000];
/// Dimensions of the replay panels; spans under- and overparameterised
/// regimes of the final joint fit for every memory size.
pub const REPLAY_P_GRID: [usize; 14] = [60, 100, 150, 200, 300, 400, 520, 600, 800, 1000, 1500, 2000, 2500, 3000];
pub const REPLAY_MEMORY: [usize; 4] = [0, 10, 25, 50];

pub fn aligned_cosine() -> f64 {
    (PI / 8.0).cos()
}

pub fn opposed_cosine() -> f64 {
    (7.0 * PI / 8.0).cos()
}

/// A panel: its configurations and whether Monte-Carlo rows are produced.
#[derive(Clone, Debug)]
pub struct Panel {
    pub name: &'static str,
    pub configs: Vec<ExperimentConfig>,
    pub simulate: bool,
}

#[allow(clippy::too_many_arguments)]
fn config(
    name: &str,
    method: Method,
    c: f64,
    sigmas: Vec<f64>,
    p_grid: &[usize],
    memory: &[usize],
    trials: usize,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        gram: GramSpec::equi(PANEL_TASKS, c).expect("valid cosine"),
        sample_counts: vec![PANEL_SAMPLES; PANEL_TASKS],
        sigmas,
        p_grid: p_grid.to_vec(),
        method,
        memory_grid: memory.to_vec(),
        trials,
        seed,
        buffer_policy: BufferPolicy::Prefix,
        rule: CompareRule::default(),
    }
}

/// Builds a panel by name. `trials` defaults to 500.
pub fn panel(name: &str, trials: Option<usize>, seed: u64) -> Result<Panel> {
    let r = trials.unwrap_or(DEFAULT_TRIALS);
    let (static_name, configs, simulate) = match name {
        "fig1a" | "fig1b" => {
            let (id, c, sim) = if name == "fig1a" {
                ("fig1a", aligned_cosine(), true)
            } else {
                ("fig1b", opposed_cosine(), false)
            };
            let cfgs = [Method::Mtl, Method::Stl]
                .into_iter()
                .map(|m| config(id, m, c, vec![0.0, 1.0], &OFFLINE_P_GRID, &[0], r, seed))
                .collect();
            (id, cfgs, sim)
        }
        "fig1c" | "fig1d" => {
            let (id, c, sim) = if name == "fig1c" {
                ("fig1c", aligned_cosine(), true)
            } else {
                ("fig1d", opposed_cosine(), false)
            };
            let cfg = config(id, Method::PureReplay, c, vec![0.0], &REPLAY_P_GRID, &REPLAY_MEMORY, r, seed);
            (id, vec![cfg], sim)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown figure '{other}' (expected one of {})",
                PANELS.join(", ")
            )))
        }
    };
    Ok(Panel {
        name: static_name,
        configs,
        simulate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panels_build() {
        for name in PANELS {
            let p = panel(name, Some(10), 1).unwrap();
            assert_eq!(p.simulate, name == "fig1a" || name == "fig1c");
            for cfg in &p.configs {
                assert_eq!(cfg.gram.feasibility().feasible, p.simulate);
                assert_eq!(cfg.trials, 10);
            }
        }
        assert!(panel("fig2", None, 0).is_err());
    }
}
