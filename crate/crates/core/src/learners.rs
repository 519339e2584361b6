//! Single-task, multi-task and continual learners built on the min-norm
//! solver, and the empirical loss metrics that score them.

use nalgebra::{DMatrix, DVector};

use crate::domain::{FittedModel, Method, ReplayBuffer, TaskDataset, TaskEnsemble, Trajectory};
use crate::error::{Error, Result};
use crate::solver::{MinNormFit, MinNormSolver};

fn into_model(
    fit: MinNormFit,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    method: Method,
    timestep: usize,
) -> FittedModel {
    let fit_residual = if y.is_empty() {
        0.0
    } else {
        (x.tr_mul(&fit.weights) - y).amax()
    };
    FittedModel {
        rank_deficit_flag: fit.diagnostics.rank_deficient(),
        diagnostics: fit.diagnostics,
        weights: fit.weights,
        method,
        timestep,
        fit_residual,
    }
}

/// Stack designs side by side and labels end to end.
fn concat<'a>(
    p: usize,
    parts: impl Iterator<Item = (&'a DMatrix<f64>, &'a DVector<f64>)> + Clone,
) -> (DMatrix<f64>, DVector<f64>) {
    let total: usize = parts.clone().map(|(x, _)| x.ncols()).sum();
    let mut x = DMatrix::zeros(p, total);
    let mut y = DVector::zeros(total);
    let mut at = 0;
    for (xi, yi) in parts {
        let k = xi.ncols();
        x.columns_mut(at, k).copy_from(xi);
        y.rows_mut(at, k).copy_from(yi);
        at += k;
    }
    (x, y)
}

/// Learners sharing one solver configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct Learner {
    pub solver: MinNormSolver,
}

impl Learner {
    /// Min-norm fit on task `t` alone.
    pub fn fit_stl(&self, ds: &TaskDataset, t: usize) -> FittedModel {
        let (x, y) = (&ds.features[t], &ds.labels[t]);
        into_model(self.solver.fit(x, y), x, y, Method::Stl, 0)
    }

    /// Min-norm fit on the concatenation of all tasks.
    pub fn fit_mtl(&self, ds: &TaskDataset) -> FittedModel {
        let (x, y) = concat(ds.dim(), ds.features.iter().zip(&ds.labels));
        into_model(self.solver.fit(&x, &y), &x, &y, Method::Mtl, 0)
    }

    /// Each task is fitted starting from the previous model, with no memory.
    pub fn run_sequential_finetune(&self, ds: &TaskDataset) -> Trajectory {
        let mut w = DVector::zeros(ds.dim());
        let mut traj = Vec::with_capacity(ds.num_tasks());
        for t in 0..ds.num_tasks() {
            let (x, y) = (&ds.features[t], &ds.labels[t]);
            let model = into_model(self.solver.fit_offset(x, y, &w), x, y, Method::SeqFinetune, t + 1);
            w = model.weights.clone();
            traj.push(model);
        }
        traj
    }

    /// At step `t` the model is refitted from zero on the replayed samples of
    /// tasks `1..t-1` together with all of task `t`.
    pub fn run_pure_replay(&self, ds: &TaskDataset, buf: &ReplayBuffer) -> Result<Trajectory> {
        self.run_replay(ds, buf, Method::PureReplay)
    }

    /// Like pure replay, but each step starts from the previous model and
    /// moves the least distance that fits the step's constraints.
    pub fn run_replay_plus_reg(&self, ds: &TaskDataset, buf: &ReplayBuffer) -> Result<Trajectory> {
        self.run_replay(ds, buf, Method::ReplayReg)
    }

    fn run_replay(&self, ds: &TaskDataset, buf: &ReplayBuffer, method: Method) -> Result<Trajectory> {
        let tasks = ds.num_tasks();
        if buf.stored.len() + 1 != tasks {
            return Err(Error::Structural(format!(
                "replay buffer covers {} tasks, expected {}",
                buf.stored.len(),
                tasks.saturating_sub(1)
            )));
        }
        let mut w = DVector::zeros(ds.dim());
        let mut traj = Vec::with_capacity(tasks);
        for t in 0..tasks {
            let replay = buf.stored[..t].iter().map(|s| (&s.features, &s.labels));
            let current = std::iter::once((&ds.features[t], &ds.labels[t]));
            let (x, y) = concat(ds.dim(), replay.chain(current));
            let fit = match method {
                Method::ReplayReg => self.solver.fit_offset(&x, &y, &w),
                _ => self.solver.fit(&x, &y),
            };
            let model = into_model(fit, &x, &y, method, t + 1);
            w = model.weights.clone();
            traj.push(model);
        }
        Ok(traj)
    }

    /// Runs one of the continual learners.
    pub fn run_continual(&self, method: Method, ds: &TaskDataset, buf: &ReplayBuffer) -> Result<Trajectory> {
        match method {
            Method::SeqFinetune => Ok(self.run_sequential_finetune(ds)),
            Method::PureReplay => self.run_pure_replay(ds, buf),
            Method::ReplayReg => self.run_replay_plus_reg(ds, buf),
            other => Err(Error::Config(format!("{other} is not a continual learner"))),
        }
    }
}

/// `‖w − w_t*‖²` for every task.
pub fn task_losses(w: &DVector<f64>, ens: &TaskEnsemble) -> Vec<f64> {
    (0..ens.num_tasks())
        .map(|t| (w - ens.task(t)).norm_squared())
        .collect()
}

/// Realised losses and summary metrics of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMetrics {
    pub per_task_loss: Vec<f64>,
    pub g: f64,
    pub k: Option<f64>,
    pub f: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl EmpiricalMetrics {
    /// Losses of a single model; `G` is their mean.
    pub fn of_model(w: &DVector<f64>, ens: &TaskEnsemble) -> Self {
        let per_task_loss = task_losses(w, ens);
        Self {
            g: mean(&per_task_loss),
            per_task_loss,
            k: None,
            f: None,
        }
    }

    /// Single-task baseline: task `t` is scored with its own model.
    pub fn of_stl(models: &[FittedModel], ens: &TaskEnsemble) -> Self {
        let per_task_loss: Vec<f64> = models
            .iter()
            .enumerate()
            .map(|(t, m)| (&m.weights - ens.task(t)).norm_squared())
            .collect();
        Self {
            g: mean(&per_task_loss),
            per_task_loss,
            k: None,
            f: None,
        }
    }

    /// Multi-task model with `K` paired against single-task models fitted on
    /// the same data.
    pub fn of_mtl(mtl: &FittedModel, stl: &[FittedModel], ens: &TaskEnsemble) -> Self {
        let mut out = Self::of_model(&mtl.weights, ens);
        let baseline = Self::of_stl(stl, ens);
        out.k = Some(baseline.g - out.g);
        out
    }

    /// Final-model losses of a continual run plus forgetting
    /// `F = mean_{t<T} [L_t(w_<T>) − L_t(w_<t>)]`.
    pub fn of_trajectory(traj: &Trajectory, ens: &TaskEnsemble) -> Result<Self> {
        let tasks = ens.num_tasks();
        if traj.len() != tasks {
            return Err(Error::MissingTrajectory {
                expected: tasks,
                got: traj.len(),
            });
        }
        let mut out = Self::of_model(&traj[tasks - 1].weights, ens);
        if tasks > 1 {
            let forgetting: Vec<f64> = (0..tasks - 1)
                .map(|t| out.per_task_loss[t] - (&traj[t].weights - ens.task(t)).norm_squared())
                .collect();
            out.f = Some(mean(&forgetting));
        } else {
            out.f = Some(0.0);
        }
        Ok(out)
    }

    /// Looks up a metric by its sweep name (`G`, `K`, `F`, `L1`, …).
    pub fn metric(&self, name: &str) -> Option<f64> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BufferPolicy, GramSpec};
    use crate::taskgen::{build_ensemble, sample_buffer, sample_dataset};

    fn setup(p: usize, n: &[usize], sigma: f64) -> (TaskEnsemble, TaskDataset) {
        let spec = GramSpec::equi(n.len(), 0.6).unwrap();
        let ens = build_ensemble(&spec, p, 4).unwrap();
        let ds = sample_dataset(&ens, n, sigma, 8).unwrap();
        (ens, ds)
    }

    #[test]
    fn mtl_on_one_task_is_stl() {
        let (_, ds) = setup(30, &[10], 0.3);
        let l = Learner::default();
        assert_eq!(l.fit_mtl(&ds).weights, l.fit_stl(&ds, 0).weights);
    }

    #[test]
    fn full_replay_equals_mtl() {
        let (_, ds) = setup(60, &[8, 8, 8], 0.2);
        let l = Learner::default();
        let buf = sample_buffer(&ds, &[8, 8], BufferPolicy::Prefix, 0).unwrap();
        let mtl = l.fit_mtl(&ds).weights;
        let pure = l.run_pure_replay(&ds, &buf).unwrap();
        assert_eq!(pure[2].weights, mtl);
        let reg = l.run_replay_plus_reg(&ds, &buf).unwrap();
        assert!((&reg[2].weights - &mtl).amax() < 1e-10);
    }

    #[test]
    fn empty_replay_is_finetuning() {
        let (_, ds) = setup(40, &[6, 7, 5], 0.1);
        let l = Learner::default();
        let buf = sample_buffer(&ds, &[0, 0], BufferPolicy::Prefix, 0).unwrap();
        let seq = l.run_sequential_finetune(&ds);
        let reg = l.run_replay_plus_reg(&ds, &buf).unwrap();
        for (a, b) in seq.iter().zip(&reg) {
            assert!((&a.weights - &b.weights).amax() < 1e-12);
        }
        let pure = l.run_pure_replay(&ds, &buf).unwrap();
        for (t, model) in pure.iter().enumerate() {
            assert!((&model.weights - &l.fit_stl(&ds, t).weights).amax() < 1e-12);
        }
    }

    #[test]
    fn interpolation_and_metrics() {
        let (ens, ds) = setup(50, &[10, 10], 0.5);
        let l = Learner::default();
        let mtl = l.fit_mtl(&ds);
        assert!(mtl.fit_residual < 1e-9);
        assert!(!mtl.rank_deficit_flag);
        let stl: Vec<_> = (0..2).map(|t| l.fit_stl(&ds, t)).collect();
        let m = EmpiricalMetrics::of_mtl(&mtl, &stl, &ens);
        let stl_m = EmpiricalMetrics::of_stl(&stl, &ens);
        assert!((m.k.unwrap() - (stl_m.g - m.g)).abs() < 1e-15);
        assert_eq!(m.metric("L2"), Some(m.per_task_loss[1]));
        assert_eq!(m.metric("L3"), None);

        let traj = l.run_sequential_finetune(&ds);
        let tm = EmpiricalMetrics::of_trajectory(&traj, &ens).unwrap();
        let l1_before = (&traj[0].weights - ens.task(0)).norm_squared();
        assert!((tm.f.unwrap() - (tm.per_task_loss[0] - l1_before)).abs() < 1e-15);
        assert!(matches!(
            EmpiricalMetrics::of_trajectory(&traj[..1].to_vec(), &ens),
            Err(Error::MissingTrajectory { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn replay_steps_fit_their_constraints() {
        let (_, ds) = setup(80, &[10, 10, 10], 0.0);
        let l = Learner::default();
        let buf = sample_buffer(&ds, &[4, 6], BufferPolicy::Uniform, 3).unwrap();
        let traj = l.run_replay_plus_reg(&ds, &buf).unwrap();
        for m in &traj {
            assert!(m.fit_residual < 1e-9, "{}", m.fit_residual);
        }
        let last = &traj[2].weights;
        let stored = &buf.stored[1];
        assert!((stored.features.tr_mul(last) - &stored.labels).amax() < 1e-9);
    }
}
