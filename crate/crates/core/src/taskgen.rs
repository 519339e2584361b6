//! Sampling of task vectors, Gaussian designs and replay buffers.
//!
//! Every random draw is derived from an explicit `u64` seed so runs are
//! reproducible and independent of evaluation order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{BufferPolicy, GramSpec, ReplayBuffer, StoredTask, TaskDataset, TaskEnsemble};
use crate::error::{Error, Result};

const NOISE_STREAM: u64 = 1;
/// Random bases whose smallest pivot falls below this fraction of the
/// largest are redrawn.
const BASIS_PIVOT_TOL: f64 = 1e-10;

/// SplitMix64 finaliser.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the `index`-th independent substream of `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    seed ^ mix64(index)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Factor `inner = L Lᵀ` through its eigendecomposition, clipping tiny
/// negative eigenvalues to zero.
fn psd_factor(inner: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(inner.clone());
    let mut l = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Realise the geometry in `R^p`: `w_t = Q L_tᵀ` with `inner = L Lᵀ` and `Q`
/// a random `p × T` orthonormal basis, so the realised Gram equals `inner`
/// up to round-off.
pub fn build_ensemble(spec: &GramSpec, p: usize, seed: u64) -> Result<TaskEnsemble> {
    let report = spec.feasibility();
    if !report.feasible {
        return Err(Error::Infeasible {
            min_eigenvalue: report.min_eigenvalue,
        });
    }
    let t = spec.num_tasks();
    if p < t {
        return Err(Error::Dimension { dim: p, tasks: t });
    }
    let l = psd_factor(spec.inner());
    let mut attempt = 0u64;
    let q = loop {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, attempt));
        let g = gaussian_matrix(&mut rng, p, t);
        let qr = g.col_piv_qr();
        let r = qr.r();
        let diag = r.diagonal().abs();
        if diag.min() > BASIS_PIVOT_TOL * diag.max() {
            break qr.q();
        }
        attempt += 1;
    };
    let truth = q * l.transpose();
    let realized_gram = truth.transpose() * &truth;
    Ok(TaskEnsemble {
        truth,
        realized_gram,
        seed,
    })
}

/// Draw `X_t` with i.i.d. `N(0, 1)` entries and `y_t = X_tᵀ w_t + z_t` with
/// `z_t ~ N(0, σ² I)`.
///
/// Task `t` uses substream `sub_seed(seed, t)`; features and noise come from
/// separate ChaCha streams so the designs do not depend on `σ`.
pub fn sample_dataset(
    ens: &TaskEnsemble,
    counts: &[usize],
    sigma: f64,
    seed: u64,
) -> Result<TaskDataset> {
    if counts.len() != ens.num_tasks() {
        return Err(Error::Structural(format!(
            "{} sample counts given for {} tasks",
            counts.len(),
            ens.num_tasks()
        )));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Structural(format!(
            "noise level must be finite and non-negative, got {sigma}"
        )));
    }
    let p = ens.dim();
    let mut features = Vec::with_capacity(counts.len());
    let mut labels = Vec::with_capacity(counts.len());
    let mut noise = Vec::with_capacity(counts.len());
    for (t, &n) in counts.iter().enumerate() {
        let task_seed = sub_seed(seed, t as u64);
        let mut frng = ChaCha8Rng::seed_from_u64(task_seed);
        let x = gaussian_matrix(&mut frng, p, n);
        let z = if sigma == 0.0 {
            DVector::zeros(n)
        } else {
            let mut nrng = ChaCha8Rng::seed_from_u64(task_seed);
            nrng.set_stream(NOISE_STREAM);
            DVector::from_fn(n, |_, _| sigma * Distribution::<f64>::sample(&StandardNormal, &mut nrng))
        };
        let y = x.tr_mul(&ens.task(t)) + &z;
        features.push(x);
        labels.push(y);
        noise.push(z);
    }
    Ok(TaskDataset {
        features,
        labels,
        noise,
        sigma,
        seed,
    })
}

/// Choose the replay samples for tasks `1..T-1`. `memory[i]` samples are
/// kept from task `i + 1`; the final task is never stored.
pub fn sample_buffer(
    ds: &TaskDataset,
    memory: &[usize],
    policy: BufferPolicy,
    seed: u64,
) -> Result<ReplayBuffer> {
    let t = ds.num_tasks();
    if memory.len() + 1 != t {
        return Err(Error::Structural(format!(
            "{} memory sizes given for {} tasks (expected {})",
            memory.len(),
            t,
            t.saturating_sub(1)
        )));
    }
    let mut stored = Vec::with_capacity(memory.len());
    for (task, &m) in memory.iter().enumerate() {
        let x = &ds.features[task];
        let available = x.ncols();
        if m > available {
            return Err(Error::Capacity {
                task: task + 1,
                requested: m,
                available,
            });
        }
        let indices: Vec<usize> = match policy {
            BufferPolicy::Prefix => (0..m).collect(),
            BufferPolicy::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, task as u64));
                let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, available, m).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        stored.push(StoredTask {
            task,
            features: x.select_columns(&indices),
            labels: ds.labels[task].select_rows(&indices),
            indices,
        });
    }
    Ok(ReplayBuffer { stored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ensemble_realises_gram() {
        let spec = GramSpec::equi(10, (PI / 8.0).cos()).unwrap();
        let ens = build_ensemble(&spec, 520, 3).unwrap();
        assert_eq!(ens.truth().shape(), (520, 10));
        let err = (ens.realized_gram() - spec.inner()).amax();
        assert!(err < 1e-10, "err={err}");
    }

    #[test]
    fn two_task_geometry() {
        let spec = GramSpec::equi(2, 0.5).unwrap();
        let ens = build_ensemble(&spec, 3, 11).unwrap();
        let g = ens.realized_gram();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((g[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((g[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_task_norm() {
        let spec = GramSpec::explicit(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let ens = build_ensemble(&spec, 5, 0).unwrap();
        assert!((ens.task(0).norm_squared() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_dimension_errors() {
        let bad = GramSpec::equi(10, (7.0 * PI / 8.0).cos()).unwrap();
        match build_ensemble(&bad, 600, 0) {
            Err(Error::Infeasible { min_eigenvalue }) => assert!(min_eigenvalue < -7.0),
            other => panic!("unexpected {other:?}"),
        }
        let ok = GramSpec::equi(10, 0.1).unwrap();
        assert!(matches!(
            build_ensemble(&ok, 5, 0),
            Err(Error::Dimension { dim: 5, tasks: 10 })
        ));
    }

    #[test]
    fn dataset_is_reproducible_and_consistent() {
        let spec = GramSpec::equi(3, 0.2).unwrap();
        let ens = build_ensemble(&spec, 20, 1).unwrap();
        let a = sample_dataset(&ens, &[5, 6, 7], 0.5, 42).unwrap();
        let b = sample_dataset(&ens, &[5, 6, 7], 0.5, 42).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        for t in 0..3 {
            let y = a.features[t].tr_mul(&ens.task(t)) + &a.noise[t];
            assert_eq!(y, a.labels[t]);
        }
        let clean = sample_dataset(&ens, &[5, 6, 7], 0.0, 42).unwrap();
        assert_eq!(clean.features, a.features);
        assert_eq!(clean.labels[1], clean.features[1].tr_mul(&ens.task(1)));
    }

    #[test]
    fn buffer_policies() {
        let spec = GramSpec::equi(3, 0.2).unwrap();
        let ens = build_ensemble(&spec, 20, 1).unwrap();
        let ds = sample_dataset(&ens, &[8, 8, 8], 0.1, 2).unwrap();
        let buf = sample_buffer(&ds, &[3, 0], BufferPolicy::Prefix, 0).unwrap();
        assert_eq!(buf.stored[0].indices, vec![0, 1, 2]);
        assert_eq!(buf.stored[0].features, ds.features[0].columns(0, 3));
        assert_eq!(buf.stored[1].indices.len(), 0);
        assert_eq!(buf.total_through(2), 3);

        let u = sample_buffer(&ds, &[5, 8], BufferPolicy::Uniform, 9).unwrap();
        let idx = &u.stored[0].indices;
        assert_eq!(idx.len(), 5);
        assert!(idx.windows(2).all(|w| w[0] < w[1]) && *idx.last().unwrap() < 8);
        assert_eq!(u.stored[1].indices, (0..8).collect::<Vec<_>>());

        assert!(matches!(
            sample_buffer(&ds, &[9, 0], BufferPolicy::Prefix, 0),
            Err(Error::Capacity { task: 1, requested: 9, available: 8 })
        ));
        assert!(sample_buffer(&ds, &[1], BufferPolicy::Prefix, 0).is_err());
    }
}
