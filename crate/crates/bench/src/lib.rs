//! Fixtures shared by the benchmarks under `benches/`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `p × n` standard Gaussian design and a matching label vector.
pub fn gaussian_problem(p: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
    let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let (a, ya) = gaussian_problem(5, 3, 9);
        let (b, yb) = gaussian_problem(5, 3, 9);
        assert_eq!(a, b);
        assert_eq!(ya, yb);
        assert_eq!(a.shape(), (5, 3));
    }
}
