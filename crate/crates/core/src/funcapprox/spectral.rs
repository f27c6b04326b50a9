//! Spectral normalization by power iteration.
//!
//! `sigma_hat = u^T W v` where `u`, `v` are persistent estimates of the
//! leading left/right singular vectors. Each iteration does
//! `v <- W^T u / |W^T u|`, `u <- W v / |W v|`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SlimError};

/// Lower bound applied to the singular value estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

fn normalized(mut x: Array1<f64>) -> Array1<f64> {
    let n = x.dot(&x).sqrt();
    if n > SIGMA_FLOOR {
        x /= n;
    }
    x
}

impl PowerIteration {
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| normalized(Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut *rng)));
        let u = draw(rows);
        let v = draw(cols);
        PowerIteration { u, v }
    }

    pub fn iterate(&mut self, w: &Array2<f64>, n_iters: usize) {
        for _ in 0..n_iters {
            let v = w.t().dot(&self.u);
            // a zero matrix leaves the estimate where it was
            if v.dot(&v) <= SIGMA_FLOOR * SIGMA_FLOOR {
                return;
            }
            self.v = normalized(v);
            let u = w.dot(&self.v);
            if u.dot(&u) <= SIGMA_FLOOR * SIGMA_FLOOR {
                return;
            }
            self.u = normalized(u);
        }
    }

    /// Current estimate `u^T W v` (no floor applied).
    pub fn sigma(&self, w: &Array2<f64>) -> f64 {
        self.u.dot(&w.dot(&self.v))
    }
}

/// Advance the estimate by `n_power_iters` and return `W / sigma_hat`.
pub fn spectral_normalize(
    weight: &Array2<f64>,
    n_power_iters: usize,
    state: &mut PowerIteration,
) -> Result<Array2<f64>> {
    if n_power_iters == 0 {
        return Err(SlimError::InvalidArgument("n_power_iters must be >= 1".into()));
    }
    SlimError::check_dim(weight.nrows(), state.u.len())?;
    SlimError::check_dim(weight.ncols(), state.v.len())?;
    state.iterate(weight, n_power_iters);
    let sigma = state.sigma(weight).max(SIGMA_FLOOR);
    Ok(weight / sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    fn dense_sigma_max(w: &Array2<f64>) -> f64 {
        let m = nalgebra::DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
        m.singular_values().max()
    }

    #[test]
    fn diagonal_matrix_scaled_to_unit_norm() {
        let w = array![[3.0, 0.0], [0.0, 1.0]];
        let mut st = PowerIteration::random(2, 2, &mut rng_from_seed(0));
        let out = spectral_normalize(&w, 20, &mut st).unwrap();
        let want = array![[1.0, 0.0], [0.0, 1.0 / 3.0]];
        for (a, b) in out.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn unit_norm_matrix_unchanged() {
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let w = array![[c, -s], [s, c]];
        let mut st = PowerIteration::random(2, 2, &mut rng_from_seed(1));
        let out = spectral_normalize(&w, 20, &mut st).unwrap();
        for (a, b) in out.iter().zip(w.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_matrix_stays_zero() {
        let w = Array2::<f64>::zeros((3, 4));
        let mut st = PowerIteration::random(3, 4, &mut rng_from_seed(2));
        let out = spectral_normalize(&w, 5, &mut st).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_iterations_rejected() {
        let w = Array2::<f64>::eye(2);
        let mut st = PowerIteration::random(2, 2, &mut rng_from_seed(3));
        assert!(spectral_normalize(&w, 0, &mut st).is_err());
    }

    #[test]
    fn random_matrices_bounded_by_svd_oracle() {
        let mut rng = rng_from_seed(4);
        for (r, c) in [(8, 5), (5, 8), (32, 32), (64, 18)] {
            let w = Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
            let mut st = PowerIteration::random(r, c, &mut rng);
            let out = spectral_normalize(&w, 200, &mut st).unwrap();
            let s = dense_sigma_max(&out);
            assert!(s <= 1.0 + 1e-3, "sigma_max {s}");
            assert!(s >= 1.0 - 1e-3, "sigma_max {s}");
        }
    }

    #[test]
    fn estimate_persists_across_calls() {
        let mut rng = rng_from_seed(5);
        let w = Array2::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
        let mut st = PowerIteration::random(6, 6, &mut rng);
        for _ in 0..100 {
            spectral_normalize(&w, 1, &mut st).unwrap();
        }
        let sigma = st.sigma(&w);
        assert!((sigma - dense_sigma_max(&w)).abs() < 1e-6);
    }
}
