//! Return and advantage estimators, per-batch advantage standardization and
//! the weighted combination across reward channels.

use crate::error::{Result, SlimError};

const STD_FLOOR: f64 = 1e-8;

/// Discounted reward-to-go `G_t = sum_{j >= t} gamma^(j-t) r_j`.
pub fn mc_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimation over one episode. `values` carries
/// `T + 1` entries; the last is the bootstrap (zero at a terminal).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(SlimError::Dimension {
            expected: n + 1,
            got: values.len(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lam * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Population mean and standard deviation.
pub fn mean_std(a: &[f64]) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Spread at rounding level relative to the magnitude.
pub fn is_constant(a: &[f64]) -> bool {
    let (mean, std) = mean_std(a);
    std <= 1e-12 * mean.abs().max(1.0)
}

/// `(A - mean) / (std + 1e-8)` with population statistics. A batch whose
/// spread is at rounding level relative to its magnitude is treated as
/// constant and maps to zeros.
pub fn normalize_advantages(a: &[f64]) -> Vec<f64> {
    if is_constant(a) {
        return vec![0.0; a.len()];
    }
    let (mean, std) = mean_std(a);
    a.iter().map(|x| (x - mean) / (std + STD_FLOOR)).collect()
}

/// Nonnegative per-channel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationWeights {
    pub omega: Vec<f64>,
}

impl CombinationWeights {
    pub fn equal(n: usize) -> Self {
        CombinationWeights { omega: vec![1.0; n] }
    }

    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(SlimError::InvalidArgument("weights must be finite and >= 0".into()));
        }
        if !omega.iter().any(|w| *w > 0.0) {
            return Err(SlimError::InvalidArgument(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(CombinationWeights { omega })
    }
}

/// Elementwise `sum_i omega_i A_i`.
pub fn combine_advantages(channels: &[&[f64]], weights: &CombinationWeights) -> Result<Vec<f64>> {
    SlimError::check_dim(weights.omega.len(), channels.len())?;
    let n = channels.first().map_or(0, |c| c.len());
    let mut out = vec![0.0; n];
    for (c, w) in channels.iter().zip(&weights.omega) {
        SlimError::check_dim(n, c.len())?;
        for (o, v) in out.iter_mut().zip(c.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_returns(r: &[f64], gamma: f64) -> Vec<f64> {
        (0..r.len())
            .map(|t| (t..r.len()).map(|j| gamma.powi((j - t) as i32) * r[j]).sum())
            .collect()
    }

    fn brute_gae(r: &[f64], v: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
        let n = r.len();
        let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * v[t + 1] - v[t]).collect();
        (0..n)
            .map(|t| (t..n).map(|k| (gamma * lam).powi((k - t) as i32) * delta[k]).sum())
            .collect()
    }

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn returns_examples() {
        assert_eq!(mc_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(mc_returns(&[1.0, 0.0, 0.0], 0.5), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn returns_match_nested_loops() {
        let r = random_vec(1, 200);
        let a = mc_returns(&r, 0.97);
        let b = brute_returns(&r, 0.97);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn gae_lambda_one_is_return_minus_value() {
        let r = random_vec(2, 200);
        let mut v = random_vec(3, 200);
        v.push(0.0);
        let a = gae(&r, &v, 0.99, 1.0).unwrap();
        let g = mc_returns(&r, 0.99);
        for t in 0..200 {
            assert!((a[t] - (g[t] - v[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = random_vec(4, 50);
        let v = random_vec(5, 51);
        let a = gae(&r, &v, 0.9, 0.0).unwrap();
        for t in 0..50 {
            assert!((a[t] - (r[t] + 0.9 * v[t + 1] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_direct_sum() {
        let r = random_vec(6, 200);
        let v = random_vec(7, 201);
        let a = gae(&r, &v, 0.99, 0.95).unwrap();
        let b = brute_gae(&r, &v, 0.99, 0.95);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn gae_length_mismatch() {
        assert!(gae(&[1.0, 2.0], &[0.0, 0.0], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalize_example() {
        let n = normalize_advantages(&[1.0, 2.0, 3.0]);
        let expect = [-1.224_744_871, 0.0, 1.224_744_871];
        for (a, b) in n.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_constant_is_zero() {
        assert_eq!(normalize_advantages(&[0.1; 7]), vec![0.0; 7]);
        assert_eq!(normalize_advantages(&[-3.0]), vec![0.0]);
    }

    #[test]
    fn combine_examples() {
        let c = combine_advantages(&[&[1.0], &[-1.0], &[0.0]], &CombinationWeights::equal(3)).unwrap();
        assert_eq!(c, vec![0.0]);
        let a = [0.5, -1.0];
        let b = [2.0, 3.0];
        let w = CombinationWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(combine_advantages(&[&a, &b], &w).unwrap(), a.to_vec());
        assert!(combine_advantages(&[&a, &[1.0]], &CombinationWeights::equal(2)).is_err());
        assert!(CombinationWeights::new(vec![0.0, 0.0]).is_err());
        assert!(CombinationWeights::new(vec![-1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn normalized_stats(v in prop::collection::vec(-100.0f64..100.0, 2..200)) {
            let (_, s) = mean_std(&v);
            prop_assume!(s > 1e-3);
            let n = normalize_advantages(&v);
            let (m, sd) = mean_std(&n);
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((sd - 1.0).abs() < 1e-5);
        }

        #[test]
        fn affine_invariance(v in prop::collection::vec(-10.0f64..10.0, 2..100), c in 0.1f64..10.0, b in -10.0f64..10.0) {
            let (_, s) = mean_std(&v);
            prop_assume!(s > 1e-2);
            let n0 = normalize_advantages(&v);
            let n1 = normalize_advantages(&v.iter().map(|x| c * x + b).collect::<Vec<_>>());
            for (a, bb) in n0.iter().zip(&n1) {
                prop_assert!((a - bb).abs() < 1e-6);
            }
        }
    }
}
