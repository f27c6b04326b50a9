//! Value functions, one per critic name.
//!
//! Each critic regresses standardized targets and maps back through running
//! target statistics. When the statistics move, the output layer is rescaled
//! so that predictions in return units are unchanged.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Result, SlimError};
use crate::funcapprox::{clip_grad_norm, Adam, GradientSet, Network};

const STATS_RATE: f64 = 0.1;
const STD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Network,
    pub mean: f64,
    pub std: f64,
    opt: Adam,
    seen: bool,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut c = Self::from_parts(Network::mlp(&sizes, 1.0, rng), 0.0, 1.0, lr);
        c.seen = false;
        c
    }

    /// Critic with already established target statistics.
    pub fn from_parts(net: Network, mean: f64, std: f64, lr: f64) -> Self {
        let opt = Adam::new(net.param_count(), lr);
        Critic {
            net,
            mean,
            std,
            opt,
            seen: true,
        }
    }

    /// Value predictions in return units.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let y = self.net.forward_batch(x)?;
        Ok(y.column(0).iter().map(|v| v * self.std + self.mean).collect())
    }

    /// Fold a batch of targets into the running statistics, preserving
    /// predictions. The first batch sets the statistics outright.
    pub fn observe_targets(&mut self, targets: &[f64]) {
        if targets.is_empty() {
            return;
        }
        let n = targets.len() as f64;
        let bm = targets.iter().sum::<f64>() / n;
        let bsq = targets.iter().map(|t| t * t).sum::<f64>() / n;
        let (m, sq) = if self.seen {
            let sq_old = self.std * self.std + self.mean * self.mean;
            (
                (1.0 - STATS_RATE) * self.mean + STATS_RATE * bm,
                (1.0 - STATS_RATE) * sq_old + STATS_RATE * bsq,
            )
        } else {
            (bm, bsq)
        };
        let std = (sq - m * m).max(0.0).sqrt().max(STD_FLOOR);
        if !self.seen {
            self.mean = m;
            self.std = std;
            self.seen = true;
            return;
        }
        let last = self.net.layers.last_mut().expect("non-empty network");
        let k = self.std / std;
        last.weight.mapv_inplace(|w| w * k);
        last.bias.mapv_inplace(|b| (self.std * b + self.mean - m) / std);
        self.mean = m;
        self.std = std;
        self.seen = true;
    }

    /// One Adam step on the standardized regression loss. Returns the loss
    /// before the step.
    pub fn update(&mut self, x: ArrayView2<f64>, targets: &[f64], max_grad_norm: f64) -> Result<f64> {
        let (loss, grads) = critic_loss_and_grads(self, x, targets)?;
        if !grads.is_finite() {
            return Err(SlimError::Numerical("non-finite critic gradient".into()));
        }
        let mut g = grads.flatten();
        clip_grad_norm(&mut g, max_grad_norm);
        let mut p = self.net.flat_params();
        self.opt.step(&mut p, &g);
        self.net.set_flat_params(&p)?;
        Ok(loss)
    }
}

/// `0.5 * mean((out - (y - mean) / std)^2)` and its gradient.
pub fn critic_loss_and_grads(c: &Critic, x: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, GradientSet)> {
    let n = x.nrows();
    SlimError::check_dim(n, targets.len())?;
    if n == 0 {
        return Err(SlimError::InvalidArgument("empty critic batch".into()));
    }
    let cache = c.net.forward_cached(x)?;
    let out = cache.output();
    let mut up = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let e = out[[i, 0]] - (targets[i] - c.mean) / c.std;
        loss += 0.5 * e * e / n as f64;
        up[[i, 0]] = e / n as f64;
    }
    let (g, _) = c.net.backward_batch(&cache, up.view())?;
    Ok((loss, g))
}

/// Critics keyed by name (`reach`, `discovery`, `safety` or `sum`). All share
/// the same input width.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    pub critics: BTreeMap<String, Critic>,
}

impl CriticEnsemble {
    pub fn new<R: Rng + ?Sized>(names: &[&str], in_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let critics = names
            .iter()
            .map(|n| (n.to_string(), Critic::new(in_dim, hidden, lr, rng)))
            .collect();
        CriticEnsemble { critics }
    }

    pub fn names(&self) -> Vec<String> {
        self.critics.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<&Critic> {
        self.critics
            .get(name)
            .ok_or_else(|| SlimError::InvalidArgument(format!("no critic named '{name}'")))
    }

    pub fn predict(&self, name: &str, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.get(name)?.predict(x)
    }

    /// One regression step per critic, each on its own channel's targets.
    pub fn critic_update(
        &mut self,
        x: ArrayView2<f64>,
        targets: &BTreeMap<String, Vec<f64>>,
        max_grad_norm: f64,
    ) -> Result<BTreeMap<String, f64>> {
        let mut losses = BTreeMap::new();
        for (name, c) in self.critics.iter_mut() {
            let t = targets
                .get(name)
                .ok_or_else(|| SlimError::InvalidArgument(format!("missing targets for critic '{name}'")))?;
            losses.insert(name.clone(), c.update(x, t, max_grad_norm)?);
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn inputs(seed: u64, n: usize, d: usize) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rescaling_preserves_predictions() {
        let mut rng = rng_from_seed(1);
        let mut c = Critic::new(5, &[16], 1e-3, &mut rng);
        let x = inputs(2, 10, 5);
        c.observe_targets(&[100.0, 300.0, 250.0]);
        let before = c.predict(x.view()).unwrap();
        c.observe_targets(&[-40.0, 10.0]);
        let mid = c.predict(x.view()).unwrap();
        c.observe_targets(&[0.0; 4]);
        let after = c.predict(x.view()).unwrap();
        for i in 0..10 {
            assert!((before[i] - mid[i]).abs() < 1e-9);
            assert!((before[i] - after[i]).abs() < 1e-9);
        }
        assert!((c.mean - 0.9 * (0.9 * 650.0 / 3.0 - 1.5)).abs() < 1e-9);
    }

    #[test]
    fn zero_channel_drifts_to_zero() {
        let mut rng = rng_from_seed(3);
        let mut c = Critic::new(4, &[16, 16], 3e-3, &mut rng);
        let x = inputs(4, 64, 4);
        let t = vec![0.0; 64];
        c.observe_targets(&t);
        let start: f64 = c.predict(x.view()).unwrap().iter().map(|v| v.abs()).sum();
        for _ in 0..300 {
            c.update(x.view(), &t, 10.0).unwrap();
        }
        let end: f64 = c.predict(x.view()).unwrap().iter().map(|v| v.abs()).sum();
        assert!(end < 0.1 * start, "{start} -> {end}");
    }

    #[test]
    fn loss_decreases_per_channel() {
        let mut rng = rng_from_seed(5);
        let names = ["reach", "discovery", "safety"];
        let mut e = CriticEnsemble::new(&names, 6, &[32, 32], 1e-3, &mut rng);
        let x = inputs(6, 128, 6);
        let mut targets = BTreeMap::new();
        for (k, n) in names.iter().enumerate() {
            let t: Vec<f64> = x.outer_iter().map(|r| (k as f64 + 1.0) * r[k].sin() - r[5]).collect();
            e.critics.get_mut(*n).unwrap().observe_targets(&t);
            targets.insert(n.to_string(), t);
        }
        let first = e.critic_update(x.view(), &targets, 10.0).unwrap();
        let mut last = first.clone();
        for _ in 0..49 {
            last = e.critic_update(x.view(), &targets, 10.0).unwrap();
        }
        for n in names {
            assert!(last[n] < first[n], "{n}: {} -> {}", first[n], last[n]);
        }
    }

    #[test]
    fn channels_are_isolated() {
        let mut rng = rng_from_seed(7);
        let a = CriticEnsemble::new(&["reach", "safety"], 3, &[8], 1e-3, &mut rng);
        let x = inputs(8, 16, 3);
        let mut t = BTreeMap::new();
        t.insert("reach".to_string(), vec![1.0; 16]);
        t.insert("safety".to_string(), vec![-2.0; 16]);
        let mut one = a.clone();
        one.critic_update(x.view(), &t, 10.0).unwrap();
        // changing one channel's targets leaves the other critic's update alone
        let mut t2 = t.clone();
        t2.insert("reach".to_string(), vec![5.0; 16]);
        let mut two = a.clone();
        two.critic_update(x.view(), &t2, 10.0).unwrap();
        assert_eq!(one.critics["safety"], two.critics["safety"]);
        assert_ne!(one.critics["reach"], two.critics["reach"]);
    }
}
