//! Stochastic policy heads.
//!
//! A [`GaussianPolicy`] maps its input to a mean vector (and optionally a
//! gripper logit) through a [`Network`]; the log standard deviation is a
//! free, state-independent parameter. The squashed head passes Gaussian
//! draws through `tanh` and accounts for it in the log density.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::env::{Action, ACTION_DIM};
use crate::error::{Result, SlimError};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `tanh`-squashed Gaussian: bounded actions in `(-1, 1)`.
    Squashed,
    /// Plain Gaussian.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub gripper_logit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Pre-squash Gaussian draw.
    pub raw: Vec<f64>,
    /// `tanh(raw)` for squashed heads, `raw` otherwise.
    pub action: Vec<f64>,
    pub gripper: Option<bool>,
    pub log_prob: f64,
}

impl PolicySample {
    pub fn to_env_action(&self) -> Result<Action> {
        SlimError::check_dim(ACTION_DIM, self.action.len())?;
        let mut delta = [0.0; ACTION_DIM];
        delta.copy_from_slice(&self.action);
        Ok(Action {
            delta,
            gripper: self.gripper.unwrap_or(false),
        })
    }
}

/// Log-density of a sample and its partial derivatives with respect to the
/// distribution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbGrad {
    pub log_prob: f64,
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
    pub d_logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Network,
    pub log_std: Vec<f64>,
    pub head: HeadKind,
    pub gripper: bool,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl GaussianPolicy {
    pub fn new(net: Network, n_cont: usize, head: HeadKind, gripper: bool, init_log_std: f64) -> Result<Self> {
        SlimError::check_dim(n_cont + gripper as usize, net.output_dim())?;
        Ok(GaussianPolicy {
            net,
            log_std: vec![init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); n_cont],
            head,
            gripper,
        })
    }

    pub fn n_cont(&self) -> usize {
        self.log_std.len()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Split one row of network output into distribution parameters.
    pub fn output_from_row(&self, row: &[f64]) -> PolicyOutput {
        let n = self.n_cont();
        PolicyOutput {
            mean: row[..n].to_vec(),
            log_std: self.log_std.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
            gripper_logit: self.gripper.then(|| row[n]),
        }
    }

    pub fn output(&self, input: &[f64]) -> Result<PolicyOutput> {
        let row = self.net.forward(input)?;
        Ok(self.output_from_row(&row))
    }

    pub fn clamp_log_std(&mut self) {
        for l in &mut self.log_std {
            *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// Draw an action and its log-probability.
pub fn policy_sample<R: Rng + ?Sized>(out: &PolicyOutput, head: HeadKind, rng: &mut R) -> PolicySample {
    let raw: Vec<f64> = out
        .mean
        .iter()
        .zip(&out.log_std)
        .map(|(m, ls)| {
            let e: f64 = StandardNormal.sample(rng);
            m + ls.exp() * e
        })
        .collect();
    let gripper = out.gripper_logit.map(|l| rng.random::<f64>() < sigmoid(l));
    finish_sample(out, head, raw, gripper)
}

/// Mode of the distribution: mean action, gripper closed iff its logit is positive.
pub fn policy_mode(out: &PolicyOutput, head: HeadKind) -> PolicySample {
    let gripper = out.gripper_logit.map(|l| l > 0.0);
    finish_sample(out, head, out.mean.clone(), gripper)
}

fn finish_sample(out: &PolicyOutput, head: HeadKind, raw: Vec<f64>, gripper: Option<bool>) -> PolicySample {
    let action = match head {
        HeadKind::Squashed => raw.iter().map(|u| u.tanh()).collect(),
        HeadKind::Gaussian => raw.clone(),
    };
    let log_prob = log_prob_grad(out, head, &raw, gripper).log_prob;
    PolicySample {
        raw,
        action,
        gripper,
        log_prob,
    }
}

/// Log-density of `(raw, gripper)` and its gradient. For squashed heads the
/// density is that of `tanh(raw)`, which subtracts `ln(1 - tanh^2)` per
/// component; that term is parameter-free and leaves the gradient unchanged.
pub fn log_prob_grad(out: &PolicyOutput, head: HeadKind, raw: &[f64], gripper: Option<bool>) -> LogProbGrad {
    let n = out.mean.len();
    let mut lp = 0.0;
    let mut d_mean = vec![0.0; n];
    let mut d_log_std = vec![0.0; n];
    for i in 0..n {
        let std = out.log_std[i].exp();
        let zs = (raw[i] - out.mean[i]) / std;
        lp += -0.5 * zs * zs - out.log_std[i] - HALF_LN_2PI;
        if head == HeadKind::Squashed {
            lp -= log_one_minus_tanh_sq(raw[i]);
        }
        d_mean[i] = zs / std;
        d_log_std[i] = zs * zs - 1.0;
    }
    let mut d_logit = 0.0;
    if let (Some(l), Some(g)) = (out.gripper_logit, gripper) {
        let gv = if g { 1.0 } else { 0.0 };
        lp += gv * l - softplus(l);
        d_logit = gv - sigmoid(l);
    }
    LogProbGrad {
        log_prob: lp,
        d_mean,
        d_log_std,
        d_logit,
    }
}

/// Entropy of the pre-squash Gaussian plus the gripper Bernoulli, with
/// gradients `(d/d log_std, d/d logit)`.
pub fn entropy_grad(out: &PolicyOutput) -> (f64, Vec<f64>, f64) {
    let n = out.log_std.len();
    let mut h: f64 = out.log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum();
    let d_log_std = vec![1.0; n];
    let mut d_logit = 0.0;
    if let Some(l) = out.gripper_logit {
        let p = sigmoid(l);
        h += softplus(l) - l * p;
        d_logit = -l * p * (1.0 - p);
    }
    (h, d_log_std, d_logit)
}

/// Squashed-Gaussian density of `y = tanh(u)` in one dimension.
pub fn squashed_density_1d(y: f64, mean: f64, log_std: f64) -> f64 {
    let u = y.atanh();
    let std = log_std.exp();
    let zs = (u - mean) / std;
    (-0.5 * zs * zs).exp() / (std * (2.0 * PI).sqrt()) / (1.0 - y * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn out(mean: Vec<f64>, log_std: Vec<f64>, logit: Option<f64>) -> PolicyOutput {
        PolicyOutput {
            mean,
            log_std,
            gripper_logit: logit,
        }
    }

    #[test]
    fn near_deterministic_sample_is_mean() {
        let o = out(vec![0.0; 4], vec![-5.0; 4], Some(0.0));
        let s = policy_sample(&o, HeadKind::Squashed, &mut rng_from_seed(0));
        for a in &s.action {
            assert!(a.abs() < 0.05);
        }
        assert!(s.log_prob.is_finite());
    }

    #[test]
    fn log_prob_integrates_on_a_slice() {
        // 1-D squashed Gaussian: density from log_prob must integrate to 1
        // and match the Gaussian CDF between atanh bounds.
        let (mean, log_std) = (0.4, -0.3);
        let o = out(vec![mean], vec![log_std], None);
        let density = |y: f64| log_prob_grad(&o, HeadKind::Squashed, &[y.atanh()], None).log_prob.exp();
        for y in [-0.9, -0.2, 0.0, 0.5, 0.95] {
            let direct = squashed_density_1d(y, mean, log_std);
            assert!((density(y) - direct).abs() < 1e-10 * direct.max(1.0));
        }
        let n = 400_000;
        let (lo, hi) = (-1.0 + 1e-9, 1.0 - 1e-9);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n).map(|i| density(lo + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
        // probability mass of (0, 0.5) vs the Gaussian mass of (0, atanh 0.5)
        let m = 20_000;
        let hb = 0.5 / m as f64;
        let mass: f64 = (0..m).map(|i| density((i as f64 + 0.5) * hb) * hb).sum();
        let std = log_std.exp();
        let phi = |x: f64| 0.5 * (1.0 + erf((x - mean) / (std * 2f64.sqrt())));
        let want = phi(0.5f64.atanh()) - phi(0.0);
        assert!((mass - want).abs() < 1e-5, "{mass} vs {want}");
    }

    /// Abramowitz-Stegun 7.1.26 is too coarse here; use a series/continued form.
    fn erf(x: f64) -> f64 {
        // Taylor series, converges fast for |x| < 3
        let mut sum = x;
        let mut term = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn confident_gripper_closes() {
        let o = out(vec![0.0; 4], vec![0.0; 4], Some(20.0));
        let mut rng = rng_from_seed(1);
        let closed = (0..10_000)
            .filter(|_| policy_sample(&o, HeadKind::Squashed, &mut rng).gripper == Some(true))
            .count();
        assert!(closed as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        let o = out(vec![0.3, -0.2], vec![-0.5, 0.1], Some(0.7));
        let raw = [0.5, -1.1];
        let g = log_prob_grad(&o, HeadKind::Squashed, &raw, Some(true));
        let h = 1e-6;
        let lp = |o: &PolicyOutput| log_prob_grad(o, HeadKind::Squashed, &raw, Some(true)).log_prob;
        for i in 0..2 {
            let mut p = o.clone();
            p.mean[i] += h;
            let mut m = o.clone();
            m.mean[i] -= h;
            assert!(((lp(&p) - lp(&m)) / (2.0 * h) - g.d_mean[i]).abs() < 1e-6);
            let mut p = o.clone();
            p.log_std[i] += h;
            let mut m = o.clone();
            m.log_std[i] -= h;
            assert!(((lp(&p) - lp(&m)) / (2.0 * h) - g.d_log_std[i]).abs() < 1e-6);
        }
        let mut p = o.clone();
        p.gripper_logit = Some(0.7 + h);
        let mut m = o.clone();
        m.gripper_logit = Some(0.7 - h);
        assert!(((lp(&p) - lp(&m)) / (2.0 * h) - g.d_logit).abs() < 1e-6);
    }

    #[test]
    fn entropy_gradient_matches_finite_difference() {
        let o = out(vec![0.0], vec![0.2], Some(-1.3));
        let (_, _, d) = entropy_grad(&o);
        let h = 1e-6;
        let mut p = o.clone();
        p.gripper_logit = Some(-1.3 + h);
        let mut m = o.clone();
        m.gripper_logit = Some(-1.3 - h);
        let fd = (entropy_grad(&p).0 - entropy_grad(&m).0) / (2.0 * h);
        assert!((fd - d).abs() < 1e-6);
    }

    #[test]
    fn mode_is_tanh_of_mean() {
        let o = out(vec![0.5, -0.5, 0.0, 2.0], vec![0.0; 4], Some(-1.0));
        let s = policy_mode(&o, HeadKind::Squashed);
        assert_eq!(s.action[0], 0.5f64.tanh());
        assert_eq!(s.gripper, Some(false));
        let a = s.to_env_action().unwrap();
        assert!(!a.gripper);
    }
}
