//! Clipped-surrogate policy update.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, SlimError};
use crate::funcapprox::{
    clip_grad_norm, entropy_grad, log_prob_grad, Adam, GaussianPolicy, GradientSet, LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub n_epochs: usize,
    pub n_minibatches: usize,
    pub max_grad_norm: f64,
    pub ent_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            n_epochs: 4,
            n_minibatches: 4,
            max_grad_norm: 0.5,
            ent_coef: 0.0,
        }
    }
}

/// Samples the surrogate is evaluated on. `gripper` is empty for policies
/// without a gripper head.
#[derive(Debug, Clone, Copy)]
pub struct PolicyBatch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub raw: ArrayView2<'a, f64>,
    pub gripper: &'a [bool],
    pub old_log_prob: &'a [f64],
    pub advantages: &'a [f64],
}

impl PolicyBatch<'_> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub loss: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

/// Gradients of the surrogate loss: network part and free log-std part.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub net: GradientSet,
    pub log_std: Vec<f64>,
}

impl PolicyGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut g = self.net.flatten();
        g.extend_from_slice(&self.log_std);
        g
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }
}

/// Flat parameter view of a policy: network parameters then log-stds.
pub fn policy_params(p: &GaussianPolicy) -> Vec<f64> {
    let mut v = p.net.flat_params();
    v.extend_from_slice(&p.log_std);
    v
}

pub fn set_policy_params(p: &mut GaussianPolicy, v: &[f64]) -> Result<()> {
    let n = p.net.param_count();
    SlimError::check_dim(n + p.n_cont(), v.len())?;
    p.net.set_flat_params(&v[..n])?;
    p.log_std.copy_from_slice(&v[n..]);
    Ok(())
}

/// Loss `-mean(min(rho A, clip(rho) A)) - ent_coef * mean(H)` over the rows
/// in `idx`, with exact gradients. Errors if any ratio is non-finite.
pub fn ppo_loss_and_grads(
    policy: &GaussianPolicy,
    batch: &PolicyBatch<'_>,
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(SurrogateStats, PolicyGrads)> {
    let m = idx.len();
    if m == 0 {
        return Err(SlimError::InvalidArgument("empty minibatch".into()));
    }
    let x = batch.inputs.select(Axis(0), idx);
    let cache = policy.net.forward_cached(x.view())?;
    let out = cache.output();
    let n = policy.n_cont();
    let mut upstream = Array2::zeros(out.raw_dim());
    let mut d_log_std = vec![0.0; n];
    let mut stats = SurrogateStats::default();
    let inv = 1.0 / m as f64;
    for (row, &i) in idx.iter().enumerate() {
        let po = policy.output_from_row(out.row(row).as_slice().expect("contiguous"));
        let raw = batch.raw.row(i);
        let g = if policy.gripper { Some(batch.gripper[i]) } else { None };
        let lp = log_prob_grad(&po, policy.head, raw.as_slice().expect("contiguous"), g);
        let log_ratio = lp.log_prob - batch.old_log_prob[i];
        let rho = log_ratio.exp();
        if !rho.is_finite() {
            return Err(SlimError::Numerical(format!(
                "non-finite probability ratio at sample {i}"
            )));
        }
        let a = batch.advantages[i];
        let clipped = rho.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        stats.loss -= (rho * a).min(clipped * a) * inv;
        stats.approx_kl += ((rho - 1.0) - log_ratio) * inv;
        let clip_active = (a > 0.0 && rho >= 1.0 + cfg.clip) || (a < 0.0 && rho <= 1.0 - cfg.clip);
        if clip_active {
            stats.clip_frac += inv;
        } else {
            let coef = -a * rho * inv;
            for k in 0..n {
                upstream[[row, k]] += coef * lp.d_mean[k];
                d_log_std[k] += coef * lp.d_log_std[k];
            }
            if policy.gripper {
                upstream[[row, n]] += coef * lp.d_logit;
            }
        }
        let (h, _, dh_logit) = entropy_grad(&po);
        stats.entropy += h * inv;
        stats.loss -= cfg.ent_coef * h * inv;
        if policy.gripper {
            upstream[[row, n]] -= cfg.ent_coef * dh_logit * inv;
        }
    }
    for (k, d) in d_log_std.iter_mut().enumerate() {
        let l = policy.log_std[k];
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&l) {
            *d = 0.0;
        } else {
            *d -= cfg.ent_coef;
        }
    }
    let (net, _) = policy.net.backward_batch(&cache, upstream.view())?;
    Ok((
        stats,
        PolicyGrads {
            net,
            log_std: d_log_std,
        },
    ))
}

/// Policy paired with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLearner {
    pub policy: GaussianPolicy,
    opt: Adam,
}

impl PolicyLearner {
    pub fn new(policy: GaussianPolicy, lr: f64) -> Self {
        let opt = Adam::new(policy.net.param_count() + policy.n_cont(), lr);
        PolicyLearner { policy, opt }
    }

    pub fn apply(&mut self, grads: &PolicyGrads, max_grad_norm: f64) -> Result<f64> {
        if !grads.is_finite() {
            return Err(SlimError::Numerical("non-finite policy gradient".into()));
        }
        let mut g = grads.flatten();
        let norm = clip_grad_norm(&mut g, max_grad_norm);
        let mut p = policy_params(&self.policy);
        self.opt.step(&mut p, &g);
        set_policy_params(&mut self.policy, &p)?;
        self.policy.clamp_log_std();
        Ok(norm)
    }
}

/// Shuffled minibatch index sets for one epoch.
pub fn minibatches<R: Rng + ?Sized>(n: usize, n_minibatches: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = n_minibatches.clamp(1, n.max(1));
    (0..k).map(|j| idx[j * n / k..(j + 1) * n / k].to_vec()).collect()
}

/// Epochs of minibatch surrogate ascent. Returns the statistics averaged
/// over all minibatches. A non-finite ratio aborts the update.
pub fn ppo_update<R: Rng + ?Sized>(
    learner: &mut PolicyLearner,
    batch: &PolicyBatch<'_>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<SurrogateStats> {
    if batch.is_empty() {
        return Err(SlimError::InvalidArgument("empty policy batch".into()));
    }
    SlimError::check_dim(batch.len(), batch.advantages.len())?;
    SlimError::check_dim(batch.len(), batch.old_log_prob.len())?;
    let mut acc = SurrogateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.n_epochs {
        for mb in minibatches(batch.len(), cfg.n_minibatches, rng) {
            let (s, g) = ppo_loss_and_grads(&learner.policy, batch, &mb, cfg)?;
            learner.apply(&g, cfg.max_grad_norm)?;
            acc.loss += s.loss;
            acc.clip_frac += s.clip_frac;
            acc.approx_kl += s.approx_kl;
            acc.entropy += s.entropy;
            count += 1.0;
        }
    }
    acc.loss /= count;
    acc.clip_frac /= count;
    acc.approx_kl /= count;
    acc.entropy /= count;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::{policy_sample, HeadKind, Network};
    use crate::rng::rng_from_seed;

    fn toy_policy(seed: u64, head: HeadKind, gripper: bool) -> GaussianPolicy {
        let mut rng = rng_from_seed(seed);
        let net = Network::mlp(&[3, 8, 2 + gripper as usize], 0.5, &mut rng);
        GaussianPolicy::new(net, 2, head, gripper, -0.5).unwrap()
    }

    struct Owned {
        inputs: Array2<f64>,
        raw: Array2<f64>,
        gripper: Vec<bool>,
        logp: Vec<f64>,
        adv: Vec<f64>,
    }

    impl Owned {
        fn view(&self) -> PolicyBatch<'_> {
            PolicyBatch {
                inputs: self.inputs.view(),
                raw: self.raw.view(),
                gripper: &self.gripper,
                old_log_prob: &self.logp,
                advantages: &self.adv,
            }
        }
    }

    fn sample_batch(p: &GaussianPolicy, n: usize, seed: u64) -> Owned {
        let mut rng = rng_from_seed(seed);
        let inputs = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mut raw = Array2::zeros((n, 2));
        let mut gripper = vec![false; n];
        let mut logp = vec![0.0; n];
        let mut adv = vec![0.0; n];
        for i in 0..n {
            let out = p.output(inputs.row(i).as_slice().unwrap()).unwrap();
            let s = policy_sample(&out, p.head, &mut rng);
            raw.row_mut(i).assign(&ndarray::arr1(&s.raw));
            gripper[i] = s.gripper.unwrap_or(false);
            logp[i] = s.log_prob;
            adv[i] = rng.random_range(-1.0..1.0);
        }
        Owned {
            inputs,
            raw,
            gripper,
            logp,
            adv,
        }
    }

    fn loss_at(p: &GaussianPolicy, b: &PolicyBatch<'_>, cfg: &PpoConfig) -> f64 {
        let idx: Vec<usize> = (0..b.len()).collect();
        ppo_loss_and_grads(p, b, &idx, cfg).unwrap().0.loss
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        for (head, gripper) in [(HeadKind::Squashed, true), (HeadKind::Gaussian, false)] {
            let p = toy_policy(1, head, gripper);
            let data = sample_batch(&p, 12, 2);
            let mut moved = p.clone();
            // shift away from rho = 1 while staying inside the clip range
            let mut v = policy_params(&moved);
            v.iter_mut().for_each(|x| *x += 0.01);
            set_policy_params(&mut moved, &v).unwrap();
            let cfg = PpoConfig {
                clip: 10.0,
                ent_coef: 0.01,
                ..PpoConfig::default()
            };
            let b = data.view();
            let idx: Vec<usize> = (0..b.len()).collect();
            let (_, g) = ppo_loss_and_grads(&moved, &b, &idx, &cfg).unwrap();
            let flat = g.flatten();
            let base = policy_params(&moved);
            let h = 1e-6;
            for k in 0..base.len() {
                let mut pp = moved.clone();
                let mut vv = base.clone();
                vv[k] += h;
                set_policy_params(&mut pp, &vv).unwrap();
                let up = loss_at(&pp, &b, &cfg);
                vv[k] -= 2.0 * h;
                set_policy_params(&mut pp, &vv).unwrap();
                let dn = loss_at(&pp, &b, &cfg);
                let fd = (up - dn) / (2.0 * h);
                let err = (fd - flat[k]).abs() / fd.abs().max(flat[k].abs()).max(1e-6);
                assert!(err < 1e-4, "param {k}: fd {fd} analytic {}", flat[k]);
            }
        }
    }

    #[test]
    fn unit_ratio_gives_vanilla_gradient_direction() {
        let p = toy_policy(3, HeadKind::Squashed, true);
        let data = sample_batch(&p, 20, 4);
        let b = data.view();
        let idx: Vec<usize> = (0..b.len()).collect();
        let (s, g) = ppo_loss_and_grads(&p, &b, &idx, &PpoConfig::default()).unwrap();
        assert_eq!(s.clip_frac, 0.0);
        // vanilla: -mean(A * grad log pi)
        let mut expect = GradientSet::zeros_like(&p.net);
        for i in 0..b.len() {
            let x = b.inputs.row(i).to_vec();
            let out = p.output(&x).unwrap();
            let lp = log_prob_grad(&out, p.head, b.raw.row(i).as_slice().unwrap(), Some(b.gripper[i]));
            let mut up = lp.d_mean.clone();
            up.push(lp.d_logit);
            let coef = -b.advantages[i] / b.len() as f64;
            up.iter_mut().for_each(|u| *u *= coef);
            expect.add_assign(&p.net.backward(&x, &up).unwrap());
        }
        for (a, e) in g.net.flatten().iter().zip(expect.flatten()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_positive_sample_contributes_nothing() {
        let p = toy_policy(5, HeadKind::Gaussian, false);
        let mut data = sample_batch(&p, 1, 6);
        data.adv[0] = 1.0;
        // rho = 1.5 >= 1 + clip
        data.logp[0] -= 1.5f64.ln();
        let b = data.view();
        let (s, g) = ppo_loss_and_grads(&p, &b, &[0], &PpoConfig::default()).unwrap();
        assert_eq!(s.clip_frac, 1.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_ratio_aborts() {
        let p = toy_policy(7, HeadKind::Gaussian, false);
        let mut data = sample_batch(&p, 4, 8);
        data.logp[2] = f64::NEG_INFINITY;
        let mut learner = PolicyLearner::new(p.clone(), 1e-3);
        let err = ppo_update(&mut learner, &data.view(), &PpoConfig::default(), &mut rng_from_seed(0));
        assert!(matches!(err, Err(SlimError::Numerical(_))));
    }

    #[test]
    fn bandit_mean_moves_toward_optimum() {
        // one-step bandit, reward -(a - 0.6)^2 in the first action dimension
        let mut rng = rng_from_seed(9);
        let net = Network::mlp(&[1, 8, 2], 0.01, &mut rng);
        let p = GaussianPolicy::new(net, 2, HeadKind::Squashed, false, -1.0).unwrap();
        let mut learner = PolicyLearner::new(p, 3e-3);
        let cfg = PpoConfig::default();
        let x = [1.0];
        let start = learner.policy.output(&x).unwrap().mean[0].tanh();
        for _ in 0..200 {
            let n = 64;
            let inputs = Array2::from_elem((n, 1), 1.0);
            let mut raw = Array2::zeros((n, 2));
            let mut logp = vec![0.0; n];
            let mut rew = vec![0.0; n];
            let out = learner.policy.output(&x).unwrap();
            for i in 0..n {
                let s = policy_sample(&out, HeadKind::Squashed, &mut rng);
                raw.row_mut(i).assign(&ndarray::arr1(&s.raw));
                logp[i] = s.log_prob;
                rew[i] = -(s.action[0] - 0.6).powi(2);
            }
            let adv = crate::mcppo::normalize_advantages(&rew);
            let b = PolicyBatch {
                inputs: inputs.view(),
                raw: raw.view(),
                gripper: &[],
                old_log_prob: &logp,
                advantages: &adv,
            };
            ppo_update(&mut learner, &b, &cfg, &mut rng).unwrap();
        }
        let end = learner.policy.output(&x).unwrap().mean[0].tanh();
        assert!((end - 0.6).abs() < 0.1, "{start} -> {end}");
        assert!((end - 0.6).abs() < (start - 0.6).abs());
    }

    #[test]
    fn minibatches_partition() {
        let mb = minibatches(10, 4, &mut rng_from_seed(1));
        assert_eq!(mb.len(), 4);
        let mut all: Vec<usize> = mb.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
