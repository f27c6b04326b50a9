//! Lockstep rollout collection under skill schedules.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::discovery::{Discriminator, ReprNet};
use crate::env::{self, observe, EnvConfig, State, ACTION_DIM, OBS_DIM};
use crate::error::{Result, SlimError};
use crate::funcapprox::{policy_mode, policy_sample, GaussianPolicy};
use crate::rewards::{reach_reward, safety_reward, RewardConfig, RewardTriple};
use crate::skills::{SkillSchedule, SkillVector};

/// Source of the discovery channel.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscoveryModel {
    Displacement(ReprNet),
    Discriminator(Discriminator),
}

impl DiscoveryModel {
    /// Discovery reward per transition: representation displacement along
    /// the skill, or discriminator alignment at the next observation.
    pub fn rewards(
        &self,
        obs: ArrayView2<f64>,
        next_obs: ArrayView2<f64>,
        skills: &[&SkillVector],
    ) -> Result<Vec<f64>> {
        match self {
            DiscoveryModel::Displacement(r) => r.discovery_rewards(obs, next_obs, skills),
            DiscoveryModel::Discriminator(d) => {
                let z = crate::discovery::stack_rows(&skills.iter().map(|s| s.as_slice()).collect::<Vec<_>>());
                d.rewards_batch(next_obs, z.view())
            }
        }
    }
}

/// One step of experience, materialized from a [`RolloutBatch`] row.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub z: SkillVector,
    pub raw_action: Vec<f64>,
    pub gripper: bool,
    pub log_prob: f64,
    pub rewards: RewardTriple,
    pub safe: bool,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Episode-major experience: row `e * horizon + t` is step `t` of episode
/// `e`. Every episode has exactly `horizon` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub schedules: Vec<SkillSchedule>,
    pub env_seeds: Vec<u64>,
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    /// Policy and critic input rows, `obs ++ z`.
    pub inputs: Array2<f64>,
    pub raw: Array2<f64>,
    pub gripper: Vec<bool>,
    pub log_prob: Vec<f64>,
    pub reach: Vec<f64>,
    pub discovery: Vec<f64>,
    pub safety: Vec<f64>,
    pub safe: Vec<bool>,
    pub done: Vec<bool>,
}

impl RolloutBatch {
    pub fn n_episodes(&self) -> usize {
        self.schedules.len()
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, episode: usize, t: usize) -> usize {
        episode * self.horizon + t
    }

    pub fn skill(&self, i: usize) -> &SkillVector {
        self.schedules[i / self.horizon].skill_at(i % self.horizon)
    }

    pub fn skills(&self) -> Vec<&SkillVector> {
        (0..self.len()).map(|i| self.skill(i)).collect()
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            obs: self.obs.row(i).to_vec(),
            z: self.skill(i).clone(),
            raw_action: self.raw.row(i).to_vec(),
            gripper: self.gripper[i],
            log_prob: self.log_prob[i],
            rewards: RewardTriple {
                reach: self.reach[i],
                discovery: self.discovery[i],
                safety: self.safety[i],
            },
            safe: self.safe[i],
            next_obs: self.next_obs.row(i).to_vec(),
            done: self.done[i],
        }
    }

    /// Recompute the discovery channel with `model`.
    pub fn relabel_discovery(&mut self, model: &DiscoveryModel) -> Result<()> {
        let skills: Vec<&SkillVector> = (0..self.len())
            .map(|i| self.schedules[i / self.horizon].skill_at(i % self.horizon))
            .collect();
        self.discovery = model.rewards(self.obs.view(), self.next_obs.view(), &skills)?;
        Ok(())
    }

    /// Skill rows aligned with the transitions.
    pub fn skill_matrix(&self) -> Array2<f64> {
        let d = self.inputs.ncols() - OBS_DIM;
        self.inputs.slice(ndarray::s![.., OBS_DIM..OBS_DIM + d]).to_owned()
    }

    /// Critic inputs at the state reached by each episode's last step.
    pub fn final_inputs(&self) -> Array2<f64> {
        let n = self.n_episodes();
        let mut out = Array2::zeros((n, self.inputs.ncols()));
        for e in 0..n {
            let i = self.row(e, self.horizon - 1);
            let row = input_row(self.next_obs.row(i).as_slice().expect("row-major"), self.skill(i));
            out.row_mut(e).assign(&ndarray::aview1(&row));
        }
        out
    }

    /// Slice of a per-row channel for one episode.
    pub fn episode<'a>(&self, v: &'a [f64], e: usize) -> &'a [f64] {
        &v[e * self.horizon..(e + 1) * self.horizon]
    }

    pub fn safety_rate(&self) -> f64 {
        if self.safe.is_empty() {
            return 1.0;
        }
        self.safe.iter().filter(|s| **s).count() as f64 / self.safe.len() as f64
    }

    /// Mean per-episode sum of a channel.
    pub fn mean_episode_return(&self, v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / self.n_episodes().max(1) as f64
    }
}

/// Concatenate an observation and a skill into one input row.
pub fn input_row(obs: &[f64], z: &SkillVector) -> Vec<f64> {
    let mut r = Vec::with_capacity(obs.len() + z.dim());
    r.extend_from_slice(obs);
    r.extend_from_slice(z.as_slice());
    r
}

/// Roll out one episode per schedule, all environments advancing in
/// lockstep so the policy runs one batched forward pass per step. Action
/// noise is drawn from `rng` in episode order; `deterministic` uses the
/// distribution mode instead. The discovery channel is filled from
/// `discovery` when given and left at zero otherwise.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn collect_rollouts<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    discovery: Option<&DiscoveryModel>,
    env_cfg: &EnvConfig,
    reward_cfg: &RewardConfig,
    schedules: Vec<SkillSchedule>,
    env_seeds: &[u64],
    rng: &mut R,
    deterministic: bool,
) -> Result<RolloutBatch> {
    let n = schedules.len();
    if n == 0 {
        return Err(SlimError::InvalidArgument("empty environment pool".into()));
    }
    SlimError::check_dim(n, env_seeds.len())?;
    let horizon = env_cfg.episode_len;
    let d = schedules[0].segments[0].skill.dim();
    for s in &schedules {
        SlimError::check_dim(horizon, s.horizon())?;
    }
    SlimError::check_dim(OBS_DIM + d, policy.input_dim())?;
    SlimError::check_dim(ACTION_DIM, policy.n_cont())?;

    let rows = n * horizon;
    let mut batch = RolloutBatch {
        horizon,
        schedules,
        env_seeds: env_seeds.to_vec(),
        obs: Array2::zeros((rows, OBS_DIM)),
        next_obs: Array2::zeros((rows, OBS_DIM)),
        inputs: Array2::zeros((rows, OBS_DIM + d)),
        raw: Array2::zeros((rows, ACTION_DIM)),
        gripper: vec![false; rows],
        log_prob: vec![0.0; rows],
        reach: vec![0.0; rows],
        discovery: vec![0.0; rows],
        safety: vec![0.0; rows],
        safe: vec![true; rows],
        done: vec![false; rows],
    };
    let mut states: Vec<State> = env_seeds.iter().map(|s| env::reset(*s, env_cfg)).collect();
    let mut step_inputs = Array2::zeros((n, OBS_DIM + d));
    for t in 0..horizon {
        for (e, s) in states.iter().enumerate() {
            let o = observe(s);
            let z = batch.schedules[e].skill_at(t);
            let mut r = step_inputs.row_mut(e);
            r.slice_mut(ndarray::s![..OBS_DIM]).assign(&ndarray::aview1(&o));
            r.slice_mut(ndarray::s![OBS_DIM..])
                .assign(&ndarray::aview1(z.as_slice()));
        }
        let out = policy.net.forward_batch(step_inputs.view())?;
        for e in 0..n {
            let i = e * horizon + t;
            let po = policy.output_from_row(out.row(e).as_slice().expect("contiguous"));
            let sample = if deterministic {
                policy_mode(&po, policy.head)
            } else {
                policy_sample(&po, policy.head, rng)
            };
            let next = env::step(&states[e], &sample.to_env_action()?, env_cfg)?;
            let safe = env::is_safe(&next, env_cfg);
            batch
                .obs
                .row_mut(i)
                .assign(&step_inputs.row(e).slice(ndarray::s![..OBS_DIM]));
            batch.inputs.row_mut(i).assign(&step_inputs.row(e));
            batch.next_obs.row_mut(i).assign(&ndarray::aview1(&observe(&next)));
            batch.raw.row_mut(i).assign(&ndarray::aview1(&sample.raw));
            batch.gripper[i] = sample.gripper.unwrap_or(false);
            batch.log_prob[i] = sample.log_prob;
            batch.reach[i] = reach_reward(&next.ee_pos, &next.obj_pos, reward_cfg.epsilon);
            batch.safety[i] = safety_reward(safe);
            batch.safe[i] = safe;
            batch.done[i] = t + 1 == horizon;
            states[e] = next;
        }
    }
    if let Some(m) = discovery {
        batch.relabel_discovery(m)?;
    }
    Ok(batch)
}

/// Rows of `m` selected by `idx`.
pub fn gather(m: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::{HeadKind, Network, LOG_STD_MIN};
    use crate::rng::rng_from_seed;
    use crate::skills::{make_schedule, SkillVector};

    fn small_policy(seed: u64, d: usize) -> GaussianPolicy {
        let mut rng = rng_from_seed(seed);
        let net = Network::mlp(&[OBS_DIM + d, 16, ACTION_DIM + 1], 1.0, &mut rng);
        GaussianPolicy::new(net, ACTION_DIM, HeadKind::Squashed, true, -0.5).unwrap()
    }

    fn schedules(seed: u64, n: usize, horizon: usize) -> Vec<SkillSchedule> {
        let mut rng = rng_from_seed(seed);
        let mu = SkillVector::basis(4, 0);
        (0..n)
            .map(|_| make_schedule(&mut rng, horizon, 2, 4, 0.0, &mu).unwrap())
            .collect()
    }

    #[test]
    fn one_episode_has_horizon_transitions() {
        let cfg = EnvConfig::default();
        let p = small_policy(1, 4);
        let b = collect_rollouts(
            &p,
            None,
            &cfg,
            &RewardConfig::default(),
            schedules(2, 1, 200),
            &[7],
            &mut rng_from_seed(3),
            false,
        )
        .unwrap();
        assert_eq!(b.len(), 200);
        assert!(b.done[199] && !b.done[198]);
        for i in 0..200 {
            let tr = b.transition(i);
            assert!((tr.z.as_slice().iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(tr.rewards.safety, -(1.0 - if tr.safe { 1.0 } else { 0.0 }));
        }
        // consecutive rows chain
        assert_eq!(b.next_obs.row(10), b.obs.row(11));
    }

    #[test]
    fn zero_policy_hover_is_safe() {
        let cfg = EnvConfig::default();
        let mut p = small_policy(1, 4);
        for l in &mut p.net.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        p.log_std = vec![LOG_STD_MIN; ACTION_DIM];
        let b = collect_rollouts(
            &p,
            None,
            &cfg,
            &RewardConfig::default(),
            schedules(4, 3, 200),
            &[1, 2, 3],
            &mut rng_from_seed(5),
            false,
        )
        .unwrap();
        assert!(b.safety.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn replay_is_identical() {
        let cfg = EnvConfig::default();
        let p = small_policy(6, 4);
        let mut rng = rng_from_seed(8);
        let repr = DiscoveryModel::Displacement(ReprNet::new(OBS_DIM, &[8], 4, 1e-3, &mut rng));
        let run = || {
            collect_rollouts(
                &p,
                Some(&repr),
                &cfg,
                &RewardConfig::default(),
                schedules(9, 4, 200),
                &[1, 2, 3, 4],
                &mut rng_from_seed(10),
                false,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn discovery_channel_telescopes_per_segment() {
        let cfg = EnvConfig::default();
        let p = small_policy(11, 4);
        let mut rng = rng_from_seed(12);
        let r = ReprNet::new(OBS_DIM, &[16, 16], 4, 1e-3, &mut rng);
        let model = DiscoveryModel::Displacement(r.clone());
        let b = collect_rollouts(
            &p,
            Some(&model),
            &cfg,
            &RewardConfig::default(),
            schedules(13, 2, 200),
            &[5, 6],
            &mut rng_from_seed(14),
            false,
        )
        .unwrap();
        for e in 0..2 {
            for seg in &b.schedules[e].segments {
                let sum: f64 = (seg.start..seg.end).map(|t| b.discovery[b.row(e, t)]).sum();
                let a = r.phi(b.obs.row(b.row(e, seg.start)).as_slice().unwrap()).unwrap();
                let c = r
                    .phi(b.next_obs.row(b.row(e, seg.end - 1)).as_slice().unwrap())
                    .unwrap();
                let expect: f64 = (0..4).map(|k| (c[k] - a[k]) * seg.skill.as_slice()[k]).sum();
                assert!((sum - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_pool_rejected() {
        let p = small_policy(1, 4);
        let r = collect_rollouts(
            &p,
            None,
            &EnvConfig::default(),
            &RewardConfig::default(),
            vec![],
            &[],
            &mut rng_from_seed(0),
            false,
        );
        assert!(r.is_err());
    }
}
