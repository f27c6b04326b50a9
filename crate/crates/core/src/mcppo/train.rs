//! The full multi-critic training loop.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::{Critic, CriticEnsemble};
use super::estimators::{combine_advantages, gae, is_constant, normalize_advantages, CombinationWeights};
use super::ppo::{minibatches, ppo_update, PolicyBatch, PolicyLearner, PpoConfig, SurrogateStats};
use super::rollout::{collect_rollouts, gather, DiscoveryModel, RolloutBatch};
use super::variant::{AlgoTag, AlgoVariant, Channel, CriticMode, DiscoverySource};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::discovery::{diayn_disc_update, Discriminator, ReprNet};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Result, SlimError};
use crate::funcapprox::{GaussianPolicy, HeadKind, Network};
use crate::metrics::{batch_occupancy, CoverageGrid};
use crate::rng::{stream_rng, SlimRng, Stream};
use crate::skills::make_schedule;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.slim";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelWeights {
    pub reach: f64,
    pub discovery: f64,
    pub safety: f64,
}

impl Default for ChannelWeights {
    fn default() -> Self {
        ChannelWeights {
            reach: 1.0,
            discovery: 1.0,
            safety: 1.0,
        }
    }
}

impl ChannelWeights {
    pub fn get(&self, c: Channel) -> f64 {
        match c {
            Channel::Reach => self.reach,
            Channel::Discovery => self.discovery,
            Channel::Safety => self.safety,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: AlgoTag,
    pub seed: u64,
    pub n_iterations: usize,
    pub n_envs: usize,
    pub gamma: f64,
    pub lam: f64,
    /// Episodes end on a time limit; bootstrap returns and GAE with the
    /// critic's value of the final state instead of zero.
    pub bootstrap_truncated: bool,
    pub clip: f64,
    pub n_epochs: usize,
    pub n_minibatches: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_repr: f64,
    /// Representation (or discriminator) gradient steps per iteration.
    pub repr_steps: usize,
    pub repr_batch: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub repr_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub omega: ChannelWeights,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: AlgoTag::Slim,
            seed: 0,
            n_iterations: 156,
            n_envs: 64,
            gamma: 0.99,
            lam: 0.95,
            bootstrap_truncated: true,
            clip: 0.2,
            n_epochs: 4,
            n_minibatches: 4,
            lr_policy: 3e-4,
            lr_critic: 1e-3,
            lr_repr: 1e-3,
            repr_steps: 16,
            repr_batch: 1024,
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            repr_hidden: vec![64, 64],
            init_log_std: -0.5,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
            omega: ChannelWeights::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(SlimError::Config(format!("train.{m}")));
        if self.n_envs == 0 || self.n_epochs == 0 || self.n_minibatches == 0 {
            return err("n_envs, n_epochs and n_minibatches must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lam) {
            return err("gamma and lam must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return err("clip must be > 0");
        }
        for (n, v) in [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_repr", self.lr_repr),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(&format!("{n} must be > 0"));
            }
        }
        if self.repr_batch == 0 {
            return err("repr_batch must be >= 1");
        }
        if self.policy_hidden.is_empty() || self.critic_hidden.is_empty() || self.repr_hidden.is_empty() {
            return err("hidden layer lists must be non-empty");
        }
        CombinationWeights::new(vec![self.omega.reach, self.omega.discovery, self.omega.safety])
            .map_err(|e| SlimError::Config(format!("train.omega: {e}")))?;
        Ok(())
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip: self.clip,
            n_epochs: self.n_epochs,
            n_minibatches: self.n_minibatches,
            max_grad_norm: self.max_grad_norm,
            ent_coef: self.ent_coef,
        }
    }

    pub fn steps_per_iteration(&self, episode_len: usize) -> usize {
        self.n_envs * episode_len
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub return_reach: f64,
    pub return_discovery: f64,
    pub return_safety: f64,
    pub safety_rate: f64,
    pub coverage: usize,
    pub repr_loss: f64,
    pub critic_loss: BTreeMap<String, f64>,
    pub policy_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRecord {
    iteration: usize,
    wall_s: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: PolicyLearner,
    pub critics: CriticEnsemble,
    pub discovery: Option<DiscoveryModel>,
    pub records: Vec<IterationRecord>,
    pub checkpoint: Option<PathBuf>,
    pub env_steps: u64,
}

/// Fresh skill-conditioned policy: input `obs ++ z`, four squashed
/// continuous outputs and a gripper logit.
pub fn new_skill_policy<R: Rng + ?Sized>(
    skill_dim: usize,
    hidden: &[usize],
    init_log_std: f64,
    rng: &mut R,
) -> GaussianPolicy {
    let mut sizes = vec![OBS_DIM + skill_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(ACTION_DIM + 1);
    let net = Network::mlp(&sizes, 0.01, rng);
    GaussianPolicy::new(net, ACTION_DIM, HeadKind::Squashed, true, init_log_std).expect("consistent policy shape")
}

fn new_discovery(variant: &AlgoVariant, cfg: &ExperimentConfig, rng: &mut SlimRng) -> Option<DiscoveryModel> {
    if !variant.has(Channel::Discovery) {
        return None;
    }
    let t = &cfg.train;
    Some(match variant.discovery {
        DiscoverySource::Displacement => {
            DiscoveryModel::Displacement(ReprNet::new(OBS_DIM, &t.repr_hidden, cfg.skill.d, t.lr_repr, rng))
        }
        DiscoverySource::Discriminator => {
            DiscoveryModel::Discriminator(Discriminator::new(OBS_DIM, &t.repr_hidden, cfg.skill.d, t.lr_repr, rng))
        }
    })
}

/// Minibatch updates of the discovery model on the batch's transitions.
/// Returns the mean loss (negative mean objective) over the steps.
fn update_discovery(
    model: &mut DiscoveryModel,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    rng: &mut SlimRng,
) -> Result<f64> {
    if cfg.repr_steps == 0 {
        return Ok(0.0);
    }
    let z = batch.skill_matrix();
    let n = batch.len();
    let m = cfg.repr_batch.min(n);
    let mut total = 0.0;
    for _ in 0..cfg.repr_steps {
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let zb = gather(z.view(), &idx);
        let nb = gather(batch.next_obs.view(), &idx);
        total += match model {
            DiscoveryModel::Displacement(r) => {
                let ob = gather(batch.obs.view(), &idx);
                r.update(ob.view(), nb.view(), zb.view())?
            }
            DiscoveryModel::Discriminator(d) => -diayn_disc_update(d, nb.view(), zb.view(), cfg.lr_repr)?,
        };
    }
    Ok(total / cfg.repr_steps as f64)
}

/// Per-critic reward streams for a variant.
pub fn critic_rewards(variant: &AlgoVariant, batch: &RolloutBatch) -> BTreeMap<String, Vec<f64>> {
    let channel = |c: Channel| -> &[f64] {
        match c {
            Channel::Reach => &batch.reach,
            Channel::Discovery => &batch.discovery,
            Channel::Safety => &batch.safety,
        }
    };
    let mut out = BTreeMap::new();
    match variant.mode {
        CriticMode::PerChannel => {
            for c in &variant.channels {
                out.insert(c.name().to_string(), channel(*c).to_vec());
            }
        }
        CriticMode::RawSum | CriticMode::StandardizedSum => {
            let mut sum = vec![0.0; batch.len()];
            for c in &variant.channels {
                let r = if variant.mode == CriticMode::StandardizedSum {
                    normalize_advantages(channel(*c))
                } else {
                    channel(*c).to_vec()
                };
                sum.iter_mut().zip(&r).for_each(|(s, v)| *s += v);
            }
            out.insert("sum".to_string(), sum);
        }
    }
    out
}

/// Per-episode discounted returns, concatenated in row order.
/// `bootstrap[e]` stands in for the return after episode `e`'s last step.
pub fn batch_returns(rewards: &[f64], bootstrap: &[f64], horizon: usize, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for (e, (r, g)) in rewards.chunks(horizon).zip(out.chunks_mut(horizon)).enumerate() {
        let mut acc = bootstrap[e];
        for t in (0..r.len()).rev() {
            acc = r[t] + gamma * acc;
            g[t] = acc;
        }
    }
    out
}

/// Per-episode GAE, with `bootstrap[e]` as the value after episode `e`'s
/// last step.
pub fn batch_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: &[f64],
    horizon: usize,
    gamma: f64,
    lam: f64,
) -> Result<Vec<f64>> {
    SlimError::check_dim(rewards.len(), values.len())?;
    SlimError::check_dim(rewards.len().div_ceil(horizon), bootstrap.len())?;
    let mut out = Vec::with_capacity(rewards.len());
    for ((r, v), b) in rewards.chunks(horizon).zip(values.chunks(horizon)).zip(bootstrap) {
        let mut vv = v.to_vec();
        vv.push(*b);
        out.extend(gae(r, &vv, gamma, lam)?);
    }
    Ok(out)
}

/// Critic regression, advantage estimation, per-channel standardization and
/// combination for one batch. Returns the combined advantages and the mean
/// critic loss per critic.
pub fn advantages_for_batch(
    variant: &AlgoVariant,
    critics: &mut CriticEnsemble,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    rng: &mut SlimRng,
) -> Result<(Vec<f64>, BTreeMap<String, f64>)> {
    let rewards = critic_rewards(variant, batch);
    let h = batch.horizon;
    let finals = batch.final_inputs();
    let bootstrap = |critics: &CriticEnsemble, name: &str| -> Result<Vec<f64>> {
        if cfg.bootstrap_truncated {
            critics.predict(name, finals.view())
        } else {
            Ok(vec![0.0; finals.nrows()])
        }
    };
    let mut targets = BTreeMap::new();
    for (name, r) in &rewards {
        let g = batch_returns(r, &bootstrap(critics, name)?, h, cfg.gamma);
        critics
            .critics
            .get_mut(name)
            .ok_or_else(|| SlimError::InvalidArgument(format!("no critic named '{name}'")))?
            .observe_targets(&g);
        targets.insert(name.clone(), g);
    }
    let mut losses: BTreeMap<String, f64> = BTreeMap::new();
    let mut count = 0.0;
    for _ in 0..cfg.n_epochs {
        for mb in minibatches(batch.len(), cfg.n_minibatches, rng) {
            let x = gather(batch.inputs.view(), &mb);
            let t: BTreeMap<String, Vec<f64>> = targets
                .iter()
                .map(|(k, v)| (k.clone(), mb.iter().map(|&i| v[i]).collect()))
                .collect();
            for (k, l) in critics.critic_update(x.view(), &t, cfg.max_grad_norm)? {
                *losses.entry(k).or_default() += l;
            }
            count += 1.0;
        }
    }
    losses.values_mut().for_each(|l| *l /= count);

    let mut per_channel = Vec::new();
    let mut omega = Vec::new();
    for (name, r) in &rewards {
        if is_constant(r) {
            // no reward variation in the batch: the GAE would be critic error only
            per_channel.push(vec![0.0; r.len()]);
        } else {
            let v = critics.predict(name, batch.inputs.view())?;
            let a = batch_gae(r, &v, &bootstrap(critics, name)?, h, cfg.gamma, cfg.lam)?;
            per_channel.push(normalize_advantages(&a));
        }
        omega.push(match variant.mode {
            CriticMode::PerChannel => {
                let c = Channel::ALL
                    .into_iter()
                    .find(|c| c.name() == name)
                    .expect("channel critic");
                cfg.omega.get(c)
            }
            _ => 1.0,
        });
    }
    let refs: Vec<&[f64]> = per_channel.iter().map(|v| v.as_slice()).collect();
    let combined = combine_advantages(&refs, &CombinationWeights::new(omega)?)?;
    Ok((combined, losses))
}

struct RunFiles {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    dir: PathBuf,
}

fn open_append(p: &Path) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(p)
        .map_err(|e| SlimError::io(p, e))?;
    Ok(BufWriter::new(f))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, v: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string(v).map_err(|e| SlimError::Parse(e.to_string()))?;
    writeln!(w, "{s}")
        .and_then(|_| w.flush())
        .map_err(|e| SlimError::io(path, e))
}

/// Serialize a trained skill policy with its critics and discovery model.
pub fn skill_checkpoint(
    cfg: &ExperimentConfig,
    step: u64,
    policy: &GaussianPolicy,
    critics: &CriticEnsemble,
    discovery: Option<&DiscoveryModel>,
) -> Checkpoint {
    let mut ck = Checkpoint::new(cfg.to_json(), step);
    ck.put_policy("policy", policy);
    for (name, c) in &critics.critics {
        ck.put_network(&format!("critic.{name}"), &c.net);
        ck.insert(format!("critic.{name}.stats"), vec![2], [c.mean, c.std]);
    }
    match discovery {
        Some(DiscoveryModel::Displacement(r)) => ck.put_network("phi", &r.net),
        Some(DiscoveryModel::Discriminator(d)) => ck.put_network("disc", &d.net),
        None => {}
    }
    ck
}

/// A skill policy restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct SkillBundle {
    pub config: ExperimentConfig,
    pub policy: GaussianPolicy,
    pub critics: CriticEnsemble,
    pub discovery: Option<DiscoveryModel>,
    pub step: u64,
}

impl SkillBundle {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ExperimentConfig::from_json(&ck.config)?;
        let policy = ck.get_policy("policy")?;
        SlimError::check_dim(OBS_DIM + config.skill.d, policy.input_dim())?;
        let mut critics = BTreeMap::new();
        for name in ["reach", "discovery", "safety", "sum"] {
            let prefix = format!("critic.{name}");
            if ck.get(&format!("{prefix}.l0.weight")).is_some() {
                let net = ck.get_network(&prefix)?;
                let s = ck
                    .get(&format!("{prefix}.stats"))
                    .ok_or_else(|| SlimError::Checkpoint(format!("missing {prefix}.stats")))?;
                critics.insert(
                    name.to_string(),
                    Critic::from_parts(net, s.data[0] as f64, s.data[1] as f64, config.train.lr_critic),
                );
            }
        }
        let discovery = if ck.has_prefix("phi.") {
            Some(DiscoveryModel::Displacement(ReprNet::from_network(
                ck.get_network("phi")?,
                config.train.lr_repr,
            )))
        } else if ck.has_prefix("disc.") {
            Some(DiscoveryModel::Discriminator(Discriminator::from_network(
                ck.get_network("disc")?,
                config.train.lr_repr,
            )))
        } else {
            None
        };
        Ok(SkillBundle {
            config,
            policy,
            critics: CriticEnsemble { critics },
            discovery,
            step: ck.step,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Run the full training loop for `cfg.train.variant`. With `out_dir`, the
/// config echo, metrics log, timing log and checkpoints are written there.
/// `on_iteration` sees every record as it is produced.
pub fn train(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let t = &cfg.train;
    let variant = AlgoVariant::new(t.variant);
    let seed = t.seed;
    let mut init_rng = stream_rng(seed, Stream::NetworkInit);
    let mut skill_rng = stream_rng(seed, Stream::Skills);
    let mut env_rng = stream_rng(seed, Stream::EnvSeeds);
    let mut act_rng = stream_rng(seed, Stream::Actions);
    let mut mb_rng = stream_rng(seed, Stream::Minibatch);

    let policy = new_skill_policy(cfg.skill.d, &t.policy_hidden, t.init_log_std, &mut init_rng);
    let mut learner = PolicyLearner::new(policy, t.lr_policy);
    let mut critics = CriticEnsemble::new(
        &variant.critic_names(),
        OBS_DIM + cfg.skill.d,
        &t.critic_hidden,
        t.lr_critic,
        &mut init_rng,
    );
    let mut discovery = new_discovery(&variant, cfg, &mut init_rng);
    let mu = cfg.skill.mean_direction()?;
    let grid = CoverageGrid::default();
    let ppo = t.ppo();

    let mut files = match out_dir {
        Some(dir) => {
            cfg.write_echo(dir)?;
            Some(RunFiles {
                metrics: open_append(&dir.join(METRICS_FILE))?,
                timing: open_append(&dir.join(TIMING_FILE))?,
                dir: dir.to_path_buf(),
            })
        }
        None => None,
    };

    let start = Instant::now();
    let mut env_steps = 0u64;
    let mut records = Vec::with_capacity(t.n_iterations);
    let mut last_ckpt = None;
    for it in 0..t.n_iterations {
        let schedules = (0..t.n_envs)
            .map(|_| {
                make_schedule(
                    &mut skill_rng,
                    cfg.env.episode_len,
                    cfg.skill.n_segments,
                    cfg.skill.d,
                    cfg.skill.kappa,
                    &mu,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let seeds: Vec<u64> = (0..t.n_envs).map(|_| env_rng.random()).collect();
        let mut batch = collect_rollouts(
            &learner.policy,
            None,
            &cfg.env,
            &cfg.reward,
            schedules,
            &seeds,
            &mut act_rng,
            false,
        )?;
        env_steps += batch.len() as u64;

        let mut repr_loss = 0.0;
        if let Some(model) = discovery.as_mut() {
            repr_loss = update_discovery(model, &batch, t, &mut mb_rng)?;
            batch.relabel_discovery(model)?;
        }

        let (adv, critic_loss) = advantages_for_batch(&variant, &mut critics, &batch, t, &mut mb_rng)?;
        let pb = PolicyBatch {
            inputs: batch.inputs.view(),
            raw: batch.raw.view(),
            gripper: &batch.gripper,
            old_log_prob: &batch.log_prob,
            advantages: &adv,
        };
        let stats: SurrogateStats = ppo_update(&mut learner, &pb, &ppo, &mut mb_rng)?;
        if !learner.policy.net.is_finite() {
            return Err(SlimError::Numerical(format!("policy diverged at iteration {it}")));
        }

        let rec = IterationRecord {
            iteration: it,
            env_steps,
            return_reach: batch.mean_episode_return(&batch.reach),
            return_discovery: batch.mean_episode_return(&batch.discovery),
            return_safety: batch.mean_episode_return(&batch.safety),
            safety_rate: batch.safety_rate(),
            coverage: batch_occupancy(&batch, &grid).count(),
            repr_loss,
            critic_loss,
            policy_loss: stats.loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_frac: stats.clip_frac,
        };
        on_iteration(&rec);
        if let Some(f) = files.as_mut() {
            let mp = f.dir.join(METRICS_FILE);
            write_line(&mut f.metrics, &rec, &mp)?;
            let tp = f.dir.join(TIMING_FILE);
            write_line(
                &mut f.timing,
                &TimingRecord {
                    iteration: it,
                    wall_s: start.elapsed().as_secs_f64(),
                },
                &tp,
            )?;
            if t.checkpoint_every > 0 && (it + 1) % t.checkpoint_every == 0 {
                let p = f.dir.join(format!("ckpt_{:05}.slim", it + 1));
                skill_checkpoint(cfg, env_steps, &learner.policy, &critics, discovery.as_ref()).save(&p)?;
            }
        }
        records.push(rec);
    }
    if let Some(f) = files.as_ref() {
        let p = f.dir.join(FINAL_CHECKPOINT);
        skill_checkpoint(cfg, env_steps, &learner.policy, &critics, discovery.as_ref()).save(&p)?;
        last_ckpt = Some(p);
    }
    Ok(TrainOutcome {
        learner,
        critics,
        discovery,
        records,
        checkpoint: last_ckpt,
        env_steps,
    })
}
