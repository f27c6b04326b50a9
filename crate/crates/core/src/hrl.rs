//! Hierarchical control over a frozen skill policy.
//!
//! A high-level Gaussian policy picks a skill vector every `k` steps (the
//! draw is projected onto the unit sphere) and the frozen low-level policy
//! executes it with its mode actions. The same PPO machinery trains either
//! this controller or, in scratch mode, a flat policy on primitive actions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{file_digest, Checkpoint};
use crate::config::ExperimentConfig;
use crate::env::{self, dist3, observe, wrap_angle, EnvConfig, State, Vec3, ACTION_DIM, OBS_DIM};
use crate::error::{Result, SlimError};
use crate::funcapprox::{policy_mode, policy_sample, GaussianPolicy, HeadKind, Network};
use crate::mcppo::{
    batch_gae, batch_returns, input_row, minibatches, normalize_advantages, ppo_update, CriticEnsemble, PolicyBatch,
    PolicyLearner, PpoConfig, SkillBundle,
};
use crate::rng::{stream_rng, Stream};
use crate::skills::SkillVector;

/// Width of the goal encoding appended to observations.
pub const GOAL_DIM: usize = 4;
pub const SUCCESS_BONUS: f64 = 10.0;
pub const CURVE_FILE: &str = "curve.jsonl";
pub const HRL_CHECKPOINT: &str = "hrl.slim";
/// Link keys recorded in high-level checkpoints.
pub const LINK_DIGEST: &str = "low_level_sha256";
pub const LINK_PATH: &str = "low_level_path";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pos,
    Yaw,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Pos => "pos",
            TaskKind::Yaw => "yaw",
        })
    }
}

impl FromStr for TaskKind {
    type Err = SlimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(TaskKind::Pos),
            "yaw" => Ok(TaskKind::Yaw),
            _ => Err(SlimError::Config(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrlMode {
    /// High-level skill selection over the frozen skill policy.
    Hierarchical,
    /// Flat policy on primitive actions, ignoring any skill checkpoint.
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrlConfig {
    pub task: TaskKind,
    pub mode: HrlMode,
    pub seed: u64,
    pub decision_interval: usize,
    pub pos_threshold: f64,
    pub yaw_threshold: f64,
    pub n_iterations: usize,
    pub n_envs: usize,
    pub gamma: f64,
    pub lam: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub n_epochs: usize,
    pub n_minibatches: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Per-step discount of the scratch baseline.
    pub scratch_gamma: f64,
}

impl Default for HrlConfig {
    fn default() -> Self {
        HrlConfig {
            task: TaskKind::Pos,
            mode: HrlMode::Hierarchical,
            seed: 0,
            decision_interval: 25,
            pos_threshold: 0.05,
            yaw_threshold: 0.2,
            n_iterations: 80,
            n_envs: 64,
            gamma: 0.9,
            lam: 0.95,
            lr_policy: 3e-4,
            lr_critic: 1e-3,
            n_epochs: 4,
            n_minibatches: 4,
            hidden: vec![64, 64],
            init_log_std: 0.0,
            scratch_gamma: 0.99,
        }
    }
}

impl HrlConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(SlimError::Config(format!("hrl.{m}")));
        if self.decision_interval == 0 {
            return err("decision_interval must be >= 1");
        }
        if !(self.pos_threshold > 0.0) || !(self.yaw_threshold > 0.0) {
            return err("thresholds must be > 0");
        }
        if self.n_envs == 0 || self.n_epochs == 0 || self.n_minibatches == 0 {
            return err("n_envs, n_epochs and n_minibatches must be >= 1");
        }
        if !(self.lr_policy > 0.0) || !(self.lr_critic > 0.0) {
            return err("learning rates must be > 0");
        }
        if self.hidden.is_empty() {
            return err("hidden must be non-empty");
        }
        Ok(())
    }

    pub fn threshold(&self, task: TaskKind) -> f64 {
        match task {
            TaskKind::Pos => self.pos_threshold,
            TaskKind::Yaw => self.yaw_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub kind: TaskKind,
    pub target_pos: Vec3,
    pub target_yaw: f64,
    pub success_threshold: f64,
}

impl Goal {
    pub fn position(target: Vec3, threshold: f64) -> Self {
        Goal {
            kind: TaskKind::Pos,
            target_pos: target,
            target_yaw: 0.0,
            success_threshold: threshold,
        }
    }

    pub fn yaw(target: f64, threshold: f64) -> Self {
        Goal {
            kind: TaskKind::Yaw,
            target_pos: [0.0; 3],
            target_yaw: wrap_angle(target),
            success_threshold: threshold,
        }
    }

    /// Distance (m) or absolute wrapped angle error (rad) to the goal.
    pub fn error(&self, s: &State) -> f64 {
        match self.kind {
            TaskKind::Pos => dist3(&s.obj_pos, &self.target_pos),
            TaskKind::Yaw => wrap_angle(s.obj_yaw - self.target_yaw).abs(),
        }
    }

    pub fn reached(&self, s: &State) -> bool {
        self.error(s) < self.success_threshold
    }

    /// Goal relative to the current object pose.
    pub fn encode(&self, s: &State) -> [f64; GOAL_DIM] {
        match self.kind {
            TaskKind::Pos => [
                self.target_pos[0] - s.obj_pos[0],
                self.target_pos[1] - s.obj_pos[1],
                self.target_pos[2] - s.obj_pos[2],
                0.0,
            ],
            TaskKind::Yaw => {
                let e = wrap_angle(self.target_yaw - s.obj_yaw);
                [e.sin(), e.cos(), 0.0, 1.0]
            }
        }
    }
}

/// Dense task reward: negative error plus a bonus inside the threshold.
pub fn task_reward(s: &State, goal: &Goal) -> f64 {
    let e = goal.error(s);
    -e + if e < goal.success_threshold { SUCCESS_BONUS } else { 0.0 }
}

/// Goal for a fresh episode: positions uniform in the initialization square
/// at rest height, yaws uniform on the circle; redrawn while already
/// satisfied at the start state.
pub fn sample_goal<R: Rng + ?Sized>(
    rng: &mut R,
    task: TaskKind,
    start: &State,
    env_cfg: &EnvConfig,
    threshold: f64,
) -> Goal {
    loop {
        let g = match task {
            TaskKind::Pos => {
                let h = env_cfg.init_area_half;
                Goal::position(
                    [
                        rng.random_range(-h..=h),
                        rng.random_range(-h..=h),
                        env_cfg.rest_height(),
                    ],
                    threshold,
                )
            }
            TaskKind::Yaw => Goal::yaw(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI), threshold),
        };
        if !g.reached(start) {
            return g;
        }
    }
}

pub fn policy_input(s: &State, goal: &Goal) -> Vec<f64> {
    let mut v = observe(s).to_vec();
    v.extend_from_slice(&goal.encode(s));
    v
}

/// Skill-selecting controller.
#[derive(Debug, Clone, PartialEq)]
pub struct HighLevelPolicy {
    pub policy: GaussianPolicy,
    pub k: usize,
}

impl HighLevelPolicy {
    pub fn new<R: Rng + ?Sized>(skill_dim: usize, hidden: &[usize], k: usize, init_log_std: f64, rng: &mut R) -> Self {
        let mut sizes = vec![OBS_DIM + GOAL_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(skill_dim);
        let net = Network::mlp(&sizes, 0.01, rng);
        let policy =
            GaussianPolicy::new(net, skill_dim, HeadKind::Gaussian, false, init_log_std).expect("consistent shape");
        HighLevelPolicy { policy, k }
    }

    pub fn skill_dim(&self) -> usize {
        self.policy.n_cont()
    }
}

/// Project a raw draw onto the unit sphere.
pub fn project_skill(raw: &[f64]) -> SkillVector {
    SkillVector::new(raw.to_vec()).unwrap_or_else(|_| SkillVector::basis(raw.len(), 0))
}

/// One controller decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub input: Vec<f64>,
    pub raw: Vec<f64>,
    pub gripper: bool,
    pub log_prob: f64,
    pub reward: f64,
}

/// Trace of one goal-directed run.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalRun {
    pub goal: Goal,
    /// Goal error at the start state and after every step.
    pub errors: Vec<f64>,
    /// Object center at the start state and after every step.
    pub obj: Vec<Vec3>,
    /// Safety flag after every step.
    pub safe: Vec<bool>,
    /// Emitted skills, one per decision.
    pub skills: Vec<SkillVector>,
    pub decisions: Vec<Decision>,
    pub success: bool,
    /// First trace index (0 = start state) within the threshold.
    pub success_index: Option<usize>,
    pub end: State,
}

impl GoalRun {
    pub fn steps(&self) -> usize {
        self.safe.len()
    }
}

/// Controller driving the environment toward a goal.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Hierarchical {
        high: &'a HighLevelPolicy,
        low: &'a GaussianPolicy,
    },
    Flat(&'a GaussianPolicy),
}

/// Drive from `start` toward `goal` for at most `budget` steps. With
/// `stop_on_success` the run ends at the first state within the threshold
/// (including the start state). Hierarchical control redraws the skill
/// every `k` steps; the low level always acts with its mode.
#[allow(clippy::too_many_arguments)]
pub fn run_goal<R: Rng + ?Sized>(
    ctrl: Controller<'_>,
    start: State,
    goal: &Goal,
    env_cfg: &EnvConfig,
    budget: usize,
    stop_on_success: bool,
    deterministic: bool,
    rng: &mut R,
) -> Result<GoalRun> {
    let mut run = GoalRun {
        goal: *goal,
        errors: vec![goal.error(&start)],
        obj: vec![start.obj_pos],
        safe: Vec::with_capacity(budget),
        skills: Vec::new(),
        decisions: Vec::new(),
        success: false,
        success_index: None,
        end: start.clone(),
    };
    if goal.reached(&start) {
        run.success = true;
        run.success_index = Some(0);
        if stop_on_success {
            return Ok(run);
        }
    }
    let mut s = start;
    let mut z: Option<SkillVector> = None;
    for t in 0..budget {
        let action = match ctrl {
            Controller::Hierarchical { high, low } => {
                if t % high.k == 0 {
                    let input = policy_input(&s, goal);
                    let out = high.policy.output(&input)?;
                    let smp = if deterministic {
                        policy_mode(&out, HeadKind::Gaussian)
                    } else {
                        policy_sample(&out, HeadKind::Gaussian, rng)
                    };
                    let skill = project_skill(&smp.action);
                    run.skills.push(skill.clone());
                    run.decisions.push(Decision {
                        input,
                        raw: smp.raw,
                        gripper: false,
                        log_prob: smp.log_prob,
                        reward: 0.0,
                    });
                    z = Some(skill);
                }
                let zi = z.as_ref().expect("skill chosen at t = 0");
                let out = low.output(&input_row(&observe(&s), zi))?;
                policy_mode(&out, low.head).to_env_action()?
            }
            Controller::Flat(p) => {
                let input = policy_input(&s, goal);
                let out = p.output(&input)?;
                let smp = if deterministic {
                    policy_mode(&out, p.head)
                } else {
                    policy_sample(&out, p.head, rng)
                };
                let a = smp.to_env_action()?;
                run.decisions.push(Decision {
                    input,
                    raw: smp.raw,
                    gripper: smp.gripper.unwrap_or(false),
                    log_prob: smp.log_prob,
                    reward: 0.0,
                });
                a
            }
        };
        let next = env::step(&s, &action, env_cfg)?;
        let r = task_reward(&next, goal);
        if let Some(d) = run.decisions.last_mut() {
            d.reward += r;
        }
        run.errors.push(goal.error(&next));
        run.obj.push(next.obj_pos);
        run.safe.push(env::is_safe(&next, env_cfg));
        s = next;
        if goal.reached(&s) && run.success_index.is_none() {
            run.success = true;
            run.success_index = Some(t + 1);
        }
        if stop_on_success && run.success {
            break;
        }
    }
    run.end = s;
    Ok(run)
}

/// Episode from `env::reset(seed)` with a fresh goal.
pub fn hrl_rollout<R: Rng + ?Sized>(
    ctrl: Controller<'_>,
    env_cfg: &EnvConfig,
    goal: &Goal,
    seed: u64,
    deterministic: bool,
    rng: &mut R,
) -> Result<GoalRun> {
    let start = env::reset(seed, env_cfg);
    run_goal(
        ctrl,
        start,
        goal,
        env_cfg,
        env_cfg.episode_len,
        false,
        deterministic,
        rng,
    )
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_final_error: f64,
}

#[derive(Debug, Clone)]
pub struct HrlOutcome {
    pub mode: HrlMode,
    pub task: TaskKind,
    pub learner: PolicyLearner,
    pub k: usize,
    pub curve: Vec<CurveRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl HrlOutcome {
    pub fn high_level(&self) -> Option<HighLevelPolicy> {
        (self.mode == HrlMode::Hierarchical).then(|| HighLevelPolicy {
            policy: self.learner.policy.clone(),
            k: self.k,
        })
    }
}

fn new_flat_policy<R: Rng + ?Sized>(hidden: &[usize], init_log_std: f64, rng: &mut R) -> GaussianPolicy {
    let mut sizes = vec![OBS_DIM + GOAL_DIM];
    sizes.extend_from_slice(hidden);
    sizes.push(ACTION_DIM + 1);
    let net = Network::mlp(&sizes, 0.01, rng);
    GaussianPolicy::new(net, ACTION_DIM, HeadKind::Squashed, true, init_log_std).expect("consistent shape")
}

/// Train a goal-reaching controller. Hierarchical mode needs the frozen
/// skill policy in `low`; scratch mode ignores it. Every iteration runs
/// `n_envs` full episodes so both modes consume the same env-step budget.
pub fn hrl_train(
    cfg: &ExperimentConfig,
    low: Option<&SkillBundle>,
    low_path: Option<&Path>,
    out_dir: Option<&Path>,
    mut on_iteration: impl FnMut(&CurveRecord),
) -> Result<HrlOutcome> {
    cfg.validate()?;
    let h = &cfg.hrl;
    let task = h.task;
    let threshold = h.threshold(task);
    let mut init_rng = stream_rng(h.seed, Stream::NetworkInit);
    let mut goal_rng = stream_rng(h.seed, Stream::Goals);
    let mut env_rng = stream_rng(h.seed, Stream::EnvSeeds);
    let mut act_rng = stream_rng(h.seed, Stream::Actions);
    let mut mb_rng = stream_rng(h.seed, Stream::Minibatch);

    let low_policy = match h.mode {
        HrlMode::Hierarchical => {
            let b =
                low.ok_or_else(|| SlimError::InvalidArgument("hierarchical mode needs a skill checkpoint".into()))?;
            SlimError::check_dim(cfg.skill.d, b.config.skill.d)?;
            SlimError::check_dim(OBS_DIM + cfg.skill.d, b.policy.input_dim())?;
            Some(&b.policy)
        }
        HrlMode::Scratch => None,
    };
    let (policy, k, gamma) = match h.mode {
        HrlMode::Hierarchical => {
            let hp = HighLevelPolicy::new(
                cfg.skill.d,
                &h.hidden,
                h.decision_interval,
                h.init_log_std,
                &mut init_rng,
            );
            (hp.policy, h.decision_interval, h.gamma)
        }
        HrlMode::Scratch => (
            new_flat_policy(&h.hidden, cfg.train.init_log_std, &mut init_rng),
            1,
            h.scratch_gamma,
        ),
    };
    let mut learner = PolicyLearner::new(policy, h.lr_policy);
    let mut critics = CriticEnsemble::new(&["task"], OBS_DIM + GOAL_DIM, &h.hidden, h.lr_critic, &mut init_rng);
    let ppo = PpoConfig {
        n_epochs: h.n_epochs,
        n_minibatches: h.n_minibatches,
        max_grad_norm: cfg.train.max_grad_norm,
        clip: cfg.train.clip,
        ent_coef: 0.0,
    };

    let mut curve_file = match out_dir {
        Some(dir) => {
            cfg.write_echo(dir)?;
            let p = dir.join(CURVE_FILE);
            Some((std::fs::File::create(&p).map_err(|e| SlimError::io(&p, e))?, p))
        }
        None => None,
    };

    let t_len = cfg.env.episode_len;
    let decisions_per_ep = t_len.div_ceil(k);
    let mut env_steps = 0u64;
    let mut curve = Vec::with_capacity(h.n_iterations);
    for it in 0..h.n_iterations {
        let high = HighLevelPolicy {
            policy: learner.policy.clone(),
            k,
        };
        let ctrl = match low_policy {
            Some(lp) => Controller::Hierarchical { high: &high, low: lp },
            None => Controller::Flat(&high.policy),
        };
        let mut runs = Vec::with_capacity(h.n_envs);
        for _ in 0..h.n_envs {
            let seed: u64 = env_rng.random();
            let start = env::reset(seed, &cfg.env);
            let goal = sample_goal(&mut goal_rng, task, &start, &cfg.env, threshold);
            let run = run_goal(ctrl, start, &goal, &cfg.env, t_len, false, false, &mut act_rng)?;
            env_steps += run.steps() as u64;
            runs.push(run);
        }
        let rec = CurveRecord {
            iteration: it,
            env_steps,
            success_rate: runs.iter().filter(|r| r.success).count() as f64 / runs.len() as f64,
            mean_return: runs
                .iter()
                .map(|r| r.decisions.iter().map(|d| d.reward).sum::<f64>())
                .sum::<f64>()
                / runs.len() as f64,
            mean_final_error: runs.iter().map(|r| *r.errors.last().expect("non-empty")).sum::<f64>()
                / runs.len() as f64,
        };

        let n = runs.len() * decisions_per_ep;
        let in_dim = OBS_DIM + GOAL_DIM;
        let n_out = learner.policy.n_cont();
        let mut inputs = Array2::zeros((n, in_dim));
        let mut raw = Array2::zeros((n, n_out));
        let mut gripper = vec![false; n];
        let mut logp = vec![0.0; n];
        let mut rewards = vec![0.0; n];
        for (e, r) in runs.iter().enumerate() {
            SlimError::check_dim(decisions_per_ep, r.decisions.len())?;
            for (j, d) in r.decisions.iter().enumerate() {
                let i = e * decisions_per_ep + j;
                inputs.row_mut(i).assign(&ndarray::aview1(&d.input));
                raw.row_mut(i).assign(&ndarray::aview1(&d.raw));
                gripper[i] = d.gripper;
                logp[i] = d.log_prob;
                rewards[i] = d.reward;
            }
        }
        let mut finals = Array2::zeros((runs.len(), in_dim));
        for (e, r) in runs.iter().enumerate() {
            finals
                .row_mut(e)
                .assign(&ndarray::aview1(&policy_input(&r.end, &r.goal)));
        }
        let critic = critics.critics.get_mut("task").expect("task critic");
        let bootstrap = |c: &crate::mcppo::Critic| -> Result<Vec<f64>> {
            if cfg.train.bootstrap_truncated {
                c.predict(finals.view())
            } else {
                Ok(vec![0.0; finals.nrows()])
            }
        };
        let targets = batch_returns(&rewards, &bootstrap(critic)?, decisions_per_ep, gamma);
        critic.observe_targets(&targets);
        for _ in 0..h.n_epochs {
            for mb in minibatches(n, h.n_minibatches, &mut mb_rng) {
                let x = crate::mcppo::gather(inputs.view(), &mb);
                let t: Vec<f64> = mb.iter().map(|&i| targets[i]).collect();
                critic.update(x.view(), &t, cfg.train.max_grad_norm)?;
            }
        }
        let values = critic.predict(inputs.view())?;
        let adv = normalize_advantages(&batch_gae(
            &rewards,
            &values,
            &bootstrap(critic)?,
            decisions_per_ep,
            gamma,
            h.lam,
        )?);
        let pb = PolicyBatch {
            inputs: inputs.view(),
            raw: raw.view(),
            gripper: &gripper,
            old_log_prob: &logp,
            advantages: &adv,
        };
        ppo_update(&mut learner, &pb, &ppo, &mut mb_rng)?;
        if !learner.policy.net.is_finite() {
            return Err(SlimError::Numerical(format!("controller diverged at iteration {it}")));
        }
        on_iteration(&rec);
        if let Some((f, p)) = curve_file.as_mut() {
            use std::io::Write;
            let line = serde_json::to_string(&rec).map_err(|e| SlimError::Parse(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| SlimError::io(p.as_path(), e))?;
        }
        curve.push(rec);
    }

    let mut checkpoint = None;
    if let Some(dir) = out_dir {
        let mut ck = Checkpoint::new(cfg.to_json(), env_steps);
        ck.put_policy("hrl.policy", &learner.policy);
        ck.insert("hrl.k", vec![1], [k as f64]);
        ck.put_network("hrl.critic", &critics.critics["task"].net);
        if let (Some(_), Some(p)) = (low_policy, low_path) {
            ck.links.insert(LINK_DIGEST.to_string(), file_digest(p)?);
            ck.links.insert(LINK_PATH.to_string(), p.display().to_string());
        }
        let p = dir.join(HRL_CHECKPOINT);
        ck.save(&p)?;
        checkpoint = Some(p);
    }
    Ok(HrlOutcome {
        mode: h.mode,
        task,
        learner,
        k,
        curve,
        checkpoint,
    })
}

/// A trained controller restored from its checkpoint, with the linked skill
/// policy for hierarchical checkpoints.
#[derive(Debug, Clone)]
pub struct HrlBundle {
    pub config: ExperimentConfig,
    pub policy: GaussianPolicy,
    pub k: usize,
    pub low: Option<SkillBundle>,
}

impl HrlBundle {
    /// Load a controller checkpoint. For hierarchical checkpoints the skill
    /// checkpoint comes from `skill_path` or, if absent, the recorded link;
    /// its digest must match the recorded one.
    pub fn load(path: &Path, skill_path: Option<&Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let config = ExperimentConfig::from_json(&ck.config)?;
        let policy = ck.get_policy("hrl.policy")?;
        let k = ck
            .get("hrl.k")
            .ok_or_else(|| SlimError::Checkpoint("missing hrl.k".into()))?
            .data[0] as usize;
        let low = match ck.links.get(LINK_DIGEST) {
            None => None,
            Some(expected) => {
                let p = match skill_path {
                    Some(p) => p.to_path_buf(),
                    None => PathBuf::from(
                        ck.links
                            .get(LINK_PATH)
                            .ok_or_else(|| SlimError::Checkpoint("missing low-level path link".into()))?,
                    ),
                };
                let got = file_digest(&p)?;
                if &got != expected {
                    return Err(SlimError::Checkpoint(format!(
                        "skill checkpoint {} does not match the controller (digest {got}, expected {expected})",
                        p.display()
                    )));
                }
                Some(SkillBundle::load(&p)?)
            }
        };
        Ok(HrlBundle { config, policy, k, low })
    }

    pub fn controller(&self) -> Result<(Option<HighLevelPolicy>, &GaussianPolicy)> {
        match &self.low {
            Some(b) => Ok((
                Some(HighLevelPolicy {
                    policy: self.policy.clone(),
                    k: self.k,
                }),
                &b.policy,
            )),
            None => Ok((None, &self.policy)),
        }
    }
}

/// Index of the first learning-curve row at or above `rate`, reported as
/// the env steps consumed by then.
pub fn steps_to_success(curve: &[CurveRecord], rate: f64) -> Option<u64> {
    curve.iter().find(|r| r.success_rate >= rate).map(|r| r.env_steps)
}
