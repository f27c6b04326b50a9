//! Multi-critic PPO: rollouts under skill schedules, one value function per
//! reward channel, per-channel advantage standardization, weighted
//! combination and a clipped policy update. Also hosts the ablation and
//! baseline variants.

mod critic;
mod estimators;
mod ppo;
mod rollout;
mod train;
mod variant;

pub use critic::{critic_loss_and_grads, Critic, CriticEnsemble};
pub use estimators::{
    combine_advantages, gae, is_constant, mc_returns, mean_std, normalize_advantages, CombinationWeights,
};
pub use ppo::{
    minibatches, policy_params, ppo_loss_and_grads, ppo_update, set_policy_params, PolicyBatch, PolicyGrads,
    PolicyLearner, PpoConfig, SurrogateStats,
};
pub use rollout::{collect_rollouts, gather, input_row, DiscoveryModel, RolloutBatch, Transition};
pub use train::{
    advantages_for_batch, batch_gae, batch_returns, critic_rewards, new_skill_policy, skill_checkpoint, train,
    ChannelWeights, IterationRecord, SkillBundle, TrainConfig, TrainOutcome, FINAL_CHECKPOINT, METRICS_FILE,
    TIMING_FILE,
};
pub use variant::{AlgoTag, AlgoVariant, Channel, CriticMode, DiscoverySource};
