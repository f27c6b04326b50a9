//! The three reward channels: reaching, discovery and safety.

use serde::{Deserialize, Serialize};

use crate::env::Vec3;
use crate::error::{Result, SlimError};
use crate::skills::SkillVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTriple {
    pub reach: f64,
    pub discovery: f64,
    pub safety: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Current object center.
    ObjectCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Squared-distance floor in the reach reward, m^2.
    pub epsilon: f64,
    pub target_source: TargetSource,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            epsilon: 0.02,
            target_source: TargetSource::ObjectCenter,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(SlimError::Config("reward.epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// `1 / (|ee - target|^2 + epsilon)`.
pub fn reach_reward(ee_pos: &Vec3, targ_pos: &Vec3, epsilon: f64) -> f64 {
    let d2: f64 = (0..3).map(|i| (ee_pos[i] - targ_pos[i]).powi(2)).sum();
    1.0 / (d2 + epsilon)
}

/// Per-transition displacement in representation space projected on the
/// active skill.
pub fn discovery_reward(phi_prev: &[f64], phi_next: &[f64], z: &SkillVector) -> Result<f64> {
    SlimError::check_dim(z.dim(), phi_prev.len())?;
    SlimError::check_dim(z.dim(), phi_next.len())?;
    Ok(phi_next
        .iter()
        .zip(phi_prev)
        .zip(z.as_slice())
        .map(|((n, p), zi)| (n - p) * zi)
        .sum())
}

/// `0` when safe, `-1` otherwise.
pub fn safety_reward(safe: bool) -> f64 {
    if safe {
        0.0
    } else {
        -1.0
    }
}
