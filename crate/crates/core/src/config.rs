//! Experiment configuration: one TOML document with a section per module.
//! Unknown keys are rejected everywhere; omitted keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Result, SlimError};
use crate::hrl::HrlConfig;
use crate::mcppo::TrainConfig;
use crate::rewards::RewardConfig;
use crate::skills::SkillConfig;

/// Environment variable overriding `out_dir`.
pub const OUT_DIR_ENV: &str = "SLIM_OUT_DIR";
/// File name of the resolved-config echo written into run directories.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_rollouts: 100,
            n_seeds: 4,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub skill: SkillConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub hrl: HrlConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            skill: SkillConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            hrl: HrlConfig::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| SlimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| SlimError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SlimError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(v.clone()).map_err(|e| SlimError::Checkpoint(format!("config echo: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.skill.validate()?;
        self.reward.validate()?;
        self.train.validate()?;
        self.hrl.validate()?;
        if self.eval.n_rollouts == 0 || self.eval.n_seeds == 0 {
            return Err(SlimError::Config(
                "eval.n_rollouts and eval.n_seeds must be >= 1".into(),
            ));
        }
        if self.skill.n_segments > self.env.episode_len {
            return Err(SlimError::Config("skill.n_segments exceeds env.episode_len".into()));
        }
        Ok(())
    }

    /// Apply the `SLIM_OUT_DIR` override if set.
    pub fn apply_env_override(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
    }

    /// Write the resolved configuration into `dir`.
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| SlimError::io(dir, e))?;
        let p = dir.join(ECHO_FILE);
        std::fs::write(&p, self.to_toml_string()?).map_err(|e| SlimError::io(&p, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcppo::AlgoTag;

    const FULL: &str = r#"
out_dir = "runs/x"
[env]
[skill]
d = 3
[reward]
epsilon = 0.05
[train]
variant = "no_safety"
seed = 9
[hrl]
[eval]
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(FULL).unwrap();
        assert_eq!(c.skill.d, 3);
        assert_eq!(c.train.variant, AlgoTag::NoSafety);
        assert_eq!(c.env, EnvConfig::default());
        assert_eq!(c.out_dir, PathBuf::from("runs/x"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = FULL.replace("d = 3", "d = 3\ndimension = 4");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad),
            Err(SlimError::Config(_))
        ));
        let bad = format!("{FULL}\n[extra]\n");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn missing_section_rejected() {
        let bad = FULL.replace("[hrl]\n", "");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = FULL.replace("epsilon = 0.05", "epsilon = -1.0");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::from_toml_str(FULL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = c.write_echo(dir.path()).unwrap();
        assert_eq!(ExperimentConfig::load(&p).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
