//! Multi-critic latent-variable skill discovery on a deterministic tabletop
//! manipulation toy.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod discovery;
pub mod env;
pub mod error;
pub mod funcapprox;
pub mod hrl;
pub mod mcppo;
pub mod metrics;
pub mod planner;
pub mod rewards;
pub mod rng;
pub mod skills;

pub use config::{EvalConfig, ExperimentConfig};
pub use env::{Action, EnvConfig, State};
pub use error::{Result, SlimError};
pub use hrl::{Goal, HighLevelPolicy, HrlConfig, TaskKind};
pub use mcppo::{AlgoTag, AlgoVariant, SkillBundle, TrainConfig};
pub use metrics::{CoverageGrid, EvalReport};
pub use planner::{TrajectoryReport, WaypointPlan};
pub use skills::SkillVector;
