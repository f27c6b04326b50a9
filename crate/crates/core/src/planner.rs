//! Waypoint following: feed ordered position goals to a goal-reaching
//! controller and score the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{self, dist3, EnvConfig, Vec3};
use crate::error::{Result, SlimError};
use crate::hrl::{run_goal, Controller, Goal};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_BUDGET: usize = 150;
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointPlan {
    #[serde(default)]
    pub name: String,
    pub waypoints: Vec<Vec3>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl WaypointPlan {
    pub fn new(name: &str, waypoints: Vec<Vec3>) -> Self {
        WaypointPlan {
            name: name.to_string(),
            waypoints,
            budget: DEFAULT_BUDGET,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn validate(&self, env_cfg: &EnvConfig) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(SlimError::InvalidArgument("plan has no waypoints".into()));
        }
        if self.budget == 0 || !(self.threshold > 0.0) {
            return Err(SlimError::InvalidArgument(
                "plan budget and threshold must be > 0".into(),
            ));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !w.iter().all(|c| c.is_finite()) || !env_cfg.in_safe_box(w) {
                return Err(SlimError::InvalidArgument(format!(
                    "waypoint {i} {w:?} lies outside the workspace"
                )));
            }
        }
        Ok(())
    }

    /// Parse a TOML plan: `waypoints = [[x, y, z], ...]` plus optional
    /// `name`, `budget` and `threshold`.
    pub fn from_toml_str(s: &str, env_cfg: &EnvConfig) -> Result<Self> {
        let p: WaypointPlan = toml::from_str(s).map_err(|e| SlimError::Parse(e.to_string()))?;
        p.validate(env_cfg)?;
        Ok(p)
    }

    pub fn load(path: &Path, env_cfg: &EnvConfig) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| SlimError::io(path, e))?;
        let mut p = Self::from_toml_str(&s, env_cfg)?;
        if p.name.is_empty() {
            p.name = path.display().to_string();
        }
        Ok(p)
    }
}

/// Six fixed five-point shapes over the table, in meters.
pub fn builtin_plans() -> Vec<WaypointPlan> {
    let r = 0.025;
    let lift = 0.12;
    vec![
        WaypointPlan::new(
            "line",
            vec![
                [-0.10, 0.0, r],
                [-0.05, 0.0, r],
                [0.0, 0.0, r],
                [0.05, 0.0, r],
                [0.10, 0.0, r],
            ],
        ),
        WaypointPlan::new(
            "l_shape",
            vec![
                [-0.08, 0.08, r],
                [-0.08, 0.0, r],
                [-0.08, -0.08, r],
                [0.0, -0.08, r],
                [0.08, -0.08, r],
            ],
        ),
        WaypointPlan::new(
            "square_loop",
            vec![
                [-0.08, -0.08, r],
                [0.08, -0.08, r],
                [0.08, 0.08, r],
                [-0.08, 0.08, r],
                [-0.08, -0.08, r],
            ],
        ),
        WaypointPlan::new(
            "lift_and_place",
            vec![
                [-0.08, 0.0, r],
                [-0.04, 0.0, lift],
                [0.0, 0.0, lift + 0.03],
                [0.04, 0.0, lift],
                [0.08, 0.0, r],
            ],
        ),
        WaypointPlan::new(
            "zigzag",
            vec![
                [-0.10, -0.06, r],
                [-0.05, 0.06, r],
                [0.0, -0.06, r],
                [0.05, 0.06, r],
                [0.10, -0.06, r],
            ],
        ),
        WaypointPlan::new(
            "triangle_loop",
            vec![
                [0.0, 0.10, r],
                [-0.09, -0.06, r],
                [0.09, -0.06, r],
                [0.0, 0.10, r],
                [-0.09, -0.06, r],
            ],
        ),
    ]
}

/// States visited while one waypoint was the active goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointTrace {
    pub waypoint: Vec3,
    /// Object center at the segment start and after every step.
    pub obj: Vec<Vec3>,
    /// Safety flag after every step.
    pub safe: Vec<bool>,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub overall_success: bool,
    pub max_distance: f64,
    pub points_success: usize,
    pub safety_rate: f64,
    pub traces: Vec<WaypointTrace>,
}

/// Table-ordered summary line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub plan: String,
    pub overall_success: bool,
    pub max_distance: f64,
    pub points_success: usize,
    pub n_points: usize,
    pub safety_rate: f64,
}

impl TrajectoryReport {
    pub fn summary(&self, plan: &str) -> ReportSummary {
        ReportSummary {
            plan: plan.to_string(),
            overall_success: self.overall_success,
            max_distance: self.max_distance,
            points_success: self.points_success,
            n_points: self.traces.len(),
            safety_rate: self.safety_rate,
        }
    }
}

/// Score a set of traces from the logged states alone.
pub fn score_traces(traces: Vec<WaypointTrace>, threshold: f64) -> TrajectoryReport {
    let mut max_distance: f64 = 0.0;
    let mut points = 0;
    let mut steps = 0usize;
    let mut safe = 0usize;
    for tr in &traces {
        for p in &tr.obj {
            max_distance = max_distance.max(dist3(p, &tr.waypoint));
        }
        if tr.obj.iter().any(|p| dist3(p, &tr.waypoint) < threshold) {
            points += 1;
        }
        steps += tr.safe.len();
        safe += tr.safe.iter().filter(|s| **s).count();
    }
    TrajectoryReport {
        overall_success: points == traces.len(),
        max_distance,
        points_success: points,
        safety_rate: if steps == 0 { 1.0 } else { safe as f64 / steps as f64 },
        traces,
    }
}

/// Run a plan from `env::reset(seed)`. Each waypoint gets up to `budget`
/// steps and ends early once reached; a missed waypoint is recorded and the
/// next one becomes active from the current state. Controller actions are
/// the mode of each policy.
pub fn follow(plan: &WaypointPlan, ctrl: Controller<'_>, env_cfg: &EnvConfig, seed: u64) -> Result<TrajectoryReport> {
    plan.validate(env_cfg)?;
    let mut cfg = env_cfg.clone();
    cfg.episode_len = plan.budget * plan.waypoints.len();
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut state = env::reset(seed, &cfg);
    let mut traces = Vec::with_capacity(plan.waypoints.len());
    for w in &plan.waypoints {
        let goal = Goal::position(*w, plan.threshold);
        let run = run_goal(ctrl, state, &goal, &cfg, plan.budget, true, true, &mut rng)?;
        traces.push(WaypointTrace {
            waypoint: *w,
            obj: run.obj,
            safe: run.safe,
            reached: run.success,
        });
        state = run.end;
    }
    let report = score_traces(traces, plan.threshold);
    debug_assert!(report.traces.iter().filter(|t| t.reached).count() == report.points_success);
    Ok(report)
}
