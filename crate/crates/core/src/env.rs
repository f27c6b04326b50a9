//! Planar-plus-height tabletop simulator: one point end-effector with a
//! parallel gripper, one cube, kinematic grasping and penetration pushing.
//!
//! Coordinates are meters with the origin at the table center on the table
//! surface; `z` points up. Yaw angles are radians wrapped to `[-pi, pi)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlimError};
use crate::rng::rng_from_seed;

pub type Vec3 = [f64; 3];

/// Length of the flattened observation.
pub const OBS_DIM: usize = 18;
/// Continuous action components: dx, dy, dz, dyaw.
pub const ACTION_DIM: usize = 4;

pub type ObservationVector = [f64; OBS_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub table_half_extent: f64,
    pub init_area_half: f64,
    pub cube_side: f64,
    pub ee_home: Vec3,
    pub ee_home_yaw: f64,
    pub max_step_translation: f64,
    pub max_step_yaw: f64,
    pub grasp_radius: f64,
    pub z_max: f64,
    pub ee_vel_max: f64,
    pub episode_len: usize,
    /// How far the kinematic reach box extends past the safe workspace box on
    /// every side. Zero makes the reach box and the safe box coincide.
    pub reach_margin: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            table_half_extent: 0.30,
            init_area_half: 0.12,
            cube_side: 0.05,
            ee_home: [0.0, 0.0, 0.15],
            ee_home_yaw: 0.0,
            max_step_translation: 0.02,
            max_step_yaw: 0.1,
            grasp_radius: 0.03,
            z_max: 0.5,
            ee_vel_max: 0.04,
            episode_len: 200,
            reach_margin: 0.10,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("table_half_extent", self.table_half_extent),
            ("init_area_half", self.init_area_half),
            ("cube_side", self.cube_side),
            ("max_step_translation", self.max_step_translation),
            ("max_step_yaw", self.max_step_yaw),
            ("grasp_radius", self.grasp_radius),
            ("z_max", self.z_max),
            ("ee_vel_max", self.ee_vel_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SlimError::Config(format!("env.{name} must be > 0, got {v}")));
            }
        }
        if self.episode_len == 0 {
            return Err(SlimError::Config("env.episode_len must be > 0".into()));
        }
        if !(self.reach_margin >= 0.0) {
            return Err(SlimError::Config("env.reach_margin must be >= 0".into()));
        }
        if self.grasp_radius >= self.cube_side {
            return Err(SlimError::Config("env.grasp_radius must be < cube_side".into()));
        }
        if self.init_area_half >= self.table_half_extent {
            return Err(SlimError::Config(
                "env.init_area_half must be < table_half_extent".into(),
            ));
        }
        if self.ee_vel_max < self.max_step_translation {
            return Err(SlimError::Config(
                "env.ee_vel_max must be >= max_step_translation".into(),
            ));
        }
        if !self.in_safe_box(&self.ee_home) {
            return Err(SlimError::Config("env.ee_home must lie in the workspace box".into()));
        }
        Ok(())
    }

    pub fn rest_height(&self) -> f64 {
        self.cube_side / 2.0
    }

    /// Safe workspace box: above the table footprint, up to `z_max`.
    pub fn safe_box(&self) -> (Vec3, Vec3) {
        let h = self.table_half_extent;
        ([-h, -h, 0.0], [h, h, self.z_max])
    }

    /// Kinematic limits the end-effector is clamped to.
    pub fn reach_box(&self) -> (Vec3, Vec3) {
        let (lo, hi) = self.safe_box();
        let m = self.reach_margin;
        ([lo[0] - m, lo[1] - m, lo[2] - m], [hi[0] + m, hi[1] + m, hi[2] + m])
    }

    pub fn in_safe_box(&self, p: &Vec3) -> bool {
        let (lo, hi) = self.safe_box();
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn on_table(&self, p: &Vec3) -> bool {
        p[0].abs() <= self.table_half_extent && p[1].abs() <= self.table_half_extent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub ee_pos: Vec3,
    pub ee_yaw: f64,
    pub gripper_closed: bool,
    pub obj_pos: Vec3,
    pub obj_yaw: f64,
    pub ee_vel: Vec3,
    pub obj_vel: Vec3,
    pub grasped: bool,
    /// Object position relative to the end-effector, fixed while grasped.
    pub grasp_offset: Vec3,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    /// dx, dy, dz, dyaw in `[-1, 1]`, scaled by the per-step limits.
    pub delta: [f64; ACTION_DIM],
    /// `true` commands the gripper closed.
    pub gripper: bool,
}

impl Action {
    pub const IDLE: Action = Action {
        delta: [0.0; ACTION_DIM],
        gripper: false,
    };

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.delta.iter().enumerate() {
            if !(d.abs() <= 1.0) {
                return Err(SlimError::InvalidAction(format!("delta[{i}] = {d} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on the upper bound through rounding
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn norm3(a: &Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist3(a: &Vec3, b: &Vec3) -> f64 {
    norm3(&sub(a, b))
}

/// Fresh episode: end-effector at home, cube resting at a uniformly sampled
/// pose inside the initialization square.
pub fn reset(seed: u64, cfg: &EnvConfig) -> State {
    let mut rng = rng_from_seed(seed);
    let h = cfg.init_area_half;
    let x = rng.random_range(-h..=h);
    let y = rng.random_range(-h..=h);
    let yaw = rng.random_range(-PI..PI);
    State {
        ee_pos: cfg.ee_home,
        ee_yaw: wrap_angle(cfg.ee_home_yaw),
        gripper_closed: false,
        obj_pos: [x, y, cfg.rest_height()],
        obj_yaw: yaw,
        ee_vel: [0.0; 3],
        obj_vel: [0.0; 3],
        grasped: false,
        grasp_offset: [0.0; 3],
        t: 0,
    }
}

/// Advance one step. Order of resolution: gripper command (release, then
/// grasp at the pre-move pose), end-effector motion with clamping, then the
/// cube either follows the gripper or is pushed and settles on the table.
pub fn step(s: &State, a: &Action, cfg: &EnvConfig) -> Result<State> {
    if s.t >= cfg.episode_len {
        return Err(SlimError::Terminal(s.t));
    }
    a.validate()?;

    let mut n = s.clone();
    let rest = cfg.rest_height();
    let half = cfg.cube_side / 2.0;
    let cube_live = cfg.on_table(&s.obj_pos) || s.grasped;

    n.gripper_closed = a.gripper;
    if n.grasped && !a.gripper {
        n.grasped = false;
        n.grasp_offset = [0.0; 3];
    }
    if !n.grasped && a.gripper && cube_live && dist3(&s.ee_pos, &s.obj_pos) <= cfg.grasp_radius {
        n.grasped = true;
        n.grasp_offset = sub(&s.obj_pos, &s.ee_pos);
    }

    let (lo, hi) = cfg.reach_box();
    let mut ee = s.ee_pos;
    for i in 0..3 {
        ee[i] = (ee[i] + a.delta[i] * cfg.max_step_translation).clamp(lo[i], hi[i]);
    }
    if n.grasped {
        // the carried cube may not sink into the table
        let floor = rest - n.grasp_offset[2];
        if ee[2] < floor {
            ee[2] = floor.min(hi[2]);
        }
    }
    let dyaw = a.delta[3] * cfg.max_step_yaw;
    n.ee_pos = ee;
    n.ee_yaw = wrap_angle(s.ee_yaw + dyaw);

    if n.grasped {
        n.obj_pos = add(&ee, &n.grasp_offset);
        n.obj_yaw = wrap_angle(s.obj_yaw + dyaw);
    } else if cube_live {
        let mut c = s.obj_pos;
        if let Some(push) = push_vector(&s.ee_pos, &ee, &c, half) {
            c[0] += push[0];
            c[1] += push[1];
        }
        c[2] = rest;
        n.obj_pos = c;
    }

    n.ee_vel = sub(&n.ee_pos, &s.ee_pos);
    n.obj_vel = sub(&n.obj_pos, &s.obj_pos);
    n.t = s.t + 1;
    Ok(n)
}

/// Horizontal displacement of the cube when the end-effector enters its
/// footprint from the side. Entry from above straddles the cube and pushes
/// nothing.
fn push_vector(prev: &Vec3, next: &Vec3, c: &Vec3, half: f64) -> Option<[f64; 2]> {
    let inside_now = (next[0] - c[0]).abs() < half && (next[1] - c[1]).abs() < half && next[2] < c[2] + half;
    if !inside_now {
        return None;
    }
    let out_x = (prev[0] - c[0]).abs() >= half;
    let out_y = (prev[1] - c[1]).abs() >= half;
    if !out_x && !out_y {
        return None;
    }
    let pen_x = half - (next[0] - c[0]).abs();
    let pen_y = half - (next[1] - c[1]).abs();
    let use_x = match (out_x, out_y) {
        (true, false) => true,
        (false, true) => false,
        _ => pen_x <= pen_y,
    };
    if use_x {
        let dir = if prev[0] < c[0] { 1.0 } else { -1.0 };
        Some([dir * pen_x, 0.0])
    } else {
        let dir = if prev[1] < c[1] { 1.0 } else { -1.0 };
        Some([0.0, dir * pen_y])
    }
}

/// Safety indicator: `false` when any constraint is violated.
pub fn is_safe(s: &State, cfg: &EnvConfig) -> bool {
    let ee_in_box = cfg.in_safe_box(&s.ee_pos);
    let vel_ok = norm3(&s.ee_vel) <= cfg.ee_vel_max;
    let above_table = s.ee_pos[2] >= 0.0;
    let cube_on_table = cfg.on_table(&s.obj_pos);
    ee_in_box && vel_ok && above_table && cube_on_table
}

/// Fixed-order flattening:
/// `ee_pos(3), sin/cos ee_yaw(2), gripper(1), obj_pos(3), sin/cos obj_yaw(2),
/// ee_vel(3), obj_vel(3), grasped(1)`.
pub fn observe(s: &State) -> ObservationVector {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    [
        s.ee_pos[0],
        s.ee_pos[1],
        s.ee_pos[2],
        s.ee_yaw.sin(),
        s.ee_yaw.cos(),
        flag(s.gripper_closed),
        s.obj_pos[0],
        s.obj_pos[1],
        s.obj_pos[2],
        s.obj_yaw.sin(),
        s.obj_yaw.cos(),
        s.ee_vel[0],
        s.ee_vel[1],
        s.ee_vel[2],
        s.obj_vel[0],
        s.obj_vel[1],
        s.obj_vel[2],
        flag(s.grasped),
    ]
}
