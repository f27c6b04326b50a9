//! Coverage and safety evaluation of skill-conditioned policies, and the
//! per-step rollout export consumed by plotting tools.
//!
//! Export schema, one JSON object per line:
//!
//! | key       | type        | meaning                                  |
//! |-----------|-------------|------------------------------------------|
//! | `rid`     | integer     | rollout index                            |
//! | `t`       | integer     | step index, `0..T`                       |
//! | `z`       | float array | skill vector (unit norm)                 |
//! | `obj`     | float[3]    | object center after the step, m          |
//! | `ee`      | float[3]    | end-effector position after the step, m  |
//! | `yaw`     | float       | object yaw after the step, rad           |
//! | `r_reach` | float       | reach reward of the step                 |
//! | `r_disc`  | float       | discovery reward of the step             |
//! | `r_safe`  | float       | safety reward of the step (0 or -1)      |
//! | `safe`    | bool        | safety indicator of the post-step state  |

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Vec3};
use crate::error::{Result, SlimError};
use crate::funcapprox::GaussianPolicy;
use crate::mcppo::{collect_rollouts, DiscoveryModel, RolloutBatch};
use crate::rewards::RewardConfig;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::skills::{sample_skill, SkillConfig, SkillSchedule};

/// Axis-aligned box split into cubic cells with half-open `[lo, hi)` bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub lo: Vec3,
    pub hi: Vec3,
    pub cell: f64,
    dims: [usize; 3],
}

impl Default for CoverageGrid {
    /// 0.5 m cube centered over the table center with its base on the table
    /// surface, 0.1 m cells.
    fn default() -> Self {
        CoverageGrid::new([-0.25, -0.25, 0.0], [0.25, 0.25, 0.5], 0.1).expect("valid default grid")
    }
}

impl CoverageGrid {
    pub fn new(lo: Vec3, hi: Vec3, cell: f64) -> Result<Self> {
        if !(cell > 0.0) {
            return Err(SlimError::InvalidArgument("cell size must be > 0".into()));
        }
        let mut dims = [0; 3];
        for i in 0..3 {
            let k = (hi[i] - lo[i]) / cell;
            let r = k.round();
            if r < 1.0 || (k - r).abs() > 1e-9 {
                return Err(SlimError::InvalidArgument(format!(
                    "cell {cell} does not divide extent {} on axis {i}",
                    hi[i] - lo[i]
                )));
            }
            dims[i] = r as usize;
        }
        Ok(CoverageGrid { lo, hi, cell, dims })
    }

    pub fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear cell index, or `None` outside the region.
    pub fn cell_index(&self, p: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for i in 0..3 {
            if !(p[i] >= self.lo[i] && p[i] < self.hi[i]) {
                return None;
            }
            let k = ((p[i] - self.lo[i]) / self.cell).floor() as usize;
            idx[i] = k.min(self.dims[i] - 1);
        }
        Some((idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0])
    }
}

/// Set of visited cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Occupancy {
    cells: BTreeSet<usize>,
}

impl Occupancy {
    pub fn visit(&mut self, grid: &CoverageGrid, p: &Vec3) {
        if let Some(i) = grid.cell_index(p) {
            self.cells.insert(i);
        }
    }

    pub fn count(&self) -> usize {
        self.cells.len()
    }

    pub fn merge(&mut self, other: &Occupancy) {
        self.cells.extend(other.cells.iter().copied());
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub coverage_count: usize,
    pub safety_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Cells covered by the union of all rollouts over all seeds.
    pub coverage_count: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub safety_rate: f64,
    pub safety_std: f64,
    pub n_rollouts: usize,
    pub n_seeds: usize,
    pub per_seed: Vec<SeedReport>,
}

const OBJ: std::ops::Range<usize> = 6..9;
const EE: std::ops::Range<usize> = 0..3;

fn vec3(row: &[f64]) -> Vec3 {
    [row[0], row[1], row[2]]
}

/// Object center after each step of a batch.
pub fn object_positions(batch: &RolloutBatch) -> Vec<Vec3> {
    batch
        .next_obs
        .outer_iter()
        .map(|r| vec3(&r.as_slice().expect("contiguous")[OBJ]))
        .collect()
}

/// Cells covered by the object across all steps of a batch.
pub fn batch_occupancy(batch: &RolloutBatch, grid: &CoverageGrid) -> Occupancy {
    let mut occ = Occupancy::default();
    for p in object_positions(batch) {
        occ.visit(grid, &p);
    }
    occ
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    crate::mcppo::mean_std(v)
}

/// Single-skill rollouts of one evaluation seed: skills drawn from the
/// prior, deterministic (mode) actions.
pub fn eval_batch(
    policy: &GaussianPolicy,
    discovery: Option<&DiscoveryModel>,
    env_cfg: &EnvConfig,
    skill_cfg: &SkillConfig,
    reward_cfg: &RewardConfig,
    n_rollouts: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    let mu = skill_cfg.mean_direction()?;
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut schedules = Vec::with_capacity(n_rollouts);
    let mut env_seeds = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let z = sample_skill(&mut rng, skill_cfg.d, skill_cfg.kappa, &mu)?;
        schedules.push(SkillSchedule::single(z, env_cfg.episode_len));
        env_seeds.push(rng.random());
    }
    collect_rollouts(
        policy, discovery, env_cfg, reward_cfg, schedules, &env_seeds, &mut rng, true,
    )
}

/// Coverage and safety over `n_seeds` evaluation seeds of `n_rollouts`
/// rollouts each. Evaluation seed `k` is derived from `(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn eval_skills(
    policy: &GaussianPolicy,
    env_cfg: &EnvConfig,
    skill_cfg: &SkillConfig,
    reward_cfg: &RewardConfig,
    n_rollouts: usize,
    n_seeds: usize,
    seed: u64,
    grid: &CoverageGrid,
) -> Result<EvalReport> {
    if n_rollouts == 0 || n_seeds == 0 {
        return Err(SlimError::InvalidArgument(
            "need at least one rollout and one seed".into(),
        ));
    }
    let mut per_seed = Vec::with_capacity(n_seeds);
    let mut union = Occupancy::default();
    for k in 0..n_seeds {
        let s = derive_seed(seed, k as u64);
        let batch = eval_batch(policy, None, env_cfg, skill_cfg, reward_cfg, n_rollouts, s)?;
        let occ = batch_occupancy(&batch, grid);
        union.merge(&occ);
        per_seed.push(SeedReport {
            seed: s,
            coverage_count: occ.count(),
            safety_rate: batch.safety_rate(),
        });
    }
    let cov: Vec<f64> = per_seed.iter().map(|r| r.coverage_count as f64).collect();
    let saf: Vec<f64> = per_seed.iter().map(|r| r.safety_rate).collect();
    let (coverage_mean, coverage_std) = mean_std(&cov);
    let (safety_rate, safety_std) = mean_std(&saf);
    Ok(EvalReport {
        coverage_count: union.count(),
        coverage_mean,
        coverage_std,
        safety_rate,
        safety_std,
        n_rollouts,
        n_seeds,
        per_seed,
    })
}

/// One exported step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutRecord {
    pub rid: usize,
    pub t: usize,
    pub z: Vec<f64>,
    pub obj: Vec3,
    pub ee: Vec3,
    pub yaw: f64,
    pub r_reach: f64,
    pub r_disc: f64,
    pub r_safe: f64,
    pub safe: bool,
}

/// Per-step records of a batch, in episode-major order.
pub fn batch_records(batch: &RolloutBatch) -> Vec<RolloutRecord> {
    (0..batch.len())
        .map(|i| {
            let o = batch.next_obs.row(i);
            let o = o.as_slice().expect("contiguous");
            RolloutRecord {
                rid: i / batch.horizon,
                t: i % batch.horizon,
                z: batch.skill(i).as_slice().to_vec(),
                obj: vec3(&o[OBJ]),
                ee: vec3(&o[EE]),
                yaw: o[9].atan2(o[10]),
                r_reach: batch.reach[i],
                r_disc: batch.discovery[i],
                r_safe: batch.safety[i],
                safe: batch.safe[i],
            }
        })
        .collect()
}

/// Roll out `n_skills` prior skills and write one record per step to `out`.
#[allow(clippy::too_many_arguments)]
pub fn export_rollouts(
    policy: &GaussianPolicy,
    discovery: Option<&DiscoveryModel>,
    env_cfg: &EnvConfig,
    skill_cfg: &SkillConfig,
    reward_cfg: &RewardConfig,
    n_skills: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<RolloutRecord>> {
    let batch = eval_batch(policy, discovery, env_cfg, skill_cfg, reward_cfg, n_skills, seed)?;
    let records = batch_records(&batch);
    write_records(out, &records)?;
    Ok(records)
}

pub fn write_records(path: &Path, records: &[RolloutRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| SlimError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| SlimError::Parse(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| SlimError::io(path, e))?;
    }
    w.flush().map_err(|e| SlimError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RolloutRecord>> {
    let f = File::open(path).map_err(|e| SlimError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| SlimError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| SlimError::Parse(format!("line {}: {e}", n + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Coverage and safety rate recomputed from exported records.
pub fn summarize_records(records: &[RolloutRecord], grid: &CoverageGrid) -> (usize, f64) {
    let mut occ = Occupancy::default();
    for r in records {
        occ.visit(grid, &r.obj);
    }
    let safe = records.iter().filter(|r| r.safe).count();
    (occ.count(), safe as f64 / records.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_125_cells() {
        let g = CoverageGrid::default();
        assert_eq!(g.n_cells(), 125);
        assert!(CoverageGrid::new([0.0; 3], [0.5, 0.5, 0.45], 0.1).is_err());
    }

    #[test]
    fn half_open_cells() {
        let g = CoverageGrid::default();
        assert_eq!(g.cell_index(&[-0.25, -0.25, 0.0]), Some(0));
        assert_eq!(g.cell_index(&[-0.15, -0.25, 0.0]), Some(1));
        assert_eq!(g.cell_index(&[-0.1500001, -0.25, 0.0]), Some(0));
        assert_eq!(g.cell_index(&[0.25, 0.0, 0.1]), None);
        assert_eq!(g.cell_index(&[0.2499999, 0.2499999, 0.4999999]), Some(124));
        assert_eq!(g.cell_index(&[0.0, 0.0, -0.01]), None);
    }

    #[test]
    fn scripted_trace_counts_enumerated_cells() {
        let g = CoverageGrid::default();
        let centers: Vec<Vec3> = (0..7)
            .map(|k| {
                [
                    -0.2 + 0.1 * (k % 5) as f64,
                    -0.2 + 0.1 * (k / 5) as f64,
                    0.05 + 0.1 * (k % 3) as f64,
                ]
            })
            .collect();
        let mut occ = Occupancy::default();
        // several visits per cell plus out-of-region points
        for c in &centers {
            for d in [-0.04, 0.0, 0.04] {
                occ.visit(&g, &[c[0] + d, c[1], c[2]]);
            }
        }
        occ.visit(&g, &[0.3, 0.0, 0.0]);
        assert_eq!(occ.count(), 7);
    }

    #[test]
    fn stationary_object_covers_one_cell() {
        let g = CoverageGrid::default();
        let mut occ = Occupancy::default();
        for _ in 0..200 {
            occ.visit(&g, &[0.01, 0.02, 0.025]);
        }
        assert_eq!(occ.count(), 1);
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let r = vec![RolloutRecord {
            rid: 0,
            t: 3,
            z: vec![0.6, 0.8],
            obj: [0.1, -0.2, 0.025],
            ee: [0.0, 0.0, 0.15],
            yaw: 0.3,
            r_reach: 12.5,
            r_disc: -0.001,
            r_safe: 0.0,
            safe: true,
        }];
        write_records(&p, &r).unwrap();
        assert_eq!(read_records(&p).unwrap(), r);
        let text = std::fs::read_to_string(&p).unwrap();
        for key in [
            "rid", "t", "z", "obj", "ee", "yaw", "r_reach", "r_disc", "r_safe", "safe",
        ] {
            assert!(text.contains(&format!("\"{key}\"")));
        }
        std::fs::write(&p, "{\"rid\":0}\n").unwrap();
        let err = read_records(&p).unwrap_err().to_string();
        assert!(err.contains("line 1"));
    }
}
