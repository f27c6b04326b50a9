//! Skill prior on the unit hypersphere and per-episode skill schedules.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlimError};

/// A latent skill: a unit-norm vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillVector(Vec<f64>);

impl SkillVector {
    /// Normalizes `v`; fails on a zero or non-finite vector.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(SlimError::InvalidArgument(
                "cannot normalize a zero or non-finite skill".into(),
            ));
        }
        Ok(SkillVector(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        SkillVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

/// Parameters of the fixed skill prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillConfig {
    pub d: usize,
    pub kappa: f64,
    /// Mean direction; `None` means the first basis vector.
    pub mu: Option<Vec<f64>>,
    pub n_segments: usize,
}

impl Default for SkillConfig {
    fn default() -> Self {
        SkillConfig {
            d: 4,
            kappa: 0.0,
            mu: None,
            n_segments: 2,
        }
    }
}

impl SkillConfig {
    pub fn mean_direction(&self) -> Result<SkillVector> {
        match &self.mu {
            Some(m) => {
                SlimError::check_dim(self.d, m.len())?;
                SkillVector::new(m.clone())
            }
            None => Ok(SkillVector::basis(self.d, 0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(SlimError::Config("skill.d must be >= 2".into()));
        }
        if !(self.kappa >= 0.0) {
            return Err(SlimError::Config("skill.kappa must be >= 0".into()));
        }
        if self.n_segments == 0 {
            return Err(SlimError::Config("skill.n_segments must be >= 1".into()));
        }
        self.mean_direction().map(|_| ())
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> SkillVector {
    loop {
        if let Ok(s) = SkillVector::new(gaussian_vec(rng, d)) {
            return s;
        }
    }
}

/// Draw from a von Mises-Fisher distribution on the unit sphere in `d`
/// dimensions. `kappa = 0` is the uniform distribution. For `kappa > 0` the
/// component along `mu` is drawn with Wood's rejection sampler and the
/// tangential part uniformly on the orthogonal sphere.
pub fn sample_skill<R: Rng + ?Sized>(rng: &mut R, d: usize, kappa: f64, mu: &SkillVector) -> Result<SkillVector> {
    if d < 2 {
        return Err(SlimError::InvalidArgument(format!("skill dimension {d} < 2")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(SlimError::InvalidArgument(format!("kappa = {kappa} must be >= 0")));
    }
    if kappa == 0.0 {
        return Ok(uniform_sphere(rng, d));
    }
    SlimError::check_dim(d, mu.dim())?;

    let w = sample_vmf_cosine(rng, d, kappa);
    let mu = mu.as_slice();
    // tangent direction: Gaussian with the mu component projected out
    let tangent = loop {
        let mut v = gaussian_vec(rng, d);
        let proj: f64 = v.iter().zip(mu).map(|(a, b)| a * b).sum();
        for (vi, mi) in v.iter_mut().zip(mu) {
            *vi -= proj * mi;
        }
        if let Ok(t) = SkillVector::new(v) {
            break t;
        }
    };
    let r = (1.0 - w * w).max(0.0).sqrt();
    let z = mu.iter().zip(tangent.as_slice()).map(|(m, t)| w * m + r * t).collect();
    SkillVector::new(z)
}

/// Wood (1994) rejection sampler for `w = z . mu`.
fn sample_vmf_cosine<R: Rng + ?Sized>(rng: &mut R, d: usize, kappa: f64) -> f64 {
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("valid beta parameters");
    loop {
        let zb: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
        let u: f64 = rng.random();
        if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub skill: SkillVector,
    pub start: usize,
    pub end: usize,
}

/// Ordered skills covering `[0, T)` without overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSchedule {
    pub segments: Vec<Segment>,
}

impl SkillSchedule {
    pub fn single(skill: SkillVector, horizon: usize) -> Self {
        SkillSchedule {
            segments: vec![Segment {
                skill,
                start: 0,
                end: horizon,
            }],
        }
    }

    pub fn horizon(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn segment_index(&self, t: usize) -> usize {
        self.segments
            .iter()
            .position(|s| t >= s.start && t < s.end)
            .unwrap_or(self.segments.len() - 1)
    }

    pub fn skill_at(&self, t: usize) -> &SkillVector {
        &self.segments[self.segment_index(t)].skill
    }
}

/// Split `horizon` into `n_segments` near-equal contiguous pieces, each with
/// an independent prior draw.
pub fn make_schedule<R: Rng + ?Sized>(
    rng: &mut R,
    horizon: usize,
    n_segments: usize,
    d: usize,
    kappa: f64,
    mu: &SkillVector,
) -> Result<SkillSchedule> {
    if n_segments == 0 || n_segments > horizon {
        return Err(SlimError::InvalidArgument(format!(
            "n_segments = {n_segments} must lie in [1, {horizon}]"
        )));
    }
    let mut segments = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        let start = i * horizon / n_segments;
        let end = (i + 1) * horizon / n_segments;
        segments.push(Segment {
            skill: sample_skill(rng, d, kappa, mu)?,
            start,
            end,
        });
    }
    Ok(SkillSchedule { segments })
}
