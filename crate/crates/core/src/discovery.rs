//! Representation learning for the discovery channel.
//!
//! [`ReprNet`] is a spectrally normalized map `phi` trained to maximize
//! `(phi(s') - phi(s))^T z` over observed transitions; the Lipschitz bound
//! comes from the normalization, not from the loss. [`Discriminator`] backs
//! the mutual-information baseline, scoring `mu_hat(s)^T z` with `mu_hat`
//! the normalized network output (a von Mises-Fisher log-likelihood up to
//! constants).

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Result, SlimError};
use crate::funcapprox::{Adam, GradientSet, Network};
use crate::rewards::discovery_reward;
use crate::skills::SkillVector;

const NORM_FLOOR: f64 = 1e-8;

/// Training-time power iterations per update.
pub const TRAIN_POWER_ITERS: usize = 1;
/// Power iterations used before verification.
pub const VERIFY_POWER_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ReprNet {
    pub net: Network,
    opt: Adam,
    updates: u64,
}

impl ReprNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], skill_dim: usize, lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(skill_dim);
        let net = Network::mlp(&sizes, 1.0, rng).with_spectral_norm(VERIFY_POWER_ITERS, rng);
        Self::from_network(net, lr)
    }

    pub fn from_network(net: Network, lr: f64) -> Self {
        let opt = Adam::new(net.param_count(), lr);
        ReprNet { net, opt, updates: 0 }
    }

    pub fn skill_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn phi(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }

    pub fn phi_batch(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward_batch(obs)
    }

    /// Per-transition discovery rewards, evaluated through
    /// [`discovery_reward`] on this network's outputs.
    pub fn discovery_rewards(
        &self,
        obs: ArrayView2<f64>,
        next_obs: ArrayView2<f64>,
        skills: &[&SkillVector],
    ) -> Result<Vec<f64>> {
        SlimError::check_dim(obs.nrows(), skills.len())?;
        let a = self.phi_batch(obs)?;
        let b = self.phi_batch(next_obs)?;
        skills
            .iter()
            .enumerate()
            .map(|(i, z)| discovery_reward(a.row(i).as_slice().unwrap(), b.row(i).as_slice().unwrap(), z))
            .collect()
    }

    pub fn refresh_spectral(&mut self, n_iters: usize) {
        self.net.power_iterate(n_iters);
    }

    /// One Adam step on the displacement objective. Returns the loss before
    /// the step.
    pub fn update(&mut self, obs: ArrayView2<f64>, next_obs: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<f64> {
        self.net.power_iterate(TRAIN_POWER_ITERS);
        let (loss, grads) = phi_loss_and_grads(self, obs, next_obs, z)?;
        if !grads.is_finite() {
            return Err(SlimError::Numerical("non-finite phi gradient".into()));
        }
        let mut p = self.net.flat_params();
        self.opt.step(&mut p, &grads.flatten());
        self.net.set_flat_params(&p)?;
        self.updates += 1;
        Ok(loss)
    }
}

/// `loss = -mean_i (phi(next_i) - phi(obs_i))^T z_i` and its exact gradient.
pub fn phi_loss_and_grads(
    repr: &ReprNet,
    obs: ArrayView2<f64>,
    next_obs: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    let n = obs.nrows();
    if n == 0 {
        return Err(SlimError::InvalidArgument("empty phi batch".into()));
    }
    SlimError::check_dim(n, next_obs.nrows())?;
    SlimError::check_dim(n, z.nrows())?;
    SlimError::check_dim(repr.skill_dim(), z.ncols())?;
    let net = &repr.net;
    let c0 = net.forward_cached(obs)?;
    let c1 = net.forward_cached(next_obs)?;
    let diff = c1.output() - c0.output();
    let loss = -(&diff * &z).sum() / n as f64;
    let scaled = z.mapv(|v| v / n as f64);
    let (mut g, _) = net.backward_batch(&c1, scaled.mapv(|v| -v).view())?;
    let (g0, _) = net.backward_batch(&c0, scaled.view())?;
    g.add_assign(&g0);
    Ok((loss, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Network,
    opt: Adam,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], skill_dim: usize, lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(skill_dim);
        Self::from_network(Network::mlp(&sizes, 1.0, rng), lr)
    }

    pub fn from_network(net: Network, lr: f64) -> Self {
        let opt = Adam::new(net.param_count(), lr);
        Discriminator { net, opt }
    }

    pub fn skill_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Normalized predicted direction.
    pub fn direction(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let y = self.net.forward(obs)?;
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        Ok(y.into_iter().map(|v| v / n).collect())
    }

    pub fn rewards_batch(&self, obs: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        SlimError::check_dim(obs.nrows(), z.nrows())?;
        let y = self.net.forward_batch(obs)?;
        Ok(y.outer_iter()
            .zip(z.outer_iter())
            .map(|(yr, zr)| {
                let n = yr.dot(&yr).sqrt().max(NORM_FLOOR);
                yr.dot(&zr) / n
            })
            .collect())
    }
}

/// `mu_hat(obs)^T z`.
pub fn diayn_reward(disc: &Discriminator, obs: &[f64], z: &SkillVector) -> Result<f64> {
    let mu = disc.direction(obs)?;
    SlimError::check_dim(z.dim(), mu.len())?;
    Ok(z.dot(&mu))
}

/// `loss = -mean_i mu_hat(obs_i)^T z_i` and its exact gradient.
pub fn disc_loss_and_grads(
    disc: &Discriminator,
    obs: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    let n = obs.nrows();
    if n == 0 {
        return Err(SlimError::InvalidArgument("empty discriminator batch".into()));
    }
    SlimError::check_dim(n, z.nrows())?;
    SlimError::check_dim(disc.skill_dim(), z.ncols())?;
    let cache = disc.net.forward_cached(obs)?;
    let y = cache.output();
    let mut upstream = Array2::zeros(y.raw_dim());
    let mut mean_align = 0.0;
    for (i, (yr, zr)) in y.outer_iter().zip(z.outer_iter()).enumerate() {
        let norm = yr.dot(&yr).sqrt().max(NORM_FLOOR);
        let a = yr.dot(&zr) / norm;
        mean_align += a / n as f64;
        // d(-a)/dy = -(z - a mu_hat) / |y|
        for k in 0..yr.len() {
            upstream[[i, k]] = -(zr[k] - a * yr[k] / norm) / (norm * n as f64);
        }
    }
    let (grads, _) = disc.net.backward_batch(&cache, upstream.view())?;
    Ok((-mean_align, grads))
}

/// One Adam step (learning rate `lr`) increasing the mean alignment
/// `mu_hat(obs)^T z`. Returns the alignment before the step.
pub fn diayn_disc_update(disc: &mut Discriminator, obs: ArrayView2<f64>, z: ArrayView2<f64>, lr: f64) -> Result<f64> {
    let (loss, grads) = disc_loss_and_grads(disc, obs, z)?;
    let mut p = disc.net.flat_params();
    disc.opt.lr = lr;
    disc.opt.step(&mut p, &grads.flatten());
    disc.net.set_flat_params(&p)?;
    Ok(-loss)
}

/// Mean alignment over a batch without updating.
pub fn mean_alignment(disc: &Discriminator, obs: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<f64> {
    let r = disc.rewards_batch(obs, z)?;
    Ok(r.iter().sum::<f64>() / r.len().max(1) as f64)
}

/// Stack row vectors into a matrix.
pub fn stack_rows(rows: &[&[f64]]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut m = Array2::zeros((rows.len(), cols));
    for (mut dst, src) in m.axis_iter_mut(Axis(0)).zip(rows) {
        dst.as_slice_mut().unwrap().copy_from_slice(src);
    }
    m
}
