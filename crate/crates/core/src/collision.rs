//! Collision step for Maxwell molecules, realized per cell as a
//! three-outcome Monte Carlo sweep.
//!
//! Over one step of length dt the velocity distribution relaxes as an
//! exponentially weighted combination of its previous value, one round of
//! binary collisions, and the local Maxwellian. With lambda = mu dt / eps
//! the weights are keep = exp(-lambda), gain = lambda exp(-lambda) and
//! resample = 1 - keep - gain.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{add3, norm_sq3, scale3, sub3};
use crate::particles::{maxwellian_draw, per_cell_mut, CellBins, ParticleEnsemble};
use crate::rng::{purpose, stream};

/// Collision kernel parameters. Only the Maxwell-molecule case (exponent
/// gamma = 0, where the collision frequency is velocity-independent) is
/// implemented; other exponents are rejected at validation.
#[derive(Clone, Copy, Debug)]
pub struct CollisionModel {
    pub gamma: f64,
    pub sigma: f64,
}

impl CollisionModel {
    pub fn maxwell() -> CollisionModel {
        CollisionModel {
            gamma: 0.0,
            sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "only Maxwell molecules (gamma = 0) are supported, got gamma = {}",
                self.gamma
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::NonPositive {
                what: "collision cross-section",
                value: self.sigma,
            });
        }
        Ok(())
    }
}

/// How the collision frequency prefactor mu depends on the local state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MuRule {
    /// mu = rho, the Maxwell-molecule loss rate.
    #[default]
    LocalDensity,
}

impl MuRule {
    pub fn mu(&self, rho: f64) -> f64 {
        match self {
            MuRule::LocalDensity => rho,
        }
    }
}

/// Outcome probabilities of one collision step.
#[derive(Clone, Copy, Debug)]
pub struct CollisionWeights {
    pub lambda: f64,
    /// Probability of keeping the pre-step velocity.
    pub keep: f64,
    /// Probability of one binary collision against the frozen ensemble.
    pub gain: f64,
    /// Probability of a fresh draw from the local Maxwellian.
    pub resample: f64,
}

impl CollisionWeights {
    /// Weights for lambda = mu dt / eps; eps = 0 selects the fluid limit
    /// (lambda = inf, every particle resampled).
    pub fn new(mu: f64, dt: f64, eps: f64) -> Result<CollisionWeights> {
        if !(mu >= 0.0) || !(dt >= 0.0) || !(eps >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "collision weights need mu, dt, eps >= 0 (got {mu}, {dt}, {eps})"
            )));
        }
        if eps == 0.0 {
            return Ok(CollisionWeights::from_lambda(f64::INFINITY));
        }
        Ok(CollisionWeights::from_lambda(mu * dt / eps))
    }

    pub fn from_lambda(lambda: f64) -> CollisionWeights {
        assert!(lambda >= 0.0, "lambda must be non-negative");
        if lambda.is_infinite() {
            return CollisionWeights {
                lambda,
                keep: 0.0,
                gain: 0.0,
                resample: 1.0,
            };
        }
        let keep = (-lambda).exp();
        let gain = lambda * keep;
        // exp(-lambda)(1 + lambda) <= 1, so the remainder is non-negative up
        // to rounding; clamp the last ulp.
        let resample = (1.0 - keep - gain).max(0.0);
        CollisionWeights {
            lambda,
            keep,
            gain,
            resample,
        }
    }

    /// Survival probability of the pre-collision information; also the
    /// damping applied to the non-equilibrium moments.
    pub fn damping(&self) -> f64 {
        self.keep + self.gain
    }
}

/// Operation-style alias for building the weights.
pub fn collision_weights(mu: f64, dt: f64, eps: f64) -> Result<CollisionWeights> {
    CollisionWeights::new(mu, dt, eps)
}

/// Post-collision velocity for the pair (v, v_star) scattering into
/// direction n (unit vector): midpoint plus half the relative speed along n.
pub fn gain_sample(v: [f64; 3], v_star: [f64; 3], n: [f64; 3]) -> [f64; 3] {
    let mid = scale3(add3(v, v_star), 0.5);
    let half_gap = 0.5 * norm_sq3(sub3(v, v_star)).sqrt();
    add3(mid, scale3(n, half_gap))
}

/// Uniform direction on the unit sphere: cos(theta) uniform in [-1, 1],
/// azimuth uniform in [0, 2 pi).
fn unit_sphere(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let c: f64 = 1.0 - 2.0 * rng.gen::<f64>();
    let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    let s = (1.0 - c * c).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), c]
}

/// Per-cell outcome counts of one collision sweep.
#[derive(Clone, Copy, Debug, Default)]
pub struct CollideStats {
    pub kept: usize,
    pub gained: usize,
    pub resampled: usize,
    /// Gain branch hit in a single-particle cell; degrades to keep.
    pub singleton_gain: usize,
}

impl CollideStats {
    pub fn merge(&mut self, other: &CollideStats) {
        self.kept += other.kept;
        self.gained += other.gained;
        self.resampled += other.resampled;
        self.singleton_gain += other.singleton_gain;
    }
}

/// One collision sweep over a cell. Every new velocity is computed from the
/// frozen pre-step snapshot, so the update is independent of particle order.
/// Tags are set to true exactly for the resampled particles.
pub fn collide_cell(
    vel: &mut [[f64; 3]],
    tags: &mut [bool],
    u_cell: [f64; 3],
    t_cell: f64,
    weights: &CollisionWeights,
    rng: &mut ChaCha8Rng,
) -> CollideStats {
    let n = vel.len();
    let mut stats = CollideStats::default();
    if n == 0 {
        return stats;
    }
    let frozen: Vec<[f64; 3]> = vel.to_vec();
    let sqrt_t = t_cell.sqrt();
    for i in 0..n {
        let r: f64 = rng.gen();
        if r < weights.keep {
            vel[i] = frozen[i];
            tags[i] = false;
            stats.kept += 1;
        } else if r < weights.keep + weights.gain {
            if n == 1 {
                vel[i] = frozen[i];
                tags[i] = false;
                stats.singleton_gain += 1;
            } else {
                let mut partner = rng.gen_range(0..n - 1);
                if partner >= i {
                    partner += 1;
                }
                let dir = unit_sphere(rng);
                vel[i] = gain_sample(frozen[i], frozen[partner], dir);
                tags[i] = false;
                stats.gained += 1;
            }
        } else {
            vel[i] = maxwellian_draw(u_cell, sqrt_t, rng);
            tags[i] = true;
            stats.resampled += 1;
        }
    }
    stats
}

/// Equilibrium parameters a cell collides against.
#[derive(Clone, Copy, Debug)]
pub struct CellTarget {
    pub u: [f64; 3],
    pub temperature: f64,
}

/// Collide every cell in parallel. `targets[j] = None` skips cell j (empty
/// or degenerate); each cell draws from its own (step, cell) stream.
pub fn collide_all(
    ens: &mut ParticleEnsemble,
    bins: &CellBins,
    targets: &[Option<CellTarget>],
    weights: &[CollisionWeights],
    step: usize,
    seed: u64,
) -> Vec<CollideStats> {
    let cells = per_cell_mut(bins, &mut ens.vel, &mut ens.weight, &mut ens.resampled);
    cells
        .into_par_iter()
        .map(|cell| match targets[cell.index] {
            Some(target) => {
                let mut rng = stream(seed, &[purpose::COLLIDE, step as u64, cell.index as u64]);
                collide_cell(
                    cell.vel,
                    cell.tags,
                    target.u,
                    target.temperature,
                    &weights[cell.index],
                    &mut rng,
                )
            }
            None => CollideStats::default(),
        })
        .collect()
}
