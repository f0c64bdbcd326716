//! Per-cell moment matching: weight reassignment pins the density, an
//! affine velocity transform pins the mean velocity and specific energy.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{conserved_to_primitive, Grid, MacroState};
use crate::math::{norm_sq3, Moments5};
use crate::particles::{maxwellian_draw, per_cell_mut, CellBins, ParticleEnsemble, Reconstruction};
use crate::rng::{purpose, stream};

/// Relative spread below this floor counts as a degenerate (zero-spread)
/// cell, which is re-drawn from the target Maxwellian before transforming.
const SPREAD_FLOOR: f64 = 1e-14;

/// Give every particle of a cell the same weight so the reconstructed
/// density equals `rho_target` exactly. The particle count never changes.
pub fn match_mass(weights: &mut [f64], rho_target: f64, dx: f64, mass_unit: f64) {
    let alpha = rho_target * dx / (mass_unit * weights.len() as f64);
    weights.fill(alpha);
}

/// How the velocity moments of a cell were matched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VelocityMatch {
    /// The affine transform (V - mean)/c + u_target with the given scale.
    Affine { scale: f64 },
    /// The cell had no velocity spread; it was re-drawn from the target
    /// Maxwellian and then transformed, which is still exact.
    Resampled,
}

fn plain_mean_energy(vel: &[[f64; 3]]) -> ([f64; 3], f64) {
    let mut mean = [0.0f64; 3];
    let mut energy = 0.0f64;
    for v in vel {
        mean[0] += v[0];
        mean[1] += v[1];
        mean[2] += v[2];
        energy += 0.5 * norm_sq3(*v);
    }
    let inv = 1.0 / vel.len() as f64;
    ([mean[0] * inv, mean[1] * inv, mean[2] * inv], energy * inv)
}

fn affine_transform(vel: &mut [[f64; 3]], mean: [f64; 3], scale: f64, u_target: [f64; 3]) {
    let inv = 1.0 / scale;
    for v in vel.iter_mut() {
        for k in 0..3 {
            v[k] = (v[k] - mean[k]) * inv + u_target[k];
        }
    }
}

/// Transform the cell velocities so their plain mean is `u_target` and
/// their mean specific energy (half the mean squared speed) is `e_target`.
/// Needs at least two particles; the degenerate zero-spread case falls back
/// to a fresh Maxwellian draw (still matched exactly afterwards), with
/// `make_rng` supplying the stream only when that happens.
pub fn match_velocity_energy(
    vel: &mut [[f64; 3]],
    u_target: [f64; 3],
    e_target: f64,
    make_rng: impl FnOnce() -> ChaCha8Rng,
) -> Result<VelocityMatch> {
    let internal_target = e_target - 0.5 * norm_sq3(u_target);
    if !(internal_target > 0.0) {
        return Err(Error::NonPositive {
            what: "target internal energy",
            value: internal_target,
        });
    }
    debug_assert!(vel.len() >= 2);
    let (mean, energy) = plain_mean_energy(vel);
    let spread = energy - 0.5 * norm_sq3(mean);
    if spread > SPREAD_FLOOR * energy.abs() && spread > 0.0 {
        let scale = (spread / internal_target).sqrt();
        affine_transform(vel, mean, scale, u_target);
        return Ok(VelocityMatch::Affine { scale });
    }
    // Degenerate cell: draw fresh velocities at the target temperature,
    // then transform those so the moments still land exactly.
    let mut rng = make_rng();
    let t_target = 2.0 / 3.0 * internal_target;
    let st = t_target.sqrt();
    for v in vel.iter_mut() {
        *v = maxwellian_draw(u_target, st, &mut rng);
    }
    let (mean, energy) = plain_mean_energy(vel);
    let spread = energy - 0.5 * norm_sq3(mean);
    let scale = (spread / internal_target).sqrt();
    affine_transform(vel, mean, scale, u_target);
    Ok(VelocityMatch::Resampled)
}

fn weighted_mean_energy(vel: &[[f64; 3]], weight: &[f64]) -> ([f64; 3], f64) {
    let mut w_sum = 0.0f64;
    let mut mean = [0.0f64; 3];
    let mut energy = 0.0f64;
    for (v, &w) in vel.iter().zip(weight) {
        w_sum += w;
        mean[0] += w * v[0];
        mean[1] += w * v[1];
        mean[2] += w * v[2];
        energy += 0.5 * w * norm_sq3(*v);
    }
    let inv = 1.0 / w_sum;
    ([mean[0] * inv, mean[1] * inv, mean[2] * inv], energy * inv)
}

/// Weighted form of [`match_velocity_energy`]: afterwards the weight-averaged
/// velocity is `u_target` and the weight-averaged specific energy is
/// `e_target`, which is what cell conservation means when particle weights
/// differ. Used by the particle-only driver to renormalize collided cells.
pub fn match_velocity_energy_weighted(
    vel: &mut [[f64; 3]],
    weight: &[f64],
    u_target: [f64; 3],
    e_target: f64,
    make_rng: impl FnOnce() -> ChaCha8Rng,
) -> Result<VelocityMatch> {
    let internal_target = e_target - 0.5 * norm_sq3(u_target);
    if !(internal_target > 0.0) {
        return Err(Error::NonPositive {
            what: "target internal energy",
            value: internal_target,
        });
    }
    debug_assert!(vel.len() >= 2 && vel.len() == weight.len());
    let (mean, energy) = weighted_mean_energy(vel, weight);
    let spread = energy - 0.5 * norm_sq3(mean);
    if spread > SPREAD_FLOOR * energy.abs() && spread > 0.0 {
        let scale = (spread / internal_target).sqrt();
        affine_transform(vel, mean, scale, u_target);
        return Ok(VelocityMatch::Affine { scale });
    }
    let mut rng = make_rng();
    let st = (2.0 / 3.0 * internal_target).sqrt();
    for v in vel.iter_mut() {
        *v = maxwellian_draw(u_target, st, &mut rng);
    }
    let (mean, energy) = weighted_mean_energy(vel, weight);
    let spread = energy - 0.5 * norm_sq3(mean);
    let scale = (spread / internal_target).sqrt();
    affine_transform(vel, mean, scale, u_target);
    Ok(VelocityMatch::Resampled)
}

/// Matching outcome of one cell.
#[derive(Clone, Debug)]
pub struct CellMatch {
    /// Particle moments reconstructed before the match (absent for cells
    /// that had no particles).
    pub pre: Option<Moments5>,
    pub target: Moments5,
    /// Scale factor of the affine transform (absent for skipped, thin and
    /// resampled cells).
    pub scale: Option<f64>,
    /// No particles: nothing to match, the moment solver's value stands.
    pub skipped: bool,
    /// Exactly one particle: its velocity is pinned to the target mean but
    /// the energy cannot be represented.
    pub thin: bool,
    pub resampled: bool,
}

/// Per-step matching summary.
#[derive(Clone, Debug)]
pub struct MatchReport {
    pub cells: Vec<CellMatch>,
    pub skipped: usize,
    pub thin: usize,
    pub resampled_cells: usize,
    /// Largest relative deviation of the post-match cell moments from the
    /// targets, over all fully matched cells (density relative to the
    /// target density, velocity relative to the target thermal scale,
    /// energy relative to the target energy).
    pub max_rel_residual: f64,
}

/// Match every cell of the binned ensemble to the moment-solver state:
/// weights first (density), then the velocity transform (momentum and
/// energy). Cells without particles are skipped, single-particle cells are
/// pinned to the target velocity and flagged.
pub fn match_cells(
    ens: &mut ParticleEnsemble,
    bins: &CellBins,
    grid: &Grid,
    pre: &Reconstruction,
    targets: &MacroState,
    step: usize,
    seed: u64,
) -> Result<MatchReport> {
    if targets.n_cells() != grid.n_cells {
        return Err(Error::GridMismatch {
            expected: grid.n_cells,
            got: targets.n_cells(),
        });
    }
    let mass_unit = ens.mass_unit;
    let dx = grid.dx;
    let slices = per_cell_mut(bins, &mut ens.vel, &mut ens.weight, &mut ens.resampled);
    let cells: Vec<CellMatch> = slices
        .into_par_iter()
        .map(|cell| -> Result<CellMatch> {
            let j = cell.index;
            let target = targets.cells[j];
            let pre_moments = if pre.empty[j] {
                None
            } else {
                Some(pre.moments[j])
            };
            if cell.vel.is_empty() {
                return Ok(CellMatch {
                    pre: pre_moments,
                    target,
                    scale: None,
                    skipped: true,
                    thin: false,
                    resampled: false,
                });
            }
            let prim = conserved_to_primitive(&target, j)?;
            let e_target = target.energy / target.mass;
            match_mass(cell.weight, target.mass, dx, mass_unit);
            if cell.vel.len() == 1 {
                cell.vel[0] = prim.u;
                return Ok(CellMatch {
                    pre: pre_moments,
                    target,
                    scale: None,
                    skipped: false,
                    thin: true,
                    resampled: false,
                });
            }
            let outcome = match_velocity_energy(cell.vel, prim.u, e_target, || {
                stream(seed, &[purpose::MATCH_RESAMPLE, step as u64, j as u64])
            })?;
            let (scale, resampled) = match outcome {
                VelocityMatch::Affine { scale } => (Some(scale), false),
                VelocityMatch::Resampled => (None, true),
            };
            Ok(CellMatch {
                pre: pre_moments,
                target,
                scale,
                skipped: false,
                thin: false,
                resampled,
            })
        })
        .collect::<Result<_>>()?;

    // Residuals are computed from the matched ensemble in a second pass so
    // the check exercises exactly what reconstruction will see.
    let mut max_rel_residual = 0.0f64;
    for (j, cm) in cells.iter().enumerate() {
        if cm.skipped || cm.thin {
            continue;
        }
        let range = bins.range(j);
        let count = range.len() as f64;
        let mut w_sum = 0.0;
        let mut mean = [0.0f64; 3];
        let mut energy = 0.0f64;
        for i in range {
            w_sum += ens.weight[i];
            for k in 0..3 {
                mean[k] += ens.vel[i][k];
            }
            energy += 0.5 * norm_sq3(ens.vel[i]);
        }
        for m in &mut mean {
            *m /= count;
        }
        energy /= count;
        let rho = w_sum * mass_unit / dx;
        let target = &cm.target;
        let prim = conserved_to_primitive(target, j)?;
        let e_target = target.energy / target.mass;
        let vel_scale = e_target.sqrt();
        let mut r = (rho - target.mass).abs() / target.mass;
        for k in 0..3 {
            r = r.max((mean[k] - prim.u[k]).abs() / vel_scale);
        }
        r = r.max((energy - e_target).abs() / e_target);
        max_rel_residual = max_rel_residual.max(r);
    }

    let skipped = cells.iter().filter(|c| c.skipped).count();
    let thin = cells.iter().filter(|c| c.thin).count();
    let resampled_cells = cells.iter().filter(|c| c.resampled).count();
    Ok(MatchReport {
        cells,
        skipped,
        thin,
        resampled_cells,
        max_rel_residual,
    })
}
