//! Weighted particle ensemble: Maxwellian sampling, free transport with
//! boundary handling, cell binning and moment reconstruction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{conserved_to_primitive, DepositKernel, Grid, MacroState};
use crate::math::{norm_sq3, Moments5};
use crate::rng::{purpose, stream};
use crate::scenario::{BoundaryKind, ReservoirState};

/// Particle arrays (structure-of-arrays layout). Positions are 1D; the
/// velocities keep all three components. `weight` holds the per-particle
/// statistical weights alpha_i; a unit-weight particle carries `mass_unit`.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub x: Vec<f64>,
    pub vel: Vec<[f64; 3]>,
    pub weight: Vec<f64>,
    /// Set by the collision step: true for particles drawn fresh from the
    /// local Maxwellian in the latest sweep.
    pub resampled: Vec<bool>,
    pub mass_unit: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// One velocity from the Maxwellian with mean `u` and temperature
/// `sqrt_t^2` (the caller passes sqrt(T) so hot loops take the root once).
pub fn maxwellian_draw(u: [f64; 3], sqrt_t: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let gx: f64 = rng.sample(StandardNormal);
    let gy: f64 = rng.sample(StandardNormal);
    let gz: f64 = rng.sample(StandardNormal);
    [u[0] + sqrt_t * gx, u[1] + sqrt_t * gy, u[2] + sqrt_t * gz]
}

/// `count` independent Maxwellian velocities.
pub fn sample_maxwellian(
    u: [f64; 3],
    temperature: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 3]>> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositive {
            what: "temperature",
            value: temperature,
        });
    }
    let st = temperature.sqrt();
    Ok((0..count).map(|_| maxwellian_draw(u, st, rng)).collect())
}

/// Integer cell counts proportional to the cell masses (largest-remainder
/// rounding, ties broken by cell index).
fn allocate_counts(masses: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = masses.iter().sum();
    let mut counts = Vec::with_capacity(masses.len());
    let mut remainders = Vec::with_capacity(masses.len());
    let mut assigned = 0usize;
    for (j, &m) in masses.iter().enumerate() {
        let quota = total as f64 * m / sum;
        let floor = quota.floor() as usize;
        counts.push(floor);
        remainders.push((quota - floor as f64, j));
        assigned += floor;
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..total.saturating_sub(assigned) {
        counts[remainders[k % remainders.len()].1] += 1;
    }
    counts
}

/// Sample an ensemble from the macroscopic field: per-cell counts
/// proportional to the cell mass, positions uniform in the cell, velocities
/// from the cell Maxwellian, and weights chosen so the reconstructed
/// density matches the field exactly. Cells left without particles are
/// reported back for the caller to warn about.
pub fn init_from_macro(
    state: &MacroState,
    grid: &Grid,
    particles_per_cell: usize,
    seed: u64,
) -> Result<(ParticleEnsemble, Vec<usize>)> {
    if state.n_cells() != grid.n_cells {
        return Err(Error::GridMismatch {
            expected: grid.n_cells,
            got: state.n_cells(),
        });
    }
    if particles_per_cell == 0 {
        return Err(Error::InvalidConfig(
            "particles-per-cell must be at least 1".into(),
        ));
    }
    let n_total = particles_per_cell * grid.n_cells;
    let masses: Vec<f64> = state.cells.iter().map(|c| c.mass).collect();
    let counts = allocate_counts(&masses, n_total);
    let total_mass: f64 = masses.iter().sum::<f64>() * grid.dx;
    let mass_unit = total_mass / n_total as f64;

    let mut x = Vec::with_capacity(n_total);
    let mut vel = Vec::with_capacity(n_total);
    let mut weight = Vec::with_capacity(n_total);
    let mut empty_cells = Vec::new();
    for (j, cell) in state.cells.iter().enumerate() {
        let n_j = counts[j];
        if n_j == 0 {
            empty_cells.push(j);
            continue;
        }
        let prim = conserved_to_primitive(cell, j)?;
        let alpha = cell.mass * grid.dx / (mass_unit * n_j as f64);
        let mut rng = stream(seed, &[purpose::INIT, j as u64]);
        let left = grid.x_min + j as f64 * grid.dx;
        let st = prim.temperature.sqrt();
        for _ in 0..n_j {
            x.push(left + rng.gen::<f64>() * grid.dx);
            vel.push(maxwellian_draw(prim.u, st, &mut rng));
            weight.push(alpha);
        }
    }
    let n = x.len();
    Ok((
        ParticleEnsemble {
            x,
            vel,
            weight,
            resampled: vec![false; n],
            mass_unit,
        },
        empty_cells,
    ))
}

/// Free transport by one step, then boundary rules. Periodic particles
/// wrap, specular walls reflect the position and flip v_x, and reservoir
/// boundaries replace the escaped particle with one sampled from the
/// reservoir Maxwellian entering through the face at a uniformly chosen
/// remaining fraction of the step. Weights are never changed here.
pub fn transport(
    ens: &mut ParticleEnsemble,
    grid: &Grid,
    dt: f64,
    left: &BoundaryKind,
    right: &BoundaryKind,
    step: usize,
    seed: u64,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::NonPositive {
            what: "dt",
            value: dt,
        });
    }
    let length = grid.length();
    let (x_min, x_max) = (grid.x_min, grid.x_max);
    ens.x
        .par_iter_mut()
        .zip(ens.vel.par_iter_mut())
        .enumerate()
        .try_for_each(|(slot, (x, v))| {
            *x += v[0] * dt;
            if *x >= x_min && *x < x_max {
                return Ok(());
            }
            if *x < x_min - length || *x > x_max + length {
                return Err(Error::TimeStepTooLarge {
                    particle: slot,
                    x: *x,
                });
            }
            // The replacement stream is shared across repeated boundary hits
            // of this slot so a retry draws fresh numbers.
            let mut inflow_rng: Option<ChaCha8Rng> = None;
            let mut bounces = 0;
            while !(*x >= x_min && *x < x_max) {
                bounces += 1;
                if bounces > 8 {
                    return Err(Error::TimeStepTooLarge {
                        particle: slot,
                        x: *x,
                    });
                }
                if *x < x_min {
                    match left {
                        BoundaryKind::Periodic => *x += length,
                        BoundaryKind::SpecularWall => {
                            *x = 2.0 * x_min - *x;
                            v[0] = -v[0];
                        }
                        BoundaryKind::InflowReservoir(res) | BoundaryKind::FixedState(res) => {
                            let rng = inflow_rng.get_or_insert_with(|| {
                                stream(seed, &[purpose::INFLOW, step as u64, slot as u64])
                            });
                            reservoir_replace(x, v, res, x_min, 1.0, dt, rng)?;
                        }
                    }
                } else {
                    match right {
                        BoundaryKind::Periodic => *x -= length,
                        BoundaryKind::SpecularWall => {
                            *x = 2.0 * x_max - *x;
                            v[0] = -v[0];
                        }
                        BoundaryKind::InflowReservoir(res) | BoundaryKind::FixedState(res) => {
                            let rng = inflow_rng.get_or_insert_with(|| {
                                stream(seed, &[purpose::INFLOW, step as u64, slot as u64])
                            });
                            reservoir_replace(x, v, res, x_max, -1.0, dt, rng)?;
                        }
                    }
                }
            }
            Ok(())
        })
}

/// Replace an escaped particle: velocity from the reservoir Maxwellian
/// conditioned on entering through the face (x-component sign `sign`),
/// position a uniform fraction of the step inside.
fn reservoir_replace(
    x: &mut f64,
    v: &mut [f64; 3],
    res: &ReservoirState,
    face: f64,
    sign: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let frac: f64 = rng.gen();
    let st = res.temperature.sqrt();
    let mut vx;
    let mut tries = 0;
    loop {
        let g: f64 = rng.sample(StandardNormal);
        vx = res.u[0] + st * g;
        if vx * sign > 0.0 {
            break;
        }
        tries += 1;
        if tries > 10_000 {
            return Err(Error::InvalidConfig(
                "reservoir flow points out of the domain; no entering velocities found".into(),
            ));
        }
    }
    let gy: f64 = rng.sample(StandardNormal);
    let gz: f64 = rng.sample(StandardNormal);
    *v = [vx, res.u[1] + st * gy, res.u[2] + st * gz];
    *x = face + vx * frac * dt;
    Ok(())
}

/// Contiguous per-cell layout after sorting: cell j owns indices
/// starts[j]..starts[j+1].
#[derive(Clone, Debug)]
pub struct CellBins {
    starts: Vec<usize>,
}

impl CellBins {
    pub fn n_cells(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn range(&self, cell: usize) -> std::ops::Range<usize> {
        self.starts[cell]..self.starts[cell + 1]
    }

    pub fn count(&self, cell: usize) -> usize {
        self.starts[cell + 1] - self.starts[cell]
    }
}

/// Stable counting sort of the ensemble by cell. Within a cell, particles
/// keep their previous relative order, which fixes the summation order of
/// every later per-cell reduction.
pub fn bin_and_sort(ens: &mut ParticleEnsemble, grid: &Grid) -> CellBins {
    let n = ens.len();
    let nc = grid.n_cells;
    let mut cell_of = vec![0usize; n];
    cell_of
        .par_iter_mut()
        .zip(ens.x.par_iter())
        .for_each(|(c, &x)| *c = grid.cell_of(x));

    let mut starts = vec![0usize; nc + 1];
    for &c in &cell_of {
        starts[c + 1] += 1;
    }
    for j in 0..nc {
        let next = starts[j + 1] + starts[j];
        starts[j + 1] = next;
    }

    let mut cursor = starts[..nc].to_vec();
    let mut x = vec![0.0; n];
    let mut vel = vec![[0.0; 3]; n];
    let mut weight = vec![0.0; n];
    let mut resampled = vec![false; n];
    for i in 0..n {
        let dst = cursor[cell_of[i]];
        cursor[cell_of[i]] += 1;
        x[dst] = ens.x[i];
        vel[dst] = ens.vel[i];
        weight[dst] = ens.weight[i];
        resampled[dst] = ens.resampled[i];
    }
    ens.x = x;
    ens.vel = vel;
    ens.weight = weight;
    ens.resampled = resampled;
    CellBins { starts }
}

/// Mutable views of one cell's particles.
pub struct CellSlices<'a> {
    pub index: usize,
    pub vel: &'a mut [[f64; 3]],
    pub weight: &'a mut [f64],
    pub tags: &'a mut [bool],
}

/// Split the ensemble into disjoint per-cell mutable slices (requires the
/// sorted layout from `bin_and_sort`); the slices can be processed in
/// parallel.
pub fn per_cell_mut<'a>(
    bins: &CellBins,
    vel: &'a mut [[f64; 3]],
    weight: &'a mut [f64],
    tags: &'a mut [bool],
) -> Vec<CellSlices<'a>> {
    let mut out = Vec::with_capacity(bins.n_cells());
    let mut v = vel;
    let mut w = weight;
    let mut t = tags;
    for j in 0..bins.n_cells() {
        let len = bins.count(j);
        let (v_head, v_tail) = v.split_at_mut(len);
        let (w_head, w_tail) = w.split_at_mut(len);
        let (t_head, t_tail) = t.split_at_mut(len);
        v = v_tail;
        w = w_tail;
        t = t_tail;
        out.push(CellSlices {
            index: j,
            vel: v_head,
            weight: w_head,
            tags: t_head,
        });
    }
    out
}

/// Moment field estimated from particles. `moments[j]` holds
/// (rho, rho u, rho e) for cell j and is zero where `empty[j]` is set.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub moments: Vec<Moments5>,
    pub empty: Vec<bool>,
}

impl Reconstruction {
    pub fn n_empty(&self) -> usize {
        self.empty.iter().filter(|&&e| e).count()
    }

    /// Mean velocity and specific energy of one cell, if populated.
    pub fn velocity_energy(&self, cell: usize) -> Option<([f64; 3], f64)> {
        if self.empty[cell] {
            return None;
        }
        let m = &self.moments[cell];
        let inv = 1.0 / m.mass;
        Some((
            [m.mom[0] * inv, m.mom[1] * inv, m.mom[2] * inv],
            m.energy * inv,
        ))
    }

    /// The field as a macroscopic state; fails on the first empty cell.
    pub fn macro_state(&self) -> Result<MacroState> {
        if let Some(cell) = self.empty.iter().position(|&e| e) {
            return Err(Error::EmptyCell { cell });
        }
        Ok(MacroState {
            cells: self.moments.clone(),
        })
    }
}

/// Weighted moments of the ensemble on the grid. The density carries the
/// 1/dx cell-volume normalization; velocity and specific energy are
/// weighted means; E is rho times the mean specific energy. Sums run in
/// particle-index order so results are reproducible bit for bit.
pub fn reconstruct_moments(
    ens: &ParticleEnsemble,
    grid: &Grid,
    bins: &CellBins,
    kernel: DepositKernel,
    periodic: bool,
) -> Reconstruction {
    match kernel {
        DepositKernel::PiecewiseConstant => {
            let cells: Vec<(Moments5, bool)> = (0..grid.n_cells)
                .into_par_iter()
                .map(|j| {
                    let range = bins.range(j);
                    let mut w_sum = 0.0;
                    let mut m = Moments5::ZERO;
                    for i in range {
                        let w = ens.weight[i];
                        let v = ens.vel[i];
                        w_sum += w;
                        m.mom[0] += w * v[0];
                        m.mom[1] += w * v[1];
                        m.mom[2] += w * v[2];
                        m.energy += w * 0.5 * norm_sq3(v);
                    }
                    if w_sum <= 0.0 {
                        return (Moments5::ZERO, true);
                    }
                    let scale = ens.mass_unit / grid.dx;
                    m.mass = w_sum * scale;
                    m.mom = [m.mom[0] * scale, m.mom[1] * scale, m.mom[2] * scale];
                    m.energy *= scale;
                    (m, false)
                })
                .collect();
            let (moments, empty) = cells.into_iter().unzip();
            Reconstruction { moments, empty }
        }
        DepositKernel::NearestGridPoint => {
            let mut moments = vec![Moments5::ZERO; grid.n_cells];
            let mut w_sums = vec![0.0f64; grid.n_cells];
            for i in 0..ens.len() {
                deposit_triangle(grid, periodic, ens.x[i], |cell, share| {
                    let w = ens.weight[i] * share;
                    let v = ens.vel[i];
                    w_sums[cell] += w;
                    moments[cell].mom[0] += w * v[0];
                    moments[cell].mom[1] += w * v[1];
                    moments[cell].mom[2] += w * v[2];
                    moments[cell].energy += w * 0.5 * norm_sq3(v);
                });
            }
            let scale = ens.mass_unit / grid.dx;
            let mut empty = vec![false; grid.n_cells];
            for j in 0..grid.n_cells {
                if w_sums[j] <= 0.0 {
                    moments[j] = Moments5::ZERO;
                    empty[j] = true;
                } else {
                    moments[j].mass = w_sums[j] * scale;
                    moments[j].mom[0] *= scale;
                    moments[j].mom[1] *= scale;
                    moments[j].mom[2] *= scale;
                    moments[j].energy *= scale;
                }
            }
            Reconstruction { moments, empty }
        }
    }
}

/// Split a unit deposit between the two nearest cell centers (triangle of
/// half-width dx). Shares falling outside the grid wrap under periodic
/// boundaries and fold back onto the edge cell otherwise, so the total
/// deposited weight is always exactly the particle weight.
pub(crate) fn deposit_triangle(
    grid: &Grid,
    periodic: bool,
    x: f64,
    mut put: impl FnMut(usize, f64),
) {
    let jc = grid.cell_of(x);
    let d = (x - grid.cell_center(jc)) / grid.dx;
    let neighbor_share = d.abs().min(1.0);
    let neighbor = if d >= 0.0 {
        jc as isize + 1
    } else {
        jc as isize - 1
    };
    let nc = grid.n_cells as isize;
    let neighbor = if neighbor >= 0 && neighbor < nc {
        neighbor as usize
    } else if periodic {
        neighbor.rem_euclid(nc) as usize
    } else {
        jc
    };
    if neighbor == jc {
        put(jc, 1.0);
    } else {
        put(jc, 1.0 - neighbor_share);
        put(neighbor, neighbor_share);
    }
}
