//! Non-equilibrium closure: damped flux moments of the non-resampled
//! sub-ensemble, moving-average filtering, and the diffusion-free limited
//! flux that corrects the moment update.

use rayon::prelude::*;

use crate::collision::CollisionWeights;
use crate::error::Result;
use crate::euler::{conservative_update, limited_difference_vec};
use crate::grid::{
    conserved_to_primitive, flux_from_state, DepositKernel, FilterWeights, Grid, MacroState,
};
use crate::math::{norm_sq3, Moments5};
use crate::particles::{deposit_triangle, CellBins, ParticleEnsemble};

fn flux_carried(v: [f64; 3]) -> Moments5 {
    Moments5 {
        mass: v[0],
        mom: [v[0] * v[0], v[0] * v[1], v[0] * v[2]],
        energy: v[0] * 0.5 * norm_sq3(v),
    }
}

/// Damped non-equilibrium flux moments per cell.
///
/// The particles that survived the collision sweep untouched (not drawn
/// fresh from the Maxwellian) represent the non-equilibrium remainder of
/// the distribution. Their plain-average flux moments, normalized to the
/// cell density and with the analytic Maxwellian flux of the matched state
/// subtracted, give the correction; the whole vector carries the collision
/// damping factor D = keep + gain, so it switches off identically in the
/// fluid limit (D underflows to exactly zero). Cells whose untouched
/// sub-ensemble is empty return the exact zero vector as well.
pub fn g_moments_damped(
    ens: &ParticleEnsemble,
    bins: &CellBins,
    grid: &Grid,
    matched: &MacroState,
    weights: &[CollisionWeights],
    kernel: DepositKernel,
    periodic: bool,
) -> Result<Vec<Moments5>> {
    debug_assert_eq!(bins.n_cells(), grid.n_cells);
    debug_assert_eq!(weights.len(), grid.n_cells);
    match kernel {
        DepositKernel::PiecewiseConstant => (0..grid.n_cells)
            .into_par_iter()
            .map(|j| {
                let d = weights[j].damping();
                if d == 0.0 {
                    return Ok(Moments5::ZERO);
                }
                let mut sum = Moments5::ZERO;
                let mut count = 0usize;
                for i in bins.range(j) {
                    if ens.resampled[i] {
                        continue;
                    }
                    sum += flux_carried(ens.vel[i]);
                    count += 1;
                }
                damped_cell(&sum, count as f64, d, &matched.cells[j], j)
            })
            .collect(),
        DepositKernel::NearestGridPoint => {
            let mut sums = vec![Moments5::ZERO; grid.n_cells];
            let mut counts = vec![0.0f64; grid.n_cells];
            for i in 0..ens.len() {
                if ens.resampled[i] {
                    continue;
                }
                let carried = flux_carried(ens.vel[i]);
                deposit_triangle(grid, periodic, ens.x[i], |cell, share| {
                    sums[cell] += share * carried;
                    counts[cell] += share;
                });
            }
            (0..grid.n_cells)
                .map(|j| {
                    let d = weights[j].damping();
                    if d == 0.0 {
                        return Ok(Moments5::ZERO);
                    }
                    damped_cell(&sums[j], counts[j], d, &matched.cells[j], j)
                })
                .collect()
        }
    }
}

fn damped_cell(
    sum: &Moments5,
    count: f64,
    damping: f64,
    matched: &Moments5,
    cell: usize,
) -> Result<Moments5> {
    if count <= 0.0 {
        return Ok(Moments5::ZERO);
    }
    let prim = conserved_to_primitive(matched, cell)?;
    let estimate = (matched.mass / count) * *sum;
    let analytic = flux_from_state(matched, &prim);
    Ok(damping * (estimate - analytic))
}

/// Weighted moving average of a per-cell field. Ghost values wrap under
/// periodic boundaries and copy the edge cell otherwise; with unit weights
/// of half-width zero this is the identity.
pub fn moving_average(field: &[Moments5], filter: &FilterWeights, periodic: bool) -> Vec<Moments5> {
    let n = field.len() as isize;
    let k = filter.half_width() as isize;
    let w = filter.weights();
    (0..n)
        .map(|j| {
            let mut acc = Moments5::ZERO;
            for (i, &omega) in w.iter().enumerate() {
                let offset = i as isize - k;
                let mut src = j - offset;
                if periodic {
                    src = src.rem_euclid(n);
                } else {
                    src = src.clamp(0, n - 1);
                }
                acc += omega * field[src as usize];
            }
            acc
        })
        .collect()
}

/// Interface fluxes of the filtered non-equilibrium field: the plain
/// two-point average plus the limited second-order correction, with no
/// added numerical diffusion. A field of exact zeros yields exact zeros.
pub fn noneq_flux_interfaces(filtered: &[Moments5], periodic: bool) -> Vec<Moments5> {
    let n = filtered.len();
    let mut ext = Vec::with_capacity(n + 4);
    if periodic {
        ext.push(filtered[n - 2]);
        ext.push(filtered[n - 1]);
        ext.extend_from_slice(filtered);
        ext.push(filtered[0]);
        ext.push(filtered[1]);
    } else {
        ext.push(filtered[0]);
        ext.push(filtered[0]);
        ext.extend_from_slice(filtered);
        ext.push(filtered[n - 1]);
        ext.push(filtered[n - 1]);
    }
    (0..=n)
        .map(|i| {
            let l = i + 1;
            let r = i + 2;
            let central = 0.5 * (ext[l] + ext[r]);
            let correction = limited_difference_vec(&ext, l) - limited_difference_vec(&ext, r);
            central + 0.25 * correction
        })
        .collect()
}

/// Second stage of the moment update: apply the non-equilibrium correction
/// fluxes to the intermediate state from the equilibrium step.
pub fn moment_update_stage2(
    state_star: &MacroState,
    dt: f64,
    dx: f64,
    fluxes: &[Moments5],
) -> Result<MacroState> {
    conservative_update(state_star, dt / dx, fluxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{collide_all, CellTarget};
    use crate::grid::primitive_to_conserved;
    use crate::particles::{bin_and_sort, init_from_macro};
    use approx::assert_relative_eq;

    fn zero_field(n: usize) -> Vec<Moments5> {
        vec![Moments5::ZERO; n]
    }

    #[test]
    fn fluid_limit_closure_is_exactly_zero() {
        let grid = Grid::new(10, 0.0, 1.0).unwrap();
        let state = MacroState::uniform(10, primitive_to_conserved(1.0, [0.0; 3], 1.0).unwrap());
        let (mut ens, _) = init_from_macro(&state, &grid, 50, 3).unwrap();
        let bins = bin_and_sort(&mut ens, &grid);
        let w = vec![CollisionWeights::from_lambda(f64::INFINITY); 10];
        let g = g_moments_damped(
            &ens,
            &bins,
            &grid,
            &state,
            &w,
            DepositKernel::PiecewiseConstant,
            true,
        )
        .unwrap();
        for m in &g {
            assert!(m.is_exactly_zero());
        }
        // huge but finite lambda underflows the same way
        let w = vec![CollisionWeights::new(1.0, 1.0, 1e-9).unwrap(); 10];
        assert_eq!(w[0].damping(), 0.0);
        let g = g_moments_damped(
            &ens,
            &bins,
            &grid,
            &state,
            &w,
            DepositKernel::PiecewiseConstant,
            true,
        )
        .unwrap();
        assert!(g.iter().all(|m| m.is_exactly_zero()));
    }

    #[test]
    fn equilibrium_closure_has_zero_mean() {
        // a matched equilibrium ensemble at lambda = 0 (nothing resampled):
        // the closure is pure sampling noise with zero expectation. Average
        // over seeds and check a 4 sigma CLT band on the mass component.
        let grid = Grid::new(1, 0.0, 1.0).unwrap();
        let state = MacroState::uniform(1, primitive_to_conserved(1.0, [0.0; 3], 1.0).unwrap());
        let w = vec![CollisionWeights::new(1.0, 1e-12, 1.0).unwrap()];
        assert!((w[0].damping() - 1.0).abs() < 1e-9);
        let n_per = 10_000;
        let n_seeds = 32;
        let mut means = Vec::new();
        for seed in 0..n_seeds {
            let (mut ens, _) = init_from_macro(&state, &grid, n_per, 1000 + seed).unwrap();
            let bins = bin_and_sort(&mut ens, &grid);
            let g = g_moments_damped(
                &ens,
                &bins,
                &grid,
                &state,
                &w,
                DepositKernel::PiecewiseConstant,
                true,
            )
            .unwrap();
            means.push(g[0].mass);
        }
        let mean = means.iter().sum::<f64>() / n_seeds as f64;
        // per-seed std of the mass-flux mean is sqrt(T/N) = 0.01
        let sigma = (1.0f64 / n_per as f64).sqrt() / (n_seeds as f64).sqrt();
        assert!(
            mean.abs() < 4.0 * sigma,
            "closure mass mean {mean} exceeds {}",
            4.0 * sigma
        );
    }

    #[test]
    fn strong_damping_shrinks_the_closure() {
        let grid = Grid::new(1, 0.0, 1.0).unwrap();
        let state = MacroState::uniform(
            1,
            primitive_to_conserved(1.0, [0.3, 0.0, 0.0], 1.0).unwrap(),
        );
        let (mut ens, _) = init_from_macro(&state, &grid, 5000, 9).unwrap();
        let bins = bin_and_sort(&mut ens, &grid);
        let lam = 50.0;
        let w = vec![CollisionWeights::from_lambda(lam)];
        let g = g_moments_damped(
            &ens,
            &bins,
            &grid,
            &state,
            &w,
            DepositKernel::PiecewiseConstant,
            true,
        )
        .unwrap();
        let d = 51.0 * (-50.0f64).exp();
        // the undamped bracket is order one, so the result is order D
        assert!(g[0].abs_max() < d * 1e3);
        assert!(g[0].abs_max() > 0.0);
    }

    #[test]
    fn closure_is_linear_in_damping() {
        let grid = Grid::new(4, 0.0, 1.0).unwrap();
        let state = MacroState::uniform(
            4,
            primitive_to_conserved(1.0, [0.2, 0.0, 0.0], 1.5).unwrap(),
        );
        let (mut ens, _) = init_from_macro(&state, &grid, 200, 5).unwrap();
        let bins = bin_and_sort(&mut ens, &grid);
        let lam_a = 0.7f64;
        let a = vec![CollisionWeights::from_lambda(lam_a); 4];
        // synthesize weights with exactly doubled damping
        let d = a[0].damping();
        let b = vec![
            CollisionWeights {
                lambda: lam_a,
                keep: 2.0 * d,
                gain: 0.0,
                resample: 1.0 - 2.0 * d,
            };
            4
        ];
        let ga = g_moments_damped(
            &ens,
            &bins,
            &grid,
            &state,
            &a,
            DepositKernel::PiecewiseConstant,
            true,
        )
        .unwrap();
        let gb = g_moments_damped(
            &ens,
            &bins,
            &grid,
            &state,
            &b,
            DepositKernel::PiecewiseConstant,
            true,
        )
        .unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            let xa = x.to_array();
            let ya = y.to_array();
            for c in 0..5 {
                assert_relative_eq!(2.0 * xa[c], ya[c], max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn resampled_particles_are_excluded() {
        // fully resampled cell (eps = 0 collision) leaves no g population
        let grid = Grid::new(2, 0.0, 1.0).unwrap();
        let state = MacroState::uniform(2, primitive_to_conserved(1.0, [0.0; 3], 1.0).unwrap());
        let (mut ens, _) = init_from_macro(&state, &grid, 100, 17).unwrap();
        let bins = bin_and_sort(&mut ens, &grid);
        let weights = vec![CollisionWeights::new(1.0, 1.0, 0.0).unwrap(); 2];
        let targets: Vec<Option<CellTarget>> = state
            .cells
            .iter()
            .map(|c| {
                let p = conserved_to_primitive(c, 0).unwrap();
                Some(CellTarget {
                    u: p.u,
                    temperature: p.temperature,
                })
            })
            .collect();
        collide_all(&mut ens, &bins, &targets, &weights, 0, 7);
        assert!(ens.resampled.iter().all(|&t| t));
        let g = g_moments_damped(
            &ens,
            &bins,
            &grid,
            &state,
            &weights,
            DepositKernel::PiecewiseConstant,
            true,
        )
        .unwrap();
        assert!(g.iter().all(|m| m.is_exactly_zero()));
    }

    #[test]
    fn filter_fixes_constant_fields() {
        let c = Moments5::new(0.3, [1.0, -2.0, 0.5], 4.0);
        let field = vec![c; 12];
        let out = moving_average(&field, &FilterWeights::standard(), true);
        for m in &out {
            let a = m.to_array();
            let b = c.to_array();
            for k in 0..5 {
                assert_relative_eq!(a[k], b[k], max_relative = 1e-15);
            }
        }
        let out = moving_average(&field, &FilterWeights::standard(), false);
        for m in &out {
            assert_relative_eq!(m.mass, 0.3, max_relative = 1e-15);
        }
    }

    #[test]
    fn filter_spreads_a_spike_by_the_weights() {
        let mut field = zero_field(9);
        field[4] = Moments5::new(1.0, [0.0; 3], 0.0);
        let out = moving_average(&field, &FilterWeights::standard(), true);
        assert_relative_eq!(out[3].mass, 1.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(out[4].mass, 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(out[5].mass, 1.0 / 6.0, max_relative = 1e-15);
        assert_eq!(out[6].mass, 0.0);
        // total is preserved by a unit-sum filter under wrap-around
        let total: f64 = out.iter().map(|m| m.mass).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn identity_filter_is_bitwise() {
        let mut field = zero_field(5);
        field[2] = Moments5::new(0.1, [0.2, 0.3, 0.4], 0.5);
        let out = moving_average(&field, &FilterWeights::identity(), false);
        for (a, b) in out.iter().zip(&field) {
            assert_eq!(a.to_array(), b.to_array());
        }
    }

    #[test]
    fn filter_never_grows_the_max_norm() {
        let mut field = zero_field(16);
        for (j, m) in field.iter_mut().enumerate() {
            m.mass = ((j * 37 + 5) % 11) as f64 - 5.0;
        }
        let peak = field.iter().map(|m| m.abs_max()).fold(0.0, f64::max);
        for periodic in [true, false] {
            let out = moving_average(&field, &FilterWeights::standard(), periodic);
            let out_peak = out.iter().map(|m| m.abs_max()).fold(0.0, f64::max);
            assert!(out_peak <= peak + 1e-14);
        }
    }

    #[test]
    fn edge_ghosts_copy_the_edge_value() {
        let mut field = zero_field(4);
        field[0] = Moments5::new(6.0, [0.0; 3], 0.0);
        let out = moving_average(&field, &FilterWeights::standard(), false);
        // ghost copy: cell 0 sees (ghost=6, self=6, right=0)
        assert_relative_eq!(out[0].mass, 5.0, max_relative = 1e-14);
        let wrapped = moving_average(&field, &FilterWeights::standard(), true);
        assert_relative_eq!(wrapped[0].mass, 4.0, max_relative = 1e-14);
        assert_relative_eq!(wrapped[3].mass, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_field_gives_exactly_zero_fluxes() {
        let field = zero_field(8);
        for periodic in [true, false] {
            let psi = noneq_flux_interfaces(&field, periodic);
            assert_eq!(psi.len(), 9);
            assert!(psi.iter().all(|m| m.is_exactly_zero()));
        }
    }

    #[test]
    fn uniform_field_passes_through() {
        let c = Moments5::new(0.7, [0.1, 0.0, -0.4], 2.0);
        let field = vec![c; 6];
        let psi = noneq_flux_interfaces(&field, false);
        for p in &psi {
            let a = p.to_array();
            let b = c.to_array();
            for k in 0..5 {
                assert_relative_eq!(a[k], b[k], max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn interface_fluxes_match_small_array_oracle() {
        // direct evaluation of the flux formula on a 6-cell ramp-with-kink,
        // copy-edge ghosts
        let vals = [0.0, 1.0, 2.0, 4.0, 4.5, 4.0];
        let field: Vec<Moments5> = vals
            .iter()
            .map(|&v| Moments5::new(v, [0.0; 3], 0.0))
            .collect();
        let psi = noneq_flux_interfaces(&field, false);

        let phi = |chi: f64| {
            if chi <= 0.0 {
                0.0
            } else {
                2.0 * chi / (1.0 + chi)
            }
        };
        let ext: [f64; 10] = [0.0, 0.0, 0.0, 1.0, 2.0, 4.0, 4.5, 4.0, 4.0, 4.0];
        let sigma = |k: usize| {
            let numer = ext[k] - ext[k - 1];
            let denom = ext[k + 1] - ext[k];
            if denom.abs() <= 1e-12 * (1.0 + numer.abs()) {
                0.0
            } else {
                denom * phi(numer / denom)
            }
        };
        for i in 0..=6usize {
            let l = i + 1;
            let r = i + 2;
            let expect = 0.5 * (ext[l] + ext[r]) + 0.25 * (sigma(l) - sigma(r));
            assert_relative_eq!(psi[i].mass, expect, max_relative = 1e-14, epsilon = 1e-14);
        }
    }

    #[test]
    fn stage2_with_zero_flux_is_bitwise_identity() {
        let state = MacroState::uniform(
            6,
            primitive_to_conserved(1.0, [0.5, 0.0, 0.0], 2.0).unwrap(),
        );
        let psi = zero_field(7);
        let out = moment_update_stage2(&state, 1e-3, 0.1, &psi).unwrap();
        for (a, b) in out.cells.iter().zip(&state.cells) {
            let x = a.to_array();
            let y = b.to_array();
            for c in 0..5 {
                assert_eq!(x[c].to_bits(), y[c].to_bits());
            }
        }
    }

    #[test]
    fn stage2_conserves_totals_periodically() {
        let mut field = zero_field(9);
        for (j, m) in field.iter_mut().enumerate() {
            let x = j as f64 / 9.0;
            let tau = std::f64::consts::TAU;
            *m = Moments5::new(
                0.01 * (tau * x).sin(),
                [0.02 * (tau * x).cos(), 0.0, 0.0],
                0.005 * (2.0 * tau * x).sin(),
            );
        }
        let filtered = moving_average(&field, &FilterWeights::standard(), true);
        let psi = noneq_flux_interfaces(&filtered, true);
        let first = psi[0].to_array();
        let last = psi[9].to_array();
        for c in 0..5 {
            assert_relative_eq!(first[c], last[c], max_relative = 1e-13, epsilon = 1e-16);
        }
        let state = MacroState::uniform(9, primitive_to_conserved(1.0, [0.0; 3], 1.0).unwrap());
        let out = moment_update_stage2(&state, 1e-3, 1.0 / 9.0, &psi).unwrap();
        let before = state.total().to_array();
        let after = out.total().to_array();
        for c in 0..5 {
            assert_relative_eq!(before[c], after[c], max_relative = 1e-12, epsilon = 1e-12);
        }
    }
}
