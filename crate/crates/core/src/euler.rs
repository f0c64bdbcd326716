//! Second-order MUSCL central scheme with Rusanov diffusion and Van Leer
//! limiting for the equilibrium part of the moment equations.

use crate::error::Result;
use crate::grid::{conserved_to_primitive, flux_from_state, MacroState};
use crate::math::Moments5;
use crate::scenario::BoundaryKind;

/// A slope-ratio denominator below this (relative) floor is treated as a
/// 0/0 and the limiter falls back to first order for that component.
pub const SLOPE_RATIO_FLOOR: f64 = 1e-12;

/// Van Leer limiter (|chi| + chi)/(1 + chi): zero for non-positive ratios,
/// 2 chi/(1 + chi) otherwise, always in [0, 2).
pub fn van_leer(chi: f64) -> f64 {
    if chi <= 0.0 {
        0.0
    } else {
        2.0 * chi / (1.0 + chi)
    }
}

/// Limited forward difference of one component: (w_next - w_here) scaled by
/// the Van Leer limiter of the consecutive-difference ratio, with the 0/0
/// fallback to zero.
pub fn limited_difference(prev: f64, here: f64, next: f64) -> f64 {
    let denom = next - here;
    let numer = here - prev;
    if denom.abs() <= SLOPE_RATIO_FLOOR * (1.0 + numer.abs()) {
        return 0.0;
    }
    denom * van_leer(numer / denom)
}

/// Componentwise limited difference of a 5-vector field at index `k`.
pub(crate) fn limited_difference_vec(field: &[Moments5], k: usize) -> Moments5 {
    let prev = field[k - 1].to_array();
    let here = field[k].to_array();
    let next = field[k + 1].to_array();
    let mut out = [0.0; 5];
    for c in 0..5 {
        out[c] = limited_difference(prev[c], here[c], next[c]);
    }
    Moments5::from_array(out)
}

fn mirror_x(m: &Moments5) -> Moments5 {
    let mut out = *m;
    out.mom[0] = -out.mom[0];
    out
}

/// Extend the field with two ghost cells per side according to the boundary
/// policy: periodic wrap, reflective mirror (x-momentum negated), or the
/// reservoir state for inflow/fixed-state boundaries. The result has n + 4
/// entries; physical cell j sits at index j + 2.
pub fn ghost_states(
    state: &MacroState,
    left: &BoundaryKind,
    right: &BoundaryKind,
) -> Result<Vec<Moments5>> {
    let n = state.n_cells();
    let mut ext = Vec::with_capacity(n + 4);
    match left {
        BoundaryKind::Periodic => {
            ext.push(state.cells[n - 2]);
            ext.push(state.cells[n - 1]);
        }
        BoundaryKind::SpecularWall => {
            ext.push(mirror_x(&state.cells[1]));
            ext.push(mirror_x(&state.cells[0]));
        }
        BoundaryKind::InflowReservoir(res) | BoundaryKind::FixedState(res) => {
            let ghost = res.conserved()?;
            ext.push(ghost);
            ext.push(ghost);
        }
    }
    ext.extend_from_slice(&state.cells);
    match right {
        BoundaryKind::Periodic => {
            ext.push(state.cells[0]);
            ext.push(state.cells[1]);
        }
        BoundaryKind::SpecularWall => {
            ext.push(mirror_x(&state.cells[n - 1]));
            ext.push(mirror_x(&state.cells[n - 2]));
        }
        BoundaryKind::InflowReservoir(res) | BoundaryKind::FixedState(res) => {
            let ghost = res.conserved()?;
            ext.push(ghost);
            ext.push(ghost);
        }
    }
    Ok(ext)
}

/// Numerical fluxes at the n + 1 cell interfaces:
/// psi_{j+1/2} = (F_j + F_{j+1})/2 - (alpha/2)(U_{j+1} - U_j)
///             + (sigma+_j - sigma-_{j+1})/4,
/// where sigma+- are limited differences of the characteristic combinations
/// F +- alpha U.
pub fn euler_flux_interfaces(
    state: &MacroState,
    alpha: f64,
    left: &BoundaryKind,
    right: &BoundaryKind,
) -> Result<Vec<Moments5>> {
    let n = state.n_cells();
    let ext = ghost_states(state, left, right)?;
    let mut flux = Vec::with_capacity(ext.len());
    for (k, u) in ext.iter().enumerate() {
        let prim = conserved_to_primitive(u, k)?;
        flux.push(flux_from_state(u, &prim));
    }
    let w_plus: Vec<Moments5> = ext
        .iter()
        .zip(&flux)
        .map(|(u, f)| *f + alpha * *u)
        .collect();
    let w_minus: Vec<Moments5> = ext
        .iter()
        .zip(&flux)
        .map(|(u, f)| *f - alpha * *u)
        .collect();

    let mut psi = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let l = i + 1; // extended index of the left cell
        let r = i + 2;
        let central = 0.5 * (flux[l] + flux[r]) - (0.5 * alpha) * (ext[r] - ext[l]);
        let correction = limited_difference_vec(&w_plus, l) - limited_difference_vec(&w_minus, r);
        psi.push(central + 0.25 * correction);
    }
    Ok(psi)
}

/// Conservative update U_j <- U_j - (dt/dx)(flux_{j+1} - flux_j), validated
/// so a CFL-violating step that produced a non-physical cell is reported
/// rather than propagated.
pub(crate) fn conservative_update(
    state: &MacroState,
    dt_over_dx: f64,
    fluxes: &[Moments5],
) -> Result<MacroState> {
    debug_assert_eq!(fluxes.len(), state.n_cells() + 1);
    let cells = state
        .cells
        .iter()
        .enumerate()
        .map(|(j, u)| *u - dt_over_dx * (fluxes[j + 1] - fluxes[j]))
        .collect();
    let out = MacroState { cells };
    out.validate()?;
    Ok(out)
}

/// One forward-Euler step of the equilibrium fluxes.
pub fn euler_update(
    state: &MacroState,
    dt: f64,
    dx: f64,
    fluxes: &[Moments5],
) -> Result<MacroState> {
    conservative_update(state, dt / dx, fluxes)
}
