//! Uniform 1D grid, macroscopic moment fields, and conversions for a
//! monatomic ideal gas: p = rho T, E = rho |u|^2 / 2 + 3 rho T / 2.

use crate::collision::{CollisionModel, MuRule};
use crate::error::{Error, Result};
use crate::math::{norm_sq3, scale3, Moments5};

/// Ratio of specific heats for a monatomic gas (three translational dof).
pub const GAMMA: f64 = 5.0 / 3.0;

/// Uniform cell partition of [x_min, x_max).
#[derive(Clone, Debug)]
pub struct Grid {
    pub n_cells: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

impl Grid {
    pub fn new(n_cells: usize, x_min: f64, x_max: f64) -> Result<Grid> {
        if n_cells == 0 {
            return Err(Error::InvalidConfig("grid needs at least one cell".into()));
        }
        if !(x_max > x_min) {
            return Err(Error::InvalidConfig(format!(
                "empty domain [{x_min}, {x_max})"
            )));
        }
        let dx = (x_max - x_min) / n_cells as f64;
        Ok(Grid {
            n_cells,
            x_min,
            x_max,
            dx,
        })
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn cell_center(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.dx
    }

    /// Cell containing `x`; total on [x_min, x_max), clamped at the edges so
    /// round-off on the boundary cannot index out of range.
    pub fn cell_of(&self, x: f64) -> usize {
        let j = ((x - self.x_min) / self.dx).floor();
        (j.max(0.0) as usize).min(self.n_cells - 1)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x < self.x_max
    }
}

/// Per-cell conserved moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub cells: Vec<Moments5>,
}

impl MacroState {
    pub fn uniform(n_cells: usize, value: Moments5) -> MacroState {
        MacroState {
            cells: vec![value; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Componentwise sum over cells (multiply by dx for physical totals).
    pub fn total(&self) -> Moments5 {
        let mut sum = Moments5::ZERO;
        for c in &self.cells {
            sum += *c;
        }
        sum
    }

    /// Check that every cell converts to a valid primitive state.
    pub fn validate(&self) -> Result<()> {
        for (j, cell) in self.cells.iter().enumerate() {
            conserved_to_primitive(cell, j)?;
        }
        Ok(())
    }
}

/// Primitive variables of one cell.
#[derive(Clone, Copy, Debug)]
pub struct Primitive {
    pub u: [f64; 3],
    pub temperature: f64,
    pub pressure: f64,
}

pub fn conserved_to_primitive(cell: &Moments5, cell_index: usize) -> Result<Primitive> {
    let rho = cell.mass;
    if !(rho > 0.0) {
        return Err(Error::DegenerateState {
            cell: cell_index,
            rho,
            temperature: f64::NAN,
        });
    }
    let u = scale3(cell.mom, 1.0 / rho);
    let temperature = (2.0 * cell.energy - rho * norm_sq3(u)) / (3.0 * rho);
    if !(temperature > 0.0) {
        return Err(Error::DegenerateState {
            cell: cell_index,
            rho,
            temperature,
        });
    }
    Ok(Primitive {
        u,
        temperature,
        pressure: rho * temperature,
    })
}

pub fn primitive_to_conserved(rho: f64, u: [f64; 3], temperature: f64) -> Result<Moments5> {
    if !(rho > 0.0) {
        return Err(Error::NonPositive {
            what: "density",
            value: rho,
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::NonPositive {
            what: "temperature",
            value: temperature,
        });
    }
    Ok(Moments5 {
        mass: rho,
        mom: scale3(u, rho),
        energy: 0.5 * rho * norm_sq3(u) + 1.5 * rho * temperature,
    })
}

pub fn sound_speed(temperature: f64) -> f64 {
    (GAMMA * temperature).sqrt()
}

/// x-direction flux moments of the Maxwellian with the given parameters:
/// (rho u_x, rho u_x u + p e_x, (E + p) u_x).
pub fn maxwellian_flux_moments(rho: f64, u: [f64; 3], temperature: f64) -> Result<Moments5> {
    let state = primitive_to_conserved(rho, u, temperature)?;
    let prim = Primitive {
        u,
        temperature,
        pressure: rho * temperature,
    };
    Ok(flux_from_state(&state, &prim))
}

/// Same flux, evaluated from an already-validated (state, primitive) pair.
pub fn flux_from_state(cell: &Moments5, prim: &Primitive) -> Moments5 {
    let ux = prim.u[0];
    Moments5 {
        mass: cell.mass * ux,
        mom: [
            cell.mom[0] * ux + prim.pressure,
            cell.mom[1] * ux,
            cell.mom[2] * ux,
        ],
        energy: (cell.energy + prim.pressure) * ux,
    }
}

/// Largest |u_x| + c_s over the field; the global wave-speed bound used both
/// for the numerical diffusion coefficient and the CFL condition.
pub fn max_eigenvalue(state: &MacroState) -> Result<f64> {
    let mut alpha: f64 = 0.0;
    for (j, cell) in state.cells.iter().enumerate() {
        let prim = conserved_to_primitive(cell, j)?;
        alpha = alpha.max(prim.u[0].abs() + sound_speed(prim.temperature));
    }
    Ok(alpha)
}

/// Normalized moving-average weights for the closure filter.
#[derive(Clone, Debug)]
pub struct FilterWeights {
    half_width: usize,
    weights: Vec<f64>,
}

impl FilterWeights {
    /// Weights must have odd length, be non-negative and sum to 1 within
    /// 1e-12; they are renormalized to an exact unit sum.
    pub fn new(weights: Vec<f64>) -> Result<FilterWeights> {
        if weights.is_empty() || weights.len().is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "filter needs an odd number of weights (got {})",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "filter weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "filter weights sum to {sum:.16e}, expected 1"
            )));
        }
        let weights = weights.iter().map(|w| w / sum).collect::<Vec<_>>();
        Ok(FilterWeights {
            half_width: weights.len() / 2,
            weights,
        })
    }

    /// Default three-point filter (1/6, 2/3, 1/6).
    pub fn standard() -> FilterWeights {
        FilterWeights::new(vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]).expect("valid weights")
    }

    /// Width-zero filter; the identity.
    pub fn identity() -> FilterWeights {
        FilterWeights::new(vec![1.0]).expect("valid weights")
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// How particles are deposited on the grid during reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepositKernel {
    /// Each particle counts fully toward its containing cell.
    PiecewiseConstant,
    /// Unit-integral triangle of half-width dx, split between the two
    /// nearest cell centers.
    NearestGridPoint,
}

/// Numerical parameters of the hybrid scheme.
#[derive(Clone, Debug)]
pub struct SchemeParams {
    /// Knudsen number; 0 selects the exact fluid limit.
    pub eps: f64,
    pub cfl: f64,
    pub filter: FilterWeights,
    pub kernel: DepositKernel,
    pub collision_model: CollisionModel,
    pub mu_rule: MuRule,
}

impl SchemeParams {
    pub fn new(eps: f64, cfl: f64) -> Result<SchemeParams> {
        let params = SchemeParams {
            eps,
            cfl,
            filter: FilterWeights::standard(),
            kernel: DepositKernel::PiecewiseConstant,
            collision_model: CollisionModel::maxwell(),
            mu_rule: MuRule::LocalDensity,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps must be finite and >= 0 (got {})",
                self.eps
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cfl must lie in (0, 1] (got {})",
                self.cfl
            )));
        }
        self.collision_model.validate()
    }
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams::new(1e-2, 0.5).expect("valid defaults")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn primitive_from_conserved() {
        let prim = conserved_to_primitive(&Moments5::new(1.0, [1.0, 0.0, 0.0], 2.0), 0).unwrap();
        assert_relative_eq!(prim.u[0], 1.0);
        assert_relative_eq!(prim.temperature, 1.0);
        assert_relative_eq!(prim.pressure, 1.0);
    }

    #[test]
    fn rest_state_temperature() {
        // E = 3 rho T / 2 at rest; (0.125, 0, 0.75) must give T = 4.
        let prim = conserved_to_primitive(&Moments5::new(0.125, [0.0; 3], 0.75), 0).unwrap();
        assert_relative_eq!(prim.temperature, 4.0);
        assert_relative_eq!(prim.pressure, 0.5);
    }

    #[test]
    fn conserved_from_primitive() {
        let state = primitive_to_conserved(1.0, [-1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(state.mom, [-1.0, 0.0, 0.0]);
        assert_relative_eq!(state.energy, 2.0);
    }

    #[test]
    fn degenerate_states_are_rejected() {
        assert!(conserved_to_primitive(&Moments5::new(0.0, [0.0; 3], 1.0), 3).is_err());
        // kinetic energy exceeding total energy means negative temperature
        assert!(conserved_to_primitive(&Moments5::new(1.0, [3.0, 0.0, 0.0], 1.0), 3).is_err());
        assert!(primitive_to_conserved(1.0, [0.0; 3], -1.0).is_err());
        assert!(primitive_to_conserved(-1.0, [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn flux_moments_match_hand_values() {
        let f = maxwellian_flux_moments(2.0, [1.0, 0.0, 0.0], 0.5).unwrap();
        assert_relative_eq!(f.mass, 2.0);
        assert_relative_eq!(f.mom[0], 3.0);
        assert_relative_eq!(f.energy, 3.5);

        let rest = maxwellian_flux_moments(1.0, [0.0; 3], 5.0).unwrap();
        assert_eq!(rest.mass, 0.0);
        assert_relative_eq!(rest.mom[0], 5.0);
        assert_eq!(rest.energy, 0.0);

        let unit = maxwellian_flux_moments(1.0, [0.0; 3], 1.0).unwrap();
        assert_relative_eq!(unit.mom[0], 1.0);
    }

    #[test]
    fn transverse_momentum_advects() {
        let f = maxwellian_flux_moments(1.0, [2.0, 0.5, -0.25], 1.0).unwrap();
        assert_relative_eq!(f.mom[1], 1.0);
        assert_relative_eq!(f.mom[2], -0.5);
    }

    #[test]
    fn eigenvalue_bound() {
        let rest = MacroState::uniform(4, primitive_to_conserved(1.0, [0.0; 3], 1.0).unwrap());
        assert_relative_eq!(max_eigenvalue(&rest).unwrap(), (5.0f64 / 3.0).sqrt());

        let moving = MacroState::uniform(
            4,
            primitive_to_conserved(1.0, [-1.0, 0.0, 0.0], 1.0).unwrap(),
        );
        assert_relative_eq!(
            max_eigenvalue(&moving).unwrap(),
            1.0 + (5.0f64 / 3.0).sqrt()
        );
    }

    #[test]
    fn grid_cells_partition_the_domain() {
        let grid = Grid::new(150, 0.0, 1.0).unwrap();
        assert_relative_eq!(grid.dx, 1.0 / 150.0);
        assert_eq!(grid.cell_of(0.0), 0);
        assert_eq!(grid.cell_of(0.999), 149);
        for j in 0..150 {
            assert_eq!(grid.cell_of(grid.cell_center(j)), j);
        }
    }

    #[test]
    fn filter_weight_validation() {
        assert!(FilterWeights::new(vec![0.5, 0.5]).is_err());
        assert!(FilterWeights::new(vec![0.5, 0.6, 0.5]).is_err());
        assert!(FilterWeights::new(vec![-0.5, 2.0, -0.5]).is_err());
        let f = FilterWeights::standard();
        assert_eq!(f.half_width(), 1);
        assert_relative_eq!(f.weights().iter().sum::<f64>(), 1.0, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn primitive_round_trip(
            rho in 1e-3..1e3f64,
            ux in -10.0..10.0f64,
            uy in -10.0..10.0f64,
            uz in -10.0..10.0f64,
            t in 1e-3..1e3f64,
        ) {
            let state = primitive_to_conserved(rho, [ux, uy, uz], t).unwrap();
            let prim = conserved_to_primitive(&state, 0).unwrap();
            prop_assert!((prim.temperature - t).abs() <= 1e-13 * t.max(1.0));
            prop_assert!((prim.u[0] - ux).abs() <= 1e-13 * ux.abs().max(1.0));
            prop_assert!((prim.u[1] - uy).abs() <= 1e-13 * uy.abs().max(1.0));
            prop_assert!((prim.u[2] - uz).abs() <= 1e-13 * uz.abs().max(1.0));
        }
    }
}
