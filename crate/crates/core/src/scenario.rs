//! Built-in flow scenarios: initial fields, boundary conditions and the
//! default run parameters for each.

use crate::error::{Error, Result};
use crate::grid::{primitive_to_conserved, Grid, MacroState};
use crate::math::Moments5;

/// Equilibrium state of a boundary reservoir.
#[derive(Clone, Copy, Debug)]
pub struct ReservoirState {
    pub rho: f64,
    pub u: [f64; 3],
    pub temperature: f64,
}

impl ReservoirState {
    pub fn conserved(&self) -> Result<Moments5> {
        primitive_to_conserved(self.rho, self.u, self.temperature)
    }
}

/// Boundary condition of one domain side. The fluid and particle treatments
/// are paired: a specular wall mirrors ghost cells, while both reservoir
/// flavors pin the ghost state and replace escaping particles with samples
/// from the reservoir Maxwellian.
#[derive(Clone, Debug)]
pub enum BoundaryKind {
    Periodic,
    SpecularWall,
    InflowReservoir(ReservoirState),
    FixedState(ReservoirState),
}

impl BoundaryKind {
    pub fn is_periodic(&self) -> bool {
        matches!(self, BoundaryKind::Periodic)
    }

    pub fn reservoir(&self) -> Option<&ReservoirState> {
        match self {
            BoundaryKind::InflowReservoir(r) | BoundaryKind::FixedState(r) => Some(r),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(r) = self.reservoir() {
            r.conserved()?;
        }
        Ok(())
    }
}

/// Initial macroscopic field, kept in closed form so the cell count can be
/// changed without re-specifying the scenario.
#[derive(Clone, Debug)]
pub enum InitialCondition {
    Uniform {
        rho: f64,
        u: [f64; 3],
        temperature: f64,
    },
    /// Two half-domain states split at x_split (cell centers decide sides).
    Split {
        x_split: f64,
        left: ReservoirState,
        right: ReservoirState,
    },
    /// Sinusoidal density, x-velocity and total energy over one period.
    SmoothWave {
        rho_mean: f64,
        rho_amp: f64,
        u_mean: f64,
        u_amp: f64,
        e_mean: f64,
        e_amp: f64,
    },
}

impl InitialCondition {
    /// Field values sampled at cell centers.
    pub fn evaluate(&self, grid: &Grid) -> Result<MacroState> {
        let mut cells = Vec::with_capacity(grid.n_cells);
        for j in 0..grid.n_cells {
            let x = grid.cell_center(j);
            let cell = match self {
                InitialCondition::Uniform {
                    rho,
                    u,
                    temperature,
                } => primitive_to_conserved(*rho, *u, *temperature)?,
                InitialCondition::Split {
                    x_split,
                    left,
                    right,
                } => {
                    let side = if x < *x_split { left } else { right };
                    side.conserved()?
                }
                InitialCondition::SmoothWave {
                    rho_mean,
                    rho_amp,
                    u_mean,
                    u_amp,
                    e_mean,
                    e_amp,
                } => {
                    let phase = 2.0 * std::f64::consts::PI * (x - grid.x_min) / grid.length();
                    let s = phase.sin();
                    let rho = rho_mean + rho_amp * s;
                    let ux = u_mean + u_amp * s;
                    let energy = e_mean + e_amp * s;
                    Moments5 {
                        mass: rho,
                        mom: [rho * ux, 0.0, 0.0],
                        energy,
                    }
                }
            };
            cells.push(cell);
        }
        let state = MacroState { cells };
        state.validate()?;
        Ok(state)
    }
}

/// A complete run description; fields are public so callers can override
/// resolution, Knudsen number or particle count before running.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub n_cells: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub initial: InitialCondition,
    pub left: BoundaryKind,
    pub right: BoundaryKind,
    pub eps: f64,
    pub particles_per_cell: usize,
    pub t_final: f64,
    /// Fixed step size; None selects the CFL policy.
    pub fixed_dt: Option<f64>,
    pub output_times: Vec<f64>,
}

impl Scenario {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_cells, self.x_min, self.x_max)
    }

    pub fn initial_state(&self, grid: &Grid) -> Result<MacroState> {
        self.initial.evaluate(grid)
    }

    pub fn is_periodic(&self) -> bool {
        self.left.is_periodic()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.left.is_periodic() != self.right.is_periodic() {
            return Err(Error::InvalidConfig(
                "periodic boundaries must be used on both sides".into(),
            ));
        }
        self.left.validate()?;
        self.right.validate()?;
        if !(self.t_final > 0.0) {
            return Err(Error::NonPositive {
                what: "t_final",
                value: self.t_final,
            });
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps must be finite and >= 0 (got {})",
                self.eps
            )));
        }
        if self.particles_per_cell == 0 {
            return Err(Error::InvalidConfig(
                "particles-per-cell must be at least 1".into(),
            ));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return Err(Error::NonPositive {
                    what: "dt",
                    value: dt,
                });
            }
        }
        if let InitialCondition::Split { x_split, .. } = self.initial {
            if !(x_split > self.x_min && x_split < self.x_max) {
                return Err(Error::InvalidConfig(format!(
                    "split position {x_split} lies outside the domain"
                )));
            }
        }
        for &t in &self.output_times {
            if !(t >= 0.0 && t <= self.t_final + 1e-12) {
                return Err(Error::InvalidConfig(format!(
                    "output time {t} lies outside [0, t_final]"
                )));
            }
        }
        Ok(())
    }
}

pub const SCENARIO_NAMES: &[&str] = &["unsteady-shock", "sod", "smooth-accuracy"];

/// One of the named scenarios with its standard configuration.
pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let scenario = match name {
        // Uniform leftward stream against a specular wall; the reflected
        // shock travels back into the supply flow.
        "unsteady-shock" => {
            let stream = ReservoirState {
                rho: 1.0,
                u: [-1.0, 0.0, 0.0],
                temperature: 1.0,
            };
            Scenario {
                name: name.into(),
                n_cells: 150,
                x_min: 0.0,
                x_max: 1.0,
                initial: InitialCondition::Uniform {
                    rho: stream.rho,
                    u: stream.u,
                    temperature: stream.temperature,
                },
                left: BoundaryKind::SpecularWall,
                right: BoundaryKind::InflowReservoir(stream),
                eps: 1e-2,
                particles_per_cell: 400,
                t_final: 0.18,
                fixed_dt: None,
                output_times: vec![0.18],
            }
        }
        // Riemann problem with a 10:1 pressure ratio; boundaries pinned to
        // the initial states (waves stay interior over the run time).
        "sod" => {
            let left = ReservoirState {
                rho: 1.0,
                u: [0.0; 3],
                temperature: 5.0,
            };
            let right = ReservoirState {
                rho: 0.125,
                u: [0.0; 3],
                temperature: 4.0,
            };
            Scenario {
                name: name.into(),
                n_cells: 200,
                x_min: 0.0,
                x_max: 1.0,
                initial: InitialCondition::Split {
                    x_split: 0.5,
                    left,
                    right,
                },
                left: BoundaryKind::FixedState(left),
                right: BoundaryKind::FixedState(right),
                eps: 1e-2,
                particles_per_cell: 200,
                t_final: 0.08,
                fixed_dt: None,
                output_times: vec![0.08],
            }
        }
        // Smooth periodic wave used for accuracy and statistical studies.
        "smooth-accuracy" => Scenario {
            name: name.into(),
            n_cells: 100,
            x_min: 0.0,
            x_max: 1.0,
            initial: InitialCondition::SmoothWave {
                rho_mean: 1.0,
                rho_amp: 0.3,
                u_mean: 1.5,
                u_amp: 0.1,
                e_mean: 2.5,
                e_amp: 1.0,
            },
            left: BoundaryKind::Periodic,
            right: BoundaryKind::Periodic,
            eps: 1e-2,
            particles_per_cell: 100,
            t_final: 0.05,
            fixed_dt: Some(1e-3),
            output_times: vec![0.05],
        },
        _ => {
            return Err(Error::UnknownScenario {
                name: name.into(),
                available: SCENARIO_NAMES.join(", "),
            })
        }
    };
    scenario.validate()?;
    Ok(scenario)
}
