//! Time-marching drivers: the moment-guided hybrid loop, the plain DSMC
//! baseline, and the Euler-only solver, with shared step-size control.

use std::fmt;
use std::str::FromStr;

use crate::closure::{
    g_moments_damped, moment_update_stage2, moving_average, noneq_flux_interfaces,
};
use crate::collision::{collide_all, CellTarget, CollisionWeights};
use crate::error::{Error, Result};
use crate::euler::{euler_flux_interfaces, euler_update};
use crate::grid::{
    conserved_to_primitive, max_eigenvalue, sound_speed, Grid, MacroState, SchemeParams,
};
use crate::matching::{match_cells, match_velocity_energy_weighted};
use crate::math::{norm_sq3, Moments5};
use crate::particles::{
    bin_and_sort, init_from_macro, per_cell_mut, reconstruct_moments, transport, ParticleEnsemble,
    Reconstruction,
};
use crate::rng::{purpose, stream};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Moment-guided hybrid: moment solver plus matched particles.
    Mgmc,
    /// Plain particle method; moments exist only as reconstructions.
    Dsmc,
    /// Deterministic moment solver alone.
    Euler,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "mgmc" => Ok(Method::Mgmc),
            "dsmc" => Ok(Method::Dsmc),
            "euler" => Ok(Method::Euler),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (choose mgmc, dsmc or euler)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Mgmc => "mgmc",
            Method::Dsmc => "dsmc",
            Method::Euler => "euler",
        };
        f.write_str(name)
    }
}

/// Largest particle x-speed (zero for an empty ensemble).
pub fn max_x_speed(ens: &ParticleEnsemble) -> f64 {
    ens.vel.iter().fold(0.0f64, |m, v| m.max(v[0].abs()))
}

/// CFL step size: the fraction `cfl` of the tighter of the particle bound
/// dx/max|V_x| and the moment-solver bound dx/max_eigenvalue. The Knudsen
/// number plays no role here.
pub fn select_dt(ens: &ParticleEnsemble, state: &MacroState, grid: &Grid, cfl: f64) -> Result<f64> {
    let alpha = max_eigenvalue(state)?;
    Ok(cfl * particle_bound(ens, grid).min(grid.dx / alpha))
}

fn particle_bound(ens: &ParticleEnsemble, grid: &Grid) -> f64 {
    let vmax = max_x_speed(ens);
    if vmax > 0.0 {
        grid.dx / vmax
    } else {
        f64::INFINITY
    }
}

/// Largest |u_x| + sound speed over the populated, physical cells of a
/// particle reconstruction; transiently degenerate cells are skipped.
fn max_eigenvalue_populated(recon: &Reconstruction) -> Result<f64> {
    let mut alpha: f64 = 0.0;
    let mut any = false;
    for (j, cell) in recon.moments.iter().enumerate() {
        if recon.empty[j] {
            continue;
        }
        if let Ok(prim) = conserved_to_primitive(cell, j) {
            alpha = alpha.max(prim.u[0].abs() + sound_speed(prim.temperature));
            any = true;
        }
    }
    if !any {
        return Err(Error::InvalidConfig(
            "no populated cell with a physical state; cannot pick a time step".into(),
        ));
    }
    Ok(alpha)
}

/// One record per time step.
#[derive(Clone, Copy, Debug)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Time reached after the step.
    pub t: f64,
    pub dt: f64,
    pub total_mass: f64,
    pub total_mom_x: f64,
    pub total_energy: f64,
    /// Cells the matching could not treat fully (empty or single-particle);
    /// for the plain particle method, cells skipped by the collision step.
    pub cells_skipped: usize,
    pub max_match_residual: f64,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Keep the macroscopic state after every step (memory scales with
    /// step count; meant for trajectory comparisons in tests).
    pub record_trajectory: bool,
    pub max_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_trajectory: false,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub final_state: MacroState,
    /// Macroscopic fields at the requested output times, in time order.
    pub snapshots: Vec<(f64, MacroState)>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Per-step states when `record_trajectory` is set (the initial state
    /// first), empty otherwise.
    pub trajectory: Vec<MacroState>,
}

struct Machine<'a> {
    scenario: &'a Scenario,
    params: &'a SchemeParams,
    method: Method,
    grid: Grid,
    seed: u64,
    state: MacroState,
    ens: Option<ParticleEnsemble>,
    g_filtered: Vec<Moments5>,
    step: usize,
    time: f64,
}

struct StepOutcome {
    cells_skipped: usize,
    max_match_residual: f64,
}

impl<'a> Machine<'a> {
    fn new(
        scenario: &'a Scenario,
        method: Method,
        params: &'a SchemeParams,
        seed: u64,
    ) -> Result<Machine<'a>> {
        scenario.validate()?;
        params.validate()?;
        let grid = scenario.grid()?;
        let state = scenario.initial_state(&grid)?;
        let ens = match method {
            Method::Euler => None,
            Method::Mgmc | Method::Dsmc => {
                let (ens, unfilled) =
                    init_from_macro(&state, &grid, scenario.particles_per_cell, seed)?;
                if let Some(&cell) = unfilled.first() {
                    return Err(Error::EmptyCell { cell });
                }
                Some(ens)
            }
        };
        let n = grid.n_cells;
        Ok(Machine {
            scenario,
            params,
            method,
            grid,
            seed,
            state,
            ens,
            g_filtered: vec![Moments5::ZERO; n],
            step: 0,
            time: 0.0,
        })
    }

    fn fail(&self, stage: &'static str, err: Error) -> Error {
        Error::StepFailure {
            stage,
            step: self.step,
            time: self.time,
            detail: err.to_string(),
        }
    }

    fn base_dt(&self) -> Result<f64> {
        if let Some(dt) = self.scenario.fixed_dt {
            return Ok(dt);
        }
        match self.method {
            Method::Euler => {
                let alpha = max_eigenvalue(&self.state)?;
                Ok(self.params.cfl * self.grid.dx / alpha)
            }
            Method::Mgmc => select_dt(
                self.ens.as_ref().expect("hybrid run owns particles"),
                &self.state,
                &self.grid,
                self.params.cfl,
            ),
            Method::Dsmc => {
                let ens = self.ens.as_ref().expect("particle run owns particles");
                let alpha = {
                    let recon = self.rebin_reconstruct_readonly();
                    max_eigenvalue_populated(&recon)?
                };
                Ok(self.params.cfl * particle_bound(ens, &self.grid).min(self.grid.dx / alpha))
            }
        }
    }

    /// Reconstruction for step-size control only; does not reorder the
    /// ensemble.
    fn rebin_reconstruct_readonly(&self) -> Reconstruction {
        let mut scratch = self
            .ens
            .as_ref()
            .expect("particle run owns particles")
            .clone();
        let bins = bin_and_sort(&mut scratch, &self.grid);
        reconstruct_moments(
            &scratch,
            &self.grid,
            &bins,
            self.params.kernel,
            self.scenario.is_periodic(),
        )
    }

    fn collision_inputs(
        &self,
        field: &MacroState,
        dt: f64,
        skip: Option<&[bool]>,
    ) -> Result<(Vec<Option<CellTarget>>, Vec<CollisionWeights>)> {
        let mut targets = Vec::with_capacity(field.n_cells());
        let mut weights = Vec::with_capacity(field.n_cells());
        for (j, cell) in field.cells.iter().enumerate() {
            if skip.is_some_and(|s| s[j]) {
                targets.push(None);
                weights.push(CollisionWeights::from_lambda(0.0));
                continue;
            }
            let prim = conserved_to_primitive(cell, j)?;
            let mu = self.params.mu_rule.mu(cell.mass);
            targets.push(Some(CellTarget {
                u: prim.u,
                temperature: prim.temperature,
            }));
            weights.push(CollisionWeights::new(mu, dt, self.params.eps)?);
        }
        Ok((targets, weights))
    }

    fn advance(&mut self, dt: f64) -> Result<StepOutcome> {
        match self.method {
            Method::Euler => {
                self.state = self.euler_stage(dt)?;
                Ok(StepOutcome {
                    cells_skipped: 0,
                    max_match_residual: 0.0,
                })
            }
            Method::Mgmc => self.advance_mgmc(dt),
            Method::Dsmc => self.advance_dsmc(dt),
        }
    }

    /// Equilibrium flux stage shared by the Euler driver and the hybrid
    /// moment update.
    fn euler_stage(&self, dt: f64) -> Result<MacroState> {
        let alpha = max_eigenvalue(&self.state).map_err(|e| self.fail("moment-update", e))?;
        let psi = euler_flux_interfaces(
            &self.state,
            alpha,
            &self.scenario.left,
            &self.scenario.right,
        )
        .map_err(|e| self.fail("moment-update", e))?;
        euler_update(&self.state, dt, self.grid.dx, &psi).map_err(|e| self.fail("moment-update", e))
    }

    fn advance_mgmc(&mut self, dt: f64) -> Result<StepOutcome> {
        let periodic = self.scenario.is_periodic();

        // moment update: equilibrium fluxes, then the correction carried
        // over from the previous step's filtered closure
        let star = self.euler_stage(dt)?;
        let psi_g = noneq_flux_interfaces(&self.g_filtered, periodic);
        let unew = moment_update_stage2(&star, dt, self.grid.dx, &psi_g)
            .map_err(|e| self.fail("moment-update", e))?;

        // particle transport and rebinning
        let ens = self.ens.as_mut().expect("hybrid run owns particles");
        transport(
            ens,
            &self.grid,
            dt,
            &self.scenario.left,
            &self.scenario.right,
            self.step,
            self.seed,
        )
        .map_err(|e| Error::StepFailure {
            stage: "transport",
            step: self.step,
            time: self.time,
            detail: e.to_string(),
        })?;
        let bins = bin_and_sort(ens, &self.grid);
        let pre = reconstruct_moments(ens, &self.grid, &bins, self.params.kernel, periodic);

        // force the particle moments onto the moment solution
        let report = match_cells(ens, &bins, &self.grid, &pre, &unew, self.step, self.seed)
            .map_err(|e| Error::StepFailure {
                stage: "match",
                step: self.step,
                time: self.time,
                detail: e.to_string(),
            })?;

        // collisions against the matched state, with the local density as
        // collision frequency
        let (targets, weights) =
            self.collision_inputs(&unew, dt, None)
                .map_err(|e| Error::StepFailure {
                    stage: "collide",
                    step: self.step,
                    time: self.time,
                    detail: e.to_string(),
                })?;
        let ens = self.ens.as_mut().expect("hybrid run owns particles");
        collide_all(ens, &bins, &targets, &weights, self.step, self.seed);

        // damped non-equilibrium moments, filtered for the next step
        let ens = self.ens.as_ref().expect("hybrid run owns particles");
        let g = g_moments_damped(
            ens,
            &bins,
            &self.grid,
            &unew,
            &weights,
            self.params.kernel,
            periodic,
        )
        .map_err(|e| Error::StepFailure {
            stage: "closure",
            step: self.step,
            time: self.time,
            detail: e.to_string(),
        })?;
        self.g_filtered = moving_average(&g, &self.params.filter, periodic);

        self.state = unew;
        Ok(StepOutcome {
            cells_skipped: report.skipped + report.thin,
            max_match_residual: report.max_rel_residual,
        })
    }

    fn advance_dsmc(&mut self, dt: f64) -> Result<StepOutcome> {
        let periodic = self.scenario.is_periodic();
        let ens = self.ens.as_mut().expect("particle run owns particles");
        transport(
            ens,
            &self.grid,
            dt,
            &self.scenario.left,
            &self.scenario.right,
            self.step,
            self.seed,
        )
        .map_err(|e| Error::StepFailure {
            stage: "transport",
            step: self.step,
            time: self.time,
            detail: e.to_string(),
        })?;
        let bins = bin_and_sort(ens, &self.grid);
        let recon = reconstruct_moments(ens, &self.grid, &bins, self.params.kernel, periodic);

        // collision targets come from the reconstruction itself; cells that
        // are empty or transiently non-physical sit this sweep out
        let mut skip = recon.empty.clone();
        let mut skipped = 0usize;
        for (j, cell) in recon.moments.iter().enumerate() {
            if skip[j] || conserved_to_primitive(cell, j).is_err() {
                skip[j] = true;
                skipped += 1;
            }
        }
        let field = MacroState {
            cells: recon.moments.clone(),
        };
        let (targets, weights) = self
            .collision_inputs(&field, dt, Some(&skip))
            .map_err(|e| Error::StepFailure {
                stage: "collide",
                step: self.step,
                time: self.time,
                detail: e.to_string(),
            })?;
        let ens = self.ens.as_mut().expect("particle run owns particles");

        // The per-particle collision update preserves a cell's momentum and
        // energy only in expectation, and the residue accumulates as a random
        // walk whose rate grows with the collision rate. Record each collided
        // cell's raw pre-collision moments so it can be renormalized back to
        // them afterwards; mass needs no correction because collisions never
        // touch weights.
        let mut pre_moments: Vec<Option<([f64; 3], f64)>> = vec![None; self.grid.n_cells];
        for (j, pre) in pre_moments.iter_mut().enumerate() {
            if skip[j] || bins.range(j).len() < 2 {
                continue;
            }
            let mut w_sum = 0.0;
            let mut mom = [0.0f64; 3];
            let mut energy = 0.0;
            for i in bins.range(j) {
                let w = ens.weight[i];
                w_sum += w;
                for k in 0..3 {
                    mom[k] += w * ens.vel[i][k];
                }
                energy += 0.5 * w * norm_sq3(ens.vel[i]);
            }
            let u = [mom[0] / w_sum, mom[1] / w_sum, mom[2] / w_sum];
            let e = energy / w_sum;
            if e - 0.5 * norm_sq3(u) > 0.0 {
                *pre = Some((u, e));
            }
        }

        collide_all(ens, &bins, &targets, &weights, self.step, self.seed);

        let step = self.step as u64;
        let seed = self.seed;
        for cell in per_cell_mut(&bins, &mut ens.vel, &mut ens.weight, &mut ens.resampled) {
            let Some((u, e)) = pre_moments[cell.index] else {
                continue;
            };
            let j = cell.index as u64;
            match_velocity_energy_weighted(cell.vel, cell.weight, u, e, || {
                stream(seed, &[purpose::MATCH_RESAMPLE, step, j])
            })
            .map_err(|err| Error::StepFailure {
                stage: "collide",
                step: self.step,
                time: self.time,
                detail: err.to_string(),
            })?;
        }
        self.state = field;
        Ok(StepOutcome {
            cells_skipped: skipped,
            max_match_residual: 0.0,
        })
    }

    /// The state reported to snapshots and results. The particle-only
    /// method must have every cell populated at reporting times.
    fn report_state(&self) -> Result<MacroState> {
        match self.method {
            Method::Mgmc | Method::Euler => Ok(self.state.clone()),
            Method::Dsmc => {
                let recon = self.rebin_reconstruct_readonly();
                recon.macro_state()
            }
        }
    }
}

/// March a scenario to its final time with the chosen method. Snapshots
/// are taken at the scenario's output times and always at the final time.
pub fn run(
    scenario: &Scenario,
    method: Method,
    params: &SchemeParams,
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    let mut machine = Machine::new(scenario, method, params, seed)?;
    let dx = machine.grid.dx;

    let mut stops: Vec<f64> = scenario
        .output_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0)
        .collect();
    stops.push(scenario.t_final);
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scenario.t_final);

    let mut snapshots = Vec::new();
    let mut diagnostics = Vec::new();
    let mut trajectory = Vec::new();
    if scenario.output_times.contains(&0.0) {
        snapshots.push((0.0, machine.report_state()?));
    }
    if options.record_trajectory {
        trajectory.push(machine.state.clone());
    }

    let mut next_stop = 0usize;
    while next_stop < stops.len() {
        if machine.step >= options.max_steps {
            return Err(Error::StepFailure {
                stage: "loop",
                step: machine.step,
                time: machine.time,
                detail: format!("exceeded the step limit of {}", options.max_steps),
            });
        }
        let base = machine.base_dt()?;
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::StepFailure {
                stage: "loop",
                step: machine.step,
                time: machine.time,
                detail: format!("non-positive step size {base}"),
            });
        }
        let target = stops[next_stop];
        let gap = target - machine.time;
        let (dt, landing) = if base >= gap * (1.0 - 1e-12) {
            (gap, true)
        } else {
            (base, false)
        };

        let outcome = machine.advance(dt)?;
        machine.step += 1;
        machine.time = if landing { target } else { machine.time + dt };

        let total = dx * machine.state.total();
        diagnostics.push(StepDiagnostics {
            step: machine.step,
            t: machine.time,
            dt,
            total_mass: total.mass,
            total_mom_x: total.mom[0],
            total_energy: total.energy,
            cells_skipped: outcome.cells_skipped,
            max_match_residual: outcome.max_match_residual,
        });
        if options.record_trajectory {
            trajectory.push(machine.state.clone());
        }
        if landing {
            snapshots.push((target, machine.report_state()?));
            next_stop += 1;
        }
    }

    Ok(RunResult {
        final_state: machine.report_state()?,
        snapshots,
        diagnostics,
        trajectory,
    })
}
