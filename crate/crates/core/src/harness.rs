//! Run orchestration around the drivers: the statistical-error study,
//! CSV output, and flat key=value configuration files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::driver::{run, Method, RunOptions, RunResult, StepDiagnostics};
use crate::error::{Error, Result};
use crate::grid::{conserved_to_primitive, Grid, MacroState, SchemeParams};
use crate::math::Moments5;
use crate::rng::{derive_seed, purpose};
use crate::scenario::Scenario;

/// Fields covered by the error metric: the five conserved components
/// followed by the primitive fields derived from them.
pub const ERROR_FIELDS: [&str; 10] = [
    "rho", "mom_x", "mom_y", "mom_z", "E", "ux", "uy", "uz", "T", "p",
];

fn cell_fields(cell: &Moments5, j: usize) -> Result<[f64; 10]> {
    let prim = conserved_to_primitive(cell, j)?;
    let a = cell.to_array();
    Ok([
        a[0],
        a[1],
        a[2],
        a[3],
        a[4],
        prim.u[0],
        prim.u[1],
        prim.u[2],
        prim.temperature,
        prim.pressure,
    ])
}

/// Realization-averaged, cell-summed squared deviation from a reference
/// field: (1/M) sum over realizations k and cells j of (U_kj - Uref_j)^2,
/// one value per entry of [`ERROR_FIELDS`].
pub fn sigma_squared(realizations: &[MacroState], reference: &MacroState) -> Result<[f64; 10]> {
    if realizations.is_empty() {
        return Err(Error::InvalidConfig(
            "the error metric needs at least one realization".into(),
        ));
    }
    let n = reference.n_cells();
    let ref_fields: Vec<[f64; 10]> = reference
        .cells
        .iter()
        .enumerate()
        .map(|(j, c)| cell_fields(c, j))
        .collect::<Result<_>>()?;
    let mut acc = [0.0f64; 10];
    for state in realizations {
        if state.n_cells() != n {
            return Err(Error::GridMismatch {
                expected: n,
                got: state.n_cells(),
            });
        }
        for (j, cell) in state.cells.iter().enumerate() {
            let f = cell_fields(cell, j)?;
            for c in 0..10 {
                let d = f[c] - ref_fields[j][c];
                acc[c] += d * d;
            }
        }
    }
    let m = realizations.len() as f64;
    for v in &mut acc {
        *v /= m;
    }
    Ok(acc)
}

/// Cellwise arithmetic mean of equally shaped moment fields.
pub fn mean_state(states: &[MacroState]) -> Result<MacroState> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot average zero fields".into()))?;
    let n = first.n_cells();
    let mut cells = vec![Moments5::ZERO; n];
    for state in states {
        if state.n_cells() != n {
            return Err(Error::GridMismatch {
                expected: n,
                got: state.n_cells(),
            });
        }
        for (m, c) in cells.iter_mut().zip(&state.cells) {
            *m += *c;
        }
    }
    let inv = 1.0 / states.len() as f64;
    for c in &mut cells {
        *c = *c * inv;
    }
    Ok(MacroState { cells })
}

#[derive(Clone, Debug)]
pub struct ErrorStudyConfig {
    /// Particle-per-cell counts to sweep.
    pub n_list: Vec<usize>,
    /// Realizations per particle count.
    pub realizations: usize,
    /// Particles per cell for the reference runs; must exceed every
    /// entry of `n_list`.
    pub ref_particles: usize,
    /// Realizations averaged into the reference.
    pub ref_realizations: usize,
    pub seed: u64,
}

impl Default for ErrorStudyConfig {
    fn default() -> Self {
        ErrorStudyConfig {
            n_list: vec![25, 100, 400],
            realizations: 10,
            ref_particles: 1000,
            ref_realizations: 5,
            seed: 0,
        }
    }
}

impl ErrorStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::InvalidConfig("empty particle-count list".into()));
        }
        if self.realizations < 2 {
            return Err(Error::InvalidConfig(
                "an error study needs at least 2 realizations".into(),
            ));
        }
        if self.ref_realizations == 0 {
            return Err(Error::InvalidConfig(
                "the reference needs at least 1 realization".into(),
            ));
        }
        let max_n = *self.n_list.iter().max().expect("non-empty list");
        if self.ref_particles <= max_n {
            return Err(Error::InvalidConfig(format!(
                "reference particle count {} must exceed the largest studied count {}",
                self.ref_particles, max_n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ErrorStudyRow {
    pub particles_per_cell: usize,
    pub field: &'static str,
    pub sigma2: f64,
}

fn realization_states(
    scenario: &Scenario,
    method: Method,
    params: &SchemeParams,
    seeds: &[u64],
) -> Result<Vec<MacroState>> {
    seeds
        .par_iter()
        .map(|&s| run(scenario, method, params, s, &RunOptions::default()).map(|r| r.final_state))
        .collect()
}

/// Sweep the particle count and measure the statistical error of the final
/// fields against a high-resolution reference computed with the same
/// method, so that the metric isolates noise from discretization bias.
pub fn error_study(
    scenario: &Scenario,
    method: Method,
    params: &SchemeParams,
    cfg: &ErrorStudyConfig,
) -> Result<Vec<ErrorStudyRow>> {
    cfg.validate()?;
    let mut base = scenario.clone();
    base.output_times.clear();

    base.particles_per_cell = cfg.ref_particles;
    let ref_seeds: Vec<u64> = (0..cfg.ref_realizations)
        .map(|k| derive_seed(cfg.seed, &[purpose::REFERENCE, k as u64]))
        .collect();
    let reference = mean_state(&realization_states(&base, method, params, &ref_seeds)?)?;

    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        base.particles_per_cell = n;
        let seeds: Vec<u64> = (0..cfg.realizations)
            .map(|k| derive_seed(cfg.seed, &[purpose::REALIZATION, n as u64, k as u64]))
            .collect();
        let states = realization_states(&base, method, params, &seeds)?;
        let sigma = sigma_squared(&states, &reference)?;
        for (c, field) in ERROR_FIELDS.iter().enumerate() {
            rows.push(ErrorStudyRow {
                particles_per_cell: n,
                field,
                sigma2: sigma[c],
            });
        }
    }
    Ok(rows)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// File name for one field snapshot, e.g. `fields_t0.08_mgmc.csv`.
pub fn snapshot_filename(time: f64, method: Method) -> String {
    format!("fields_t{time}_{method}.csv")
}

/// One row per cell center: position, density, velocity, temperature,
/// pressure, total energy.
pub fn write_snapshot_csv(path: &Path, grid: &Grid, state: &MacroState) -> Result<()> {
    if state.n_cells() != grid.n_cells {
        return Err(Error::GridMismatch {
            expected: grid.n_cells,
            got: state.n_cells(),
        });
    }
    let mut text = String::from("x,rho,ux,uy,uz,T,p,E\n");
    for (j, cell) in state.cells.iter().enumerate() {
        let prim = conserved_to_primitive(cell, j)?;
        let cols = [
            grid.cell_center(j),
            cell.mass,
            prim.u[0],
            prim.u[1],
            prim.u[2],
            prim.temperature,
            prim.pressure,
            cell.energy,
        ];
        let row: Vec<String> = cols.iter().map(|&v| fmt_float(v)).collect();
        writeln!(text, "{}", row.join(",")).expect("string writes cannot fail");
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_diagnostics_csv(path: &Path, rows: &[StepDiagnostics]) -> Result<()> {
    let mut text = String::from("step,t,dt,total_mass,total_mom_x,total_E,cells_skipped\n");
    for d in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            d.step,
            fmt_float(d.t),
            fmt_float(d.dt),
            fmt_float(d.total_mass),
            fmt_float(d.total_mom_x),
            fmt_float(d.total_energy),
            d.cells_skipped
        )
        .expect("string writes cannot fail");
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_error_study_csv(path: &Path, rows: &[ErrorStudyRow]) -> Result<()> {
    let mut text = String::from("N,field,sigma2\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{}",
            r.particles_per_cell,
            r.field,
            fmt_float(r.sigma2)
        )
        .expect("string writes cannot fail");
    }
    fs::write(path, text)?;
    Ok(())
}

/// March a scenario and write one snapshot file per output time plus a
/// per-step diagnostics file. Returns the run result and the files
/// written, snapshots first.
pub fn run_scenario(
    scenario: &Scenario,
    method: Method,
    params: &SchemeParams,
    seed: u64,
    out_dir: &Path,
) -> Result<(RunResult, Vec<PathBuf>)> {
    fs::create_dir_all(out_dir)?;
    let grid = scenario.grid()?;
    let result = run(scenario, method, params, seed, &RunOptions::default())?;
    let mut files = Vec::new();
    for (t, state) in &result.snapshots {
        let path = out_dir.join(snapshot_filename(*t, method));
        write_snapshot_csv(&path, &grid, state)?;
        files.push(path);
    }
    let diag = out_dir.join(format!("diagnostics_{method}.csv"));
    write_diagnostics_csv(&diag, &result.diagnostics)?;
    files.push(diag);
    Ok((result, files))
}

/// Parse flat `key = value` configuration text. A `#` starts a comment,
/// blank lines are skipped, and hyphens in keys are read as underscores
/// so file keys can mirror command-line flag spellings.
pub fn parse_config_text(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("config line {}: expected key=value", idx + 1))
        })?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "config line {}: empty key or value",
                idx + 1
            )));
        }
        map.insert(key, value.to_string());
    }
    Ok(map)
}

pub fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|err| Error::InvalidConfig(format!("cannot read {}: {err}", path.display())))?;
    parse_config_text(&text)
}

/// Comma-separated list of values, e.g. `25,100,400` or `0.02,0.05`.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} entry '{t}'")))
        })
        .collect()
}

/// Optional settings from one source (command line or config file).
/// Every field mirrors a flag; None means "not given here".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub method: Option<Method>,
    pub eps: Option<f64>,
    pub cells: Option<usize>,
    pub particles_per_cell: Option<usize>,
    pub cfl: Option<f64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub output_times: Option<Vec<f64>>,
    pub n_list: Option<Vec<usize>>,
    pub realizations: Option<usize>,
    pub ref_particles: Option<usize>,
    pub ref_realizations: Option<usize>,
}

impl Overrides {
    /// Read settings from a parsed config map, rejecting unknown keys.
    pub fn from_map(map: &HashMap<String, String>) -> Result<Overrides> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value '{value}' for '{key}'")))
        }
        let mut o = Overrides::default();
        for (key, value) in map {
            match key.as_str() {
                "scenario" => o.scenario = Some(value.clone()),
                "method" => o.method = Some(value.parse()?),
                "eps" => o.eps = Some(parse(key, value)?),
                "cells" => o.cells = Some(parse(key, value)?),
                "particles_per_cell" => o.particles_per_cell = Some(parse(key, value)?),
                "cfl" => o.cfl = Some(parse(key, value)?),
                "dt" => o.dt = Some(parse(key, value)?),
                "t_final" => o.t_final = Some(parse(key, value)?),
                "seed" => o.seed = Some(parse(key, value)?),
                "out" => o.out = Some(PathBuf::from(value)),
                "output_times" => o.output_times = Some(parse_list(value, "output time")?),
                "n_list" => o.n_list = Some(parse_list(value, "particle count")?),
                "realizations" => o.realizations = Some(parse(key, value)?),
                "ref_particles" => o.ref_particles = Some(parse(key, value)?),
                "ref_realizations" => o.ref_realizations = Some(parse(key, value)?),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown config key '{other}'"
                    )))
                }
            }
        }
        Ok(o)
    }

    /// Layer two sources: values in `self` win over `fallback`.
    pub fn layered_over(self, fallback: Overrides) -> Overrides {
        Overrides {
            scenario: self.scenario.or(fallback.scenario),
            method: self.method.or(fallback.method),
            eps: self.eps.or(fallback.eps),
            cells: self.cells.or(fallback.cells),
            particles_per_cell: self.particles_per_cell.or(fallback.particles_per_cell),
            cfl: self.cfl.or(fallback.cfl),
            dt: self.dt.or(fallback.dt),
            t_final: self.t_final.or(fallback.t_final),
            seed: self.seed.or(fallback.seed),
            out: self.out.or(fallback.out),
            output_times: self.output_times.or(fallback.output_times),
            n_list: self.n_list.or(fallback.n_list),
            realizations: self.realizations.or(fallback.realizations),
            ref_particles: self.ref_particles.or(fallback.ref_particles),
            ref_realizations: self.ref_realizations.or(fallback.ref_realizations),
        }
    }

    /// Push the scenario-shaped settings into a scenario definition.
    pub fn apply_to_scenario(&self, scenario: &mut Scenario) {
        if let Some(n) = self.cells {
            scenario.n_cells = n;
        }
        if let Some(p) = self.particles_per_cell {
            scenario.particles_per_cell = p;
        }
        if let Some(eps) = self.eps {
            scenario.eps = eps;
        }
        if let Some(t) = self.t_final {
            scenario.t_final = t;
        }
        if let Some(dt) = self.dt {
            scenario.fixed_dt = Some(dt);
        }
        if let Some(times) = &self.output_times {
            scenario.output_times = times.clone();
        } else if self.t_final.is_some() {
            // a shortened run drops the scenario's stock output times that
            // now lie beyond the horizon
            let horizon = scenario.t_final;
            scenario.output_times.retain(|&t| t <= horizon);
        }
    }

    /// Scheme parameters implied by these settings on top of a scenario.
    pub fn scheme_params(&self, scenario: &Scenario) -> Result<SchemeParams> {
        let eps = self.eps.unwrap_or(scenario.eps);
        let cfl = self.cfl.unwrap_or(0.5);
        SchemeParams::new(eps, cfl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::primitive_to_conserved;
    use crate::scenario::builtin_scenario;
    use approx::assert_relative_eq;

    fn uniform(n: usize, rho: f64, ux: f64, temperature: f64) -> MacroState {
        MacroState::uniform(
            n,
            primitive_to_conserved(rho, [ux, 0.0, 0.0], temperature).unwrap(),
        )
    }

    #[test]
    fn identical_realizations_have_zero_error() {
        let reference = uniform(8, 1.0, 0.3, 1.0);
        let reals = vec![reference.clone(), reference.clone(), reference.clone()];
        let sigma = sigma_squared(&reals, &reference).unwrap();
        assert!(sigma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_symmetric_deviations_give_d_squared() {
        let d = 0.01;
        let reference = uniform(1, 1.0, 0.0, 1.0);
        let reals = vec![uniform(1, 1.0 + d, 0.0, 1.0), uniform(1, 1.0 - d, 0.0, 1.0)];
        let sigma = sigma_squared(&reals, &reference).unwrap();
        assert_relative_eq!(sigma[0], d * d, max_relative = 1e-12);
        // at rest, total energy is 1.5 rho T, so its deviation is 1.5 d
        assert_relative_eq!(sigma[4], 2.25 * d * d, max_relative = 1e-12);
        // temperature is the same in all realizations
        assert!(sigma[8].abs() < 1e-28);
        assert!(sigma.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn realization_order_does_not_matter() {
        let reference = uniform(4, 1.0, 0.1, 1.2);
        let reals = vec![
            uniform(4, 1.02, 0.11, 1.21),
            uniform(4, 0.97, 0.09, 1.18),
            uniform(4, 1.01, 0.12, 1.23),
        ];
        let forward = sigma_squared(&reals, &reference).unwrap();
        let mut reversed = reals.clone();
        reversed.reverse();
        let backward = sigma_squared(&reversed, &reference).unwrap();
        for c in 0..10 {
            assert_relative_eq!(forward[c], backward[c], max_relative = 1e-12);
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let reference = uniform(4, 1.0, 0.0, 1.0);
        let reals = vec![uniform(5, 1.0, 0.0, 1.0)];
        assert!(matches!(
            sigma_squared(&reals, &reference),
            Err(Error::GridMismatch {
                expected: 4,
                got: 5
            })
        ));
        assert!(mean_state(&[uniform(4, 1.0, 0.0, 1.0), uniform(3, 1.0, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn mean_state_averages_cellwise() {
        let mean = mean_state(&[uniform(2, 1.0, 0.0, 1.0), uniform(2, 3.0, 0.0, 1.0)]).unwrap();
        assert_relative_eq!(mean.cells[0].mass, 2.0, max_relative = 1e-15);
        assert_relative_eq!(mean.cells[1].mass, 2.0, max_relative = 1e-15);
    }

    #[test]
    fn study_config_guards() {
        let mut cfg = ErrorStudyConfig {
            realizations: 1,
            ..ErrorStudyConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.realizations = 2;
        cfg.ref_particles = 400;
        assert!(cfg.validate().is_err());
        cfg.ref_particles = 401;
        assert!(cfg.validate().is_ok());
        cfg.n_list.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn deterministic_method_has_exactly_zero_study_error() {
        let mut scenario = builtin_scenario("smooth-accuracy").unwrap();
        scenario.t_final = 0.005;
        scenario.output_times.clear();
        let params = SchemeParams::new(1e-2, 0.5).unwrap();
        let cfg = ErrorStudyConfig {
            n_list: vec![10, 20],
            realizations: 2,
            ref_particles: 50,
            ref_realizations: 2,
            seed: 9,
        };
        let rows = error_study(&scenario, Method::Euler, &params, &cfg).unwrap();
        assert_eq!(rows.len(), 2 * ERROR_FIELDS.len());
        assert!(rows.iter().all(|r| r.sigma2 == 0.0));
    }

    #[test]
    fn snapshot_csv_round_trips_values() {
        let grid = Grid::new(2, 0.0, 1.0).unwrap();
        let state = uniform(2, 1.25, 0.5, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.csv");
        write_snapshot_csv(&path, &grid, &state).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,rho,ux,uy,uz,T,p,E");
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_relative_eq!(first[0], 0.25, max_relative = 1e-15);
        assert_relative_eq!(first[1], 1.25, max_relative = 1e-15);
        assert_relative_eq!(first[2], 0.5, max_relative = 1e-15);
        assert_relative_eq!(first[5], 2.0, max_relative = 1e-15);
        assert_relative_eq!(first[6], 2.5, max_relative = 1e-15);
        // E = rho (3T/2 + |u|^2/2)
        assert_relative_eq!(first[7], 1.25 * (1.5 * 2.0 + 0.125), max_relative = 1e-15);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn snapshot_names_use_plain_time_and_method() {
        assert_eq!(
            snapshot_filename(0.08, Method::Mgmc),
            "fields_t0.08_mgmc.csv"
        );
        assert_eq!(snapshot_filename(0.0, Method::Euler), "fields_t0_euler.csv");
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut scenario = builtin_scenario("sod").unwrap();
        scenario.n_cells = 20;
        scenario.particles_per_cell = 10;
        scenario.t_final = 0.004;
        scenario.output_times = vec![0.002, 0.004];
        let params = SchemeParams::new(1e-2, 0.5).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut written = Vec::new();
        for dir in &dirs {
            let (_, files) =
                run_scenario(&scenario, Method::Mgmc, &params, 77, dir.path()).unwrap();
            assert_eq!(files.len(), 3);
            written.push(files);
        }
        for (a, b) in written[0].iter().zip(&written[1]) {
            assert_eq!(a.file_name(), b.file_name());
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?} differs");
        }
    }

    #[test]
    fn config_text_parses_comments_and_hyphens() {
        let map = parse_config_text(
            "# study setup\nscenario = sod\nt-final = 0.04  # short run\n\nn_list = 25, 100\n",
        )
        .unwrap();
        assert_eq!(map["scenario"], "sod");
        assert_eq!(map["t_final"], "0.04");
        let o = Overrides::from_map(&map).unwrap();
        assert_eq!(o.t_final, Some(0.04));
        assert_eq!(o.n_list.as_deref(), Some(&[25, 100][..]));

        assert!(parse_config_text("just words\n").is_err());
        let bad = HashMap::from([("cells_per_side".to_string(), "4".to_string())]);
        assert!(Overrides::from_map(&bad).is_err());
    }

    #[test]
    fn command_line_wins_over_file() {
        let file = Overrides {
            eps: Some(1e-2),
            cells: Some(50),
            seed: Some(1),
            ..Overrides::default()
        };
        let cli = Overrides {
            eps: Some(1e-4),
            ..Overrides::default()
        };
        let merged = cli.layered_over(file);
        assert_eq!(merged.eps, Some(1e-4));
        assert_eq!(merged.cells, Some(50));
        assert_eq!(merged.seed, Some(1));

        let mut scenario = builtin_scenario("sod").unwrap();
        merged.apply_to_scenario(&mut scenario);
        assert_eq!(scenario.n_cells, 50);
        assert_relative_eq!(scenario.eps, 1e-4);
        // shortening the run prunes stock output times past the new horizon
        let shorter = Overrides {
            t_final: Some(0.02),
            ..Overrides::default()
        };
        shorter.apply_to_scenario(&mut scenario);
        assert!(scenario.output_times.is_empty());
        assert!(scenario.validate().is_ok());
        let params = merged.scheme_params(&scenario).unwrap();
        assert_relative_eq!(params.eps, 1e-4);
        assert_relative_eq!(params.cfl, 0.5);
    }
}
