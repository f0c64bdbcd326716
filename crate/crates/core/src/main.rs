use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mgmc::driver::Method;
use mgmc::harness::{
    error_study, parse_config_file, parse_list, run_scenario, write_error_study_csv,
    ErrorStudyConfig, Overrides,
};
use mgmc::scenario::{builtin_scenario, Scenario};
use mgmc::{Error, Result, SchemeParams};

#[derive(Parser)]
#[command(
    name = "mgmc",
    version,
    about = "Moment-guided Monte Carlo solver for 1D rarefied gas flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// March one scenario and write field snapshots plus step diagnostics
    Run(RunArgs),
    /// Sweep the particle count and tabulate the statistical error
    ErrorStudy(ErrorStudyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Built-in scenario: unsteady-shock, sod or smooth-accuracy
    #[arg(long)]
    scenario: Option<String>,

    /// Solver: mgmc, dsmc or euler
    #[arg(long)]
    method: Option<String>,

    /// Knudsen number
    #[arg(long)]
    eps: Option<f64>,

    /// Number of grid cells
    #[arg(long)]
    cells: Option<usize>,

    /// Initial particles per cell (ignored by the euler solver)
    #[arg(long)]
    particles_per_cell: Option<usize>,

    /// CFL fraction for adaptive time stepping
    #[arg(long)]
    cfl: Option<f64>,

    /// Fixed step size, replacing the CFL policy
    #[arg(long)]
    dt: Option<f64>,

    /// Final time
    #[arg(long)]
    t_final: Option<f64>,

    /// Root seed for all random streams
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (created if missing)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Flat key=value settings file; command-line flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated snapshot times, e.g. 0.02,0.05
    #[arg(long)]
    output_times: Option<String>,
}

#[derive(Args)]
struct ErrorStudyArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated particles-per-cell counts, e.g. 25,100,400
    #[arg(long)]
    n_list: Option<String>,

    /// Realizations per particle count
    #[arg(long)]
    realizations: Option<usize>,

    /// Particles per cell in the reference runs
    #[arg(long)]
    ref_particles: Option<usize>,

    /// Realizations averaged into the reference
    #[arg(long)]
    ref_realizations: Option<usize>,
}

fn overrides_from_common(c: &CommonArgs) -> Result<Overrides> {
    Ok(Overrides {
        scenario: c.scenario.clone(),
        method: c.method.as_deref().map(str::parse).transpose()?,
        eps: c.eps,
        cells: c.cells,
        particles_per_cell: c.particles_per_cell,
        cfl: c.cfl,
        dt: c.dt,
        t_final: c.t_final,
        seed: c.seed,
        out: c.out.clone(),
        ..Overrides::default()
    })
}

/// Command-line settings layered over the config file, if one was given.
fn merged_overrides(common: &CommonArgs, cli: Overrides) -> Result<Overrides> {
    match &common.config {
        Some(path) => {
            let file = Overrides::from_map(&parse_config_file(path)?)?;
            Ok(cli.layered_over(file))
        }
        None => Ok(cli),
    }
}

struct Resolved {
    scenario: Scenario,
    method: Method,
    params: SchemeParams,
    seed: u64,
    out: PathBuf,
}

fn resolve(merged: &Overrides) -> Result<Resolved> {
    let name = merged.scenario.as_deref().ok_or_else(|| {
        Error::InvalidConfig("a scenario name is required (--scenario or config file)".into())
    })?;
    let mut scenario = builtin_scenario(name)?;
    merged.apply_to_scenario(&mut scenario);
    let method = merged.method.ok_or_else(|| {
        Error::InvalidConfig("a method is required (--method or config file)".into())
    })?;
    let params = merged.scheme_params(&scenario)?;
    Ok(Resolved {
        scenario,
        method,
        params,
        seed: merged.seed.unwrap_or(0),
        out: merged.out.clone().unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cli = overrides_from_common(&args.common)?;
    if let Some(text) = &args.output_times {
        cli.output_times = Some(parse_list(text, "output time")?);
    }
    let merged = merged_overrides(&args.common, cli)?;
    let r = resolve(&merged)?;

    let start = Instant::now();
    let (result, files) = run_scenario(&r.scenario, r.method, &r.params, r.seed, &r.out)?;
    let elapsed = start.elapsed();

    let steps = result.diagnostics.len();
    let t_end = result.diagnostics.last().map_or(0.0, |d| d.t);
    println!(
        "{} on {}: {} cells, {} steps to t={t_end}, {:.2?}",
        r.method, r.scenario.name, r.scenario.n_cells, steps, elapsed
    );
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn cmd_error_study(args: ErrorStudyArgs) -> Result<()> {
    let mut cli = overrides_from_common(&args.common)?;
    if let Some(text) = &args.n_list {
        cli.n_list = Some(parse_list(text, "particle count")?);
    }
    cli.realizations = args.realizations;
    cli.ref_particles = args.ref_particles;
    cli.ref_realizations = args.ref_realizations;
    let merged = merged_overrides(&args.common, cli)?;
    let r = resolve(&merged)?;

    let defaults = ErrorStudyConfig::default();
    let cfg = ErrorStudyConfig {
        n_list: merged.n_list.clone().unwrap_or(defaults.n_list),
        realizations: merged.realizations.unwrap_or(defaults.realizations),
        ref_particles: merged.ref_particles.unwrap_or(defaults.ref_particles),
        ref_realizations: merged.ref_realizations.unwrap_or(defaults.ref_realizations),
        seed: r.seed,
    };

    let start = Instant::now();
    let rows = error_study(&r.scenario, r.method, &r.params, &cfg)?;
    let elapsed = start.elapsed();

    println!(
        "{} on {}: {} realizations per N against a {}-particle reference, {:.2?}",
        r.method, r.scenario.name, cfg.realizations, cfg.ref_particles, elapsed
    );
    println!("{:>8}  {:>8}  {:>14}", "N", "field", "sigma2");
    for row in rows.iter().filter(|row| row.field == "rho") {
        println!(
            "{:>8}  {:>8}  {:>14.6e}",
            row.particles_per_cell, row.field, row.sigma2
        );
    }

    std::fs::create_dir_all(&r.out)?;
    let path = r.out.join(format!("error_study_{}.csv", r.method));
    write_error_study_csv(&path, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ErrorStudy(args) => cmd_error_study(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
