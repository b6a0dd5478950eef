//! Command dispatch: build library objects from a validated config, run the
//! requested operation, and write artifacts (CSV/JSON/SVG) atomically with
//! a manifest. Output bytes are deterministic for a fixed config and seed.

use std::path::PathBuf;

use meanfield::dynamics::PiecewiseConstantControl;
use meanfield::io;
use meanfield::optimize::{
    barycenter_reference, estimate_value, gamma_sweep, GammaBenchmark, ValueReport,
};
use meanfield::relaxed::chatter;
use meanfield::superposition::{
    extract_velocity, path_length_identity, superpose_with, MatchingNorm,
};
use meanfield::transport::EmpiricalMeasure;

use crate::config::{CommandKind, ConfigError, ExperimentConfig};
use crate::manifest::Manifest;

/// Failures after config validation: I/O, numerics, inconsistent inputs.
/// Exits with status 1.
#[derive(Debug)]
pub struct RunError(pub String);

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for RunError {}

impl From<meanfield::Error> for RunError {
    fn from(e: meanfield::Error) -> Self {
        RunError(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError(e.to_string())
    }
}

pub enum Failure {
    Config(ConfigError),
    Run(RunError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Run(e)
    }
}

struct Artifacts {
    dir: PathBuf,
    manifest: Manifest,
}

impl Artifacts {
    fn new(config: &ExperimentConfig) -> Result<Self, RunError> {
        std::fs::create_dir_all(&config.output_dir)?;
        let canonical = serde_json::to_string_pretty(config).expect("config serializes");
        Ok(Self {
            dir: config.output_dir.clone(),
            manifest: Manifest::new(config.command.name(), config.seed, &canonical),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, RunError> {
        let path = self.dir.join(name);
        io::write_atomic(&path, contents.as_bytes())?;
        self.manifest.record(&path)?;
        Ok(path)
    }

    fn finish(self) -> Result<(), RunError> {
        let json = self.manifest.to_json();
        // manifest last, after all outputs are recorded
        let path = self.dir.join("manifest.json");
        io::write_atomic(&path, json.as_bytes())?;
        Ok(())
    }
}

/// Execute a validated config. Artifacts land in `config.output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<(), Failure> {
    match config.command {
        CommandKind::Simulate => run_simulate(config),
        CommandKind::Optimize => run_optimize(config),
        CommandKind::Chatter => run_chatter(config),
        CommandKind::Superpose => run_superpose(config),
        CommandKind::Gamma => run_gamma(config),
        CommandKind::Barycenter => run_barycenter(config),
    }
}

fn run_simulate(config: &ExperimentConfig) -> Result<(), Failure> {
    let system = config.system.as_ref().expect("validated").build()?;
    let grid = config.grid.expect("validated").to_grid()?;
    let section = config.simulate.as_ref().expect("validated");
    let x0 = section.initial.load(config.seed, "simulate-initial")?;

    let control = match &section.control {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(RunError::from)?;
            io::control_from_json(&text).map_err(RunError::from)?
        }
        None => PiecewiseConstantControl::zeros(grid, x0.len(), system.control_dim()),
    };
    if control.grid() != grid {
        return Err(RunError(format!(
            "control grid ({} cells, horizon {}) does not match the config grid",
            control.grid().cells(),
            control.grid().horizon()
        ))
        .into());
    }

    let bundle = meanfield::dynamics::integrate(&system, x0.points(), &control, config.substeps)
        .map_err(RunError::from)?;
    let mut artifacts = Artifacts::new(config)?;
    artifacts.write("trajectory.csv", &io::bundle_to_csv(&bundle))?;
    artifacts.finish()?;
    Ok(())
}

fn optimizer_report_csv(report: &ValueReport) -> String {
    let iterations: usize = report.histories.iter().map(|h| h.iterations).sum();
    format!(
        "value,converged,starts,total_iterations\n{},{},{},{}\n",
        report.value,
        report.converged,
        report.histories.len(),
        iterations
    )
}

fn run_optimize(config: &ExperimentConfig) -> Result<(), Failure> {
    let system = config.system.as_ref().expect("validated").build()?;
    let grid = config.grid.expect("validated").to_grid()?;
    let section = config.simulate.as_ref().expect("validated");
    let x0 = section.initial.load(config.seed, "optimize-initial")?;
    let optimizer = config
        .optimizer
        .unwrap_or_default()
        .to_config(config.substeps, config.seed);

    let report = estimate_value(&system, x0.points(), grid, &optimizer).map_err(RunError::from)?;
    let mut artifacts = Artifacts::new(config)?;
    artifacts.write("report.csv", &optimizer_report_csv(&report))?;
    artifacts.write("history.csv", &io::history_to_csv(&report))?;
    artifacts.write("control.json", &io::control_to_json(&report.control))?;
    artifacts.finish()?;
    Ok(())
}

fn run_chatter(config: &ExperimentConfig) -> Result<(), Failure> {
    let section = config.chatter.as_ref().expect("validated");
    let text = std::fs::read_to_string(&section.input).map_err(RunError::from)?;
    let sigma = io::relaxed_from_json(&text).map_err(RunError::from)?;
    let control = chatter(&sigma, section.m).map_err(RunError::from)?;
    let mut artifacts = Artifacts::new(config)?;
    artifacts.write("control.json", &io::control_to_json(&control))?;
    artifacts.finish()?;
    Ok(())
}

fn run_superpose(config: &ExperimentConfig) -> Result<(), Failure> {
    let section = config.superpose.as_ref().expect("validated");
    let path = io::read_marginal_path_csv(&section.input).map_err(RunError::from)?;
    let norm = match section.metric.as_str() {
        "w2" => MatchingNorm::W2,
        _ => MatchingNorm::W1,
    };
    let eta = superpose_with(&path, norm).map_err(RunError::from)?;
    let identity = path_length_identity(&path, &eta).map_err(RunError::from)?;
    let field = extract_velocity(&eta);

    let mut artifacts = Artifacts::new(config)?;
    artifacts.write("curves.csv", &io::curves_to_csv(&eta))?;
    artifacts.write(
        "length_identity.csv",
        &format!(
            "mean_curve_length,marginal_w1_length,gap\n{},{},{}\n",
            identity.mean_curve_length, identity.marginal_w1_length, identity.gap
        ),
    )?;
    let mut conflicts = String::from("node,time,curves\n");
    for c in &field.conflicts {
        let ids: Vec<String> = c.curves.iter().map(|i| i.to_string()).collect();
        conflicts.push_str(&format!("{},{},{}\n", c.node, c.time, ids.join(" ")));
    }
    artifacts.write("velocity_conflicts.csv", &conflicts)?;
    if config.plot {
        artifacts.write("curves.svg", &io::curves_to_svg(&eta))?;
    }
    artifacts.finish()?;
    Ok(())
}

fn run_gamma(config: &ExperimentConfig) -> Result<(), Failure> {
    let section = config.gamma.as_ref().expect("validated");
    let grid = config.grid.expect("validated").to_grid()?;
    let benchmark =
        GammaBenchmark::parse(&section.benchmark, config.seed).map_err(RunError::from)?;
    let optimizer = config
        .optimizer
        .unwrap_or_default()
        .to_config(config.substeps, config.seed);
    let table = gamma_sweep(benchmark, &section.sizes, grid, &optimizer).map_err(RunError::from)?;

    for row in &table.rows {
        eprintln!(
            "gamma: N = {} value = {} reference = {} rel error = {:.3e} ({:.1}s)",
            row.n, row.value, row.reference, row.relative_error, row.seconds
        );
    }
    let mut artifacts = Artifacts::new(config)?;
    artifacts.write("gamma.csv", &io::gamma_to_csv(&table))?;
    if config.plot {
        artifacts.write("gamma.svg", &io::gamma_to_svg(&table))?;
    }
    artifacts.finish()?;
    Ok(())
}

fn run_barycenter(config: &ExperimentConfig) -> Result<(), Failure> {
    let section = config.barycenter.as_ref().expect("validated");
    let grid = config.grid.expect("validated").to_grid()?;
    let (mu0, nu) = match (&section.mu0, &section.nu) {
        (Some(mu0), Some(nu)) => (
            mu0.load(config.seed, "barycenter-mu0")?,
            nu.load(config.seed, "barycenter-nu")?,
        ),
        _ => {
            let n = section.n.expect("validated");
            (
                random_unit_cloud(config.seed, "barycenter-mu0", n),
                random_unit_cloud(config.seed, "barycenter-nu", n),
            )
        }
    };

    let reference = barycenter_reference(&mu0, &nu, grid.horizon()).map_err(RunError::from)?;
    let radius = (reference.required_radius * 1.5).max(1.0);
    let system = meanfield::system::make_barycenter_system(nu, radius).map_err(RunError::from)?;
    let optimizer = config
        .optimizer
        .unwrap_or_default()
        .to_config(config.substeps, config.seed);
    let report = estimate_value(&system, mu0.points(), grid, &optimizer).map_err(RunError::from)?;
    let relative_error = (report.value - reference.value).abs() / reference.value.abs().max(1e-12);

    let mut artifacts = Artifacts::new(config)?;
    artifacts.write(
        "report.csv",
        &format!(
            "n,value,reference,relative_error,required_radius,converged\n{},{},{},{},{},{}\n",
            mu0.len(),
            report.value,
            reference.value,
            relative_error,
            reference.required_radius,
            report.converged
        ),
    )?;
    artifacts.write("history.csv", &io::history_to_csv(&report))?;
    artifacts.write("control.json", &io::control_to_json(&report.control))?;
    artifacts.finish()?;
    Ok(())
}

fn random_unit_cloud(seed: u64, label: &str, n: usize) -> EmpiricalMeasure {
    use rand::Rng;
    let mut rng = meanfield::rng::stream(seed, label);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    EmpiricalMeasure::from_rows(&rows).expect("random cloud is valid")
}

/// Dispatch with the process exit protocol: 2 for config problems, 1 for
/// runtime failures.
pub fn run_to_exit_code(source: Result<ExperimentConfig, ConfigError>) -> i32 {
    let config = match source {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match run(&config) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Re-validate a flag-built config through the same schema/semantic path as
/// file configs, so both entry points obey the same contract.
pub fn revalidate(config: &ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    crate::config::parse_config(&json)
}
