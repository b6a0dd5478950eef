//! Experiment configuration: JSON wire format, schema validation, and
//! construction of library objects.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use meanfield::dynamics::TimeGrid;
use meanfield::optimize::OptimizerConfig;
use meanfield::system::{
    make_attraction_system, make_barycenter_system, make_decoupled_system, ControlSystem,
};
use meanfield::transport::EmpiricalMeasure;

/// The published JSON schema for experiment configs (also printed by the
/// `schema` subcommand). Configs are checked against it before any
/// computation.
pub const CONFIG_SCHEMA: &str = include_str!("../schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Simulate,
    Optimize,
    Chatter,
    Superpose,
    Gamma,
    Barycenter,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Optimize => "optimize",
            CommandKind::Chatter => "chatter",
            CommandKind::Superpose => "superpose",
            CommandKind::Gamma => "gamma",
            CommandKind::Barycenter => "barycenter",
        }
    }
}

fn default_substeps() -> usize {
    4
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub output_dir: PathBuf,
    /// Master seed; per-component streams derive from it by fixed labels.
    #[serde(default)]
    pub seed: u64,
    /// Emit SVG plots alongside the CSV artifacts.
    #[serde(default)]
    pub plot: bool,
    /// RK4 substeps per grid cell.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chatter: Option<ChatterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superpose: Option<SuperposeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barycenter: Option<BarycenterSection>,
}

/// Built-in system selection. Custom systems are library-only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// "barycenter", "attraction" or "decoupled".
    pub id: String,
    /// Control-ball radius.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// State dimension for "attraction"/"decoupled".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    /// Inline target measure for "barycenter" (one point per row).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<Vec<f64>>>,
    /// Target measure loaded from CSV for "barycenter".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_csv: Option<PathBuf>,
    /// Running cost toggle for "decoupled": |u|^2 when true, zero otherwise.
    #[serde(default = "default_true")]
    pub quadratic_running: bool,
}

fn default_radius() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub starts: usize,
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtracking: f64,
    pub fd_step: Option<f64>,
    pub tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            starts: d.starts,
            max_iters: d.max_iters,
            initial_step: d.initial_step,
            backtracking: d.backtracking,
            fd_step: d.fd_step,
            tol: d.tol,
        }
    }
}

impl OptimizerSettings {
    pub fn to_config(self, substeps: usize, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            starts: self.starts,
            max_iters: self.max_iters,
            initial_step: self.initial_step,
            backtracking: self.backtracking,
            fd_step: self.fd_step,
            tol: self.tol,
            substeps,
            seed,
        }
    }
}

/// Source of an initial point cloud: exactly one of the fields.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomCloud>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCloud {
    pub n: usize,
    pub dimension: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub initial: PointsSource,
    /// Piecewise-constant control JSON; zero control when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatterSection {
    /// Subcells per grid cell.
    pub m: usize,
    /// Relaxed-control JSON to approximate.
    pub input: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperposeSection {
    /// Marginal-path CSV (t, slot, x1..xd).
    pub input: PathBuf,
    /// "w1" (default) or "w2".
    #[serde(default = "default_metric")]
    pub metric: String,
}

fn default_metric() -> String {
    "w1".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSection {
    /// "counterexample", "barycenter" or "barycenter-identical".
    pub benchmark: String,
    /// Particle counts, strictly increasing.
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycenterSection {
    /// Particle count for seeded random clouds (ignored when both clouds
    /// are given explicitly).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<PointsSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<PointsSource>,
}

/// A config problem: malformed JSON, schema violation, or a semantic
/// inconsistency. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parse and validate a config document: JSON syntax (line-referenced
/// errors), the published schema, typed deserialization (line-referenced),
/// then semantic checks.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError(format!("malformed JSON: {e}")))?;
    validate_against_schema(&value)?;
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    validate_semantics(&config)?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn validate_against_schema(value: &serde_json::Value) -> Result<(), ConfigError> {
    let schema: serde_json::Value =
        serde_json::from_str(CONFIG_SCHEMA).expect("embedded schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("embedded schema compiles");
    let mut problems: Vec<String> = validator
        .iter_errors(value)
        .map(|err| format!("{} (at config path '{}')", err, err.instance_path))
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        problems.truncate(5);
        Err(ConfigError(format!(
            "schema violations: {}",
            problems.join("; ")
        )))
    }
}

fn validate_semantics(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let need = |present: bool, section: &str| -> Result<(), ConfigError> {
        if present {
            Ok(())
        } else {
            Err(ConfigError(format!(
                "command {:?} needs the '{section}' section",
                config.command.name()
            )))
        }
    };
    if config.substeps == 0 {
        return Err(ConfigError("substeps must be >= 1".into()));
    }
    match config.command {
        CommandKind::Simulate => {
            need(config.system.is_some(), "system")?;
            need(config.grid.is_some(), "grid")?;
            need(config.simulate.is_some(), "simulate")?;
            one_source(
                config.simulate.as_ref().unwrap().initial.clone(),
                "simulate.initial",
            )?;
        }
        CommandKind::Optimize => {
            need(config.system.is_some(), "system")?;
            need(config.grid.is_some(), "grid")?;
            need(config.simulate.is_some(), "simulate")?;
            one_source(
                config.simulate.as_ref().unwrap().initial.clone(),
                "simulate.initial",
            )?;
        }
        CommandKind::Chatter => {
            need(config.chatter.is_some(), "chatter")?;
            if config.chatter.as_ref().unwrap().m == 0 {
                return Err(ConfigError("chatter.m must be >= 1".into()));
            }
        }
        CommandKind::Superpose => {
            need(config.superpose.is_some(), "superpose")?;
            let metric = &config.superpose.as_ref().unwrap().metric;
            if metric != "w1" && metric != "w2" {
                return Err(ConfigError(format!(
                    "superpose.metric must be 'w1' or 'w2', got {metric:?}"
                )));
            }
        }
        CommandKind::Gamma => {
            need(config.grid.is_some(), "grid")?;
            need(config.gamma.is_some(), "gamma")?;
            let gamma = config.gamma.as_ref().unwrap();
            if gamma.sizes.is_empty() {
                return Err(ConfigError("gamma.sizes must be nonempty".into()));
            }
            if gamma.sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ConfigError(
                    "gamma.sizes must be strictly increasing".into(),
                ));
            }
            meanfield::optimize::GammaBenchmark::parse(&gamma.benchmark, config.seed)
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        CommandKind::Barycenter => {
            need(config.grid.is_some(), "grid")?;
            need(config.barycenter.is_some(), "barycenter")?;
            let bc = config.barycenter.as_ref().unwrap();
            if bc.n.is_none() && (bc.mu0.is_none() || bc.nu.is_none()) {
                return Err(ConfigError(
                    "barycenter needs either 'n' (seeded random clouds) or explicit 'mu0' and 'nu'"
                        .into(),
                ));
            }
        }
    }
    Ok(())
}

fn one_source(source: PointsSource, label: &str) -> Result<(), ConfigError> {
    let given =
        source.points.is_some() as u8 + source.csv.is_some() as u8 + source.random.is_some() as u8;
    if given == 1 {
        Ok(())
    } else {
        Err(ConfigError(format!(
            "{label} must set exactly one of 'points', 'csv', 'random'"
        )))
    }
}

impl PointsSource {
    /// Materialize the cloud. Random clouds draw from the stream derived
    /// from the master seed and `label`.
    pub fn load(&self, seed: u64, label: &str) -> Result<EmpiricalMeasure, ConfigError> {
        if let Some(points) = &self.points {
            return EmpiricalMeasure::from_rows(points)
                .map_err(|e| ConfigError(format!("inline points: {e}")));
        }
        if let Some(path) = &self.csv {
            return meanfield::io::read_measure_csv(path)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())));
        }
        if let Some(random) = &self.random {
            use rand::Rng;
            let mut rng = meanfield::rng::stream(seed, label);
            let rows: Vec<Vec<f64>> = (0..random.n)
                .map(|_| {
                    (0..random.dimension)
                        .map(|_| rng.gen_range(0.0..1.0) * random.scale)
                        .collect()
                })
                .collect();
            return EmpiricalMeasure::from_rows(&rows)
                .map_err(|e| ConfigError(format!("random cloud: {e}")));
        }
        Err(ConfigError("empty points source".into()))
    }
}

impl GridConfig {
    pub fn to_grid(self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::new(self.horizon, self.cells).map_err(|e| ConfigError(e.to_string()))
    }
}

impl SystemConfig {
    /// Build the named system. The barycenter target may come from inline
    /// points or a CSV file.
    pub fn build(&self) -> Result<ControlSystem, ConfigError> {
        match self.id.as_str() {
            "barycenter" => {
                let target = match (&self.target, &self.target_csv) {
                    (Some(rows), None) => EmpiricalMeasure::from_rows(rows)
                        .map_err(|e| ConfigError(format!("system.target: {e}")))?,
                    (None, Some(path)) => meanfield::io::read_measure_csv(path)
                        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?,
                    _ => {
                        return Err(ConfigError(
                            "barycenter system needs exactly one of 'target', 'target_csv'".into(),
                        ))
                    }
                };
                make_barycenter_system(target, self.radius).map_err(|e| ConfigError(e.to_string()))
            }
            "attraction" => {
                let d = self
                    .dimension
                    .ok_or_else(|| ConfigError("attraction system needs 'dimension'".into()))?;
                make_attraction_system(d, self.radius).map_err(|e| ConfigError(e.to_string()))
            }
            "decoupled" => {
                let d = self
                    .dimension
                    .ok_or_else(|| ConfigError("decoupled system needs 'dimension'".into()))?;
                make_decoupled_system(d, self.radius, self.quadratic_running)
                    .map_err(|e| ConfigError(e.to_string()))
            }
            other => Err(ConfigError(format!(
                "unknown system id {other:?}; built-ins are barycenter, attraction, decoupled"
            ))),
        }
    }
}
