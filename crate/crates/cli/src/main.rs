//! Command-line front-end: configuration, orchestration and serialization
//! for the meanfield library. Every subcommand funnels into the same
//! validated [`config::ExperimentConfig`], whether it came from a JSON file
//! (`run`) or from flags.

mod config;
mod manifest;
mod run;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use config::{
    BarycenterSection, ChatterSection, CommandKind, ExperimentConfig, GammaSection, GridConfig,
    OptimizerSettings, PointsSource, RandomCloud, SimulateSection, SuperposeSection, SystemConfig,
};

#[derive(Parser)]
#[command(
    name = "meanfield",
    version,
    about = "Finite-particle experiments for multi-agent optimal control",
    long_about = "Simulation, value-function estimation, chattering, superposition \
reconstruction and value-convergence sweeps for interacting particle systems.\n\n\
Experiments are described by a JSON config (see `meanfield schema` for the \
published JSON schema); every flag-based subcommand builds the equivalent \
config and validates it the same way. Artifacts are CSV/JSON (plus SVG with \
--plot) written atomically together with a manifest.json recording the \
config hash, seed and tool version.\n\n\
The environment variable MEANFIELD_THREADS caps worker parallelism."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; per-component streams derive from it
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RK4 substeps per grid cell
    #[arg(long, default_value_t = 4)]
    substeps: usize,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Time horizon T
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Number of grid cells K
    #[arg(long, default_value_t = 10)]
    cells: usize,
}

#[derive(Args, Clone)]
struct SystemArgs {
    /// Built-in system id: barycenter, attraction or decoupled
    #[arg(long, default_value = "attraction")]
    system: String,
    /// Control-ball radius
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// State dimension (attraction/decoupled)
    #[arg(long)]
    dimension: Option<usize>,
    /// Target measure CSV (barycenter)
    #[arg(long)]
    target_csv: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OptimizerArgs {
    /// Multistart count (the first start is the zero cold start)
    #[arg(long)]
    starts: Option<usize>,
    /// Iteration budget per start
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial line-search step
    #[arg(long)]
    initial_step: Option<f64>,
    /// Backtracking factor in (0, 1)
    #[arg(long)]
    backtracking: Option<f64>,
    /// Finite-difference step (default: cbrt of machine epsilon, scaled)
    #[arg(long)]
    fd_step: Option<f64>,
    /// Stationarity tolerance on the RMS projected-gradient norm
    #[arg(long)]
    tol: Option<f64>,
}

impl OptimizerArgs {
    fn to_settings(&self) -> OptimizerSettings {
        let mut s = OptimizerSettings::default();
        if let Some(v) = self.starts {
            s.starts = v;
        }
        if let Some(v) = self.max_iters {
            s.max_iters = v;
        }
        if let Some(v) = self.initial_step {
            s.initial_step = v;
        }
        if let Some(v) = self.backtracking {
            s.backtracking = v;
        }
        if self.fd_step.is_some() {
            s.fd_step = self.fd_step;
        }
        if let Some(v) = self.tol {
            s.tol = v;
        }
        s
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file
    Run {
        /// Path to the config (validated against the published schema)
        config: PathBuf,
    },
    /// Print the published JSON schema for experiment configs
    Schema,
    /// Integrate the particle system and write the trajectory CSV
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        system: SystemArgs,
        /// Particle count for a seeded random initial cloud
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Initial cloud CSV (overrides --n)
        #[arg(long)]
        initial_csv: Option<PathBuf>,
        /// Piecewise-constant control JSON (zero control when omitted)
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Estimate the N-particle value function by projected gradient descent
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        /// Particle count for a seeded random initial cloud
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Initial cloud CSV (overrides --n)
        #[arg(long)]
        initial_csv: Option<PathBuf>,
    },
    /// Approximate a relaxed control by a chattering ordinary control
    Chatter {
        #[command(flatten)]
        common: CommonArgs,
        /// Subcells per grid cell
        #[arg(long)]
        m: usize,
        /// Relaxed-control JSON
        #[arg(long)]
        input: PathBuf,
    },
    /// Reconstruct particle curves from a marginal-path CSV
    Superpose {
        #[command(flatten)]
        common: CommonArgs,
        /// Marginal-path CSV (t, slot, x1..xd)
        #[arg(long)]
        input: PathBuf,
        /// Matching metric: w1 (default) or w2
        #[arg(long, default_value = "w1")]
        metric: String,
        /// Also write an SVG overlay of the curves
        #[arg(long)]
        plot: bool,
    },
    /// Sweep particle counts and compare values against the reference
    Gamma {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        /// Benchmark id: counterexample, barycenter, barycenter-identical
        #[arg(long, default_value = "counterexample")]
        benchmark: String,
        /// Resolutions k (N = k^2), comma separated, e.g. 4,8,16
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Particle counts, comma separated (alternative to --k)
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Also write a value-vs-N SVG
        #[arg(long)]
        plot: bool,
    },
    /// Solve one barycenter instance and compare optimizer vs reference
    Barycenter {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        /// Particle count for seeded random clouds
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Source cloud CSV (overrides the random cloud)
        #[arg(long)]
        mu0: Option<PathBuf>,
        /// Target cloud CSV (overrides the random cloud)
        #[arg(long)]
        nu: Option<PathBuf>,
    },
}

fn source_from(n: usize, csv: Option<PathBuf>, dimension: usize) -> PointsSource {
    match csv {
        Some(path) => PointsSource {
            csv: Some(path),
            ..Default::default()
        },
        None => PointsSource {
            random: Some(RandomCloud {
                n,
                dimension,
                scale: 1.0,
            }),
            ..Default::default()
        },
    }
}

fn system_config(args: &SystemArgs) -> SystemConfig {
    SystemConfig {
        id: args.system.clone(),
        radius: args.radius,
        dimension: args.dimension.or(Some(2)),
        target: None,
        target_csv: args.target_csv.clone(),
        quadratic_running: true,
    }
}

fn base_config(command: CommandKind, common: &CommonArgs) -> ExperimentConfig {
    ExperimentConfig {
        command,
        output_dir: common.out.clone(),
        seed: common.seed,
        plot: false,
        substeps: common.substeps,
        system: None,
        grid: None,
        optimizer: None,
        simulate: None,
        chatter: None,
        superpose: None,
        gamma: None,
        barycenter: None,
    }
}

fn build_config(command: Command) -> Result<ExperimentConfig, config::ConfigError> {
    let config = match command {
        Command::Run { config } => return config::read_config(&config),
        Command::Schema => unreachable!("handled before dispatch"),
        Command::Simulate {
            common,
            grid,
            system,
            n,
            initial_csv,
            control,
        } => {
            let dim = system.dimension.unwrap_or(2);
            let mut c = base_config(CommandKind::Simulate, &common);
            c.system = Some(system_config(&system));
            c.grid = Some(GridConfig {
                horizon: grid.horizon,
                cells: grid.cells,
            });
            c.simulate = Some(SimulateSection {
                initial: source_from(n, initial_csv, dim),
                control,
            });
            c
        }
        Command::Optimize {
            common,
            grid,
            system,
            optimizer,
            n,
            initial_csv,
        } => {
            let dim = system.dimension.unwrap_or(2);
            let mut c = base_config(CommandKind::Optimize, &common);
            c.system = Some(system_config(&system));
            c.grid = Some(GridConfig {
                horizon: grid.horizon,
                cells: grid.cells,
            });
            c.optimizer = Some(optimizer.to_settings());
            c.simulate = Some(SimulateSection {
                initial: source_from(n, initial_csv, dim),
                control: None,
            });
            c
        }
        Command::Chatter { common, m, input } => {
            let mut c = base_config(CommandKind::Chatter, &common);
            c.chatter = Some(ChatterSection { m, input });
            c
        }
        Command::Superpose {
            common,
            input,
            metric,
            plot,
        } => {
            let mut c = base_config(CommandKind::Superpose, &common);
            c.plot = plot;
            c.superpose = Some(SuperposeSection { input, metric });
            c
        }
        Command::Gamma {
            common,
            grid,
            optimizer,
            benchmark,
            k,
            sizes,
            plot,
        } => {
            let sizes = if !sizes.is_empty() {
                sizes
            } else if !k.is_empty() {
                k.iter().map(|&k| k * k).collect()
            } else {
                vec![16, 64, 256]
            };
            let mut c = base_config(CommandKind::Gamma, &common);
            c.plot = plot;
            c.grid = Some(GridConfig {
                horizon: grid.horizon,
                cells: grid.cells,
            });
            c.optimizer = Some(optimizer.to_settings());
            c.gamma = Some(GammaSection { benchmark, sizes });
            c
        }
        Command::Barycenter {
            common,
            grid,
            optimizer,
            n,
            mu0,
            nu,
        } => {
            let mut c = base_config(CommandKind::Barycenter, &common);
            c.grid = Some(GridConfig {
                horizon: grid.horizon,
                cells: grid.cells,
            });
            c.optimizer = Some(optimizer.to_settings());
            c.barycenter = Some(BarycenterSection {
                n: Some(n),
                mu0: mu0.map(|path| PointsSource {
                    csv: Some(path),
                    ..Default::default()
                }),
                nu: nu.map(|path| PointsSource {
                    csv: Some(path),
                    ..Default::default()
                }),
            });
            c
        }
    };
    // flag-built configs obey the same schema as file configs
    run::revalidate(&config)
}

fn init_thread_pool() {
    if let Ok(raw) = std::env::var("MEANFIELD_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => eprintln!("warning: ignoring MEANFIELD_THREADS={raw:?} (want a positive integer)"),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    init_thread_pool();
    if matches!(cli.command, Command::Schema) {
        print!("{}", config::CONFIG_SCHEMA);
        return;
    }
    let code = run::run_to_exit_code(build_config(cli.command));
    std::process::exit(code);
}
