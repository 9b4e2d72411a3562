//! `jeffmix`: Jeffreys priors, grids, MCMC replications and integrator
//! comparisons for Gaussian mixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jeffmix_core::fisher::fisher_matrix;
use jeffmix_core::fisher::quadrature::{
    DEFAULT_COVERAGE, DEFAULT_DENSITY_FLOOR, DEFAULT_MC_DRAWS, DEFAULT_REL_TOL, DEFAULT_RIEMANN_POINTS,
    DEFAULT_SIGMA_SWITCH,
};
use jeffmix_core::harness::{
    compare_integrators, comparison_models, log_prior, posterior_grid, prior_grid, properness_probe, run_experiment,
    run_replication, write_comparison_csv, ComparisonSettings, ExperimentSpec, GridSpec, ProbeBox, ProbeSettings,
};
use jeffmix_core::priors::{conditional_delta_log_prior, DeltaConditioning, PriorKind};
use jeffmix_core::{DataSet, Error, Execution, IntegrationMethod, IntegrationSpec, MixtureModel, UnknownConfig};
use serde_json::json;

use output::{open_input, read_input, write_json, Meta, OutputDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "jeffmix", version, about = "Jeffreys priors and MCMC diagnostics for Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: JEFFMIX_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Gzip the chain CSV.
    #[arg(long, global = true)]
    gzip: bool,

    /// Re-run the invocation recorded in a meta.json.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Fisher information matrix of a model.
    Fisher {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: String,
        #[command(flatten)]
        integration: IntegrationArgs,
    },
    /// Log-prior over a grid of free parameters.
    PriorGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: String,
        /// Grid specification (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "jeffreys")]
        prior: String,
        #[command(flatten)]
        integration: IntegrationArgs,
    },
    /// Log-posterior over a grid of free parameters.
    PosteriorGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: String,
        #[arg(long)]
        spec: PathBuf,
        /// Data CSV with a single `x` column.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "jeffreys")]
        prior: String,
        #[command(flatten)]
        integration: IntegrationArgs,
    },
    /// One chain of an experiment, with its data and diagnostics.
    Mcmc {
        /// Experiment specification (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to the first sample size of the spec.
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        replication: usize,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        full_scale: bool,
    },
    /// All replications of an experiment.
    Replicate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// 50 replications of 10^5 iterations.
        #[arg(long)]
        full_scale: bool,
    },
    /// Mass of a prior over growing boxes.
    Probe {
        /// `delta-conditional` or a prior over the free parameters of `--model`.
        #[arg(long)]
        prior: String,
        /// Box half-widths, e.g. `10,20,40,80`.
        #[arg(long, value_delimiter = ',', required = true)]
        boxes: Vec<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = jeffmix_core::harness::probe::DEFAULT_PROBE_POINTS)]
        probe_points: usize,
        #[arg(long, default_value_t = jeffmix_core::harness::probe::DEFAULT_PLATEAU_TOL)]
        plateau_tol: f64,
        /// Known quantities of the delta-conditional prior.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[command(flatten)]
        integration: IntegrationArgs,
    },
    /// Riemann, adaptive quadrature and repeated Monte Carlo side by side.
    Integrators {
        #[arg(long, required_unless_present = "reference_models")]
        model: Option<PathBuf>,
        /// Use the two built-in three-component comparison models.
        #[arg(long)]
        reference_models: bool,
        #[arg(long, default_value = "all")]
        config: String,
        /// Entries as `row:col` pairs; defaults to the diagonal.
        #[arg(long, value_delimiter = ',')]
        elements: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1500")]
        draws: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_RIEMANN_POINTS)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_REL_TOL)]
        rel_tol: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fisher { .. } => "fisher",
            Command::PriorGrid { .. } => "prior-grid",
            Command::PosteriorGrid { .. } => "posterior-grid",
            Command::Mcmc { .. } => "mcmc",
            Command::Replicate { .. } => "replicate",
            Command::Probe { .. } => "probe",
            Command::Integrators { .. } => "integrators",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Riemann,
    Quad,
    Mc,
    Auto,
}

#[derive(Args, Debug, Clone)]
struct IntegrationArgs {
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_RIEMANN_POINTS)]
    points: usize,
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    rel_tol: f64,
    #[arg(long, default_value_t = DEFAULT_COVERAGE)]
    coverage: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_SWITCH)]
    sigma_switch: f64,
    /// Monte Carlo seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit integration range `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    bounds: Option<Vec<f64>>,
}

impl IntegrationArgs {
    fn spec(&self) -> CliResult<IntegrationSpec> {
        let method = match self.method {
            MethodArg::Riemann => IntegrationMethod::Riemann { points: self.points },
            MethodArg::Quad => IntegrationMethod::AdaptiveQuadrature { rel_tol: self.rel_tol },
            MethodArg::Mc => IntegrationMethod::MonteCarlo { draws: self.draws, seed: self.seed },
            MethodArg::Auto => IntegrationMethod::Auto {
                sigma_switch: self.sigma_switch,
                points: self.points,
                draws: self.draws,
                seed: self.seed,
            },
        };
        let spec = IntegrationSpec {
            method,
            coverage: self.coverage,
            density_floor: DEFAULT_DENSITY_FLOOR,
            bounds: self.bounds.as_ref().map(|b| (b[0], b[1])),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn load_model(path: &Path) -> CliResult<MixtureModel> {
    MixtureModel::from_json_str(&read_input(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_experiment(path: &Path, seed: Option<u64>, full_scale: bool) -> CliResult<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_json_str(&read_input(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    if full_scale {
        spec = spec.full_scale();
    }
    spec.validate()?;
    Ok(spec)
}

fn load_grid(path: &Path) -> CliResult<GridSpec> {
    serde_json::from_str(&read_input(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn parse_elements(items: &[String], d: usize) -> CliResult<Vec<(usize, usize)>> {
    if items.is_empty() {
        return Ok((0..d).map(|a| (a, a)).collect());
    }
    items
        .iter()
        .map(|s| {
            let (a, b) = s.split_once(':').ok_or_else(|| CliError::Usage(format!("element {s:?} is not row:col")))?;
            let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| CliError::Usage(format!("element {s:?}: {e}")));
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn execution(workers: usize) -> Execution {
    if workers <= 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn resolve_workers(flag: Option<usize>) -> CliResult<usize> {
    let requested = match flag {
        Some(n) => Some(n),
        None => match std::env::var("JEFFMIX_WORKERS") {
            Ok(v) => Some(v.trim().parse().map_err(|e| CliError::Usage(format!("JEFFMIX_WORKERS={v:?}: {e}")))?),
            Err(_) => None,
        },
    };
    if requested == Some(0) {
        return Err(CliError::Usage("worker count must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        Ok(1)
    }
}

/// Runs a subcommand, returning the seeds it used.
fn run(command: &Command, out: &mut OutputDir, gzip: bool, exec: Execution) -> CliResult<serde_json::Value> {
    match command {
        Command::Fisher { model, config, integration } => {
            let model = load_model(model)?;
            let config: UnknownConfig = config.parse()?;
            config.check(&model)?;
            let spec = integration.spec()?;
            let f = fisher_matrix(&model, config, &spec)?;
            out.write("fisher.csv", |w| Ok(f.write_csv(w)?))?;
            out.write("fisher.json", |w| write_json(w, &f))?;
            Ok(json!({ "integration": integration.seed }))
        }
        Command::PriorGrid { model, config, spec, prior, integration } => {
            let model = load_model(model)?;
            let config: UnknownConfig = config.parse()?;
            let prior: PriorKind = prior.parse()?;
            let grid = load_grid(spec)?;
            let ispec = integration.spec()?;
            let g = prior_grid(&model, config, &grid, &ispec, prior, exec)?;
            out.write("grid.csv", |w| Ok(g.write_csv(w)?))?;
            Ok(json!({ "integration": integration.seed }))
        }
        Command::PosteriorGrid { model, config, spec, data, prior, integration } => {
            let model = load_model(model)?;
            let config: UnknownConfig = config.parse()?;
            let prior: PriorKind = prior.parse()?;
            let grid = load_grid(spec)?;
            let data = DataSet::read_csv(open_input(data)?)?;
            let ispec = integration.spec()?;
            let g = posterior_grid(&model, config, &data, &grid, &ispec, prior, exec)?;
            out.write("grid.csv", |w| Ok(g.write_csv(w)?))?;
            Ok(json!({ "integration": integration.seed }))
        }
        Command::Mcmc { spec, sample_size, replication, seed, full_scale } => {
            let spec = load_experiment(spec, *seed, *full_scale)?;
            let n = sample_size.unwrap_or(spec.sample_sizes[0]);
            if n < 2 {
                return Err(CliError::Usage("sample size must be >= 2".into()));
            }
            let run = run_replication(&spec, n, *replication)?;
            let labels = spec.layout()?.labels();
            out.write("data.csv", |w| Ok(run.data.write_csv(w)?))?;
            out.write_maybe_gz("chain.csv", gzip, |w| Ok(run.chain.write_csv(w, &labels)?))?;
            out.write("diagnostics.jsonl", |w| {
                serde_json::to_writer(&mut *w, &run.diagnostics).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
                Ok(())
            })?;
            Ok(json!({
                "master_seed": spec.master_seed,
                "data": spec.data_seed(n, *replication),
                "init": spec.init_seed(n, *replication),
                "chain": spec.chain_seed(n, *replication),
            }))
        }
        Command::Replicate { spec, seed, full_scale } => {
            let spec = load_experiment(spec, *seed, *full_scale)?;
            let report = run_experiment(&spec, exec)?;
            out.write("report.csv", |w| Ok(report.write_csv(w)?))?;
            out.write("diagnostics.jsonl", |w| Ok(report.write_jsonl(w)?))?;
            Ok(json!({ "master_seed": spec.master_seed }))
        }
        Command::Probe { prior, boxes, model, config, probe_points, plateau_tol, mu, tau, sigma, p, integration } => {
            let ispec = integration.spec()?;
            let settings = ProbeSettings { points_per_axis: *probe_points, plateau_tol: *plateau_tol };
            if boxes.iter().any(|a| !(*a > 0.0)) {
                return Err(CliError::Usage("box half-widths must be > 0".into()));
            }
            let report = if prior == "delta-conditional" {
                let fixed = DeltaConditioning { mu: *mu, tau: *tau, sigma: *sigma, p: *p };
                conditional_delta_log_prior(0.0, &fixed, &ispec)?;
                let boxes: Vec<ProbeBox> = boxes.iter().map(|&a| vec![(-a, a)]).collect();
                properness_probe(
                    |x| conditional_delta_log_prior(x[0], &fixed, &ispec).unwrap_or(f64::NEG_INFINITY),
                    &boxes,
                    &settings,
                    exec,
                )?
            } else {
                let prior: PriorKind = prior.parse()?;
                let (Some(model), Some(config)) = (model, config) else {
                    return Err(CliError::Usage(format!("prior {prior} needs --model and --config")));
                };
                let model = load_model(model)?;
                let config: UnknownConfig = config.parse()?;
                prior.check(config)?;
                let center = config.free_params(&model)?;
                let boxes: Vec<ProbeBox> =
                    boxes.iter().map(|&a| center.iter().map(|&c| (c - a, c + a)).collect()).collect();
                properness_probe(
                    |x| match config.with_free_params(&model, x) {
                        Ok(m) => log_prior(&m, config, prior, None, &ispec),
                        Err(_) => f64::NEG_INFINITY,
                    },
                    &boxes,
                    &settings,
                    exec,
                )?
            };
            out.write("probe.csv", |w| {
                writeln!(w, "half_width,mass")?;
                for (a, m) in boxes.iter().zip(&report.masses) {
                    writeln!(w, "{},{}", jeffmix_core::mixture::format_f64(*a), jeffmix_core::mixture::format_f64(*m))?;
                }
                Ok(())
            })?;
            out.write("probe.json", |w| write_json(w, &report))?;
            Ok(json!({ "integration": integration.seed }))
        }
        Command::Integrators { model, reference_models, config, elements, draws, repeats, seed, points, rel_tol } => {
            let models: Vec<MixtureModel> = match model {
                Some(path) if !reference_models => vec![load_model(path)?],
                _ => comparison_models().to_vec(),
            };
            let config: UnknownConfig = config.parse()?;
            let settings = ComparisonSettings {
                riemann_points: *points,
                rel_tol: *rel_tol,
                mc_draws: draws.clone(),
                repeats: *repeats,
                master_seed: *seed,
            };
            let mut tables = Vec::new();
            for m in &models {
                config.check(m)?;
                let elements = parse_elements(elements, config.dim(m.k()))?;
                tables.push(compare_integrators(m, config, &elements, &settings, exec)?);
            }
            out.write("integrators.csv", |w| Ok(write_comparison_csv(&tables, w)?))?;
            Ok(json!({ "master_seed": seed }))
        }
    }
}

fn real_main() -> CliResult<()> {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| {
        let _ = e.print();
        CliError::Usage(String::new())
    })?;
    let start = Instant::now();

    let (cli, args) = match &cli.replay {
        Some(_) if cli.command.is_some() => {
            return Err(CliError::Usage("--replay cannot be combined with a subcommand".into()));
        }
        Some(path) => {
            let meta = Meta::read(path)?;
            let mut replay_argv = vec!["jeffmix".to_string()];
            replay_argv.extend(meta.args.iter().cloned());
            let mut replayed = Cli::try_parse_from(&replay_argv)
                .map_err(|e| CliError::Usage(format!("{}: recorded arguments do not parse: {e}", path.display())))?;
            if cli.out.is_some() {
                replayed.out = cli.out.clone();
            }
            if cli.workers.is_some() {
                replayed.workers = cli.workers;
            }
            (replayed, meta.args)
        }
        None => (cli, argv[1..].to_vec()),
    };
    let Some(command) = cli.command.clone() else {
        return Err(CliError::Usage("a subcommand or --replay is required; see --help".into()));
    };

    let workers = resolve_workers(cli.workers)?;
    let out_root = cli.out.clone().unwrap_or_else(|| PathBuf::from("jeffmix-out"));
    let mut out = OutputDir::create(&out_root)?;
    let seeds = run(&command, &mut out, cli.gzip, execution(workers))?;

    let mut outputs = out.written().to_vec();
    outputs.push("meta.json".into());
    let meta = Meta {
        tool: "jeffmix".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: command.name().into(),
        args,
        seeds,
        workers,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    out.write("meta.json", |w| write_json(w, &meta))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("jeffmix: {msg}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
