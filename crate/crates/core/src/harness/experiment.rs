//! Replication experiments.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::seeds::{derive_seed, CHAIN_STREAM, DATA_STREAM, INIT_STREAM};
use super::target::StateLayout;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fisher::{IntegrationSpec, UnknownConfig};
use crate::mcmc::{diagnose, run_rwmh, Chain, ChainDiagnostics, DiagnosticThresholds, McmcConfig};
use crate::mixture::{format_f64, Component, DataSet, MixtureModel};
use crate::priors::PriorKind;

pub const DEFAULT_REPLICATIONS: usize = 10;
pub const DEFAULT_DESK_ITERATIONS: usize = 20_000;
pub const FULL_REPLICATIONS: usize = 50;
pub const FULL_ITERATIONS: usize = 100_000;
pub const DEFAULT_INIT_SLACK: f64 = 20.0;
pub const DEFAULT_INIT_TRIES: usize = 10_000;

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}
fn default_init_slack() -> f64 {
    DEFAULT_INIT_SLACK
}
fn default_init_tries() -> usize {
    DEFAULT_INIT_TRIES
}
fn default_mcmc() -> McmcConfig {
    McmcConfig { iterations: DEFAULT_DESK_ITERATIONS, burnin: DEFAULT_DESK_ITERATIONS / 10, ..McmcConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub truth: MixtureModel,
    pub config: UnknownConfig,
    pub prior: PriorKind,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_mcmc")]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub thresholds: DiagnosticThresholds,
    /// Initial states must have log-likelihood at least that of the truth
    /// minus this slack.
    #[serde(default = "default_init_slack")]
    pub init_loglik_slack: f64,
    #[serde(default = "default_init_tries")]
    pub init_max_tries: usize,
}

impl ExperimentSpec {
    pub fn new(truth: MixtureModel, config: UnknownConfig, prior: PriorKind, sample_sizes: Vec<usize>) -> Self {
        ExperimentSpec {
            truth,
            config,
            prior,
            sample_sizes,
            replications: DEFAULT_REPLICATIONS,
            mcmc: default_mcmc(),
            integration: IntegrationSpec::default(),
            master_seed: 0,
            thresholds: DiagnosticThresholds::default(),
            init_loglik_slack: DEFAULT_INIT_SLACK,
            init_max_tries: DEFAULT_INIT_TRIES,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Switches to 50 replications of 10^5 iterations with 10^4 burn-in.
    pub fn full_scale(mut self) -> Self {
        self.replications = FULL_REPLICATIONS;
        self.mcmc.iterations = FULL_ITERATIONS;
        self.mcmc.burnin = FULL_ITERATIONS / 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidSpec("replications must be >= 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidSpec("sample sizes must be non-empty and each >= 2".into()));
        }
        if !(self.init_loglik_slack >= 0.0) || self.init_max_tries == 0 {
            return Err(Error::InvalidSpec("initialisation slack must be >= 0 and tries >= 1".into()));
        }
        if !(self.thresholds.sigma_stuck > 0.0 && self.thresholds.mean_escape_factor > 0.0) {
            return Err(Error::InvalidSpec("diagnostic thresholds must be > 0".into()));
        }
        self.mcmc.validate()?;
        self.integration.validate()?;
        StateLayout::new(&self.truth, self.config, self.prior)?;
        Ok(())
    }

    pub fn layout(&self) -> Result<StateLayout> {
        StateLayout::new(&self.truth, self.config, self.prior)
    }

    pub fn data_seed(&self, n: usize, r: usize) -> u64 {
        derive_seed(self.master_seed, &[n as u64, r as u64, DATA_STREAM])
    }

    pub fn init_seed(&self, n: usize, r: usize) -> u64 {
        derive_seed(self.master_seed, &[n as u64, r as u64, INIT_STREAM])
    }

    pub fn chain_seed(&self, n: usize, r: usize) -> u64 {
        derive_seed(self.master_seed, &[n as u64, r as u64, CHAIN_STREAM])
    }
}

/// Random starting state: means uniform over the data range, standard
/// deviations uniform on `(0.1 s, 2 s)`, weights `Dirichlet(1, ..., 1)`,
/// hyper-location the average of the drawn means and hyper-scale `s`.
/// Unknown parts only; the rest comes from the truth. Redrawn until the
/// log-likelihood is within `slack` of the truth's and the target is finite.
pub fn initial_state<F>(
    layout: &StateLayout,
    data: &DataSet,
    slack: f64,
    max_tries: usize,
    seed: u64,
    log_target: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = layout.template();
    let k = truth.k();
    let floor = truth.log_likelihood(data) - slack;
    let (lo, hi) = (data.min(), data.max());
    let s = data.std_dev();
    if !(s > 0.0) {
        return Err(Error::Initialization("data have zero spread".into()));
    }
    let dirichlet = Gamma::new(1.0, 1.0).expect("valid gamma");
    let config = layout.config();
    for _ in 0..max_tries {
        let means: Vec<f64> =
            if config.has_means() { (0..k).map(|_| rng.random_range(lo..=hi)).collect() } else { truth.means() };
        let sds: Vec<f64> = if config.has_scales() {
            (0..k).map(|_| rng.random_range(0.1 * s..2.0 * s)).collect()
        } else {
            truth.scales()
        };
        let weights: Vec<f64> = if config.has_weights() {
            let g: Vec<f64> = (0..k).map(|_| dirichlet.sample(&mut rng)).collect();
            let total: f64 = g.iter().sum();
            g.iter().map(|x| x / total).collect()
        } else {
            truth.weights().to_vec()
        };
        let components: Vec<Component> = truth
            .components()
            .iter()
            .zip(means.iter().zip(&sds))
            .map(|(c, (&m, &sd))| c.with_loc(m).with_scale(sd))
            .collect();
        let Ok(model) = MixtureModel::new(components, weights) else {
            continue;
        };
        if model.log_likelihood(data) < floor {
            continue;
        }
        let hyper = layout.has_hyper().then(|| (means.iter().sum::<f64>() / k as f64, s));
        let state = layout.encode(&model, hyper)?;
        if log_target(&state).is_finite() {
            return Ok(state);
        }
    }
    Err(Error::Initialization(format!(
        "no starting point within {slack} log-likelihood units of the truth after {max_tries} draws"
    )))
}

/// Output of one replication.
#[derive(Clone, Debug)]
pub struct ReplicationRun {
    pub data: DataSet,
    pub chain: Chain,
    pub diagnostics: ChainDiagnostics,
}

/// Simulates data, initialises and runs one chain.
pub fn run_replication(spec: &ExperimentSpec, n: usize, r: usize) -> Result<ReplicationRun> {
    let layout = spec.layout()?;
    let data = spec.truth.sample(n, spec.data_seed(n, r));
    let target = |x: &[f64]| layout.log_posterior(x, &data, &spec.integration);
    let init =
        initial_state(&layout, &data, spec.init_loglik_slack, spec.init_max_tries, spec.init_seed(n, r), target)?;
    let mcmc = McmcConfig { seed: spec.chain_seed(n, r), ..spec.mcmc.clone() };
    let chain = run_rwmh(target, &init, &layout.blocks(), &mcmc)?;
    let diagnostics = diagnose(&chain, &spec.truth, &data, |x| layout.decode(x), &spec.thresholds)?;
    Ok(ReplicationRun { data, chain, diagnostics })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub sample_size: usize,
    pub replication: usize,
    pub data_seed: u64,
    pub chain_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<ChainDiagnostics>,
    /// Post-burn-in averages of each state coordinate.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub posterior_means: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicationRecord {
    /// Stuck or divergent. Failed replications are not flagged.
    pub fn flagged(&self) -> bool {
        self.diagnostics.as_ref().is_some_and(|d| d.stuck_small_sigma || d.divergent_means)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample_size: usize,
    pub replications: usize,
    pub failures: usize,
    pub avg_accept_rate: f64,
    pub prop_divergent_means: f64,
    pub prop_stuck_sigma: f64,
    pub prop_flagged: f64,
    pub mean_loglik_ratio: f64,
    pub median_loglik_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<ReplicationRecord>,
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len().is_multiple_of(2) {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

/// Averages over the successful replications of each sample size, in record
/// order.
pub fn aggregate(sample_sizes: &[usize], records: &[ReplicationRecord]) -> Vec<ReportRow> {
    sample_sizes
        .iter()
        .map(|&n| {
            let rows: Vec<&ReplicationRecord> = records.iter().filter(|r| r.sample_size == n).collect();
            let ok: Vec<&ChainDiagnostics> = rows.iter().filter_map(|r| r.diagnostics.as_ref()).collect();
            let m = ok.len() as f64;
            let prop = |f: &dyn Fn(&ChainDiagnostics) -> bool| ok.iter().filter(|d| f(d)).count() as f64 / m;
            let mut ratios: Vec<f64> = ok.iter().map(|d| d.loglik_ratio).collect();
            ReportRow {
                sample_size: n,
                replications: rows.len(),
                failures: rows.len() - ok.len(),
                avg_accept_rate: ok.iter().map(|d| d.accept_rate).sum::<f64>() / m,
                prop_divergent_means: prop(&|d| d.divergent_means),
                prop_stuck_sigma: prop(&|d| d.stuck_small_sigma),
                prop_flagged: prop(&|d| d.divergent_means || d.stuck_small_sigma),
                mean_loglik_ratio: ratios.iter().sum::<f64>() / m,
                median_loglik_ratio: median(&mut ratios),
            }
        })
        .collect()
}

/// Runs every replication of every sample size. Failed replications are
/// recorded and excluded from the averages.
pub fn run_experiment(spec: &ExperimentSpec, exec: Execution) -> Result<ReplicationReport> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> =
        spec.sample_sizes.iter().flat_map(|&n| (0..spec.replications).map(move |r| (n, r))).collect();
    let records = exec::map(exec, &jobs, |&(n, r)| {
        let mut record = ReplicationRecord {
            sample_size: n,
            replication: r,
            data_seed: spec.data_seed(n, r),
            chain_seed: spec.chain_seed(n, r),
            diagnostics: None,
            posterior_means: Vec::new(),
            error: None,
        };
        match run_replication(spec, n, r) {
            Ok(run) => {
                let dim = run.chain.final_state().map_or(0, <[f64]>::len);
                record.posterior_means = (0..dim)
                    .map(|j| {
                        let t = run.chain.trace(j);
                        t.iter().sum::<f64>() / t.len() as f64
                    })
                    .collect();
                record.diagnostics = Some(run.diagnostics);
            }
            Err(e) => {
                log::warn!("replication n={n} r={r} failed: {e}");
                record.error = Some(e.to_string());
            }
        }
        record
    });
    Ok(ReplicationReport { rows: aggregate(&spec.sample_sizes, &records), records })
}

impl ReplicationReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sample_size",
            "replications",
            "failures",
            "avg_accept_rate",
            "prop_divergent_means",
            "prop_stuck_sigma",
            "prop_flagged",
            "mean_loglik_ratio",
            "median_loglik_ratio",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.sample_size.to_string(),
                r.replications.to_string(),
                r.failures.to_string(),
                format_f64(r.avg_accept_rate),
                format_f64(r.prop_divergent_means),
                format_f64(r.prop_stuck_sigma),
                format_f64(r.prop_flagged),
                format_f64(r.mean_loglik_ratio),
                format_f64(r.median_loglik_ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per replication.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        let truth = MixtureModel::gaussian(&[(0.5, -1.0, 1.0), (0.5, 2.0, 0.5)]).unwrap();
        let mut spec = ExperimentSpec::new(truth, UnknownConfig::MeansOnly, PriorKind::ConstantMeans, vec![20, 30]);
        spec.replications = 2;
        spec.mcmc = McmcConfig::new(600, 200, 0);
        spec.master_seed = 17;
        spec
    }

    #[test]
    fn deterministic_and_order_independent() {
        let spec = small_spec();
        let a = run_experiment(&spec, Execution::Sequential).unwrap();
        let b = run_experiment(&spec, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.records.len(), 4);
    }

    #[test]
    fn aggregation_matches_flag_means() {
        let diag = |stuck, div, ratio| ChainDiagnostics {
            accept_rate: 0.25,
            stuck_small_sigma: stuck,
            divergent_means: div,
            loglik_ratio: ratio,
            final_loglik: -1.0,
            true_loglik: -1.0,
        };
        let record = |r, d: Option<ChainDiagnostics>| ReplicationRecord {
            sample_size: 10,
            replication: r,
            data_seed: 0,
            chain_seed: 0,
            error: d.is_none().then(|| "boom".to_string()),
            diagnostics: d,
            posterior_means: vec![],
        };
        let records = vec![
            record(0, Some(diag(true, false, 1.0))),
            record(1, Some(diag(false, false, 2.0))),
            record(2, Some(diag(true, true, 4.0))),
            record(3, None),
        ];
        let row = &aggregate(&[10], &records)[0];
        assert_eq!(row.failures, 1);
        assert_eq!(row.prop_stuck_sigma, 2.0 / 3.0);
        assert_eq!(row.prop_divergent_means, 1.0 / 3.0);
        assert_eq!(row.prop_flagged, 2.0 / 3.0);
        assert_eq!(row.mean_loglik_ratio, 7.0 / 3.0);
        assert_eq!(row.median_loglik_ratio, 2.0);
    }

    #[test]
    fn initial_state_respects_likelihood_floor() {
        let spec = small_spec();
        let layout = spec.layout().unwrap();
        let data = spec.truth.sample(50, 3);
        let state = initial_state(&layout, &data, 20.0, 10_000, 1, |_| 0.0).unwrap();
        let ll = layout.decode(&state).unwrap().log_likelihood(&data);
        assert!(ll >= spec.truth.log_likelihood(&data) - 20.0);
        let err = initial_state(&layout, &data, 20.0, 5, 1, |_| f64::NEG_INFINITY);
        assert!(matches!(err, Err(Error::Initialization(_))));
    }

    #[test]
    fn spec_json_validation() {
        let json = r#"{
            "truth": {"components": [{"family": "gaussian", "loc": -1, "scale": 1},
                                     {"family": "gaussian", "loc": 2, "scale": 0.5}],
                      "weights": [0.5, 0.5]},
            "config": "all", "prior": "hierarchical", "sample_sizes": [10, 100],
            "master_seed": 3
        }"#;
        let spec = ExperimentSpec::from_json_str(json).unwrap();
        assert_eq!(spec.replications, 10);
        assert_eq!(spec.mcmc.iterations, 20_000);
        assert!(ExperimentSpec::from_json_str(&json.replace("[10, 100]", "[1]")).is_err());
        assert!(ExperimentSpec::from_json_str(&json.replace("\"all\"", "\"weights-only\"")).is_err());
        assert!(ExperimentSpec::from_json_str(&json.replace("master_seed", "seed")).is_err());
        let full = spec.full_scale();
        assert_eq!((full.replications, full.mcmc.iterations, full.mcmc.burnin), (50, 100_000, 10_000));
    }
}
