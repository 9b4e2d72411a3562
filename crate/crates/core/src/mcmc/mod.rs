//! Adaptive random-walk Metropolis–Hastings with per-block kernels.
//!
//! One block is updated per iteration and blocks are visited cyclically.

mod diagnostics;

pub use diagnostics::{diagnose, effective_sample_size, ChainDiagnostics, DiagnosticThresholds};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mixture::{format_f64, normal_quantile};

pub const DEFAULT_ITERATIONS: usize = 100_000;
pub const DEFAULT_BURNIN: usize = 10_000;
pub const DEFAULT_ADAPT_WINDOW: usize = 100;
pub const DEFAULT_ACCEPT_BAND: (f64, f64) = (0.2, 0.4);
pub const DEFAULT_INITIAL_SCALE: f64 = 0.1;

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_burnin() -> usize {
    DEFAULT_BURNIN
}
fn default_adapt_window() -> usize {
    DEFAULT_ADAPT_WINDOW
}
fn default_accept_band() -> (f64, f64) {
    DEFAULT_ACCEPT_BAND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_adapt_window")]
    pub adapt_window: usize,
    #[serde(default = "default_accept_band")]
    pub accept_band: (f64, f64),
    #[serde(default)]
    pub seed: u64,
    /// One proposal scale per block; empty means [`DEFAULT_INITIAL_SCALE`] everywhere.
    #[serde(default)]
    pub initial_scales: Vec<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: DEFAULT_ITERATIONS,
            burnin: DEFAULT_BURNIN,
            adapt_window: DEFAULT_ADAPT_WINDOW,
            accept_band: DEFAULT_ACCEPT_BAND,
            seed: 0,
            initial_scales: Vec::new(),
        }
    }
}

impl McmcConfig {
    pub fn new(iterations: usize, burnin: usize, seed: u64) -> Self {
        McmcConfig { iterations, burnin, seed, ..McmcConfig::default() }
    }

    pub fn with_initial_scales(mut self, scales: Vec<f64>) -> Self {
        self.initial_scales = scales;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burnin >= self.iterations {
            return bad(format!("burnin {} must be < iterations {}", self.burnin, self.iterations));
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be positive".into());
        }
        let (lo, hi) = self.accept_band;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("accept_band ({lo}, {hi}) must satisfy 0 < lo < hi < 1"));
        }
        if let Some(s) = self.initial_scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("initial scales must be finite and > 0, got {s}"));
        }
        Ok(())
    }

    fn scales_for(&self, blocks: usize) -> Result<Vec<f64>> {
        match self.initial_scales.len() {
            0 => Ok(vec![DEFAULT_INITIAL_SCALE; blocks]),
            n if n == blocks => Ok(self.initial_scales.clone()),
            n => Err(Error::DimensionMismatch { expected: blocks, got: n }),
        }
    }
}

/// Proposal family of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// A full weight vector on the open simplex. One free weight and the last
    /// weight move by a truncated normal step.
    Simplex,
    /// Unconstrained coordinates, normal step.
    Location,
    /// Positive coordinates, log-normal multiplicative step.
    Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

/// Partition of the state vector into contiguous blocks.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockLayout {
    blocks: Vec<Block>,
}

impl BlockLayout {
    pub fn new() -> Self {
        BlockLayout::default()
    }

    /// Appends a block covering the next `len` coordinates.
    pub fn push(mut self, kind: BlockKind, len: usize) -> Self {
        let start = self.dim();
        self.blocks.push(Block { kind, start, len });
        self
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidSpec("block layout is empty".into()));
        }
        for b in &self.blocks {
            let min = if b.kind == BlockKind::Simplex { 2 } else { 1 };
            if b.len < min {
                return Err(Error::InvalidSpec(format!("{:?} block needs at least {min} coordinates", b.kind)));
            }
        }
        Ok(())
    }

    /// Whether `state` satisfies the support constraints of every block.
    pub fn in_support(&self, state: &[f64]) -> bool {
        state.len() == self.dim()
            && state.iter().all(|x| x.is_finite())
            && self.blocks.iter().all(|b| {
                let xs = &state[b.start..b.start + b.len];
                match b.kind {
                    BlockKind::Location => true,
                    BlockKind::Scale => xs.iter().all(|&x| x > 0.0),
                    BlockKind::Simplex => xs.iter().all(|&x| x > 0.0) && (xs.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
                }
            })
    }
}

/// Multiplicative scale adaptation towards the acceptance band.
pub fn adapt_scale(scale: f64, rate: f64, band: (f64, f64)) -> f64 {
    if rate < band.0 {
        scale * 0.9
    } else if rate > band.1 {
        scale * 1.1
    } else {
        scale
    }
}

pub fn adapt_scales(scales: &[f64], rates: &[f64], band: (f64, f64)) -> Vec<f64> {
    scales.iter().zip(rates).map(|(&s, &r)| adapt_scale(s, r, band)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSnapshot {
    /// Scales in force from this iteration on.
    pub iteration: usize,
    pub scales: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub states: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Index of the block updated at each iteration.
    pub block: Vec<usize>,
    pub scale_history: Vec<ScaleSnapshot>,
    pub burnin: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Acceptance rate over iterations `from..`.
    pub fn acceptance_rate_from(&self, from: usize) -> f64 {
        let tail = &self.accepted[from.min(self.accepted.len())..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|&&a| a).count() as f64 / tail.len() as f64
    }

    pub fn post_burnin_acceptance(&self) -> f64 {
        self.acceptance_rate_from(self.burnin)
    }

    /// Coordinate `j` over post-burn-in iterations.
    pub fn trace(&self, j: usize) -> Vec<f64> {
        self.states[self.burnin.min(self.len())..].iter().map(|s| s[j]).collect()
    }

    /// Scales in force at iteration `t`.
    pub fn scales_at(&self, t: usize) -> &[f64] {
        let idx = self.scale_history.partition_point(|s| s.iteration <= t);
        &self.scale_history[idx.saturating_sub(1)].scales
    }

    /// One row per iteration: `iteration, <labels...>, log_post, accepted`.
    pub fn write_csv<W: Write>(&self, out: W, labels: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.states.first().map_or(labels.len(), Vec::len);
        if labels.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: labels.len() });
        }
        let mut header = vec!["iteration".to_string()];
        header.extend(labels.iter().cloned());
        header.extend(["log_post".to_string(), "accepted".to_string()]);
        w.write_record(&header)?;
        for (t, state) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(state.iter().map(|&x| format_f64(x)));
            row.push(format_f64(self.log_post[t]));
            row.push(u8::from(self.accepted[t]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Draws `e ~ N(0, s^2)` truncated to `(lo, hi)` with `lo < 0 < hi`, and
/// returns it with `log Z`, `Z = P(lo < e < hi)`.
fn truncated_normal_step(rng: &mut ChaCha8Rng, s: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (std_normal_cdf(lo / s), std_normal_cdf(hi / s));
    let u: f64 = rng.random();
    let e = s * normal_quantile(a + u * (b - a));
    (e.clamp(lo, hi), (b - a).ln())
}

fn truncation_log_mass(s: f64, lo: f64, hi: f64) -> f64 {
    (std_normal_cdf(hi / s) - std_normal_cdf(lo / s)).ln()
}

/// Proposes a move of `block` in place and returns the log proposal ratio
/// `log q(x | x') - log q(x' | x)`, or `None` when the proposal leaves the
/// support.
fn propose(rng: &mut ChaCha8Rng, block: &Block, scale: f64, x: &mut [f64]) -> Option<f64> {
    let xs = &mut x[block.start..block.start + block.len];
    match block.kind {
        BlockKind::Location => {
            for v in xs.iter_mut() {
                *v += scale * rng.sample::<f64, _>(StandardNormal);
            }
            Some(0.0)
        }
        BlockKind::Scale => {
            let mut log_jac = 0.0;
            for v in xs.iter_mut() {
                let step = scale * rng.sample::<f64, _>(StandardNormal);
                *v *= step.exp();
                log_jac += step;
            }
            xs.iter().all(|&v| v > 0.0 && v.is_finite()).then_some(log_jac)
        }
        BlockKind::Simplex => {
            let last = xs.len() - 1;
            let i = rng.random_range(0..last);
            let (wi, wl) = (xs[i], xs[last]);
            let (e, log_z) = truncated_normal_step(rng, scale, -wi, wl);
            let (ni, nl) = (wi + e, wl - e);
            if !(ni > 0.0 && nl > 0.0) {
                return None;
            }
            xs[i] = ni;
            xs[last] = nl;
            let log_z_rev = truncation_log_mass(scale, -ni, nl);
            log_z_rev.is_finite().then_some(log_z - log_z_rev)
        }
    }
}

/// Runs the sampler from `init`. Deterministic given `config.seed`.
pub fn run_rwmh<F>(log_target: F, init: &[f64], layout: &BlockLayout, config: &McmcConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    layout.validate()?;
    if init.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), got: init.len() });
    }
    if !layout.in_support(init) {
        return Err(Error::Initialization("initial state violates the block constraints".into()));
    }
    let mut current_lp = log_target(init);
    if !current_lp.is_finite() {
        return Err(Error::Initialization(format!("log target at the initial state is {current_lp}")));
    }

    let blocks = layout.blocks();
    let mut scales = config.scales_for(blocks.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.iterations;
    let mut chain = Chain {
        states: Vec::with_capacity(n),
        log_post: Vec::with_capacity(n),
        accepted: Vec::with_capacity(n),
        block: Vec::with_capacity(n),
        scale_history: vec![ScaleSnapshot { iteration: 0, scales: scales.clone() }],
        burnin: config.burnin,
    };
    let mut window_tries = vec![0usize; blocks.len()];
    let mut window_accepts = vec![0usize; blocks.len()];
    let mut current = init.to_vec();
    let mut proposal = current.clone();

    for t in 0..n {
        let b = t % blocks.len();
        proposal.copy_from_slice(&current);
        let accepted = match propose(&mut rng, &blocks[b], scales[b], &mut proposal) {
            Some(log_q) => {
                let lp = log_target(&proposal);
                let log_alpha = lp - current_lp + log_q;
                let u: f64 = rng.random();
                if lp.is_finite() && (log_alpha >= 0.0 || u.ln() < log_alpha) {
                    std::mem::swap(&mut current, &mut proposal);
                    current_lp = lp;
                    true
                } else {
                    false
                }
            }
            None => false,
        };
        chain.states.push(current.clone());
        chain.log_post.push(current_lp);
        chain.accepted.push(accepted);
        chain.block.push(b);

        if t < config.burnin {
            window_tries[b] += 1;
            window_accepts[b] += usize::from(accepted);
            if (t + 1) % config.adapt_window == 0 {
                for j in 0..blocks.len() {
                    if window_tries[j] > 0 {
                        let rate = window_accepts[j] as f64 / window_tries[j] as f64;
                        scales[j] = adapt_scale(scales[j], rate, config.accept_band);
                    }
                }
                window_tries.fill(0);
                window_accepts.fill(0);
                chain.scale_history.push(ScaleSnapshot { iteration: t + 1, scales: scales.clone() });
            }
        }
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn location(d: usize) -> BlockLayout {
        BlockLayout::new().push(BlockKind::Location, d)
    }

    #[test]
    fn flat_target_accepts_everything() {
        let config = McmcConfig::new(2000, 500, 1);
        let chain = run_rwmh(|_| 0.0, &[0.0], &location(1), &config).unwrap();
        assert_eq!(chain.post_burnin_acceptance(), 1.0);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let target = |x: &[f64]| -0.5 * x[0] * x[0] - x[1].ln() * 2.0 - x[1];
        let layout = location(1).push(BlockKind::Scale, 1);
        let config = McmcConfig::new(3000, 1000, 42);
        let a = run_rwmh(target, &[0.3, 1.0], &layout, &config).unwrap();
        let b = run_rwmh(target, &[0.3, 1.0], &layout, &config).unwrap();
        assert_eq!(a, b);
        let c = run_rwmh(target, &[0.3, 1.0], &layout, &McmcConfig::new(3000, 1000, 43)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn conjugate_normal_mean() {
        // N(mu, 1) data with a flat prior: mu | x ~ N(xbar, 1/n)
        let data: Vec<f64> = (0..20).map(|i| ((i * 7919) % 13) as f64 / 4.0 - 1.0).collect();
        let n = data.len() as f64;
        let xbar = data.iter().sum::<f64>() / n;
        let target = |x: &[f64]| -0.5 * data.iter().map(|d| (d - x[0]).powi(2)).sum::<f64>();
        let chain = run_rwmh(target, &[0.0], &location(1), &McmcConfig::new(10_000, 1_000, 7)).unwrap();
        let trace = chain.trace(0);
        let mean = trace.iter().sum::<f64>() / trace.len() as f64;
        let mcse = (1.0 / n).sqrt() / effective_sample_size(&trace).sqrt();
        assert!((mean - xbar).abs() < 3.0 * mcse, "{mean} vs {xbar} (mcse {mcse})");
    }

    #[test]
    fn standard_normal_smoke_test() {
        let chain =
            run_rwmh(|x: &[f64]| -0.5 * x[0] * x[0], &[0.0], &location(1), &McmcConfig::new(100_000, 10_000, 3))
                .unwrap();
        let trace = chain.trace(0);
        let m = trace.iter().sum::<f64>() / trace.len() as f64;
        let v = trace.iter().map(|x| (x - m).powi(2)).sum::<f64>() / trace.len() as f64;
        assert!(m.abs() <= 3.0 / effective_sample_size(&trace).sqrt());
        assert!((v - 1.0).abs() < 0.1, "{v}");
        let rate = chain.post_burnin_acceptance();
        assert!((0.15..0.5).contains(&rate), "{rate}");
    }

    #[test]
    fn log_normal_block_recovers_inverse_gamma_mean() {
        // sigma with prior 1/sigma: sigma^2 | x ~ IG(n/2, S/2), E = S/(n-2)
        let (n, s) = (12.0, 30.0);
        let target = |x: &[f64]| -n * x[0].ln() - s / (2.0 * x[0] * x[0]) - x[0].ln();
        let layout = BlockLayout::new().push(BlockKind::Scale, 1);
        let chain = run_rwmh(target, &[1.0], &layout, &McmcConfig::new(100_000, 10_000, 11)).unwrap();
        let var: Vec<f64> = chain.trace(0).iter().map(|x| x * x).collect();
        let mean = var.iter().sum::<f64>() / var.len() as f64;
        let sd = (var.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / var.len() as f64).sqrt();
        let mcse = sd / effective_sample_size(&var).sqrt();
        let exact = s / (n - 2.0);
        assert!((mean - exact).abs() < 3.0 * mcse, "{mean} vs {exact} (mcse {mcse})");
    }

    #[test]
    fn simplex_block_stays_in_the_open_simplex_and_targets_dirichlet() {
        // Dirichlet(2, 3, 5): marginal means 0.2, 0.3, 0.5
        let alpha = [2.0, 3.0, 5.0];
        let target = |w: &[f64]| w.iter().zip(alpha).map(|(x, a)| (a - 1.0) * x.ln()).sum::<f64>();
        let layout = BlockLayout::new().push(BlockKind::Simplex, 3);
        let chain = run_rwmh(target, &[0.4, 0.3, 0.3], &layout, &McmcConfig::new(60_000, 5_000, 5)).unwrap();
        assert!(chain.states.iter().all(|s| layout.in_support(s)));
        for (j, a) in alpha.iter().enumerate() {
            let tr = chain.trace(j);
            let m = tr.iter().sum::<f64>() / tr.len() as f64;
            let var = a / 10.0 * (1.0 - a / 10.0) / 11.0;
            let mcse = (var / effective_sample_size(&tr)).sqrt();
            assert!((m - a / 10.0).abs() < 4.0 * mcse, "w{j}: {m}");
        }
    }

    #[test]
    fn adaptation_rule_and_freeze() {
        assert_eq!(adapt_scale(1.0, 0.3, (0.2, 0.4)), 1.0);
        assert_eq!(adapt_scale(1.0, 0.05, (0.2, 0.4)), 0.9);
        assert_eq!(adapt_scale(1.0, 0.5, (0.2, 0.4)), 1.1);
        let mut s = 1.0;
        for _ in 0..50 {
            let next = adapt_scale(adapt_scale(s, 0.1, (0.2, 0.4)), 0.5, (0.2, 0.4));
            assert!(next > 0.9 * s && next < 1.1 * s);
            s = next;
        }

        let config = McmcConfig::new(5000, 2000, 9).with_initial_scales(vec![50.0]);
        let chain = run_rwmh(|x: &[f64]| -0.5 * x[0] * x[0], &[0.0], &location(1), &config).unwrap();
        assert!(chain.scale_history.iter().all(|s| s.iteration <= 2000));
        let frozen = chain.scales_at(2000).to_vec();
        assert!(frozen[0] < 50.0);
        for t in 2000..5000 {
            assert_eq!(chain.scales_at(t), frozen.as_slice());
        }
    }

    #[test]
    fn never_visits_impossible_states() {
        let target = |x: &[f64]| if x[0] > 1.0 { f64::NEG_INFINITY } else { -x[0].abs() };
        let chain = run_rwmh(target, &[0.0], &location(1), &McmcConfig::new(5000, 500, 2)).unwrap();
        assert!(chain.log_post.iter().all(|l| l.is_finite()));
        assert!(chain.states.iter().all(|s| s[0] <= 1.0));
    }

    #[test]
    fn invalid_inputs() {
        let layout = location(1);
        let err = run_rwmh(|_| f64::NEG_INFINITY, &[0.0], &layout, &McmcConfig::new(10, 1, 0));
        assert!(matches!(err, Err(Error::Initialization(_))));
        assert!(McmcConfig::new(10, 10, 0).validate().is_err());
        let c = McmcConfig { accept_band: (0.5, 0.4), ..Default::default() };
        assert!(c.validate().is_err());
        assert!(run_rwmh(|_| 0.0, &[0.0, 1.0], &layout, &McmcConfig::new(10, 1, 0)).is_err());
        let simplex = BlockLayout::new().push(BlockKind::Simplex, 2);
        assert!(run_rwmh(|_| 0.0, &[0.5, 0.6], &simplex, &McmcConfig::new(10, 1, 0)).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: McmcConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(c.iterations, 100_000);
        assert_eq!(c.burnin, 10_000);
        assert_eq!(c.accept_band, (0.2, 0.4));
        assert!(serde_json::from_str::<McmcConfig>(r#"{"seeds": 4}"#).is_err());
    }

    #[test]
    fn chain_csv_layout() {
        let chain = run_rwmh(|_| 0.0, &[0.0], &location(1), &McmcConfig::new(3, 1, 0)).unwrap();
        let mut buf = Vec::new();
        chain.write_csv(&mut buf, &["mu_1".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,mu_1,log_post,accepted");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }
}
