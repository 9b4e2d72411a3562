//! Expected Fisher information of a mixture, assembled numerically.
//!
//! Every entry is `E[s_a(X) s_b(X)]` where `s = d log g / d theta` is the
//! analytic score of the mixture density `g`. The expectation is taken with
//! midpoint Riemann sums or adaptive Gauss–Kronrod over a coverage region of
//! the model, or with Monte Carlo draws from the model itself.

mod config;
pub mod quadrature;

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use config::UnknownConfig;
pub use quadrature::{integrate, IntegrationMethod, IntegrationSpec};

use crate::error::{Error, Result};
use crate::mixture::{format_f64, normal_quantile, Component, MixtureModel, PreparedComponent};
use crate::priors::reparam::ReparamParams;

/// Precomputed state for evaluating the score of one model at many points.
pub(crate) struct ScoreEvaluator {
    config: UnknownConfig,
    k: usize,
    comps: Vec<PreparedComponent>,
    ln_w: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
    /// d(natural)/d(reparam) for `AllReparam`.
    jacobian: Option<DMatrix<f64>>,
    ln_terms: Vec<f64>,
    natural: Vec<f64>,
}

impl ScoreEvaluator {
    pub(crate) fn new(model: &MixtureModel, config: UnknownConfig) -> Result<Self> {
        config.check(model)?;
        let k = model.k();
        let jacobian = match config {
            UnknownConfig::AllReparam => Some(ReparamParams::from_natural(model)?.natural_jacobian()),
            _ => None,
        };
        Ok(ScoreEvaluator {
            config,
            k,
            comps: model.components().iter().map(Component::prepared).collect(),
            ln_w: model.weights().iter().map(|w| w.ln()).collect(),
            means: model.means(),
            sds: model.scales(),
            jacobian,
            ln_terms: vec![0.0; k],
            natural: vec![0.0; 3 * k - 1],
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.config.dim(self.k)
    }

    /// Writes the score at `x` into `out` and returns `g(x)`, or returns
    /// `None` (leaving `out` untouched) when `g(x) < floor`.
    pub(crate) fn eval(&mut self, x: f64, floor: f64, out: &mut [f64]) -> Option<f64> {
        let k = self.k;
        for i in 0..k {
            self.ln_terms[i] = self.ln_w[i] + self.comps[i].ln_pdf(x);
        }
        let ln_g = crate::mixture::log_sum_exp(&self.ln_terms);
        let g = ln_g.exp();
        if !(g >= floor) {
            return None;
        }

        let config = self.config;
        let target: &mut [f64] = if self.jacobian.is_some() { &mut self.natural } else { out };
        let mut pos = 0;
        if config.has_means() {
            for i in 0..k {
                let r = (self.ln_terms[i] - ln_g).exp();
                target[pos + i] = r * (x - self.means[i]) / (self.sds[i] * self.sds[i]);
            }
            pos += k;
        }
        if config.has_scales() {
            for i in 0..k {
                let r = (self.ln_terms[i] - ln_g).exp();
                let z = (x - self.means[i]) / self.sds[i];
                target[pos + i] = r * (z * z - 1.0) / self.sds[i];
            }
            pos += k;
        }
        if config.has_weights() {
            // (f_i - f_k) / g
            let last = (self.comps[k - 1].ln_pdf(x) - ln_g).exp();
            for i in 0..k - 1 {
                target[pos + i] = (self.comps[i].ln_pdf(x) - ln_g).exp() - last;
            }
        }

        if let Some(jac) = &self.jacobian {
            // chain rule: s_reparam = J^T s_natural
            for (c, o) in out.iter_mut().enumerate() {
                *o = jac.column(c).iter().zip(&self.natural).map(|(j, s)| j * s).sum();
            }
        }
        Some(g)
    }
}

/// Score vector `d log g(x) / d theta` for the unknown parameters of `config`.
///
/// Returns zeros where `g(x)` is below the default density floor.
pub fn score(model: &MixtureModel, config: UnknownConfig, x: f64) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("score needs a finite x, got {x}")));
    }
    let mut eval = ScoreEvaluator::new(model, config)?;
    let mut out = vec![0.0; eval.dim()];
    eval.eval(x, quadrature::DEFAULT_DENSITY_FLOOR, &mut out);
    Ok(out)
}

/// Region over which deterministic backends integrate.
///
/// Gaussian components contribute their central `coverage` interval;
/// Student-t components contribute the matching t quantiles.
pub fn integration_region(model: &MixtureModel, spec: &IntegrationSpec) -> Result<(f64, f64)> {
    if let Some(bounds) = spec.bounds {
        return Ok(bounds);
    }
    if model.is_all_gaussian() {
        return model.coverage_interval(spec.coverage);
    }
    let upper = 0.5 + 0.5 * spec.coverage;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in model.components() {
        let z = match *c {
            Component::Gaussian { .. } => normal_quantile(upper),
            Component::StudentT { df, .. } => {
                StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidModel(e.to_string()))?.inverse_cdf(upper)
            }
        };
        lo = lo.min(c.loc() - z * c.scale());
        hi = hi.max(c.loc() + z * c.scale());
    }
    Ok((lo, hi))
}

fn breakpoints(model: &MixtureModel) -> Vec<f64> {
    model
        .components()
        .iter()
        .flat_map(|c| [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0].map(|z| c.loc() + z * c.scale()))
        .collect()
}

/// Weighted nodes `(x, w)` such that `sum w s(x) s(x)^T` approximates the
/// Fisher matrix. Riemann weights carry `g(x) h`; Monte Carlo weights `1/N`.
fn accumulate<F: FnMut(&[f64], f64)>(
    model: &MixtureModel,
    eval: &mut ScoreEvaluator,
    method: &IntegrationMethod,
    spec: &IntegrationSpec,
    mut sink: F,
) -> Result<()> {
    let mut s = vec![0.0; eval.dim()];
    match *method {
        IntegrationMethod::Riemann { points } => {
            let (lo, hi) = integration_region(model, spec)?;
            let h = (hi - lo) / points as f64;
            for x in quadrature::midpoints(lo, hi, points) {
                if let Some(g) = eval.eval(x, spec.density_floor, &mut s) {
                    sink(&s, g * h);
                }
            }
        }
        IntegrationMethod::MonteCarlo { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs = model.sample_with(draws, &mut rng);
            let w = 1.0 / draws as f64;
            for x in xs {
                if eval.eval(x, spec.density_floor, &mut s).is_some() {
                    sink(&s, w);
                }
            }
        }
        _ => unreachable!("accumulate is only used for node-based backends"),
    }
    Ok(())
}

fn quad_element(
    model: &MixtureModel,
    config: UnknownConfig,
    a: usize,
    b: usize,
    rel_tol: f64,
    spec: &IntegrationSpec,
) -> Result<f64> {
    let (lo, hi) = integration_region(model, spec)?;
    let eval = std::cell::RefCell::new(ScoreEvaluator::new(model, config)?);
    let buf = std::cell::RefCell::new(vec![0.0; config.dim(model.k())]);
    let integrand = |x: f64| {
        let mut s = buf.borrow_mut();
        match eval.borrow_mut().eval(x, spec.density_floor, &mut s) {
            Some(g) => s[a] * s[b] * g,
            None => 0.0,
        }
    };
    Ok(quadrature::gauss_kronrod(&integrand, lo, hi, rel_tol, &breakpoints(model))?.value)
}

/// One entry of the Fisher matrix.
///
/// Monte Carlo uses the same draws as [`fisher_matrix`] for the same seed, so
/// the entry agrees with the corresponding matrix element.
pub fn fisher_element(
    model: &MixtureModel,
    config: UnknownConfig,
    a: usize,
    b: usize,
    spec: &IntegrationSpec,
) -> Result<f64> {
    spec.validate()?;
    let d = config.dim(model.k());
    if a >= d || b >= d {
        return Err(Error::DimensionMismatch { expected: d, got: a.max(b) + 1 });
    }
    let method = spec.resolve(model.min_scale());
    if let IntegrationMethod::AdaptiveQuadrature { rel_tol } = method {
        return quad_element(model, config, a, b, rel_tol, spec);
    }
    let mut eval = ScoreEvaluator::new(model, config)?;
    let mut total = 0.0;
    accumulate(model, &mut eval, &method, spec, |s, w| total += w * s[a] * s[b])?;
    Ok(total)
}

/// Full Fisher matrix for the unknown parameters of `config`.
///
/// With `Auto`, Riemann sums are used while every component scale is at least
/// `sigma_switch` and Monte Carlo below. An adaptive-quadrature failure falls
/// back to Monte Carlo with default draws.
pub fn fisher_matrix(model: &MixtureModel, config: UnknownConfig, spec: &IntegrationSpec) -> Result<FisherMatrix> {
    spec.validate()?;
    let k = model.k();
    let d = config.dim(k);
    let labels = config.labels(k);
    let method = spec.resolve(model.min_scale());

    if let IntegrationMethod::AdaptiveQuadrature { rel_tol } = method {
        let mut entries = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let v = match quad_element(model, config, a, b, rel_tol, spec) {
                    Ok(v) => v,
                    Err(Error::QuadratureFailure { .. }) => {
                        log::warn!("quadrature failed for entry ({a},{b}); using Monte Carlo");
                        let mc = IntegrationSpec {
                            method: IntegrationMethod::MonteCarlo { draws: quadrature::DEFAULT_MC_DRAWS, seed: 0 },
                            ..spec.clone()
                        };
                        let v = fisher_element(model, config, a, b, &mc)?;
                        if !v.is_finite() {
                            return Err(Error::QuadratureFailure {
                                rel_tol,
                                subdivisions: quadrature::MAX_SUBDIVISIONS,
                                estimate: v,
                                error: f64::NAN,
                            });
                        }
                        v
                    }
                    Err(e) => return Err(e),
                };
                entries[(a, b)] = v;
                entries[(b, a)] = v;
            }
        }
        return FisherMatrix::new(labels, entries);
    }

    let mut eval = ScoreEvaluator::new(model, config)?;
    let mut upper = vec![0.0; d * d];
    accumulate(model, &mut eval, &method, spec, |s, w| {
        for a in 0..d {
            let ws = w * s[a];
            let row = &mut upper[a * d..(a + 1) * d];
            for b in a..d {
                row[b] += ws * s[b];
            }
        }
    })?;
    let entries = DMatrix::from_fn(d, d, |a, b| {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        upper[i * d + j]
    });
    FisherMatrix::new(labels, entries)
}

/// Reparametrisation rule `J^T F J`; `jacobian[(i, j)]` is
/// `d(old_i) / d(new_j)`.
pub fn transform_fisher(fisher: &FisherMatrix, jacobian: &DMatrix<f64>, labels: Vec<String>) -> Result<FisherMatrix> {
    let d = fisher.dim();
    if jacobian.nrows() != d || jacobian.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if jacobian.nrows() != d { jacobian.nrows() } else { jacobian.ncols() },
        });
    }
    if labels.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: labels.len() });
    }
    let product = jacobian.transpose() * &fisher.entries * jacobian;
    // symmetrise away rounding in the triple product
    let entries = (&product + product.transpose()) * 0.5;
    FisherMatrix::new(labels, entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "FisherRepr", try_from = "FisherRepr")]
pub struct FisherMatrix {
    labels: Vec<String>,
    entries: DMatrix<f64>,
}

#[derive(Clone, Serialize, Deserialize)]
struct FisherRepr {
    labels: Vec<String>,
    entries: Vec<Vec<f64>>,
}

impl From<FisherMatrix> for FisherRepr {
    fn from(f: FisherMatrix) -> Self {
        let entries = (0..f.dim()).map(|i| f.entries.row(i).iter().copied().collect()).collect();
        FisherRepr { labels: f.labels, entries }
    }
}

impl TryFrom<FisherRepr> for FisherMatrix {
    type Error = Error;

    fn try_from(r: FisherRepr) -> Result<Self> {
        let d = r.labels.len();
        if r.entries.len() != d || r.entries.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.entries.len() });
        }
        let entries = DMatrix::from_fn(d, d, |i, j| r.entries[i][j]);
        FisherMatrix::new(r.labels, entries)
    }
}

impl FisherMatrix {
    pub fn new(labels: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        let d = labels.len();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: entries.nrows() });
        }
        for i in 0..d {
            for j in 0..i {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::Domain(format!("Fisher matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(FisherMatrix { labels, entries })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[(a, b)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries[(i, i)]).collect()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn determinant(&self) -> f64 {
        self.eigenvalues().iter().product()
    }

    /// `log det`, or `None` when the smallest eigenvalue is below
    /// `rel_threshold` times the largest.
    pub fn log_det(&self, rel_threshold: f64) -> Option<f64> {
        let ev = self.eigenvalues();
        let max = *ev.last()?;
        if !(max > 0.0) || !(ev[0] >= rel_threshold * max) || ev[0] <= 0.0 {
            return None;
        }
        Some(ev.iter().map(|l| l.ln()).sum())
    }

    /// Drops the rows and columns at `indices`.
    pub fn without(&self, indices: &[usize]) -> Result<FisherMatrix> {
        let keep: Vec<usize> = (0..self.dim()).filter(|i| !indices.contains(i)).collect();
        let entries = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.entries[(keep[i], keep[j])]);
        FisherMatrix::new(keep.iter().map(|&i| self.labels[i].clone()).collect(), entries)
    }

    /// Header row of labels followed by dense rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.labels)?;
        for i in 0..self.dim() {
            wtr.write_record(self.entries.row(i).iter().map(|v| format_f64(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}
