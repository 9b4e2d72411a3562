//! Log-prior evaluators.
//!
//! All Jeffreys priors are unnormalised: only differences of log-priors are
//! meaningful.

pub mod reparam;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fisher::{fisher_matrix, integrate, IntegrationSpec, UnknownConfig};
use crate::mixture::{Component, DataSet, MixtureModel};
use reparam::ReparamParams;

/// Smallest admissible eigenvalue of a Fisher matrix relative to its largest
/// before the Jeffreys prior is declared zero.
pub const SINGULAR_EIGEN_RATIO: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    /// `|I(theta)|^{1/2}` for the unknown parameters.
    Jeffreys,
    /// Three-level hierarchical prior with hyperparameters `(mu_0, zeta_0)`.
    Hierarchical,
    /// Flat prior on the unknown means.
    ConstantMeans,
    /// Proper "rm" prior on the scale ratios, Jeffreys on the
    /// remaining reference coordinates conditionally on them.
    JeffreysRmSigma,
}

impl PriorKind {
    pub const ALL: [PriorKind; 4] =
        [PriorKind::Jeffreys, PriorKind::Hierarchical, PriorKind::ConstantMeans, PriorKind::JeffreysRmSigma];

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Jeffreys => "jeffreys",
            PriorKind::Hierarchical => "hierarchical",
            PriorKind::ConstantMeans => "constant-means",
            PriorKind::JeffreysRmSigma => "jeffreys-rm-sigma",
        }
    }

    /// Whether the prior can be combined with `config`.
    pub fn check(self, config: UnknownConfig) -> Result<()> {
        let ok = match self {
            PriorKind::Jeffreys => true,
            PriorKind::ConstantMeans => config == UnknownConfig::MeansOnly,
            PriorKind::Hierarchical | PriorKind::JeffreysRmSigma => {
                matches!(config, UnknownConfig::All | UnknownConfig::AllReparam)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::IncompatibleConfig {
                config: config.name().into(),
                reason: format!("prior {} does not apply", self.name()),
            })
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PriorKind::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "unknown prior {s:?}; expected one of {}",
                PriorKind::ALL.map(|p| p.name()).join(", ")
            ))
        })
    }
}

/// `1/2 log det I(theta)`, or `-inf` when the Fisher matrix is numerically
/// singular or cannot be computed.
pub fn jeffreys_log_prior(model: &MixtureModel, config: UnknownConfig, spec: &IntegrationSpec) -> f64 {
    match fisher_matrix(model, config, spec) {
        Ok(f) => f.log_det(SINGULAR_EIGEN_RATIO).map_or(f64::NEG_INFINITY, |ld| 0.5 * ld),
        Err(e) => {
            log::warn!("Jeffreys prior set to zero: {e}");
            f64::NEG_INFINITY
        }
    }
}

/// Known quantities of the two-component reference model
/// `p N(mu, tau^2) + (1-p) N(mu + tau delta, tau^2 sigma^2)` when the
/// conditional prior of `delta` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaConditioning {
    pub mu: f64,
    pub tau: f64,
    pub sigma: f64,
    pub p: f64,
}

impl Default for DeltaConditioning {
    fn default() -> Self {
        DeltaConditioning { mu: 0.0, tau: 1.0, sigma: 1.0, p: 0.5 }
    }
}

/// Half-width `z` such that `[-z, z]` holds `coverage` of the density
/// `x^2 phi(x)`, whose tail mass beyond `z` is `2 (z phi(z) + Q(z))`.
fn second_moment_half_width(coverage: f64) -> f64 {
    let tail = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        2.0 * (z * phi + 0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2))
    };
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > 1.0 - coverage {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Conditional Jeffreys log-prior of the mean offset `delta` when only the
/// locations of a two-component reference model are unknown.
///
/// Evaluates half the log of
/// `int [(1-p) x e^{-x^2/2}]^2 / (p sigma e^{-sigma^2 (x + delta/(sigma tau))^2 / 2} + (1-p) e^{-x^2/2}) dx`.
pub fn conditional_delta_log_prior(delta: f64, fixed: &DeltaConditioning, spec: &IntegrationSpec) -> Result<f64> {
    let DeltaConditioning { tau, sigma, p, .. } = *fixed;
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!("tau and sigma must be > 0, got {tau}, {sigma}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must be in (0,1), got {p}")));
    }
    spec.validate()?;
    let ln_q = (1.0 - p).ln();
    let ln_ps = (p * sigma).ln();
    let shift = delta / (sigma * tau);
    let integrand = |x: f64| {
        if x == 0.0 {
            return 0.0;
        }
        let ln_num = 2.0 * ln_q + 2.0 * x.abs().ln() - x * x;
        let a = ln_ps - 0.5 * sigma * sigma * (x + shift).powi(2);
        let b = ln_q - 0.5 * x * x;
        let ln_den = crate::mixture::log_sum_exp(&[a, b]);
        (ln_num - ln_den).exp()
    };
    let interval = spec.bounds.unwrap_or_else(|| {
        let z = second_moment_half_width(spec.coverage);
        (-z, z)
    });
    let value = integrate(integrand, interval, spec)?;
    Ok(if value > 0.0 { 0.5 * value.ln() } else { f64::NEG_INFINITY })
}

/// The "rm" proper prior on a scale ratio: half uniform on (0, 1],
/// half the law of `1/U` on (1, inf).
pub fn rm_sigma_log_prior(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(if sigma <= 1.0 { -std::f64::consts::LN_2 } else { -std::f64::consts::LN_2 - 2.0 * sigma.ln() })
}

/// Jeffreys prior on the reference coordinates `(mu, tau, theta, p, q)`
/// conditional on the scale ratios, times the "rm" prior on each
/// ratio. Density with respect to the reference coordinates.
pub fn jeffreys_rm_sigma_log_prior(model: &MixtureModel, spec: &IntegrationSpec) -> f64 {
    let rp = match ReparamParams::from_natural(model) {
        Ok(rp) => rp,
        Err(e) => {
            log::warn!("prior set to zero: {e}");
            return f64::NEG_INFINITY;
        }
    };
    let k = model.k();
    let ratios: f64 = rp.scale_ratios.iter().map(|&s| rm_sigma_log_prior(s).expect("validated ratio")).sum();
    let fisher = match fisher_matrix(model, UnknownConfig::AllReparam, spec) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("prior set to zero: {e}");
            return f64::NEG_INFINITY;
        }
    };
    let sigma_idx: Vec<usize> = (k + 1..2 * k).collect();
    let conditional = fisher
        .without(&sigma_idx)
        .ok()
        .and_then(|f| f.log_det(SINGULAR_EIGEN_RATIO))
        .map_or(f64::NEG_INFINITY, |ld| 0.5 * ld);
    ratios + conditional
}

/// `log |det d(natural)/d(reference)|`, the correction that turns a density in
/// reference coordinates into one in natural coordinates (subtract it).
pub fn reparam_log_jacobian(model: &MixtureModel) -> Result<f64> {
    let rp = ReparamParams::from_natural(model)?;
    Ok(rp.natural_jacobian().determinant().abs().ln())
}

/// Parameters of the hierarchical mixture: component parameters plus the
/// hyper-location `mu_0` and hyper-scale `zeta_0` (a standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub hyper_mean: f64,
    pub hyper_scale: f64,
}

impl HierarchicalParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn in_support(&self) -> bool {
        let k = self.k();
        self.means.len() == k
            && self.sds.len() == k
            && self.weights.iter().all(|&w| w > 0.0)
            && (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12
            && self.sds.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.means.iter().all(|m| m.is_finite())
            && self.hyper_scale > 0.0
            && self.hyper_scale.is_finite()
            && self.hyper_mean.is_finite()
    }

    pub fn model(&self) -> Result<MixtureModel> {
        MixtureModel::new(
            self.means.iter().zip(&self.sds).map(|(&m, &s)| Component::gaussian(m, s)).collect(),
            self.weights.clone(),
        )
    }
}

/// Second-level prior on a component standard deviation: half uniform on
/// `(0, zeta_0]`, half Pareto-type `zeta_0 / sigma^2` on `(zeta_0, inf)`.
pub fn hierarchical_sigma_log_prior(sigma: f64, zeta0: f64) -> f64 {
    if !(sigma > 0.0 && zeta0 > 0.0) {
        return f64::NEG_INFINITY;
    }
    if sigma <= zeta0 {
        -(2.0 * zeta0).ln()
    } else {
        (zeta0 / (2.0 * sigma * sigma)).ln()
    }
}

/// Log-density of `Dirichlet(1/2, ..., 1/2)` with its exact normalising constant.
pub fn dirichlet_half_log_density(weights: &[f64]) -> f64 {
    if weights.iter().any(|&w| !(w > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let k = weights.len() as f64;
    ln_gamma(0.5 * k) - k * ln_gamma(0.5) - 0.5 * weights.iter().map(|w| w.ln()).sum::<f64>()
}

/// Hierarchical prior without the likelihood.
pub fn hierarchical_log_prior(params: &HierarchicalParams) -> f64 {
    if !params.in_support() {
        return f64::NEG_INFINITY;
    }
    let zeta = params.hyper_scale;
    let means: f64 = params
        .means
        .iter()
        .map(|m| {
            let z = (m - params.hyper_mean) / zeta;
            -0.5 * z * z - zeta.ln() - 0.5 * LN_2PI
        })
        .sum();
    let sds: f64 = params.sds.iter().map(|&s| hierarchical_sigma_log_prior(s, zeta)).sum();
    means + sds + dirichlet_half_log_density(&params.weights) - zeta.ln()
}

/// Unnormalised log-posterior of the hierarchical mixture.
pub fn hierarchical_log_posterior(params: &HierarchicalParams, data: &DataSet) -> f64 {
    let prior = hierarchical_log_prior(params);
    if prior == f64::NEG_INFINITY {
        return prior;
    }
    match params.model() {
        Ok(model) => prior + model.log_likelihood(data),
        Err(_) => f64::NEG_INFINITY,
    }
}
