//! Sampler state layouts and the log-posterior they induce.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::fisher::{IntegrationSpec, UnknownConfig};
use crate::mcmc::{BlockKind, BlockLayout};
use crate::mixture::{Component, DataSet, MixtureModel};
use crate::priors::{
    hierarchical_log_prior, jeffreys_log_prior, jeffreys_rm_sigma_log_prior, reparam_log_jacobian, HierarchicalParams,
    PriorKind,
};

/// Hyper-location and hyper-scale of the hierarchical prior.
pub type Hyper = (f64, f64);

/// Log-prior density with respect to the coordinates of `config`
/// (reference coordinates for `AllReparam`, natural ones otherwise).
pub fn log_prior(
    model: &MixtureModel,
    config: UnknownConfig,
    prior: PriorKind,
    hyper: Option<Hyper>,
    spec: &IntegrationSpec,
) -> f64 {
    let reparam = config == UnknownConfig::AllReparam;
    let log_jac = || match reparam_log_jacobian(model) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("prior set to zero: {e}");
            f64::NAN
        }
    };
    let value = match prior {
        PriorKind::Jeffreys => jeffreys_log_prior(model, config, spec),
        PriorKind::ConstantMeans => 0.0,
        PriorKind::JeffreysRmSigma => {
            let v = jeffreys_rm_sigma_log_prior(model, spec);
            if reparam || v == f64::NEG_INFINITY {
                v
            } else {
                v - log_jac()
            }
        }
        PriorKind::Hierarchical => {
            let Some((hyper_mean, hyper_scale)) = hyper else {
                return f64::NEG_INFINITY;
            };
            let params = HierarchicalParams {
                weights: model.weights().to_vec(),
                means: model.means(),
                sds: model.scales(),
                hyper_mean,
                hyper_scale,
            };
            let v = hierarchical_log_prior(&params);
            if reparam && v.is_finite() {
                v + log_jac()
            } else {
                v
            }
        }
    };
    if value.is_nan() {
        f64::NEG_INFINITY
    } else {
        value
    }
}

/// Maps between sampler states and mixtures.
///
/// States hold means, then standard deviations, then the full weight vector,
/// each only when unknown under the configuration, followed by `(mu_0, zeta_0)`
/// for the hierarchical prior. Sampling always happens in natural coordinates.
#[derive(Clone, Debug)]
pub struct StateLayout {
    template: MixtureModel,
    config: UnknownConfig,
    prior: PriorKind,
}

impl StateLayout {
    pub fn new(template: &MixtureModel, config: UnknownConfig, prior: PriorKind) -> Result<Self> {
        config.check(template)?;
        prior.check(config)?;
        Ok(StateLayout { template: template.clone(), config, prior })
    }

    pub fn template(&self) -> &MixtureModel {
        &self.template
    }

    pub fn config(&self) -> UnknownConfig {
        self.config
    }

    pub fn prior(&self) -> PriorKind {
        self.prior
    }

    pub fn k(&self) -> usize {
        self.template.k()
    }

    pub fn has_hyper(&self) -> bool {
        self.prior == PriorKind::Hierarchical
    }

    pub fn means_range(&self) -> Option<Range<usize>> {
        self.config.has_means().then(|| 0..self.k())
    }

    pub fn scales_range(&self) -> Option<Range<usize>> {
        let start = if self.config.has_means() { self.k() } else { 0 };
        self.config.has_scales().then(|| start..start + self.k())
    }

    pub fn weights_range(&self) -> Option<Range<usize>> {
        let k = self.k();
        let start = k * (usize::from(self.config.has_means()) + usize::from(self.config.has_scales()));
        self.config.has_weights().then(|| start..start + k)
    }

    pub fn blocks(&self) -> BlockLayout {
        let k = self.k();
        let mut layout = BlockLayout::new();
        if self.config.has_means() {
            layout = layout.push(BlockKind::Location, k);
        }
        if self.config.has_scales() {
            layout = layout.push(BlockKind::Scale, k);
        }
        if self.config.has_weights() {
            layout = layout.push(BlockKind::Simplex, k);
        }
        if self.has_hyper() {
            layout = layout.push(BlockKind::Location, 1).push(BlockKind::Scale, 1);
        }
        layout
    }

    pub fn dim(&self) -> usize {
        self.blocks().dim()
    }

    pub fn labels(&self) -> Vec<String> {
        let k = self.k();
        let mut labels = Vec::new();
        if self.config.has_means() {
            labels.extend((1..=k).map(|i| format!("mu_{i}")));
        }
        if self.config.has_scales() {
            labels.extend((1..=k).map(|i| format!("sigma_{i}")));
        }
        if self.config.has_weights() {
            labels.extend((1..=k).map(|i| format!("w_{i}")));
        }
        if self.has_hyper() {
            labels.extend(["mu_0".to_string(), "zeta_0".to_string()]);
        }
        labels
    }

    pub fn encode(&self, model: &MixtureModel, hyper: Option<Hyper>) -> Result<Vec<f64>> {
        if model.k() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), got: model.k() });
        }
        let mut state = Vec::with_capacity(self.dim());
        if self.config.has_means() {
            state.extend(model.means());
        }
        if self.config.has_scales() {
            state.extend(model.scales());
        }
        if self.config.has_weights() {
            state.extend(model.weights());
        }
        if self.has_hyper() {
            let (m, z) = hyper.ok_or_else(|| Error::InvalidSpec("hierarchical state needs (mu_0, zeta_0)".into()))?;
            state.extend([m, z]);
        }
        Ok(state)
    }

    pub fn decode(&self, state: &[f64]) -> Result<MixtureModel> {
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: state.len() });
        }
        let means = self.means_range().map_or_else(|| self.template.means(), |r| state[r].to_vec());
        let scales = self.scales_range().map_or_else(|| self.template.scales(), |r| state[r].to_vec());
        let weights = match self.weights_range() {
            Some(r) => {
                let total: f64 = state[r.clone()].iter().sum();
                state[r].iter().map(|w| w / total).collect()
            }
            None => self.template.weights().to_vec(),
        };
        let components: Vec<Component> = self
            .template
            .components()
            .iter()
            .zip(means.iter().zip(&scales))
            .map(|(c, (&m, &s))| c.with_loc(m).with_scale(s))
            .collect();
        MixtureModel::new(components, weights)
    }

    pub fn hyper(&self, state: &[f64]) -> Option<Hyper> {
        let d = state.len();
        (self.has_hyper() && d >= 2).then(|| (state[d - 2], state[d - 1]))
    }

    /// Log-prior of a state in natural coordinates.
    pub fn log_prior(&self, model: &MixtureModel, hyper: Option<Hyper>, spec: &IntegrationSpec) -> f64 {
        let config = match self.config {
            UnknownConfig::AllReparam => UnknownConfig::All,
            c => c,
        };
        log_prior(model, config, self.prior, hyper, spec)
    }

    pub fn log_posterior(&self, state: &[f64], data: &DataSet, spec: &IntegrationSpec) -> f64 {
        if !self.blocks().in_support(state) {
            return f64::NEG_INFINITY;
        }
        let Ok(model) = self.decode(state) else {
            return f64::NEG_INFINITY;
        };
        let prior = self.log_prior(&model, self.hyper(state), spec);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        let lp = prior + model.log_likelihood(data);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }
}
