use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{Component, MixtureModel};
use crate::priors::reparam::ReparamParams;

/// Which parameters of the mixture are unknown. Selects the layout of the
/// score vector and Fisher matrix.
///
/// Natural layouts list means, then scales, then the free weights
/// `p_1..p_{k-1}` (the last weight is `1 - sum`). `AllReparam` uses the
/// reference location-scale coordinates of [`ReparamParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownConfig {
    WeightsOnly,
    MeansOnly,
    ScalesOnly,
    MeansAndWeights,
    All,
    AllReparam,
}

impl UnknownConfig {
    pub const ALL_CONFIGS: [UnknownConfig; 6] = [
        UnknownConfig::WeightsOnly,
        UnknownConfig::MeansOnly,
        UnknownConfig::ScalesOnly,
        UnknownConfig::MeansAndWeights,
        UnknownConfig::All,
        UnknownConfig::AllReparam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnknownConfig::WeightsOnly => "weights-only",
            UnknownConfig::MeansOnly => "means-only",
            UnknownConfig::ScalesOnly => "scales-only",
            UnknownConfig::MeansAndWeights => "means-and-weights",
            UnknownConfig::All => "all",
            UnknownConfig::AllReparam => "all-reparam",
        }
    }

    pub fn dim(self, k: usize) -> usize {
        match self {
            UnknownConfig::WeightsOnly => k - 1,
            UnknownConfig::MeansOnly | UnknownConfig::ScalesOnly => k,
            UnknownConfig::MeansAndWeights => 2 * k - 1,
            UnknownConfig::All | UnknownConfig::AllReparam => 3 * k - 1,
        }
    }

    pub fn has_means(self) -> bool {
        !matches!(self, UnknownConfig::WeightsOnly | UnknownConfig::ScalesOnly)
    }

    pub fn has_scales(self) -> bool {
        matches!(self, UnknownConfig::ScalesOnly | UnknownConfig::All | UnknownConfig::AllReparam)
    }

    pub fn has_weights(self) -> bool {
        matches!(
            self,
            UnknownConfig::WeightsOnly
                | UnknownConfig::MeansAndWeights
                | UnknownConfig::All
                | UnknownConfig::AllReparam
        )
    }

    pub fn labels(self, k: usize) -> Vec<String> {
        if self == UnknownConfig::AllReparam {
            return ReparamParams::labels(k);
        }
        let mut labels = Vec::with_capacity(self.dim(k));
        if self.has_means() {
            labels.extend((1..=k).map(|i| format!("mu_{i}")));
        }
        if self.has_scales() {
            labels.extend((1..=k).map(|i| format!("sigma_{i}")));
        }
        if self.has_weights() {
            labels.extend((1..k).map(|i| format!("p_{i}")));
        }
        labels
    }

    pub fn check(self, model: &MixtureModel) -> Result<()> {
        let incompatible =
            |reason: &str| Err(Error::IncompatibleConfig { config: self.name().into(), reason: reason.into() });
        if model.k() < 2 {
            return incompatible("at least two components are required");
        }
        if self != UnknownConfig::WeightsOnly && !model.is_all_gaussian() {
            return incompatible("only the weights-only configuration accepts Student-t components");
        }
        Ok(())
    }

    /// Current values of the unknown parameters, in label order.
    pub fn free_params(self, model: &MixtureModel) -> Result<Vec<f64>> {
        self.check(model)?;
        if self == UnknownConfig::AllReparam {
            return Ok(ReparamParams::from_natural(model)?.to_vec());
        }
        let k = model.k();
        let mut v = Vec::with_capacity(self.dim(k));
        if self.has_means() {
            v.extend(model.means());
        }
        if self.has_scales() {
            v.extend(model.scales());
        }
        if self.has_weights() {
            v.extend(&model.weights()[..k - 1]);
        }
        Ok(v)
    }

    /// `template` with its unknown parameters replaced by `params`.
    pub fn with_free_params(self, template: &MixtureModel, params: &[f64]) -> Result<MixtureModel> {
        self.check(template)?;
        let k = template.k();
        let d = self.dim(k);
        if params.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: params.len() });
        }
        if self == UnknownConfig::AllReparam {
            return ReparamParams::from_vec(k, params)?.to_natural();
        }
        let mut rest = params;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let means = if self.has_means() { take(k).to_vec() } else { template.means() };
        let scales = if self.has_scales() { take(k).to_vec() } else { template.scales() };
        let weights = if self.has_weights() {
            let free = take(k - 1);
            let mut w = free.to_vec();
            w.push(1.0 - free.iter().sum::<f64>());
            w
        } else {
            template.weights().to_vec()
        };
        let components: Vec<Component> = template
            .components()
            .iter()
            .zip(means.iter().zip(&scales))
            .map(|(c, (&m, &s))| c.with_loc(m).with_scale(s))
            .collect();
        MixtureModel::new(components, weights)
    }
}

impl fmt::Display for UnknownConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UnknownConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UnknownConfig::ALL_CONFIGS.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "unknown configuration {s:?}; expected one of {}",
                UnknownConfig::ALL_CONFIGS.map(|c| c.name()).join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        let dims: Vec<usize> = UnknownConfig::ALL_CONFIGS.iter().map(|c| c.dim(2)).collect();
        assert_eq!(dims, vec![1, 2, 2, 3, 5, 5]);
        for c in UnknownConfig::ALL_CONFIGS {
            for k in 2..5 {
                assert_eq!(c.labels(k).len(), c.dim(k));
            }
        }
    }

    #[test]
    fn free_params_round_trip() {
        let m = MixtureModel::gaussian(&[(0.2, -1.0, 1.0), (0.3, 0.0, 5.0), (0.5, 2.0, 0.5)]).unwrap();
        for c in UnknownConfig::ALL_CONFIGS {
            let v = c.free_params(&m).unwrap();
            let back = c.with_free_params(&m, &v).unwrap();
            for (a, b) in back.weights().iter().zip(m.weights()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in back.means().iter().zip(m.means()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let moved = UnknownConfig::MeansOnly.with_free_params(&m, &[5.0, 6.0, 7.0]).unwrap();
        assert_eq!(moved.means(), vec![5.0, 6.0, 7.0]);
        assert_eq!(moved.scales(), m.scales());
        assert!(UnknownConfig::WeightsOnly.with_free_params(&m, &[0.7, 0.6]).is_err());
    }

    #[test]
    fn family_constraints() {
        let t =
            MixtureModel::new(vec![Component::gaussian(0.0, 1.0), Component::student_t(1.0, 1.0, 1.0)], vec![0.5, 0.5])
                .unwrap();
        assert!(UnknownConfig::WeightsOnly.check(&t).is_ok());
        assert!(UnknownConfig::MeansOnly.check(&t).is_err());
        let single = MixtureModel::gaussian(&[(1.0, 0.0, 1.0)]).unwrap();
        assert!(UnknownConfig::MeansOnly.check(&single).is_err());
        assert_eq!("all-reparam".parse::<UnknownConfig>().unwrap(), UnknownConfig::AllReparam);
        assert!("nope".parse::<UnknownConfig>().is_err());
    }
}
