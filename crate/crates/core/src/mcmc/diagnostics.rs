use serde::{Deserialize, Serialize};

use super::Chain;
use crate::error::{Error, Result};
use crate::mixture::{DataSet, MixtureModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticThresholds {
    pub sigma_stuck: f64,
    pub mean_escape_factor: f64,
}

impl Default for DiagnosticThresholds {
    fn default() -> Self {
        DiagnosticThresholds { sigma_stuck: 0.05, mean_escape_factor: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub accept_rate: f64,
    pub stuck_small_sigma: bool,
    pub divergent_means: bool,
    /// `log L(final) / log L(true)`.
    pub loglik_ratio: f64,
    pub final_loglik: f64,
    pub true_loglik: f64,
}

/// Final-state diagnostics. `decode` maps a chain state to the mixture it
/// represents.
pub fn diagnose<D>(
    chain: &Chain,
    truth: &MixtureModel,
    data: &DataSet,
    decode: D,
    thresholds: &DiagnosticThresholds,
) -> Result<ChainDiagnostics>
where
    D: Fn(&[f64]) -> Result<MixtureModel>,
{
    let last = chain.final_state().ok_or_else(|| Error::InvalidSpec("empty chain".into()))?;
    if data.is_empty() {
        return Err(Error::InvalidSpec("diagnostics need data".into()));
    }
    let model = decode(last)?;
    let (lo, hi) = (data.min(), data.max());
    let escape = thresholds.mean_escape_factor * (hi - lo);
    let final_loglik = model.log_likelihood(data);
    let true_loglik = truth.log_likelihood(data);
    Ok(ChainDiagnostics {
        accept_rate: chain.post_burnin_acceptance(),
        stuck_small_sigma: model.scales().iter().any(|&s| s < thresholds.sigma_stuck),
        divergent_means: model.means().iter().any(|&m| m < lo - escape || m > hi + escape),
        loglik_ratio: final_loglik / true_loglik,
        final_loglik,
        true_loglik,
    })
}

/// Effective sample size from the initial positive sequence of
/// autocorrelation pair sums.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 + rho(1) } else { rho(lag) + rho(lag + 1) };
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::ScaleSnapshot;

    fn constant_chain(state: Vec<f64>, len: usize) -> Chain {
        Chain {
            states: vec![state; len],
            log_post: vec![0.0; len],
            accepted: vec![false; len],
            block: vec![0; len],
            scale_history: vec![ScaleSnapshot { iteration: 0, scales: vec![0.1] }],
            burnin: len / 2,
        }
    }

    fn truth() -> MixtureModel {
        MixtureModel::gaussian(&[(0.5, -1.0, 1.0), (0.5, 2.0, 0.5)]).unwrap()
    }

    fn decode_means(x: &[f64]) -> Result<MixtureModel> {
        MixtureModel::gaussian(&[(0.5, x[0], 1.0), (0.5, x[1], 0.5)])
    }

    #[test]
    fn chain_at_truth() {
        let data = truth().sample(50, 1);
        let d =
            diagnose(&constant_chain(vec![-1.0, 2.0], 10), &truth(), &data, decode_means, &Default::default()).unwrap();
        assert!(!d.stuck_small_sigma && !d.divergent_means);
        assert_eq!(d.loglik_ratio, 1.0);
        assert_eq!(d.accept_rate, 0.0);
    }

    #[test]
    fn escaped_mean_is_flagged() {
        let data = truth().sample(50, 2);
        let r = data.max() - data.min();
        let far = data.max() + 100.0 * r;
        let d =
            diagnose(&constant_chain(vec![far, 2.0], 10), &truth(), &data, decode_means, &Default::default()).unwrap();
        assert!(d.divergent_means);
    }

    #[test]
    fn small_sigma_is_flagged() {
        let data = truth().sample(50, 3);
        let decode = |x: &[f64]| MixtureModel::gaussian(&[(0.5, -1.0, x[0]), (0.5, 2.0, 0.5)]);
        let d = diagnose(&constant_chain(vec![0.01], 4), &truth(), &data, decode, &Default::default()).unwrap();
        assert!(d.stuck_small_sigma);
    }

    #[test]
    fn ess_of_independent_and_correlated_series() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let ess = effective_sample_size(&iid);
        assert!((ess / 20_000.0 - 1.0).abs() < 0.15, "{ess}");
        // AR(1) with phi = 0.9: ESS / n = (1 - phi) / (1 + phi)
        let mut ar = vec![0.0];
        for e in &iid[1..] {
            ar.push(0.9 * ar.last().unwrap() + e);
        }
        let ratio = effective_sample_size(&ar) / 20_000.0;
        assert!((ratio - 0.1 / 1.9).abs() < 0.02, "{ratio}");
    }
}
