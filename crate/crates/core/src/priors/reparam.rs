//! Reference location-scale parametrisation of a Gaussian mixture.
//!
//! Component 1 carries the global location `mu` and scale `tau`. Every later
//! component is a perturbation of its predecessor:
//!
//! ```text
//! mean_{j+1} = mean_j + sd_j * theta_j
//! sd_{j+1}   = sd_j * sigma_j
//! w_1 = p,  w_{j+1} = (1 - p)(1 - q_1)...(1 - q_{j-1}) q_j,  w_k = rest
//! ```
//!
//! For two components this is `p N(mu, tau^2) + (1-p) N(mu + tau delta, tau^2 sigma^2)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{Component, MixtureModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReparamParams {
    pub global_loc: f64,
    pub global_scale: f64,
    /// `theta_1..theta_{k-1}`; `theta_1` is `delta` when k = 2.
    pub offsets: Vec<f64>,
    /// `sigma_1..sigma_{k-1}`.
    pub scale_ratios: Vec<f64>,
    /// `p, q_1..q_{k-2}`.
    pub stick_weights: Vec<f64>,
}

impl ReparamParams {
    pub fn two_component(mu: f64, tau: f64, delta: f64, sigma: f64, p: f64) -> Self {
        ReparamParams {
            global_loc: mu,
            global_scale: tau,
            offsets: vec![delta],
            scale_ratios: vec![sigma],
            stick_weights: vec![p],
        }
    }

    pub fn k(&self) -> usize {
        self.offsets.len() + 1
    }

    /// Coordinate names, in the order used by [`Self::to_vec`].
    pub fn labels(k: usize) -> Vec<String> {
        if k == 2 {
            return ["mu", "tau", "delta", "sigma", "p"].map(String::from).to_vec();
        }
        let mut labels = vec!["mu".to_string(), "tau".to_string()];
        labels.extend((1..k).map(|i| format!("theta_{i}")));
        labels.extend((1..k).map(|i| format!("sigma_{i}")));
        labels.push("p".into());
        labels.extend((1..k - 1).map(|i| format!("q_{i}")));
        labels
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.global_loc, self.global_scale];
        v.extend(&self.offsets);
        v.extend(&self.scale_ratios);
        v.extend(&self.stick_weights);
        v
    }

    pub fn from_vec(k: usize, v: &[f64]) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain("reparametrisation needs k >= 2".into()));
        }
        let d = 3 * k - 1;
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
        let rp = ReparamParams {
            global_loc: v[0],
            global_scale: v[1],
            offsets: v[2..k + 1].to_vec(),
            scale_ratios: v[k + 1..2 * k].to_vec(),
            stick_weights: v[2 * k..].to_vec(),
        };
        rp.validate()?;
        Ok(rp)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 || self.scale_ratios.len() != k - 1 || self.stick_weights.len() != k - 1 {
            return Err(Error::Domain("inconsistent reparametrisation lengths".into()));
        }
        if !(self.global_scale > 0.0) {
            return Err(Error::Domain(format!("tau must be > 0, got {}", self.global_scale)));
        }
        if let Some(s) = self.scale_ratios.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain(format!("scale ratios must be > 0, got {s}")));
        }
        if let Some(q) = self.stick_weights.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::Domain(format!("stick weights must be in (0,1), got {q}")));
        }
        Ok(())
    }

    fn sds(&self) -> Vec<f64> {
        let mut sds = vec![self.global_scale];
        for s in &self.scale_ratios {
            sds.push(sds.last().unwrap() * s);
        }
        sds
    }

    fn means(&self, sds: &[f64]) -> Vec<f64> {
        let mut means = vec![self.global_loc];
        for (j, theta) in self.offsets.iter().enumerate() {
            means.push(means[j] + sds[j] * theta);
        }
        means
    }

    fn weights(&self) -> Vec<f64> {
        let k = self.k();
        let mut weights = Vec::with_capacity(k);
        let mut remaining = 1.0;
        for &q in &self.stick_weights {
            weights.push(remaining * q);
            remaining *= 1.0 - q;
        }
        weights.push(remaining);
        weights
    }

    pub fn to_natural(&self) -> Result<MixtureModel> {
        self.validate()?;
        let sds = self.sds();
        let means = self.means(&sds);
        let mut weights = self.weights();
        // absorb rounding so the simplex check holds exactly
        let head: f64 = weights[..weights.len() - 1].iter().sum();
        *weights.last_mut().unwrap() = 1.0 - head;
        MixtureModel::new(means.iter().zip(&sds).map(|(&m, &s)| Component::gaussian(m, s)).collect(), weights)
    }

    pub fn from_natural(model: &MixtureModel) -> Result<Self> {
        if !model.is_all_gaussian() {
            return Err(Error::UnsupportedFamily("reparametrisation (Student-t component)"));
        }
        let k = model.k();
        if k < 2 {
            return Err(Error::Domain("reparametrisation needs k >= 2".into()));
        }
        let means = model.means();
        let sds = model.scales();
        let w = model.weights();
        // suffix sums avoid cancellation in 1 - w_1 - ... - w_j
        let mut tail = vec![0.0; k + 1];
        for j in (0..k).rev() {
            tail[j] = tail[j + 1] + w[j];
        }
        let stick_weights = (0..k - 1).map(|j| w[j] / tail[j]).collect();
        let rp = ReparamParams {
            global_loc: means[0],
            global_scale: sds[0],
            offsets: (0..k - 1).map(|j| (means[j + 1] - means[j]) / sds[j]).collect(),
            scale_ratios: (0..k - 1).map(|j| sds[j + 1] / sds[j]).collect(),
            stick_weights,
        };
        rp.validate()?;
        Ok(rp)
    }

    /// Jacobian of the natural coordinates (means, sds, free weights
    /// `w_1..w_{k-1}`) with respect to the coordinates of [`Self::labels`].
    pub fn natural_jacobian(&self) -> DMatrix<f64> {
        let k = self.k();
        let d = 3 * k - 1;
        let tau = self.global_scale;
        let sds = self.sds();
        let means = self.means(&sds);
        let weights = self.weights();
        let p = self.stick_weights[0];

        let col_mu = 0;
        let col_tau = 1;
        let col_theta = |i: usize| 2 + i; // theta_{i+1}
        let col_sigma = |l: usize| k + 1 + l; // sigma_{l+1}
        let col_p = 2 * k;
        let col_q = |l: usize| 2 * k + 1 + l; // q_{l+1}

        let mut jac = DMatrix::zeros(d, d);
        for j in 0..k {
            // mean_j = mu + sum_{i<j} sd_i theta_i
            let r = j;
            jac[(r, col_mu)] = 1.0;
            jac[(r, col_tau)] = (means[j] - self.global_loc) / tau;
            for i in 0..j {
                jac[(r, col_theta(i))] = sds[i];
            }
            for l in 0..k - 1 {
                // sd_i contains sigma_l for i > l
                let s: f64 = (l + 1..j).map(|i| sds[i] * self.offsets[i]).sum();
                jac[(r, col_sigma(l))] = s / self.scale_ratios[l];
            }
            // sd_j = tau * prod_{l<j} sigma_l
            let r = k + j;
            jac[(r, col_tau)] = sds[j] / tau;
            for l in 0..j {
                jac[(r, col_sigma(l))] = sds[j] / self.scale_ratios[l];
            }
        }
        for j in 0..k - 1 {
            let r = 2 * k + j;
            if j == 0 {
                jac[(r, col_p)] = 1.0;
                continue;
            }
            // w_j = (1-p) prod_{l<j-1} (1-q_l) q_{j-1}, zero-based q index
            jac[(r, col_p)] = -weights[j] / (1.0 - p);
            for l in 0..j - 1 {
                let q = self.stick_weights[l + 1];
                jac[(r, col_q(l))] = -weights[j] / (1.0 - q);
            }
            let q = self.stick_weights[j];
            jac[(r, col_q(j - 1))] = weights[j] / q;
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_point_gives_identical_components() {
        let m = ReparamParams::two_component(0.0, 1.0, 0.0, 1.0, 0.5).to_natural().unwrap();
        assert_eq!(m, MixtureModel::gaussian(&[(0.5, 0.0, 1.0), (0.5, 0.0, 1.0)]).unwrap());
    }

    #[test]
    fn close_means_model() {
        let m = ReparamParams::two_component(-1.0, 1.0, 3.0, 0.5, 0.5).to_natural().unwrap();
        assert_eq!(m, MixtureModel::gaussian(&[(0.5, -1.0, 1.0), (0.5, 2.0, 0.5)]).unwrap());
    }

    #[test]
    fn three_component_layout() {
        let rp = ReparamParams {
            global_loc: 1.0,
            global_scale: 2.0,
            offsets: vec![0.5, -1.0],
            scale_ratios: vec![0.5, 3.0],
            stick_weights: vec![0.2, 0.25],
        };
        let m = rp.to_natural().unwrap();
        assert_eq!(m.means(), vec![1.0, 2.0, 1.0]);
        assert_eq!(m.scales(), vec![2.0, 1.0, 3.0]);
        let w = m.weights();
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        assert!((w[2] - 0.6).abs() < 1e-15);
        assert_eq!(ReparamParams::labels(3).len(), 8);
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(ReparamParams::two_component(0.0, -1.0, 0.0, 1.0, 0.5).to_natural().is_err());
        assert!(ReparamParams::two_component(0.0, 1.0, 0.0, 0.0, 0.5).to_natural().is_err());
        assert!(ReparamParams::two_component(0.0, 1.0, 0.0, 1.0, 1.0).to_natural().is_err());
    }

    fn arb_reparam() -> impl Strategy<Value = ReparamParams> {
        (2usize..=4).prop_flat_map(|k| {
            (
                -5.0f64..5.0,
                0.1f64..5.0,
                prop::collection::vec(-3.0f64..3.0, k - 1),
                prop::collection::vec(0.2f64..3.0, k - 1),
                prop::collection::vec(0.05f64..0.95, k - 1),
            )
                .prop_map(|(mu, tau, offsets, scale_ratios, stick_weights)| ReparamParams {
                    global_loc: mu,
                    global_scale: tau,
                    offsets,
                    scale_ratios,
                    stick_weights,
                })
        })
    }

    fn natural_vec(m: &MixtureModel) -> Vec<f64> {
        let mut v = m.means();
        v.extend(m.scales());
        v.extend(&m.weights()[..m.k() - 1]);
        v
    }

    proptest! {
        #[test]
        fn round_trip(rp in arb_reparam()) {
            let back = ReparamParams::from_natural(&rp.to_natural().unwrap()).unwrap();
            for (a, b) in rp.to_vec().iter().zip(back.to_vec()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }

        #[test]
        fn jacobian_matches_finite_differences(rp in arb_reparam()) {
            let k = rp.k();
            let jac = rp.natural_jacobian();
            let base = rp.to_vec();
            for c in 0..base.len() {
                let h = 1e-6 * base[c].abs().max(1e-2);
                let mut up = base.clone();
                up[c] += h;
                let mut dn = base.clone();
                dn[c] -= h;
                let fu = natural_vec(&ReparamParams::from_vec(k, &up).unwrap().to_natural().unwrap());
                let fd = natural_vec(&ReparamParams::from_vec(k, &dn).unwrap().to_natural().unwrap());
                for r in 0..base.len() {
                    let fdiff = (fu[r] - fd[r]) / (2.0 * h);
                    prop_assert!((fdiff - jac[(r, c)]).abs() < 1e-5 * (1.0 + fdiff.abs()),
                        "J[{r},{c}] = {} vs fd {fdiff}", jac[(r, c)]);
                }
            }
        }
    }
}
