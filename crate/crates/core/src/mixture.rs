//! Finite mixtures of univariate location-scale densities.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Largest number of allocation terms `allocation_likelihood` will enumerate.
pub const ALLOCATION_BUDGET: u64 = 1_000_000;

/// A single mixture component.
///
/// Student-t components use the location-scale form
/// `(1/scale) * t_df((x - loc) / scale)`, so `scale` is a scale factor and not
/// a standard deviation (a Cauchy component has none).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Component {
    Gaussian {
        loc: f64,
        scale: f64,
    },
    #[serde(alias = "student-t", alias = "studentt", alias = "t")]
    StudentT {
        loc: f64,
        scale: f64,
        df: f64,
    },
}

impl Component {
    pub fn gaussian(loc: f64, scale: f64) -> Self {
        Component::Gaussian { loc, scale }
    }

    pub fn student_t(df: f64, loc: f64, scale: f64) -> Self {
        Component::StudentT { loc, scale, df }
    }

    pub fn loc(&self) -> f64 {
        match *self {
            Component::Gaussian { loc, .. } | Component::StudentT { loc, .. } => loc,
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            Component::Gaussian { scale, .. } | Component::StudentT { scale, .. } => scale,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Component::Gaussian { .. })
    }

    pub fn with_loc(&self, loc: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            Component::Gaussian { loc: l, .. } | Component::StudentT { loc: l, .. } => *l = loc,
        }
        c
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            Component::Gaussian { scale: s, .. } | Component::StudentT { scale: s, .. } => *s = scale,
        }
        c
    }

    fn validate(&self) -> Result<()> {
        let (loc, scale) = (self.loc(), self.scale());
        if !loc.is_finite() {
            return Err(Error::InvalidModel(format!("non-finite location {loc}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidModel(format!("scale must be > 0, got {scale}")));
        }
        if let Component::StudentT { df, .. } = *self {
            if !(df > 0.0 && df.is_finite()) {
                return Err(Error::InvalidModel(format!("df must be > 0, got {df}")));
            }
        }
        Ok(())
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Component::Gaussian { loc, scale } => {
                let z = (x - loc) / scale;
                -0.5 * z * z - scale.ln() - LN_SQRT_2PI
            }
            Component::StudentT { loc, scale, df } => {
                let z = (x - loc) / scale;
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Component::Gaussian { loc, scale } => {
                0.5 * statrs::function::erf::erfc(-(x - loc) / (scale * std::f64::consts::SQRT_2))
            }
            Component::StudentT { loc, scale, df } => {
                use statrs::distribution::StudentsT;
                StudentsT::new(0.0, 1.0, df).expect("validated df").cdf((x - loc) / scale)
            }
        }
    }

    /// Log-density with constants that do not depend on `x` precomputed.
    pub(crate) fn prepared(&self) -> PreparedComponent {
        match *self {
            Component::Gaussian { loc, scale } => {
                PreparedComponent { loc, inv_scale: 1.0 / scale, ln_norm: -scale.ln() - LN_SQRT_2PI, df: None }
            }
            Component::StudentT { loc, scale, df } => PreparedComponent {
                loc,
                inv_scale: 1.0 / scale,
                ln_norm: ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln() - scale.ln(),
                df: Some(df),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PreparedComponent {
    loc: f64,
    inv_scale: f64,
    ln_norm: f64,
    df: Option<f64>,
}

impl PreparedComponent {
    #[inline]
    pub(crate) fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) * self.inv_scale;
        match self.df {
            None => self.ln_norm - 0.5 * z * z,
            Some(df) => self.ln_norm - 0.5 * (df + 1.0) * (z * z / df).ln_1p(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct MixtureModel {
    components: Vec<Component>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMixture {
    components: Vec<Component>,
    weights: Vec<f64>,
}

impl TryFrom<RawMixture> for MixtureModel {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        MixtureModel::new(raw.components, raw.weights)
    }
}

impl MixtureModel {
    pub fn new(components: Vec<Component>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("a mixture needs at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::InvalidModel(format!("{} components but {} weights", components.len(), weights.len())));
        }
        for c in &components {
            c.validate()?;
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidModel(format!("weights must be >= 0, got {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        Ok(MixtureModel { components, weights })
    }

    /// Mixture of Gaussians from `(weight, mean, sd)` triples.
    pub fn gaussian(spec: &[(f64, f64, f64)]) -> Result<Self> {
        let (components, weights) = spec.iter().map(|&(w, m, s)| (Component::gaussian(m, s), w)).unzip();
        Self::new(components, weights)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(Component::loc).collect()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.components.iter().map(Component::scale).collect()
    }

    pub fn is_all_gaussian(&self) -> bool {
        self.components.iter().all(Component::is_gaussian)
    }

    pub fn min_scale(&self) -> f64 {
        self.scales().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Returns the model with components and weights reordered so that the
    /// new component `i` is the old component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), got: perm.len() });
        }
        Self::new(
            perm.iter().map(|&i| self.components[i].clone()).collect(),
            perm.iter().map(|&i| self.weights[i]).collect(),
        )
    }

    pub fn shifted(&self, by: f64) -> Result<Self> {
        Self::new(self.components.iter().map(|c| c.with_loc(c.loc() + by)).collect(), self.weights.clone())
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components.iter().zip(&self.weights).map(|(c, w)| w * c.pdf(x)).sum()
    }

    /// `log g(x)` via log-sum-exp over components.
    pub fn ln_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self.components.iter().zip(&self.weights).map(|(c, &w)| w.ln() + c.ln_pdf(x)).collect();
        log_sum_exp(&terms)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components.iter().zip(&self.weights).map(|(c, w)| w * c.cdf(x)).sum()
    }

    pub fn log_likelihood(&self, data: &DataSet) -> f64 {
        let prepared: Vec<_> = self.components.iter().map(Component::prepared).collect();
        let ln_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut terms = vec![0.0; self.k()];
        data.values
            .iter()
            .map(|&x| {
                for ((t, c), lw) in terms.iter_mut().zip(&prepared).zip(&ln_w) {
                    *t = lw + c.ln_pdf(x);
                }
                log_sum_exp(&terms)
            })
            .sum()
    }

    /// Likelihood as the explicit sum over all `k^n` allocations of
    /// observations to components.
    pub fn allocation_likelihood(&self, data: &DataSet) -> Result<f64> {
        let k = self.k();
        let n = data.len();
        let needed = (k as f64).powi(n as i32);
        if needed > ALLOCATION_BUDGET as f64 {
            return Err(Error::CombinatorialBudget { needed, budget: ALLOCATION_BUDGET });
        }
        // terms[j][i] = p_i f_i(x_j)
        let terms: Vec<Vec<f64>> = data
            .values
            .iter()
            .map(|&x| self.components.iter().zip(&self.weights).map(|(c, w)| w * c.pdf(x)).collect())
            .collect();
        let mut alloc = vec![0usize; n];
        let mut total = 0.0;
        loop {
            total += alloc.iter().enumerate().map(|(j, &i)| terms[j][i]).product::<f64>();
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == n {
                    return Ok(total);
                }
                alloc[pos] += 1;
                if alloc[pos] < k {
                    break;
                }
                alloc[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Draws `n` i.i.d. observations; identical seeds give identical data.
    pub fn sample(&self, n: usize, seed: u64) -> DataSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = self.sample_with(n, &mut rng);
        DataSet { values, seed: Some(seed) }
    }

    pub(crate) fn sample_with<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let index = WeightedIndex::new(&self.weights).expect("validated weights");
        (0..n)
            .map(|_| match self.components[index.sample(rng)] {
                Component::Gaussian { loc, scale } => Normal::new(loc, scale).expect("validated scale").sample(rng),
                Component::StudentT { loc, scale, df } => {
                    loc + scale * StudentT::new(df).expect("validated df").sample(rng)
                }
            })
            .collect()
    }

    /// Envelope of the per-component central intervals holding `coverage`
    /// mass. Only defined for Gaussian components.
    pub fn coverage_interval(&self, coverage: f64) -> Result<(f64, f64)> {
        if !(coverage > 0.0 && coverage < 1.0) {
            return Err(Error::Domain(format!("coverage must be in (0,1), got {coverage}")));
        }
        if !self.is_all_gaussian() {
            return Err(Error::UnsupportedFamily("coverage_interval (Student-t component)"));
        }
        let z = normal_quantile(0.5 + 0.5 * coverage);
        let lo = self.components.iter().map(|c| c.loc() - z * c.scale()).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.loc() + z * c.scale()).fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    StdNormal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Univariate observations, optionally tagged with the seed that produced them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DataSet {
    pub fn new(values: Vec<f64>) -> Self {
        DataSet { values, seed: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Sample standard deviation (n - 1 denominator).
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.values.iter().map(|x| (x - m).powi(2)).sum();
        (ss / (self.len() as f64 - 1.0)).sqrt()
    }

    /// Reads a single-column CSV with header `x`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "x" {
            return Err(Error::InvalidSpec(format!(
                "data CSV must have the single header \"x\", found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let v: f64 =
                record[0].trim().parse().map_err(|e| Error::InvalidSpec(format!("data CSV line {}: {e}", line + 2)))?;
            values.push(v);
        }
        Ok(DataSet::new(values))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["x"])?;
        for v in &self.values {
            wtr.write_record([format_f64(*v)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Round-trip safe formatting with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
