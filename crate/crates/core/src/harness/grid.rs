//! Dense prior and posterior evaluation over Cartesian grids.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::target::log_prior;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fisher::{IntegrationSpec, UnknownConfig};
use crate::mixture::{format_f64, DataSet, MixtureModel};
use crate::priors::PriorKind;

/// Default hyperparameters for hierarchical grids.
pub const DEFAULT_GRID_HYPER: (f64, f64) = (0.0, 5.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    /// A free-parameter label of the configuration, e.g. `mu_1` or `p_1`.
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(name: &str, lo: f64, hi: f64, steps: usize) -> Self {
        GridAxis { name: name.into(), lo, hi, steps }
    }

    /// `steps` equally spaced values from `lo` to `hi` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let h = (self.hi - self.lo) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| if i + 1 == self.steps { self.hi } else { self.lo + h * i as f64 }).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridScale {
    /// Exported values are `exp(log value)`.
    Natural,
    #[default]
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
    /// Overrides for parameters not on an axis; the rest come from the model
    /// template. `mu_0` and `zeta_0` set the hierarchical hyperparameters.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub scale: GridScale,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Self {
        GridSpec { axes, fixed: BTreeMap::new(), scale: GridScale::Log }
    }

    pub fn with_scale(mut self, scale: GridScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self, labels: &[String]) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::InvalidSpec("grid needs at least one axis".into()));
        }
        for a in &self.axes {
            if a.steps < 2 || !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "axis {}: need steps >= 2 and finite lo < hi, got ({}, {}, {})",
                    a.name, a.lo, a.hi, a.steps
                )));
            }
            if !labels.contains(&a.name) {
                return Err(Error::InvalidSpec(format!(
                    "axis {} is not a free parameter; expected one of {}",
                    a.name,
                    labels.join(", ")
                )));
            }
            if self.axes.iter().filter(|b| b.name == a.name).count() > 1 {
                return Err(Error::InvalidSpec(format!("axis {} repeated", a.name)));
            }
        }
        for name in self.fixed.keys() {
            if !labels.contains(name) && name != "mu_0" && name != "zeta_0" {
                return Err(Error::InvalidSpec(format!("fixed parameter {name} is not a free parameter")));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(|a| a.steps).product()
    }

    /// Axis coordinates of cell `i`, last axis varying fastest.
    fn point(&self, values: &[Vec<f64>], mut i: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.axes.len()];
        for (j, v) in values.iter().enumerate().rev() {
            p[j] = v[i % v.len()];
            i /= v.len();
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<String>,
    pub points: Vec<Vec<f64>>,
    /// Log values. Cells outside the parameter space hold `-inf`.
    pub log_values: Vec<f64>,
    pub scale: GridScale,
}

impl Grid {
    /// Values on the requested scale.
    pub fn values(&self) -> Vec<f64> {
        match self.scale {
            GridScale::Log => self.log_values.clone(),
            GridScale::Natural => self.log_values.iter().map(|v| v.exp()).collect(),
        }
    }

    /// Long format: one column per axis, then `value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.axes.clone();
        header.push("value".into());
        w.write_record(&header)?;
        for (p, v) in self.points.iter().zip(self.values()) {
            let mut row: Vec<String> = p.iter().map(|&x| format_f64(x)).collect();
            row.push(format_f64(v));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn argmax(&self) -> Option<usize> {
        (0..self.log_values.len())
            .filter(|&i| !self.log_values[i].is_nan())
            .max_by(|&a, &b| self.log_values[a].total_cmp(&self.log_values[b]))
    }
}

fn evaluate<F>(template: &MixtureModel, config: UnknownConfig, grid: &GridSpec, exec: Execution, f: F) -> Result<Grid>
where
    F: Fn(&MixtureModel, Option<(f64, f64)>) -> f64 + Sync + Send,
{
    let labels = config.labels(template.k());
    grid.validate(&labels)?;
    let base = config.free_params(template)?;
    let axis_index: Vec<usize> =
        grid.axes.iter().map(|a| labels.iter().position(|l| *l == a.name).expect("validated")).collect();
    let mut params = base;
    for (name, &v) in &grid.fixed {
        if let Some(i) = labels.iter().position(|l| l == name) {
            params[i] = v;
        }
    }
    let hyper = (
        grid.fixed.get("mu_0").copied().unwrap_or(DEFAULT_GRID_HYPER.0),
        grid.fixed.get("zeta_0").copied().unwrap_or(DEFAULT_GRID_HYPER.1),
    );
    let values: Vec<Vec<f64>> = grid.axes.iter().map(GridAxis::values).collect();
    let points: Vec<Vec<f64>> = (0..grid.cells()).map(|i| grid.point(&values, i)).collect();
    let log_values = exec::map(exec, &points, |p| {
        let mut x = params.clone();
        for (&j, &v) in axis_index.iter().zip(p) {
            x[j] = v;
        }
        match config.with_free_params(template, &x) {
            Ok(model) => f(&model, Some(hyper)),
            Err(_) => f64::NEG_INFINITY,
        }
    });
    Ok(Grid { axes: grid.axes.iter().map(|a| a.name.clone()).collect(), points, log_values, scale: grid.scale })
}

/// Log-prior over the grid, as a density in the configuration's coordinates.
pub fn prior_grid(
    template: &MixtureModel,
    config: UnknownConfig,
    grid: &GridSpec,
    spec: &IntegrationSpec,
    prior: PriorKind,
    exec: Execution,
) -> Result<Grid> {
    prior.check(config)?;
    spec.validate()?;
    evaluate(template, config, grid, exec, |m, h| log_prior(m, config, prior, h, spec))
}

/// Log-prior plus log-likelihood over the grid.
pub fn posterior_grid(
    template: &MixtureModel,
    config: UnknownConfig,
    data: &DataSet,
    grid: &GridSpec,
    spec: &IntegrationSpec,
    prior: PriorKind,
    exec: Execution,
) -> Result<Grid> {
    prior.check(config)?;
    spec.validate()?;
    evaluate(template, config, grid, exec, |m, h| {
        let lp = log_prior(m, config, prior, h, spec);
        if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp + m.log_likelihood(data)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn riemann() -> IntegrationSpec {
        IntegrationSpec::riemann(550)
    }

    #[test]
    fn symmetric_weights_grid() {
        let m = MixtureModel::gaussian(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).unwrap();
        let grid = GridSpec::new(vec![GridAxis::new("p_1", 0.05, 0.95, 19)]);
        let g = prior_grid(&m, UnknownConfig::WeightsOnly, &grid, &riemann(), PriorKind::Jeffreys, Execution::Parallel)
            .unwrap();
        for i in 0..19 {
            let (a, b) = (g.log_values[i], g.log_values[18 - i]);
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{i}: {a} vs {b}");
        }
    }

    #[test]
    fn three_component_weights_prior_peaks_at_the_edges() {
        let m = MixtureModel::gaussian(&[(0.3, -1.0, 1.0), (0.3, 0.0, 5.0), (0.4, 2.0, 0.5)]).unwrap();
        let grid = GridSpec::new(vec![GridAxis::new("p_1", 0.02, 0.96, 48), GridAxis::new("p_2", 0.02, 0.96, 48)]);
        let g = prior_grid(&m, UnknownConfig::WeightsOnly, &grid, &riemann(), PriorKind::Jeffreys, Execution::Parallel)
            .unwrap();
        let at = |p1: f64, p2: f64| {
            let i = g.points.iter().position(|p| (p[0] - p1).abs() < 1e-9 && (p[1] - p2).abs() < 1e-9).unwrap();
            g.log_values[i]
        };
        let center = at(0.32, 0.32);
        for corner in [at(0.02, 0.02), at(0.02, 0.96), at(0.96, 0.02)] {
            assert!(corner > center, "{corner} vs {center}");
        }
        assert_eq!(at(0.96, 0.96), f64::NEG_INFINITY);
    }

    #[test]
    fn means_grid_constant_along_diagonal() {
        let m = MixtureModel::gaussian(&[(0.4, 0.0, 1.0), (0.6, 1.0, 2.0)]).unwrap();
        let grid = GridSpec::new(vec![GridAxis::new("mu_1", -3.0, 3.0, 7), GridAxis::new("mu_2", -3.0, 3.0, 7)]);
        let g = prior_grid(&m, UnknownConfig::MeansOnly, &grid, &riemann(), PriorKind::Jeffreys, Execution::Sequential)
            .unwrap();
        // cells (i, i + 2): mu_2 - mu_1 = 2
        let diag: Vec<f64> = (0..5).map(|i| g.log_values[i * 7 + i + 2]).collect();
        for v in &diag {
            assert!((v - diag[0]).abs() <= 1e-6 * diag[0].abs());
        }
    }

    #[test]
    fn posterior_grid_symmetry_and_empty_data() {
        let m = MixtureModel::gaussian(&[(0.5, 0.0, 1.0), (0.5, 0.0, 1.0)]).unwrap();
        let data = MixtureModel::gaussian(&[(0.5, -1.0, 1.0), (0.5, 1.5, 1.0)]).unwrap().sample(40, 2);
        let grid = GridSpec::new(vec![GridAxis::new("mu_1", -3.0, 3.0, 13), GridAxis::new("mu_2", -3.0, 3.0, 13)]);
        let spec = riemann();
        let post =
            posterior_grid(&m, UnknownConfig::MeansOnly, &data, &grid, &spec, PriorKind::Jeffreys, Execution::Parallel)
                .unwrap();
        for i in 0..13 {
            for j in 0..13 {
                let (a, b) = (post.log_values[i * 13 + j], post.log_values[j * 13 + i]);
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "({i},{j})");
                }
            }
        }
        let empty = DataSet::new(vec![]);
        let prior =
            prior_grid(&m, UnknownConfig::MeansOnly, &grid, &spec, PriorKind::Jeffreys, Execution::Parallel).unwrap();
        let post0 = posterior_grid(
            &m,
            UnknownConfig::MeansOnly,
            &empty,
            &grid,
            &spec,
            PriorKind::Jeffreys,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(prior.log_values, post0.log_values);
    }

    #[test]
    fn large_sample_posterior_peaks_near_truth() {
        let truth = MixtureModel::gaussian(&[(0.5, -1.0, 1.0), (0.5, 2.0, 0.5)]).unwrap();
        let data = truth.sample(500, 8);
        let grid = GridSpec::new(vec![GridAxis::new("mu_1", -3.0, 4.0, 29), GridAxis::new("mu_2", -3.0, 4.0, 29)]);
        let post = posterior_grid(
            &truth,
            UnknownConfig::MeansOnly,
            &data,
            &grid,
            &riemann(),
            PriorKind::Jeffreys,
            Execution::Parallel,
        )
        .unwrap();
        let best = &post.points[post.argmax().unwrap()];
        let step = 0.25 + 1e-9;
        let direct = (best[0] + 1.0).abs() <= step && (best[1] - 2.0).abs() <= step;
        let swapped = (best[1] + 1.0).abs() <= step && (best[0] - 2.0).abs() <= step;
        assert!(direct || swapped, "{best:?}");
    }

    #[test]
    fn natural_scale_is_exp_of_log_scale() {
        let m = MixtureModel::gaussian(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).unwrap();
        let axes = vec![GridAxis::new("p_1", 0.1, 0.9, 5)];
        let spec = riemann();
        let log = prior_grid(
            &m,
            UnknownConfig::WeightsOnly,
            &GridSpec::new(axes.clone()),
            &spec,
            PriorKind::Jeffreys,
            Execution::Sequential,
        )
        .unwrap();
        let nat = prior_grid(
            &m,
            UnknownConfig::WeightsOnly,
            &GridSpec::new(axes).with_scale(GridScale::Natural),
            &spec,
            PriorKind::Jeffreys,
            Execution::Sequential,
        )
        .unwrap();
        let expected: Vec<f64> = log.values().iter().map(|v| v.exp()).collect();
        assert_eq!(nat.values(), expected);
        let mut buf = Vec::new();
        nat.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("p_1,value\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn rejects_bad_axes() {
        let m = MixtureModel::gaussian(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).unwrap();
        let spec = riemann();
        for axis in
            [GridAxis::new("mu_1", 0.1, 0.9, 5), GridAxis::new("p_1", 0.9, 0.1, 5), GridAxis::new("p_1", 0.1, 0.9, 1)]
        {
            let r = prior_grid(
                &m,
                UnknownConfig::WeightsOnly,
                &GridSpec::new(vec![axis]),
                &spec,
                PriorKind::Jeffreys,
                Execution::Sequential,
            );
            assert!(matches!(r, Err(Error::InvalidSpec(_))));
        }
    }
}
