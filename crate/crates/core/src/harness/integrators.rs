//! Side-by-side Fisher information estimates from the three backends.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::seeds::derive_seed;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fisher::quadrature::{DEFAULT_REL_TOL, DEFAULT_RIEMANN_POINTS};
use crate::fisher::{fisher_element, fisher_matrix, IntegrationSpec, UnknownConfig};
use crate::mixture::{format_f64, MixtureModel};

/// The two three-component models used for the backend comparison.
pub fn comparison_models() -> [MixtureModel; 2] {
    let third = 1.0 / 3.0;
    [
        MixtureModel::gaussian(&[(0.25, -10.0, 1.0), (0.10, 0.0, 5.0), (0.65, 15.0, 7.0)]).expect("valid model"),
        MixtureModel::gaussian(&[(third, -1.0, 0.2), (third, 0.0, 0.2), (1.0 - 2.0 * third, 1.0, 0.2)])
            .expect("valid model"),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSettings {
    pub riemann_points: usize,
    pub rel_tol: f64,
    pub mc_draws: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        ComparisonSettings {
            riemann_points: DEFAULT_RIEMANN_POINTS,
            rel_tol: DEFAULT_REL_TOL,
            mc_draws: vec![1500],
            repeats: 100,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub row: usize,
    pub col: usize,
    pub label: String,
    pub riemann: f64,
    /// `None` when adaptive quadrature did not converge.
    pub quad: Option<f64>,
    pub draws: usize,
    pub mc_mean: f64,
    /// Standard deviation of single Monte Carlo estimates across repeats.
    pub mc_sd: f64,
    pub repeats: usize,
}

impl ComparisonRow {
    pub fn mc_std_error(&self) -> f64 {
        self.mc_sd / (self.repeats as f64).sqrt()
    }
}

/// For each element and draw count: Riemann and adaptive-quadrature values
/// plus the mean and spread of repeated Monte Carlo estimates.
pub fn compare_integrators(
    model: &MixtureModel,
    config: UnknownConfig,
    elements: &[(usize, usize)],
    settings: &ComparisonSettings,
    exec: Execution,
) -> Result<Vec<ComparisonRow>> {
    config.check(model)?;
    let d = config.dim(model.k());
    if let Some(&(a, b)) = elements.iter().find(|(a, b)| *a >= d || *b >= d) {
        return Err(Error::InvalidSpec(format!("element ({a}, {b}) outside a {d}x{d} matrix")));
    }
    if settings.repeats < 2 || settings.mc_draws.contains(&0) {
        return Err(Error::InvalidSpec("need repeats >= 2 and positive draw counts".into()));
    }
    let labels = config.labels(model.k());
    let riemann = fisher_matrix(model, config, &IntegrationSpec::riemann(settings.riemann_points))?;
    let quad = exec::map(exec, elements, |&(a, b)| {
        match fisher_element(model, config, a, b, &IntegrationSpec::quad(settings.rel_tol)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::QuadratureFailure { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &draws in &settings.mc_draws {
        let estimates = exec::map_range(exec, settings.repeats, |r| {
            let seed = derive_seed(settings.master_seed, &[draws as u64, r as u64]);
            fisher_matrix(model, config, &IntegrationSpec::monte_carlo(draws, seed))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (e, &(a, b)) in elements.iter().enumerate() {
            let xs: Vec<f64> = estimates.iter().map(|f| f.get(a, b)).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            rows.push(ComparisonRow {
                row: a,
                col: b,
                label: format!("{}:{}", labels[a], labels[b]),
                riemann: riemann.get(a, b),
                quad: quad[e],
                draws,
                mc_mean: mean,
                mc_sd: sd,
                repeats: settings.repeats,
            });
        }
    }
    Ok(rows)
}

/// One table per model; the `model` column is the index into `tables`.
pub fn write_comparison_csv<W: Write>(tables: &[Vec<ComparisonRow>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "row", "col", "label", "riemann", "quad", "draws", "mc_mean", "mc_sd", "repeats"])?;
    for (m, r) in tables.iter().enumerate().flat_map(|(m, rows)| rows.iter().map(move |r| (m, r))) {
        w.write_record([
            m.to_string(),
            r.row.to_string(),
            r.col.to_string(),
            r.label.clone(),
            format_f64(r.riemann),
            r.quad.map_or_else(String::new, format_f64),
            r.draws.to_string(),
            format_f64(r.mc_mean),
            format_f64(r.mc_sd),
            r.repeats.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monte_carlo_error_scales_with_draws() {
        let model = &comparison_models()[0];
        let settings = ComparisonSettings { mc_draws: vec![500, 1000, 2000], repeats: 200, ..Default::default() };
        let rows =
            compare_integrators(model, UnknownConfig::All, &[(0, 0), (3, 3)], &settings, Execution::Parallel).unwrap();
        for e in 0..2 {
            let sds: Vec<f64> = rows.iter().skip(e).step_by(2).map(|r| r.mc_sd).collect();
            for w in sds.windows(2) {
                let ratio = w[1] / w[0];
                assert!((ratio - 0.5f64.sqrt()).abs() < 0.3 * 0.5f64.sqrt(), "{sds:?}");
            }
        }
    }

    #[test]
    fn backends_agree_on_comparison_models() {
        let settings = ComparisonSettings { repeats: 30, ..Default::default() };
        for model in comparison_models() {
            let rows = compare_integrators(
                &model,
                UnknownConfig::All,
                &[(0, 0), (1, 2), (4, 4)],
                &settings,
                Execution::Parallel,
            )
            .unwrap();
            for r in rows {
                assert!((r.mc_mean - r.riemann).abs() <= 3.0 * r.mc_sd, "{r:?}");
                let q = r.quad.unwrap();
                assert!((r.riemann - q).abs() <= 5e-3 * q.abs().max(1e-8), "{r:?}");
            }
        }
    }

    #[test]
    fn deterministic_and_csv() {
        let model = &comparison_models()[1];
        let settings = ComparisonSettings { repeats: 3, mc_draws: vec![100], ..Default::default() };
        let a =
            compare_integrators(model, UnknownConfig::WeightsOnly, &[(0, 1)], &settings, Execution::Parallel).unwrap();
        let b = compare_integrators(model, UnknownConfig::WeightsOnly, &[(0, 1)], &settings, Execution::Sequential)
            .unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_comparison_csv(&[a], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("model,row,col,label,riemann,quad,draws"));
        assert!(compare_integrators(model, UnknownConfig::WeightsOnly, &[(0, 5)], &settings, Execution::Sequential)
            .is_err());
    }
}
