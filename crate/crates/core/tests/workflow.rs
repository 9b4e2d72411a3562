use jeffmix_core::fisher::fisher_matrix;
use jeffmix_core::harness::{posterior_grid, run_experiment, ExperimentSpec, GridAxis, GridScale, GridSpec};
use jeffmix_core::mcmc::McmcConfig;
use jeffmix_core::priors::{jeffreys_log_prior, PriorKind};
use jeffmix_core::{DataSet, Execution, IntegrationSpec, MixtureModel, UnknownConfig};

fn two_component() -> MixtureModel {
    MixtureModel::gaussian(&[(0.4, -1.5, 1.0), (0.6, 1.0, 0.7)]).unwrap()
}

#[test]
fn model_and_data_round_trip_through_text() {
    let model = two_component();
    assert_eq!(MixtureModel::from_json_str(&model.to_json_string()).unwrap(), model);

    let data = model.sample(25, 3);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = DataSet::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.values, data.values);
    assert_eq!(model.log_likelihood(&back), model.log_likelihood(&data));
}

#[test]
fn restricted_configs_are_submatrices_of_full() {
    let model = two_component();
    let spec = IntegrationSpec::riemann(2000);
    let full = fisher_matrix(&model, UnknownConfig::All, &spec).unwrap();
    let means = fisher_matrix(&model, UnknownConfig::MeansOnly, &spec).unwrap();
    let scales = fisher_matrix(&model, UnknownConfig::ScalesOnly, &spec).unwrap();
    let weights = fisher_matrix(&model, UnknownConfig::WeightsOnly, &spec).unwrap();
    for a in 0..2 {
        for b in 0..2 {
            assert!((means.get(a, b) - full.get(a, b)).abs() < 1e-12);
            assert!((scales.get(a, b) - full.get(a + 2, b + 2)).abs() < 1e-12);
        }
    }
    assert!((weights.get(0, 0) - full.get(4, 4)).abs() < 1e-12);
}

#[test]
fn jeffreys_prior_is_location_invariant() {
    let model = two_component();
    let spec = IntegrationSpec::quad(1e-9);
    for config in [UnknownConfig::MeansOnly, UnknownConfig::All] {
        let base = jeffreys_log_prior(&model, config, &spec);
        let moved = jeffreys_log_prior(&model.shifted(7.25).unwrap(), config, &spec);
        assert!((base - moved).abs() < 1e-6, "{config}: {base} vs {moved}");
    }
}

#[test]
fn posterior_grid_peaks_near_the_generating_means() {
    let template = MixtureModel::gaussian(&[(0.5, -2.0, 0.5), (0.5, 2.0, 0.5)]).unwrap();
    let data = template.sample(200, 9);
    let grid = GridSpec::new(vec![GridAxis::new("mu_1", -3.0, -1.0, 21), GridAxis::new("mu_2", 1.0, 3.0, 21)])
        .with_scale(GridScale::Log);
    let g = posterior_grid(
        &template,
        UnknownConfig::MeansOnly,
        &data,
        &grid,
        &IntegrationSpec::riemann(550),
        PriorKind::Jeffreys,
        Execution::Parallel,
    )
    .unwrap();
    let best = &g.points[g.argmax().unwrap()];
    assert!((best[0] + 2.0).abs() < 0.3 && (best[1] - 2.0).abs() < 0.3, "{best:?}");
}

#[test]
fn experiment_is_reproducible_across_execution_modes() {
    let mut spec = ExperimentSpec::new(two_component(), UnknownConfig::All, PriorKind::Hierarchical, vec![30, 60]);
    spec.replications = 3;
    spec.mcmc = McmcConfig::new(1500, 300, 0);
    spec.master_seed = 42;
    let seq = run_experiment(&spec, Execution::Sequential).unwrap();
    let par = run_experiment(&spec, Execution::Parallel).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    seq.write_jsonl(&mut a).unwrap();
    par.write_jsonl(&mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(seq.rows.len(), 2);
    assert!(seq.rows.iter().all(|r| r.failures == 0 && r.replications == 3));

    let json = serde_json::to_string(&spec).unwrap();
    assert_eq!(ExperimentSpec::from_json_str(&json).unwrap(), spec);
}
