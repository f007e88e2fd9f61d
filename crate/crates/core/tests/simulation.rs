use spatial_bt::schedule::{draw_schedule, uniform_schedule};
use spatial_bt::sim::{derive_seed, simulate_outcomes, simulate_rates};
use spatial_bt::spatial::prior_covariance;
use spatial_bt::{fit, rng_for, stats, FitConfig, Tallies, WardGraph};

#[test]
fn prior_draws_have_alpha_sq_variance() {
    let graph = WardGraph::study_region();
    let cov = prior_covariance(&graph, 9.0).unwrap();
    let mut rng = rng_for(12, 0);
    let draws: Vec<Vec<f64>> = (0..4000)
        .map(|_| simulate_rates(&cov, &mut rng).unwrap().as_vector().as_slice().to_vec())
        .collect();
    let n = graph.len();
    let mean_var: f64 = (0..n)
        .map(|w| stats::variance(&draws.iter().map(|d| d[w]).collect::<Vec<_>>()))
        .sum::<f64>()
        / n as f64;
    assert!((mean_var - 9.0).abs() < 0.5, "average marginal variance {mean_var}");
}

#[test]
fn posterior_medians_track_true_rates() {
    let graph = WardGraph::study_region();
    let n = graph.len();
    let cov = prior_covariance(&graph, 9.0).unwrap();
    let schedule = uniform_schedule(n).unwrap();
    let mut total = 0.0;
    let replicates = 20;
    for r in 0..replicates {
        let mut rng = rng_for(40, r);
        let lambda = simulate_rates(&cov, &mut rng).unwrap().into_vector();
        let pairs = draw_schedule(&schedule, 500, &mut rng);
        let tallies = Tallies::from_outcomes(n, &simulate_outcomes(lambda.as_slice(), &pairs, &mut rng)).unwrap();
        let config = FitConfig { iterations: 600, burn_in: 100, seed: derive_seed(40, r, 1), ..FitConfig::default() };
        let result = fit(&tallies, cov.correlation(), &config).unwrap();
        total += stats::spearman(lambda.as_slice(), &result.summary.medians());
    }
    let average = total / replicates as f64;
    assert!(average > 0.5, "average Spearman {average}");
}
