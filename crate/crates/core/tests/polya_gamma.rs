mod common;

use common::{ks_critical, ks_statistic, moments_with_se};
use spatial_bt::pg::{pg_mean, pg_variance, sample_pg, sample_pg1, PgParams};
use spatial_bt::rng_for;

#[test]
fn sample_moments_match_closed_form() {
    let draws = 100_000;
    for (bi, b) in [1u32, 2, 5].into_iter().enumerate() {
        for (ci, c) in [0.0, 0.5, 1.0, 2.0, 5.0].into_iter().enumerate() {
            let params = PgParams::new(b, c).unwrap();
            let mut rng = rng_for(11, (bi * 10 + ci) as u64);
            let xs: Vec<f64> = (0..draws).map(|_| sample_pg(params, &mut rng).unwrap()).collect();
            let (mean, mean_se, var, var_se) = moments_with_se(&xs);
            let (m, v) = (pg_mean(params), pg_variance(params));
            assert!((mean - m).abs() < 4.0 * mean_se, "b={b} c={c}: mean {mean} vs {m}");
            assert!((var - v).abs() < 4.0 * var_se, "b={b} c={c}: var {var} vs {v}");
        }
    }
}

#[test]
fn sum_of_unit_draws_matches_pg2() {
    let n = 10_000;
    let c = 1.3;
    let mut rng = rng_for(5, 0);
    let direct: Vec<f64> =
        (0..n).map(|_| sample_pg(PgParams::new(2, c).unwrap(), &mut rng).unwrap()).collect();
    let mut rng = rng_for(5, 1);
    let summed: Vec<f64> = (0..n)
        .map(|_| sample_pg1(c, &mut rng).unwrap() + sample_pg1(c, &mut rng).unwrap())
        .collect();
    assert!(ks_statistic(&direct, &summed) < ks_critical(n, n, 0.001));
}

#[test]
fn distribution_is_symmetric_in_tilt() {
    let n = 10_000;
    for c in [0.5, 2.0, 7.0] {
        let mut rng = rng_for(9, 0);
        let pos: Vec<f64> = (0..n).map(|_| sample_pg1(c, &mut rng).unwrap()).collect();
        let mut rng = rng_for(9, 1);
        let neg: Vec<f64> = (0..n).map(|_| sample_pg1(-c, &mut rng).unwrap()).collect();
        assert!(ks_statistic(&pos, &neg) < ks_critical(n, n, 0.001), "c={c}");
    }
}

#[test]
fn large_tilt_is_stable() {
    let mut rng = rng_for(1, 0);
    let params = PgParams::new(3, 300.0).unwrap();
    let xs: Vec<f64> = (0..20_000).map(|_| sample_pg(params, &mut rng).unwrap()).collect();
    assert!(xs.iter().all(|x| x.is_finite() && *x > 0.0));
    let (mean, se, _, _) = moments_with_se(&xs);
    assert!((mean - pg_mean(params)).abs() < 4.0 * se);
}

#[test]
fn ks_oracle_detects_a_shift() {
    let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 0.2).collect();
    assert!((ks_statistic(&a, &b) - 0.2).abs() < 2e-3);
    assert!((ks_critical(10_000, 10_000, 0.001) - 1.9495 * (2e-4f64).sqrt()).abs() < 1e-4);
}
