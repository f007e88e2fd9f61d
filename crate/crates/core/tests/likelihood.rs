mod common;

use proptest::prelude::*;
use spatial_bt::bt::{log_likelihood, read_comparisons, write_comparisons};
use spatial_bt::sim::{simulate_comparisons, simulate_outcomes};
use spatial_bt::{rng_for, PairIndex, Tallies, WardGraph};

fn tallies_strategy(max_wards: usize, max_n: u32) -> impl Strategy<Value = (Tallies, Vec<f64>)> {
    (2usize..=max_wards).prop_flat_map(move |n| {
        let m = PairIndex::new(n).len();
        (
            prop::collection::vec((0..=max_n, 0.0f64..1.0), m),
            prop::collection::vec(-4.0f64..4.0, n),
        )
            .prop_map(move |(counts, lambda)| {
                let mut t = Tallies::new(n);
                for ((i, j), (total, share)) in PairIndex::new(n).iter().zip(counts) {
                    let wins = (share * (total as f64 + 1.0)).floor().min(total as f64) as u32;
                    for k in 0..total {
                        if k < wins {
                            t.record(i, j).unwrap();
                        } else {
                            t.record(j, i).unwrap();
                        }
                    }
                }
                (t, lambda)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn likelihood_is_translation_invariant((tallies, lambda) in tallies_strategy(8, 6), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = lambda.iter().map(|l| l + c).collect();
        let a = log_likelihood(&tallies, &lambda);
        let b = log_likelihood(&tallies, &shifted);
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn likelihood_matches_direct_product((tallies, lambda) in tallies_strategy(5, 3)) {
        let direct = common::likelihood_by_product(&tallies, &lambda);
        let ours = log_likelihood(&tallies, &lambda).exp();
        prop_assert!((direct - ours).abs() <= 1e-10 * direct, "{direct} vs {ours}");
    }
}

#[test]
fn empty_tallies_have_unit_likelihood() {
    assert_eq!(log_likelihood(&Tallies::new(4), &[0.3, -1.0, 2.0, 0.0]), 0.0);
}

#[test]
fn comparison_csv_round_trip_preserves_tallies() {
    let graph = WardGraph::grid(3, 3).unwrap();
    let mut rng = rng_for(7, 0);
    let lambda: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.2).collect();
    let pairs: Vec<(usize, usize)> = PairIndex::new(9).iter().cycle().take(120).collect();
    let records = simulate_comparisons(&graph, &lambda, &pairs, &mut rng);
    let mut buf = Vec::new();
    write_comparisons(&mut buf, &records).unwrap();
    let import = read_comparisons(buf.as_slice()).unwrap();
    assert!(import.dropped.is_empty());
    assert_eq!(import.records, records);
    let before = spatial_bt::bt::tally(&records, &graph).unwrap();
    let after = spatial_bt::bt::tally(&import.records, &graph).unwrap();
    assert_eq!(before, after);
}

#[test]
fn simulated_win_rate_matches_logistic() {
    let mut rng = rng_for(3, 0);
    let pairs = vec![(0, 1); 100_000];
    let outcomes = simulate_outcomes(&[1.0, 0.0], &pairs, &mut rng);
    let wins = outcomes.iter().filter(|o| o.0 == 0).count() as f64 / 1e5;
    let p = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((wins - p).abs() < 4.0 * (p * (1.0 - p) / 1e5).sqrt());
}
