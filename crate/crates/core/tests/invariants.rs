use proptest::prelude::*;

use twinmigrate::checks::random_instance;
use twinmigrate::equilibrium::follower_fixed_point;
use twinmigrate::game_model::{
    expected_delay, interior_response, msp_utility, mrp_utility, pairing_probabilities, StrategyProfile,
};
use twinmigrate::scenario::{sample_scenario, scenario_from_json, scenario_to_json, ScenarioSpec};

fn prices() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..100.0, 1..8)
}

proptest! {
    #[test]
    fn pairing_is_a_distribution(p in prices()) {
        let theta = pairing_probabilities(&p).unwrap();
        prop_assert!(theta.iter().all(|&t| t > 0.0 && t <= 1.0));
        prop_assert!((theta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pairing_is_scale_free(p in prices(), k in 0.01f64..100.0) {
        let a = pairing_probabilities(&p).unwrap();
        let scaled: Vec<f64> = p.iter().map(|v| v * k).collect();
        let b = pairing_probabilities(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn dearer_mrps_are_paired_less(p in prices(), bump in 0.0f64..10.0) {
        let a = pairing_probabilities(&p).unwrap();
        let mut q = p.clone();
        q[0] += bump;
        let b = pairing_probabilities(&q).unwrap();
        prop_assert!(b[0] <= a[0] + 1e-15);
    }

    #[test]
    fn non_positive_prices_are_rejected(p in prices(), bad in -5.0f64..=0.0) {
        let mut q = p.clone();
        q[0] = bad;
        prop_assert!(pairing_probabilities(&q).is_err());
    }

    #[test]
    fn zero_trade_gives_zero_utility(seed in 0u64..10_000) {
        let (s, mut profile) = random_instance(seed).unwrap();
        for b in profile.demands[0].iter_mut() {
            *b = 0.0;
        }
        prop_assert_eq!(msp_utility(0, &profile, &s), 0.0);
        for row in profile.demands.iter_mut() {
            row[0] = 0.0;
        }
        prop_assert_eq!(mrp_utility(0, &profile, &s), 0.0);
        let (_, mut at_cost) = random_instance(seed).unwrap();
        at_cost.prices[0] = s.mrp(0).cost;
        prop_assert_eq!(mrp_utility(0, &at_cost, &s), 0.0);
    }

    #[test]
    fn msp_utility_is_concave_in_own_row(seed in 0u64..10_000, t in 0.0f64..1.0) {
        let (s, x) = random_instance(seed).unwrap();
        let (_, y) = random_instance(seed + 1_000_000).unwrap();
        if y.demands.len() != x.demands.len() || y.prices.len() != x.prices.len() {
            return Ok(());
        }
        let mut py = x.clone();
        py.demands[0] = y.demands[0].clone();
        let mut mid = x.clone();
        mid.demands[0] = x.demands[0].iter().zip(&y.demands[0]).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let lhs = msp_utility(0, &mid, &s);
        let rhs = (1.0 - t) * msp_utility(0, &x, &s) + t * msp_utility(0, &py, &s);
        prop_assert!(lhs >= rhs - 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn delay_falls_as_bandwidth_grows(seed in 0u64..10_000, extra in 0.0f64..1.0, col in 0usize..4) {
        let (s, profile) = random_instance(seed).unwrap();
        let theta = pairing_probabilities(&profile.prices).unwrap();
        let row = &profile.demands[0];
        let mut more = row.clone();
        let j = col % more.len();
        more[j] += extra;
        prop_assert!(expected_delay(0, &more, &theta, &s) <= expected_delay(0, row, &theta, &s));
        let mut none = row.clone();
        none[j] = 0.0;
        prop_assert_eq!(expected_delay(0, &none, &theta, &s), f64::INFINITY);
    }

    #[test]
    fn follower_fixed_point_is_a_clipped_best_response(seed in 0u64..10_000) {
        let (s, profile) = random_instance(seed).unwrap();
        let b = follower_fixed_point(&profile.prices, &[], &s, 1e-12, 100_000).unwrap();
        for i in 0..s.n_msps() {
            for j in 0..s.n_mrps() {
                let reply = interior_response(i, j, &b, profile.prices[j], &s).clamp(0.0, s.demand_max());
                prop_assert!((b[i][j] - reply).abs() <= 1e-9);
            }
        }
        StrategyProfile::new(profile.prices.clone(), b).validate(&s).unwrap();
    }

    #[test]
    fn scenario_json_round_trips(seed in any::<u64>(), n in 1usize..7, m in 1usize..5) {
        let s = sample_scenario(&ScenarioSpec { n_msps: n, n_mrps: m, seed, ..ScenarioSpec::default() }).unwrap();
        prop_assert_eq!(scenario_from_json(&scenario_to_json(&s)).unwrap(), s);
    }
}
