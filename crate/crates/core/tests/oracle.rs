mod common;

use common::{nested_grid_oracle, toy_1x1};
use twinmigrate::equilibrium::{admm_solve, AdmmConfig};

fn assert_matches_grid(alpha: f64, beta: f64, cost: f64, price_max: f64, max_delay_s: f64) {
    let s = toy_1x1(alpha, beta, cost, price_max, max_delay_s);
    let r = admm_solve(&s, &AdmmConfig::default()).unwrap();
    let g = nested_grid_oracle(&s, 10_000, 10_000);
    let p = r.profile.prices[0];
    let b = r.profile.demands[0][0];
    assert!((p - g.price).abs() <= 1e-2, "price {p} vs grid {}", g.price);
    assert!((b - g.demand).abs() <= 1e-2, "demand {b} vs grid {}", g.demand);
    assert!((r.mrp_utilities[0] - g.mrp_utility).abs() <= 1e-3);
    assert!((r.msp_utilities[0] - g.msp_utility).abs() <= 1e-3);
    assert!(r.certified);
}

#[test]
fn interior_toy_matches_nested_grid() {
    assert_matches_grid(2.0, 1.0, 0.2, 2.0, 100.0);
}

#[test]
fn grid_oracle_finds_closed_form_toy_price() {
    let g = nested_grid_oracle(&toy_1x1(2.0, 1.0, 0.2, 2.0, 100.0), 2001, 2001);
    // demand steps of 5e-4 leave the price free within about 1e-3
    assert!((g.price - 1.1).abs() < 5e-3, "{} {}", g.price, g.demand);
    assert!((g.demand - 0.45).abs() < 5e-3, "{} {}", g.price, g.demand);
}

#[test]
fn binding_delay_toy_matches_nested_grid() {
    assert_matches_grid(2.0, 1.0, 0.2, 2.0, 0.75);
}

#[test]
fn default_scale_toy_matches_nested_grid() {
    assert_matches_grid(30.0, 30.0, 0.1, 1.5, 3.0);
}
