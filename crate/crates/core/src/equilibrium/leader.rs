use super::follower::{follower_response, FollowerState};
use super::search::grid_then_golden;
use super::AdmmConfig;
use crate::error::{Error, Result};
use crate::game_model::{mrp_utility_with, pairing_unchecked, Scenario};

/// Width of the golden-section bracket at which price refinement stops.
const PRICE_REFINE_TOL: f64 = 1e-10;

/// U_Lj at price `p` for MRP `j`, with every follower re-solved against the
/// resulting price vector. Returns the utility and the follower state.
pub fn reduced_mrp_utility(
    j: usize,
    p: f64,
    prices: &[f64],
    warm: Option<&FollowerState>,
    scenario: &Scenario,
    config: &AdmmConfig,
) -> Result<(f64, FollowerState)> {
    let mut trial = prices.to_vec();
    trial[j] = p;
    let state = follower_response(&trial, warm, scenario, config)?;
    let theta = pairing_unchecked(&trial);
    Ok((mrp_utility_with(j, &trial, &theta, &state.demands, scenario), state))
}

/// Best price of MRP `j` given the full price vector (entry `j` ignored).
pub(crate) fn best_price(
    j: usize,
    prices: &[f64],
    warm: Option<&FollowerState>,
    scenario: &Scenario,
    config: &AdmmConfig,
) -> Result<(f64, f64)> {
    let (lo, hi) = scenario.price_bounds(j);
    let objective = |p: f64| reduced_mrp_utility(j, p, prices, warm, scenario, config).map(|(u, _)| u);
    grid_then_golden(objective, lo, hi, config.price_grid_points, PRICE_REFINE_TOL)
}

/// Leader best response: maximizes the reduced utility over [c_j, p^max] on a
/// `price_grid_points` grid, then refines by golden section around the best
/// grid point. The lowest price wins ties.
pub fn mrp_best_response(j: usize, prices_others: &[f64], scenario: &Scenario, config: &AdmmConfig) -> Result<f64> {
    config.validate()?;
    let m = scenario.n_mrps();
    if j >= m {
        return Err(Error::Invariant(format!("MRP index {j} out of range (M = {m})")));
    }
    if prices_others.len() + 1 != m {
        return Err(Error::Invariant(format!(
            "expected {} prices of the other MRPs, got {}",
            m - 1,
            prices_others.len()
        )));
    }
    let mut prices = Vec::with_capacity(m);
    prices.extend_from_slice(&prices_others[..j]);
    prices.push(scenario.mrp(j).cost);
    prices.extend_from_slice(&prices_others[j..]);
    best_price(j, &prices, None, scenario, config).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::tests::{mrp, msp, toy};

    #[test]
    fn degenerate_interval_returns_cost() {
        let mut r = mrp(0.4);
        r.price_max = 0.4;
        let s = toy(vec![msp(2.0, 1.0)], vec![r, mrp(0.1)], 0.0);
        let p = mrp_best_response(0, &[0.8], &s, &AdmmConfig::default()).unwrap();
        assert_eq!(p, 0.4);
    }

    #[test]
    fn single_pair_interior_optimum() {
        // U = (2 − p)(p − 0.2)/2, maximized at p = 1.1
        let s = toy(vec![msp(2.0, 1.0)], vec![mrp(0.2)], 0.0);
        let p = mrp_best_response(0, &[], &s, &AdmmConfig::default()).unwrap();
        assert!((p - 1.1).abs() < 1e-6, "{p}");
    }

    #[test]
    fn beats_random_probes() {
        use rand::{Rng, SeedableRng};
        let s = toy(vec![msp(3.0, 1.0), msp(2.5, 1.2)], vec![mrp(0.2), mrp(0.3)], 0.4);
        let cfg = AdmmConfig::default();
        let p = mrp_best_response(1, &[0.9], &s, &cfg).unwrap();
        let prices = [0.9, p];
        let (best, _) = reduced_mrp_utility(1, p, &prices, None, &s, &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = rng.gen_range(0.3..=1.5);
            let (u, _) = reduced_mrp_utility(1, q, &prices, None, &s, &cfg).unwrap();
            assert!(best >= u - 1e-6, "p*={p} u*={best} q={q} u={u}");
        }
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let s = toy(vec![msp(2.0, 1.0)], vec![mrp(0.2), mrp(0.2)], 0.0);
        assert!(mrp_best_response(0, &[], &s, &AdmmConfig::default()).is_err());
        assert!(mrp_best_response(2, &[1.0], &s, &AdmmConfig::default()).is_err());
    }
}
