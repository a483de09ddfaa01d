use super::follower::{follower_response, FollowerState};
use super::leader::best_price;
use super::verify::verify_equilibrium;
use super::{AdmmConfig, EquilibriumReport, TraceRecord};
use crate::error::{Error, Result};
use crate::game_model::{msp_utility_with_row, mrp_utility_with, pairing_unchecked, Scenario, StrategyProfile};

fn leader_sum(prices: &[f64], demands: &[Vec<f64>], scenario: &Scenario) -> f64 {
    let theta = pairing_unchecked(prices);
    (0..prices.len())
        .map(|j| mrp_utility_with(j, prices, &theta, demands, scenario))
        .sum()
}

/// Two-loop ADMM solve of the Stackelberg game.
///
/// Prices start at the midpoint of each MRP's interval. Every outer
/// iteration moves all MRPs simultaneously to their best price against the
/// current prices of the others, then re-solves the follower inner loop.
/// The loop stops when |ΔΣ_j U_Lj| ≤ `stop_threshold` and no price moved by
/// more than `price_tol`. The result is certified with
/// [`verify_equilibrium`](super::verify_equilibrium).
pub fn admm_solve(scenario: &Scenario, config: &AdmmConfig) -> Result<EquilibriumReport> {
    config.validate()?;
    let m = scenario.n_mrps();
    let mut prices: Vec<f64> = (0..m)
        .map(|j| {
            let (lo, hi) = scenario.price_bounds(j);
            lo + 0.5 * (hi - lo)
        })
        .collect();
    let mut state: FollowerState = follower_response(&prices, None, scenario, config)?;
    let mut prev_sum = leader_sum(&prices, &state.demands, scenario);
    let mut trace = vec![TraceRecord {
        outer_iter: 0,
        prices: prices.clone(),
        demands: state.demands.clone(),
        mrp_utility_sum: prev_sum,
        stop_stat: f64::INFINITY,
    }];

    let mut converged = false;
    let mut outer_iters = 0;
    let mut stop_stat = f64::INFINITY;
    for q in 1..=config.outer_max_iters {
        outer_iters = q;
        let next: Vec<f64> = (0..m)
            .map(|j| best_price(j, &prices, Some(&state), scenario, config).map(|(p, _)| p))
            .collect::<Result<_>>()?;
        let price_move = prices
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prices = next;
        state = follower_response(&prices, Some(&state), scenario, config)?;
        let sum = leader_sum(&prices, &state.demands, scenario);
        stop_stat = (sum - prev_sum).abs();
        prev_sum = sum;
        trace.push(TraceRecord {
            outer_iter: q,
            prices: prices.clone(),
            demands: state.demands.clone(),
            mrp_utility_sum: sum,
            stop_stat,
        });
        log::debug!("outer {q}: prices {prices:?}, sum U_L {sum}, stop {stop_stat:e}");
        if stop_stat <= config.stop_threshold && price_move <= config.price_tol {
            converged = true;
            break;
        }
    }

    let profile = StrategyProfile::new(prices, state.demands.clone());
    let theta = pairing_unchecked(&profile.prices);
    let msp_utilities: Vec<f64> = (0..scenario.n_msps())
        .map(|i| msp_utility_with_row(i, &profile.demands[i], &profile.demands, &profile.prices, &theta, scenario))
        .collect();
    let mrp_utilities: Vec<f64> = (0..m)
        .map(|j| mrp_utility_with(j, &profile.prices, &theta, &profile.demands, scenario))
        .collect();
    let social_welfare = msp_utilities.iter().chain(&mrp_utilities).sum();
    let deviation_gaps = verify_equilibrium(&profile, scenario, config.certify_tol, config.certify_probes, config)?;
    let certified = converged && deviation_gaps.certified;
    let report = EquilibriumReport {
        profile,
        msp_utilities,
        mrp_utilities,
        social_welfare,
        multipliers: state.multipliers.clone(),
        delay_exempt: (0..scenario.n_msps()).filter(|&i| state.delay_exempt[i]).collect(),
        outer_iters,
        converged,
        trace,
        deviation_gaps,
        certified,
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::AdmmNoConvergence {
            iters: outer_iters,
            stop_stat,
            report: Box::new(report),
        })
    }
}
