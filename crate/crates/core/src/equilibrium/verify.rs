use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::follower::{constrained_row_best_response, msp_best_response, FollowerState};
use super::leader::reduced_mrp_utility;
use super::search::linspace;
use super::AdmmConfig;
use crate::error::Result;
use crate::game_model::{expected_delay, msp_utility_with_row, mrp_utility_with, pairing_probabilities, Scenario, StrategyProfile};

const AXIS_POINTS: usize = 101;
const PRICE_POINTS: usize = 101;
const PROBE_SEED: u64 = 0x5eed_cafe;

/// Largest utility gain each agent can obtain by a unilateral deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub msp_gaps: Vec<f64>,
    pub mrp_gaps: Vec<f64>,
    pub tol: f64,
    pub certified: bool,
}

impl DeviationReport {
    pub fn max_gap(&self) -> f64 {
        self.msp_gaps.iter().chain(&self.mrp_gaps).copied().fold(0.0, f64::max)
    }
}

/// Deviation-gap certificate for `profile`.
///
/// MSPs try their exact constrained best reply, the unconstrained reply,
/// a grid along every demand axis and `probes` random rows; only deviations
/// meeting the delay budget count, except for MSPs that cannot meet it at all.
/// MRPs try a price grid and `probes` random prices with followers re-solved.
pub fn verify_equilibrium(
    profile: &StrategyProfile,
    scenario: &Scenario,
    tol: f64,
    probes: usize,
    config: &AdmmConfig,
) -> Result<DeviationReport> {
    profile.validate(scenario)?;
    let theta = pairing_probabilities(&profile.prices)?;
    let (n, m) = (scenario.n_msps(), scenario.n_mrps());
    let dmax = scenario.demand_max();
    let prices = &profile.prices;
    let demands = &profile.demands;
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);

    let mut msp_gaps = Vec::with_capacity(n);
    for i in 0..n {
        let base = msp_utility_with_row(i, &demands[i], demands, prices, &theta, scenario);
        let budget = scenario.msp(i).task.max_delay_s;
        let exempt = expected_delay(i, &vec![dmax; m], &theta, scenario) > budget;

        let mut candidates = vec![
            constrained_row_best_response(i, demands, prices, scenario, config),
            (0..m).map(|j| msp_best_response(i, j, demands, prices[j], scenario)).collect(),
        ];
        for j in 0..m {
            for b in linspace(0.0, dmax, AXIS_POINTS) {
                let mut row = demands[i].clone();
                row[j] = b;
                candidates.push(row);
            }
        }
        for _ in 0..probes {
            candidates.push((0..m).map(|_| rng.gen_range(0.0..=dmax)).collect());
        }

        let best = candidates
            .iter()
            .filter(|row| exempt || expected_delay(i, row, &theta, scenario) <= budget)
            .map(|row| msp_utility_with_row(i, row, demands, prices, &theta, scenario))
            .fold(f64::NEG_INFINITY, f64::max);
        msp_gaps.push((best - base).max(0.0));
    }

    let warm = FollowerState {
        demands: demands.clone(),
        multipliers: vec![0.0; n],
        delay_exempt: vec![false; n],
        inner_iters: 0,
    };
    let mut mrp_gaps = Vec::with_capacity(m);
    for j in 0..m {
        let base = mrp_utility_with(j, prices, &theta, demands, scenario);
        let (lo, hi) = scenario.price_bounds(j);
        let mut candidates = linspace(lo, hi, PRICE_POINTS);
        candidates.extend((0..probes).map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo }));
        let values = candidates
            .par_iter()
            .map(|&p| reduced_mrp_utility(j, p, prices, Some(&warm), scenario, config).map(|(u, _)| u))
            .collect::<Result<Vec<f64>>>()?;
        let best = values.into_iter().fold(f64::NEG_INFINITY, f64::max);
        mrp_gaps.push((best - base).max(0.0));
    }

    let certified = msp_gaps.iter().chain(&mrp_gaps).all(|&g| g <= tol);
    Ok(DeviationReport {
        msp_gaps,
        mrp_gaps,
        tol,
        certified,
    })
}
