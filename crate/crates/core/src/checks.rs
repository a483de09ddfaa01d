//! Randomized invariant suites behind `twinmigrate check` and the acceptance tests.
//!
//! Trial `k` of a suite uses seed `seed + k`, so the first failing trial
//! names the smallest seed that reproduces a failure.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{admm_solve, follower_fixed_point, reduced_mrp_utility, AdmmConfig};
use crate::error::Result;
use crate::game_model::{
    interior_response, msp_utility, msp_utility_grad, mrp_utility, mrp_utility_derivs, Scenario, StrategyProfile,
};
use crate::scenario::{sample_scenario, Sampler, ScenarioSpec};

/// Signature of the MSP gradient under test; swapped out by mutation tests.
pub type MspGradFn = fn(usize, usize, &StrategyProfile, &Scenario) -> (f64, f64);

pub const MSP_DERIV_TOL: f64 = 1e-6;
pub const MRP_DERIV_TOL: f64 = 1e-4;
pub const UNIQUENESS_TOL: f64 = 1e-6;
const FIXED_POINT_TOL: f64 = 1e-14;
const FIXED_POINT_ITERS: usize = 100_000;
const MSP_STEP: f64 = 1e-5;
const PRICE_STEP: f64 = 1e-5;
const CONCAVITY_GRID: usize = 101;
const SCALE_FACTORS: [f64; 3] = [1.5, 2.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Seed of the first failing trial.
    pub min_failing_seed: Option<u64>,
    pub first_failure: Option<String>,
    /// Largest error statistic seen (suite specific).
    pub worst: f64,
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(
                f,
                "PASS {:<18} {} trials, worst {:.3e}, {:.2} s",
                self.name, self.trials, self.worst, self.elapsed_s
            )
        } else {
            write!(
                f,
                "FAIL {:<18} {}/{} trials failed, minimal seed {}: {}",
                self.name,
                self.failures,
                self.trials,
                self.min_failing_seed.unwrap_or_default(),
                self.first_failure.as_deref().unwrap_or("")
            )
        }
    }
}

struct Tally {
    name: &'static str,
    trials: usize,
    failures: usize,
    min_failing_seed: Option<u64>,
    first_failure: Option<String>,
    worst: f64,
    start: Instant,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            trials: 0,
            failures: 0,
            min_failing_seed: None,
            first_failure: None,
            worst: 0.0,
            start: Instant::now(),
        }
    }

    /// Records one trial: `Ok(stat)` passes, `Err(msg)` fails.
    fn record(&mut self, seed: u64, outcome: std::result::Result<f64, String>) {
        self.trials += 1;
        match outcome {
            Ok(stat) => self.worst = self.worst.max(stat),
            Err(msg) => {
                self.failures += 1;
                if self.min_failing_seed.is_none_or(|s| seed < s) {
                    self.min_failing_seed = Some(seed);
                    self.first_failure = Some(msg);
                }
            }
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name.to_string(),
            trials: self.trials,
            failures: self.failures,
            min_failing_seed: self.min_failing_seed,
            first_failure: self.first_failure,
            worst: self.worst,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// A sampled market with N ∈ [2, 6], M ∈ [2, 4], plus random prices and
/// demands in their boxes, all determined by `seed`.
pub fn random_instance(seed: u64) -> Result<(Scenario, StrategyProfile)> {
    let mut s = Sampler::new(seed);
    let n_msps = 2 + (s.uniform() * 5.0) as usize;
    let n_mrps = 2 + (s.uniform() * 3.0) as usize;
    let scenario = sample_scenario(&ScenarioSpec {
        n_msps,
        n_mrps,
        seed,
        ..ScenarioSpec::default()
    })?;
    let prices = (0..n_mrps)
        .map(|j| {
            let (lo, hi) = scenario.price_bounds(j);
            s.uniform_in(lo, hi)
        })
        .collect();
    let dmax = scenario.demand_max();
    let demands = (0..n_msps)
        .map(|_| (0..n_mrps).map(|_| s.uniform_in(0.0, dmax)).collect())
        .collect();
    Ok((scenario, StrategyProfile::new(prices, demands)))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn with_demand(profile: &StrategyProfile, i: usize, j: usize, b: f64) -> StrategyProfile {
    let mut p = profile.clone();
    p.demands[i][j] = b;
    p
}

/// Per-MSP derivative checks against central differences: the first
/// derivative against the utility, the second against the first.
fn msp_derivative_trial(scenario: &Scenario, profile: &StrategyProfile, grad: MspGradFn) -> std::result::Result<f64, String> {
    let mut worst: f64 = 0.0;
    for i in 0..scenario.n_msps() {
        for j in 0..scenario.n_mrps() {
            let b = profile.demands[i][j];
            let up = with_demand(profile, i, j, b + MSP_STEP);
            let down = with_demand(profile, i, j, b - MSP_STEP);
            let fd1 = (msp_utility(i, &up, scenario) - msp_utility(i, &down, scenario)) / (2.0 * MSP_STEP);
            let fd2 = (grad(i, j, &up, scenario).0 - grad(i, j, &down, scenario).0) / (2.0 * MSP_STEP);
            let (d1, d2) = grad(i, j, profile, scenario);
            let e1 = rel_err(d1, fd1);
            let e2 = rel_err(d2, fd2);
            if e1 > MSP_DERIV_TOL || e2 > MSP_DERIV_TOL {
                return Err(format!(
                    "MSP {i}, MRP {j}: first {d1} vs {fd1} (rel {e1:.2e}), second {d2} vs {fd2} (rel {e2:.2e})"
                ));
            }
            worst = worst.max(e1).max(e2);
        }
    }
    Ok(worst)
}

fn interior_pattern(j: usize, p: f64, demands: &[Vec<f64>], scenario: &Scenario) -> Vec<bool> {
    (0..scenario.n_msps())
        .map(|i| {
            let psi = interior_response(i, j, demands, p, scenario);
            psi > 0.0 && psi < scenario.demand_max()
        })
        .collect()
}

fn reduced_unconstrained(j: usize, p: f64, prices: &[f64], scenario: &Scenario) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut trial = prices.to_vec();
    trial[j] = p;
    let b = follower_fixed_point(&trial, &[], scenario, FIXED_POINT_TOL, FIXED_POINT_ITERS)?;
    let u = mrp_utility(j, &StrategyProfile::new(trial, b.clone()), scenario);
    Ok((u, b))
}

/// Composed leader derivative against central differences of the reduced
/// utility. Prices whose step would cross a clipping kink are skipped.
fn mrp_derivative_trial(scenario: &Scenario, prices: &[f64]) -> std::result::Result<f64, String> {
    let mut worst: f64 = 0.0;
    for j in 0..scenario.n_mrps() {
        let (lo, hi) = scenario.price_bounds(j);
        let p = prices[j].clamp(lo + PRICE_STEP, hi - PRICE_STEP);
        let (_, b) = reduced_unconstrained(j, p, prices, scenario).map_err(|e| e.to_string())?;
        let (u_up, b_up) = reduced_unconstrained(j, p + PRICE_STEP, prices, scenario).map_err(|e| e.to_string())?;
        let (u_dn, b_dn) = reduced_unconstrained(j, p - PRICE_STEP, prices, scenario).map_err(|e| e.to_string())?;
        let pattern = interior_pattern(j, p, &b, scenario);
        if pattern != interior_pattern(j, p + PRICE_STEP, &b_up, scenario)
            || pattern != interior_pattern(j, p - PRICE_STEP, &b_dn, scenario)
        {
            continue;
        }
        let mut at = prices.to_vec();
        at[j] = p;
        let (d1, _) = mrp_utility_derivs(j, &StrategyProfile::new(at, b), scenario).map_err(|e| e.to_string())?;
        let fd = (u_up - u_dn) / (2.0 * PRICE_STEP);
        let e = rel_err(d1, fd);
        if e > MRP_DERIV_TOL {
            return Err(format!("MRP {j} at p = {p}: derivative {d1} vs difference {fd} (rel {e:.2e})"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Analytic MSP and composed MRP derivatives against finite differences.
pub fn derivative_suite(seed: u64, trials: usize, grad: MspGradFn) -> SuiteReport {
    let mut tally = Tally::new("derivatives");
    for k in 0..trials as u64 {
        let s = seed.wrapping_add(k);
        let outcome = random_instance(s).map_err(|e| e.to_string()).and_then(|(scenario, profile)| {
            let a = msp_derivative_trial(&scenario, &profile, grad)?;
            let b = mrp_derivative_trial(&scenario, &profile.prices)?;
            Ok(a.max(b))
        });
        tally.record(s, outcome);
    }
    tally.finish()
}

/// Positivity, monotonicity and scalability of the interior response on
/// instances with α_i > p_j and U_Fi ≥ 0.
pub fn standard_function_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut tally = Tally::new("standard_function");
    for k in 0..trials as u64 {
        let s = seed.wrapping_add(k);
        tally.record(s, standard_function_trial(s));
    }
    tally.finish()
}

fn standard_function_trial(seed: u64) -> std::result::Result<f64, String> {
    let (scenario, mut profile) = random_instance(seed).map_err(|e| e.to_string())?;
    let mut rng = Sampler::new(seed ^ 0x5eed);
    let (n, m) = (scenario.n_msps(), scenario.n_mrps());
    let dmax = scenario.demand_max();
    for _ in 0..100 {
        if (0..n).all(|i| msp_utility(i, &profile, &scenario) >= 0.0) {
            break;
        }
        for row in profile.demands.iter_mut() {
            for b in row.iter_mut() {
                *b = rng.uniform_in(0.0, dmax);
            }
        }
    }
    for i in 0..n {
        if msp_utility(i, &profile, &scenario) < 0.0 {
            continue;
        }
        for j in 0..m {
            let p = profile.prices[j];
            if scenario.msp(i).alpha <= p {
                continue;
            }
            let b = &profile.demands;
            let psi = interior_response(i, j, b, p, &scenario);
            if !(psi > 0.0) {
                return Err(format!("positivity: psi[{i}][{j}] = {psi}"));
            }
            let mut raised = b.clone();
            for (k, row) in raised.iter_mut().enumerate() {
                for (l, v) in row.iter_mut().enumerate() {
                    let bump = rng.uniform_in(0.0, 0.5);
                    *v += if l == j && k != i { bump.max(1e-3) } else { bump };
                }
            }
            let psi_up = interior_response(i, j, &raised, p, &scenario);
            if psi_up < psi {
                return Err(format!("monotonicity: psi[{i}][{j}] fell from {psi} to {psi_up}"));
            }
            for delta in SCALE_FACTORS {
                let scaled: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|v| v * delta).collect()).collect();
                let gap = delta * psi - interior_response(i, j, &scaled, p, &scenario);
                if !(gap > 0.0) {
                    return Err(format!("scalability: delta {delta}, psi[{i}][{j}] gap {gap}"));
                }
            }
        }
    }
    Ok(0.0)
}

/// Spread of the follower fixed point over random initializations.
pub fn uniqueness_suite(seed: u64, trials: usize, inits: usize) -> SuiteReport {
    let mut tally = Tally::new("follower_uniqueness");
    for k in 0..trials as u64 {
        let s = seed.wrapping_add(k);
        tally.record(s, uniqueness_trial(s, inits));
    }
    tally.finish()
}

fn uniqueness_trial(seed: u64, inits: usize) -> std::result::Result<f64, String> {
    let (scenario, profile) = random_instance(seed).map_err(|e| e.to_string())?;
    let mut rng = Sampler::new(seed ^ 0x1417);
    let (n, m) = (scenario.n_msps(), scenario.n_mrps());
    let dmax = scenario.demand_max();
    let mut points = Vec::with_capacity(inits);
    for _ in 0..inits {
        let init: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.uniform_in(0.0, dmax)).collect()).collect();
        let b = follower_fixed_point(&profile.prices, &init, &scenario, 1e-12, FIXED_POINT_ITERS).map_err(|e| e.to_string())?;
        points.push(b);
    }
    let mut spread: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let vals = points.iter().map(|b| b[i][j]);
            let hi = vals.clone().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.fold(f64::INFINITY, f64::min);
            spread = spread.max(hi - lo);
        }
    }
    if spread > UNIQUENESS_TOL {
        return Err(format!("fixed points differ by {spread:e}"));
    }
    Ok(spread)
}

/// Unimodality of the reduced leader utility on a price grid, and a
/// negative composed second derivative wherever every α_i exceeds the price.
pub fn leader_concavity_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut tally = Tally::new("leader_concavity");
    for k in 0..trials as u64 {
        let s = seed.wrapping_add(k);
        tally.record(s, concavity_trial(s));
    }
    tally.finish()
}

fn concavity_trial(seed: u64) -> std::result::Result<f64, String> {
    let (scenario, profile) = random_instance(seed).map_err(|e| e.to_string())?;
    let j = (seed % scenario.n_mrps() as u64) as usize;
    let (lo, hi) = scenario.price_bounds(j);
    let grid = crate::equilibrium::search::linspace(lo, hi, CONCAVITY_GRID);
    let mut values = Vec::with_capacity(grid.len());
    for &p in &grid {
        let (u, b) = reduced_unconstrained(j, p, &profile.prices, &scenario).map_err(|e| e.to_string())?;
        if scenario.msps().iter().all(|m| m.alpha > p) {
            let mut at = profile.prices.clone();
            at[j] = p;
            let (_, d2) = mrp_utility_derivs(j, &StrategyProfile::new(at, b), &scenario).map_err(|e| e.to_string())?;
            if !(d2 < 0.0) {
                return Err(format!("MRP {j}: second derivative {d2} at p = {p}"));
            }
        }
        values.push(u);
    }
    let top = crate::equilibrium::search::argmax_first(&values);
    let tol = |u: f64| 1e-9 * (1.0 + u.abs());
    for k in 0..values.len() - 1 {
        let (a, b) = (values[k], values[k + 1]);
        let bad = if k < top { b < a - tol(a) } else { b > a + tol(a) };
        if bad {
            return Err(format!(
                "MRP {j}: reduced utility not unimodal near p = {} (peak at {})",
                grid[k], grid[top]
            ));
        }
    }
    Ok(0.0)
}

/// `admm_solve` output certified by `verify_equilibrium` on sampled markets.
pub fn certification_suite(seed: u64, trials: usize, config: &AdmmConfig) -> SuiteReport {
    let mut tally = Tally::new("certification");
    for k in 0..trials as u64 {
        let s = seed.wrapping_add(k);
        let outcome = random_instance(s)
            .and_then(|(scenario, _)| admm_solve(&scenario, config))
            .map_err(|e| e.to_string())
            .and_then(|r| {
                let gap = r.deviation_gaps.max_gap();
                if r.certified && gap <= config.certify_tol {
                    Ok(gap)
                } else {
                    Err(format!("max deviation gap {gap:e} exceeds {}", config.certify_tol))
                }
            });
        tally.record(s, outcome);
    }
    tally.finish()
}

/// Also checks the composed leader derivative through the constrained
/// follower response used by the solver, where no budget binds.
pub fn reduced_matches_unconstrained(seed: u64) -> Result<bool> {
    let (scenario, profile) = random_instance(seed)?;
    let cfg = AdmmConfig::default();
    let (u, st) = reduced_mrp_utility(0, profile.prices[0], &profile.prices, None, &scenario, &cfg)?;
    let (v, _) = reduced_unconstrained(0, profile.prices[0], &profile.prices, &scenario)?;
    Ok(st.multipliers.iter().any(|&e| e > 0.0) || (u - v).abs() <= 1e-6 * (1.0 + v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub seed: u64,
    pub derivative_trials: usize,
    pub standard_function_trials: usize,
    pub uniqueness_trials: usize,
    pub uniqueness_inits: usize,
    pub concavity_trials: usize,
    pub certification_trials: usize,
    pub admm: AdmmConfig,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            seed: 0,
            derivative_trials: 100,
            standard_function_trials: 1000,
            uniqueness_trials: 50,
            uniqueness_inits: 10,
            concavity_trials: 50,
            certification_trials: 20,
            admm: AdmmConfig::default(),
        }
    }
}

impl CheckConfig {
    /// Same trial count for every suite.
    pub fn with_trials(mut self, trials: usize) -> Self {
        self.derivative_trials = trials;
        self.standard_function_trials = trials;
        self.uniqueness_trials = trials;
        self.concavity_trials = trials;
        self.certification_trials = trials;
        self
    }
}

pub fn run_checks(config: &CheckConfig) -> Vec<SuiteReport> {
    vec![
        derivative_suite(config.seed, config.derivative_trials, msp_utility_grad),
        standard_function_suite(config.seed, config.standard_function_trials),
        uniqueness_suite(config.seed, config.uniqueness_trials, config.uniqueness_inits),
        leader_concavity_suite(config.seed, config.concavity_trials),
        certification_suite(config.seed, config.certification_trials, &config.admm),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped_second(i: usize, j: usize, p: &StrategyProfile, s: &Scenario) -> (f64, f64) {
        let (d1, d2) = msp_utility_grad(i, j, p, s);
        (d1, -d2)
    }

    fn flipped_first(i: usize, j: usize, p: &StrategyProfile, s: &Scenario) -> (f64, f64) {
        let (d1, d2) = msp_utility_grad(i, j, p, s);
        (-d1, d2)
    }

    #[test]
    fn suites_pass_on_a_few_trials() {
        let cfg = CheckConfig::default().with_trials(5);
        for r in run_checks(&cfg) {
            assert!(r.passed(), "{r}");
            assert_eq!(r.trials, 5);
        }
    }

    #[test]
    fn sign_flip_is_caught_with_minimal_seed() {
        let r = derivative_suite(40, 5, flipped_second);
        assert_eq!(r.failures, 5);
        assert_eq!(r.min_failing_seed, Some(40));
        assert!(r.to_string().starts_with("FAIL"));
        assert!(!derivative_suite(40, 5, flipped_first).passed());
    }

    #[test]
    fn random_instances_respect_boxes() {
        for seed in 0..20 {
            let (s, p) = random_instance(seed).unwrap();
            assert!((2..=6).contains(&s.n_msps()));
            assert!((2..=4).contains(&s.n_mrps()));
            p.validate(&s).unwrap();
        }
    }

    #[test]
    fn solver_response_agrees_when_budgets_are_slack() {
        for seed in 0..10 {
            assert!(reduced_matches_unconstrained(seed).unwrap());
        }
    }
}
