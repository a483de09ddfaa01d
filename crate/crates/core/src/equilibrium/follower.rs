use serde::{Deserialize, Serialize};

use super::{AdmmConfig, InnerSolver};
use crate::error::{Error, Result};
use crate::game_model::{expected_delay, interior_response, migration_delay, pairing_probabilities, social_pull, Scenario};

/// Consecutive non-decreasing residuals before Jacobi sweeps give way to Gauss–Seidel.
const STALL_LIMIT: usize = 5;
/// Coordinate change at which block ascent on one row stops.
const COORD_TOL: f64 = 1e-12;
const MAX_BLOCK_SWEEPS: usize = 200;
const BISECTION_STEPS: usize = 200;
const NEWTON_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sweep {
    Jacobi,
    GaussSeidel,
}

/// b*_ij = clip((α_i + Σ_k w_ik b_kj − p_j) / (2β_i), 0, demand_max).
pub fn msp_best_response(i: usize, j: usize, demands_others: &[Vec<f64>], price: f64, scenario: &Scenario) -> f64 {
    interior_response(i, j, demands_others, price, scenario).clamp(0.0, scenario.demand_max())
}

fn warn_uniqueness(prices: &[f64], scenario: &Scenario) {
    for (i, m) in scenario.msps().iter().enumerate() {
        for (j, &p) in prices.iter().enumerate() {
            if m.alpha <= p {
                log::warn!("alpha of MSP {i} ({}) does not exceed price of MRP {j} ({p}); follower equilibrium may not be unique", m.alpha);
            }
        }
    }
}

/// Best-response iteration to the unique follower Nash point for fixed prices.
///
/// Sweeps are synchronous (Jacobi). If the residual fails to decrease for
/// five sweeps in a row the iteration switches to in-place Gauss–Seidel.
pub fn follower_fixed_point(
    prices: &[f64],
    init: &[Vec<f64>],
    scenario: &Scenario,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<Vec<f64>>> {
    pairing_probabilities(prices)?;
    warn_uniqueness(prices, scenario);
    let (n, m) = (scenario.n_msps(), scenario.n_mrps());
    let mut b: Vec<Vec<f64>> = if init.len() == n && init.iter().all(|r| r.len() == m) {
        init.to_vec()
    } else {
        vec![vec![0.0; m]; n]
    };
    let mut mode = Sweep::Jacobi;
    let mut stall = 0;
    let mut last = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        residual = 0.0;
        match mode {
            Sweep::Jacobi => {
                let next: Vec<Vec<f64>> = (0..n)
                    .map(|i| (0..m).map(|j| msp_best_response(i, j, &b, prices[j], scenario)).collect())
                    .collect();
                for (old, new) in b.iter().flatten().zip(next.iter().flatten()) {
                    residual = f64::max(residual, (old - new).abs());
                }
                b = next;
            }
            Sweep::GaussSeidel => {
                for i in 0..n {
                    for j in 0..m {
                        let v = msp_best_response(i, j, &b, prices[j], scenario);
                        residual = f64::max(residual, (v - b[i][j]).abs());
                        b[i][j] = v;
                    }
                }
            }
        }
        if residual <= tol {
            return Ok(b);
        }
        stall = if residual >= last { stall + 1 } else { 0 };
        if stall >= STALL_LIMIT && mode == Sweep::Jacobi {
            log::debug!("follower iteration stalled at residual {residual:e}; switching to Gauss-Seidel");
            mode = Sweep::GaussSeidel;
            stall = 0;
        }
        last = residual;
    }
    Err(Error::FollowerNoConvergence {
        iters: max_iters,
        residual,
        last: b,
    })
}

/// Follower demands together with the delay-constraint multipliers that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerState {
    pub demands: Vec<Vec<f64>>,
    pub multipliers: Vec<f64>,
    /// MSPs that miss their delay budget even at maximum demand; they play
    /// the unconstrained best response.
    pub delay_exempt: Vec<bool>,
    pub inner_iters: usize,
}

/// Per-MSP data that stays fixed during one augmented-Lagrangian row solve.
struct RowProblem<'a> {
    i: usize,
    scenario: &'a Scenario,
    prices: &'a [f64],
    theta: &'a [f64],
    pull: Vec<f64>,
    unconstrained: Vec<f64>,
}

impl<'a> RowProblem<'a> {
    fn new(i: usize, demands: &[Vec<f64>], prices: &'a [f64], theta: &'a [f64], scenario: &'a Scenario) -> Self {
        let m = prices.len();
        let pull: Vec<f64> = (0..m).map(|j| social_pull(i, j, demands, scenario)).collect();
        let msp = scenario.msp(i);
        let unconstrained = (0..m)
            .map(|j| ((msp.alpha + pull[j] - prices[j]) / (2.0 * msp.beta)).clamp(0.0, scenario.demand_max()))
            .collect();
        RowProblem {
            i,
            scenario,
            prices,
            theta,
            pull,
            unconstrained,
        }
    }

    fn delay_term(&self, j: usize, b: f64) -> f64 {
        self.theta[j] * migration_delay(self.i, j, b, self.scenario).total_s
    }

    /// ∂/∂b of the penalized row objective along coordinate j, where
    /// `rest` is Σ_{l≠j} θ_l T_il.
    fn augmented_slope(&self, j: usize, b: f64, rest: f64, eta: f64, rho: f64, budget: f64) -> f64 {
        let msp = self.scenario.msp(self.i);
        let g = rest + self.delay_term(j, b) - budget;
        let data = msp.task.data_size_bits / self.scenario.rate_per_unit();
        self.theta[j] * (msp.alpha - 2.0 * msp.beta * b + self.pull[j] - self.prices[j])
            + (eta + rho * g.max(0.0)) * self.theta[j] * data / (b * b)
    }

    /// argmax over the row of U_Fi − η·g − (ρ/2)·max(0, g)², g = Σ θ_j T_ij − K_i.
    ///
    /// The objective is jointly concave in the row, so block-coordinate ascent
    /// converges. Each coordinate starts from the closed-form unconstrained
    /// optimum; the delay terms can only push the optimum upward, so when
    /// they are active the coordinate is found by bisection of the strictly
    /// decreasing slope on [unconstrained, demand_max].
    fn augmented_argmax(&self, eta: f64, rho: f64) -> Vec<f64> {
        let dmax = self.scenario.demand_max();
        let budget = self.scenario.msp(self.i).task.max_delay_s;
        let floor = 1e-9 * dmax;
        let m = self.prices.len();
        if eta == 0.0 && expected_delay(self.i, &self.unconstrained, self.theta, self.scenario) <= budget {
            return self.unconstrained.clone();
        }
        let mut row: Vec<f64> = self.unconstrained.iter().map(|&b| b.max(floor)).collect();
        let mut terms: Vec<f64> = (0..m).map(|j| self.delay_term(j, row[j])).collect();
        for _ in 0..MAX_BLOCK_SWEEPS {
            let mut change: f64 = 0.0;
            for j in 0..m {
                let rest: f64 = terms.iter().enumerate().filter(|(l, _)| *l != j).map(|(_, t)| t).sum();
                let slack_at_start = rest + self.delay_term(j, self.unconstrained[j]) - budget;
                let b_new = if eta == 0.0 && slack_at_start <= 0.0 {
                    self.unconstrained[j]
                } else {
                    let slope = |b: f64| self.augmented_slope(j, b, rest, eta, rho, budget);
                    bisect_decreasing(slope, self.unconstrained[j].max(floor), dmax)
                };
                change = change.max((b_new - row[j]).abs());
                row[j] = b_new;
                terms[j] = self.delay_term(j, b_new);
            }
            if change <= COORD_TOL {
                break;
            }
        }
        row
    }
}

impl RowProblem<'_> {
    /// argmax over the row of U_Fi − η·(Σ θ_j T_ij − K_i); separable in j.
    ///
    /// Each interior coordinate solves 2βb³ − A·b² − η·D/r = 0 with
    /// A = α + pull − p, whose positive root is unique. Newton's method
    /// from an upper bound descends monotonically onto it.
    fn lagrangian_argmax(&self, eta: f64) -> Vec<f64> {
        if eta == 0.0 {
            return self.unconstrained.clone();
        }
        let msp = self.scenario.msp(self.i);
        let dmax = self.scenario.demand_max();
        let k = eta * msp.task.data_size_bits / self.scenario.rate_per_unit();
        let beta = msp.beta;
        (0..self.prices.len())
            .map(|j| {
                let a = msp.alpha + self.pull[j] - self.prices[j];
                let mut b = f64::max(a / beta, (k / beta).cbrt());
                for _ in 0..NEWTON_STEPS {
                    let h = 2.0 * beta * b * b * b - a * b * b - k;
                    let dh = 6.0 * beta * b * b - 2.0 * a * b;
                    let step = h / dh;
                    let next = b - step;
                    if !(next < b) || step <= 4.0 * f64::EPSILON * b {
                        break;
                    }
                    b = next;
                }
                b.min(dmax)
            })
            .collect()
    }

    /// Exact best reply under the delay budget and its multiplier, found by
    /// bisection on η: the row's expected delay is non-increasing in η.
    /// Callers handle rows that cannot meet the budget at all.
    fn exact_reply(&self) -> (Vec<f64>, f64) {
        let budget = self.scenario.msp(self.i).task.max_delay_s;
        let delay = |row: &[f64]| expected_delay(self.i, row, self.theta, self.scenario);
        if delay(&self.unconstrained) <= budget {
            return (self.unconstrained.clone(), 0.0);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut row = self.lagrangian_argmax(hi);
        for _ in 0..BISECTION_STEPS {
            if delay(&row) <= budget {
                break;
            }
            lo = hi;
            hi *= 2.0;
            row = self.lagrangian_argmax(hi);
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-14 * hi {
                break;
            }
            let candidate = self.lagrangian_argmax(mid);
            if delay(&candidate) <= budget {
                hi = mid;
                row = candidate;
            } else {
                lo = mid;
            }
        }
        (row, hi)
    }
}

/// Zero of a strictly decreasing `slope` on `[lo, hi]`, or the endpoint
/// where the maximum sits if the slope does not change sign.
fn bisect_decreasing<F: Fn(f64) -> f64>(slope: F, mut lo: f64, mut hi: f64) -> f64 {
    if slope(hi) >= 0.0 {
        return hi;
    }
    if slope(lo) <= 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact best reply of MSP `i` to fixed `demands` of the others under its
/// delay budget. Rows that cannot meet the budget get the unconstrained reply.
pub(crate) fn constrained_row_best_response(
    i: usize,
    demands: &[Vec<f64>],
    prices: &[f64],
    scenario: &Scenario,
    _config: &AdmmConfig,
) -> Vec<f64> {
    let theta = crate::game_model::pairing_unchecked(prices);
    let problem = RowProblem::new(i, demands, prices, &theta, scenario);
    let max_row = vec![scenario.demand_max(); prices.len()];
    if expected_delay(i, &max_row, &theta, scenario) > scenario.msp(i).task.max_delay_s {
        return problem.unconstrained;
    }
    problem.exact_reply().0
}

/// Follower response to `prices` under the delay budgets (the ADMM inner loop).
///
/// When the unconstrained Nash point already meets every budget it is
/// returned with zero multipliers. Otherwise the configured
/// [`InnerSolver`] iterates until demands and multipliers settle within
/// `inner_tol`. MSPs that cannot meet their budget even at maximum demand
/// are flagged and play the unconstrained reply.
pub fn follower_response(
    prices: &[f64],
    warm: Option<&FollowerState>,
    scenario: &Scenario,
    config: &AdmmConfig,
) -> Result<FollowerState> {
    let theta = pairing_probabilities(prices)?;
    let (n, m) = (scenario.n_msps(), scenario.n_mrps());
    let init = warm.map(|w| w.demands.clone()).unwrap_or_else(|| vec![vec![0.0; m]; n]);
    let unconstrained = follower_fixed_point(prices, &init, scenario, config.inner_tol, config.inner_max_iters)?;

    let max_row = vec![scenario.demand_max(); m];
    let exempt: Vec<bool> = (0..n)
        .map(|i| expected_delay(i, &max_row, &theta, scenario) > scenario.msp(i).task.max_delay_s)
        .collect();
    let satisfied = (0..n)
        .all(|i| exempt[i] || expected_delay(i, &unconstrained[i], &theta, scenario) <= scenario.msp(i).task.max_delay_s);
    if satisfied {
        return Ok(FollowerState {
            demands: unconstrained,
            multipliers: vec![0.0; n],
            delay_exempt: exempt,
            inner_iters: 0,
        });
    }

    let (b, eta) = match warm {
        Some(w) if w.multipliers.len() == n && w.multipliers.iter().any(|&e| e > 0.0) => {
            (w.demands.clone(), w.multipliers.clone())
        }
        _ => (unconstrained, vec![config.multiplier_init; n]),
    };
    let inner = Inner {
        prices,
        theta: &theta,
        exempt,
        scenario,
        config,
    };
    match config.inner_solver {
        InnerSolver::ExactReplies => inner.exact_replies(b),
        InnerSolver::Multipliers => inner.multipliers(b, eta),
    }
}

struct Inner<'a> {
    prices: &'a [f64],
    theta: &'a [f64],
    exempt: Vec<bool>,
    scenario: &'a Scenario,
    config: &'a AdmmConfig,
}

impl Inner<'_> {
    fn done(self, demands: Vec<Vec<f64>>, multipliers: Vec<f64>, inner_iters: usize) -> Result<FollowerState> {
        Ok(FollowerState {
            demands,
            multipliers,
            delay_exempt: self.exempt,
            inner_iters,
        })
    }

    /// Method of multipliers: every MSP maximizes its augmented Lagrangian
    /// against the others' demands, then η_i ← max(0, η_i + ρ·g_i).
    fn multipliers(self, mut b: Vec<Vec<f64>>, mut eta: Vec<f64>) -> Result<FollowerState> {
        let n = self.scenario.n_msps();
        for (e, &x) in eta.iter_mut().zip(&self.exempt) {
            if x {
                *e = 0.0;
            }
        }
        let rho = self.config.damping;
        let mut mode = Sweep::Jacobi;
        let mut stall = 0;
        let mut last = f64::INFINITY;
        let mut residual = f64::INFINITY;
        for t in 1..=self.config.inner_max_iters {
            residual = 0.0;
            let snapshot = if mode == Sweep::Jacobi { Some(b.clone()) } else { None };
            for i in 0..n {
                let source = snapshot.as_ref().unwrap_or(&b);
                let problem = RowProblem::new(i, source, self.prices, self.theta, self.scenario);
                let row = if self.exempt[i] {
                    problem.unconstrained
                } else {
                    problem.augmented_argmax(eta[i], rho)
                };
                for (old, new) in b[i].iter().zip(&row) {
                    residual = residual.max((old - new).abs());
                }
                b[i] = row;
            }
            for i in (0..n).filter(|&i| !self.exempt[i]) {
                let g = expected_delay(i, &b[i], self.theta, self.scenario) - self.scenario.msp(i).task.max_delay_s;
                let next = (eta[i] + rho * g).max(0.0);
                residual = residual.max((next - eta[i]).abs());
                eta[i] = next;
            }
            if residual <= self.config.inner_tol {
                return self.done(b, eta, t);
            }
            stall = if residual >= last { stall + 1 } else { 0 };
            if stall >= STALL_LIMIT && mode == Sweep::Jacobi {
                log::debug!("inner loop stalled at residual {residual:e}; switching to Gauss-Seidel");
                mode = Sweep::GaussSeidel;
                stall = 0;
            }
            last = residual;
        }
        Err(Error::FollowerNoConvergence {
            iters: self.config.inner_max_iters,
            residual,
            last: b,
        })
    }

    /// Best-response iteration in which every MSP plays its exact
    /// constrained reply; η_i is the reply's KKT multiplier.
    fn exact_replies(self, mut b: Vec<Vec<f64>>) -> Result<FollowerState> {
        let n = self.scenario.n_msps();
        let mut eta = vec![0.0; n];
        let mut mode = Sweep::Jacobi;
        let mut stall = 0;
        let mut last = f64::INFINITY;
        let mut residual = f64::INFINITY;
        for t in 1..=self.config.inner_max_iters {
            residual = 0.0;
            let snapshot = if mode == Sweep::Jacobi { Some(b.clone()) } else { None };
            for i in 0..n {
                let source = snapshot.as_ref().unwrap_or(&b);
                let problem = RowProblem::new(i, source, self.prices, self.theta, self.scenario);
                let (row, e) = if self.exempt[i] {
                    (problem.unconstrained, 0.0)
                } else {
                    problem.exact_reply()
                };
                for (old, new) in b[i].iter().zip(&row) {
                    residual = residual.max((old - new).abs());
                }
                b[i] = row;
                eta[i] = e;
            }
            if residual <= self.config.inner_tol {
                return self.done(b, eta, t);
            }
            stall = if residual >= last { stall + 1 } else { 0 };
            if stall >= STALL_LIMIT && mode == Sweep::Jacobi {
                log::debug!("inner loop stalled at residual {residual:e}; switching to Gauss-Seidel");
                mode = Sweep::GaussSeidel;
                stall = 0;
            }
            last = residual;
        }
        Err(Error::FollowerNoConvergence {
            iters: self.config.inner_max_iters,
            residual,
            last: b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::tests::{mrp, msp, toy};
    use crate::game_model::{msp_utility_grad, MigrationTask, StrategyProfile};

    #[test]
    fn closed_form_examples() {
        let s = toy(vec![msp(30.0, 30.0)], vec![mrp(0.1)], 0.0);
        let b = msp_best_response(0, 0, &[vec![0.0]], 0.9, &s);
        assert!((b - 0.485).abs() < 1e-15);
        let s = toy(vec![msp(1.0, 30.0)], vec![mrp(0.1)], 0.0);
        assert_eq!(msp_best_response(0, 0, &[vec![0.0]], 1.2, &s), 0.0);
        let s = toy(vec![msp(300.0, 1.0)], vec![mrp(0.1)], 0.0);
        assert_eq!(msp_best_response(0, 0, &[vec![0.0]], 1.0, &s), 1.0);
    }

    #[test]
    fn two_msp_social_fixed_point() {
        let s = toy(vec![msp(30.0, 30.0), msp(30.0, 30.0)], vec![mrp(0.1)], 5.0);
        let b = follower_fixed_point(&[1.0], &[vec![0.0], vec![0.0]], &s, 1e-14, 1000).unwrap();
        assert!((b[0][0] - 29.0 / 55.0).abs() < 1e-12);
        assert!((b[1][0] - 29.0 / 55.0).abs() < 1e-12);
        let prof = StrategyProfile::new(vec![1.0], b);
        assert!(msp_utility_grad(0, 0, &prof, &s).0.abs() < 1e-10);
    }

    #[test]
    fn decoupled_fixed_point_is_closed_form() {
        let s = toy(vec![msp(30.0, 30.0), msp(25.0, 29.0)], vec![mrp(0.1), mrp(0.3)], 0.0);
        let prices = [0.9, 0.8];
        let b = follower_fixed_point(&prices, &[], &s, 1e-14, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let m = s.msp(i);
                assert_eq!(b[i][j], ((m.alpha - prices[j]) / (2.0 * m.beta)).clamp(0.0, 1.0));
            }
        }
    }

    #[test]
    fn fixed_point_reports_non_convergence() {
        let s = toy(vec![msp(30.0, 30.0), msp(30.0, 30.0)], vec![mrp(0.1)], 5.0);
        match follower_fixed_point(&[1.0], &[], &s, 1e-14, 1) {
            Err(Error::FollowerNoConvergence { iters: 1, last, .. }) => assert_eq!(last.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn tight_msp(max_delay_s: f64) -> crate::game_model::MspParams {
        let mut p = msp(30.0, 30.0);
        p.task = MigrationTask::from_megabytes(50.0, 5.0e9, max_delay_s);
        p
    }

    #[test]
    fn slack_budget_leaves_multipliers_at_zero() {
        let s = toy(vec![msp(30.0, 30.0); 2], vec![mrp(0.1), mrp(0.2)], 5.0);
        let st = follower_response(&[1.0, 1.2], None, &s, &AdmmConfig::default()).unwrap();
        assert_eq!(st.multipliers, vec![0.0, 0.0]);
        assert_eq!(st.inner_iters, 0);
    }

    #[test]
    fn tight_budget_is_met_with_equality() {
        // unconstrained demand ≈ 0.485 gives a delay near 2.5 s for 50 MB
        let s = toy(vec![tight_msp(1.6)], vec![mrp(0.1)], 0.0);
        let cfg = AdmmConfig::default();
        let st = follower_response(&[0.9], None, &s, &cfg).unwrap();
        let theta = [1.0];
        let d = expected_delay(0, &st.demands[0], &theta, &s);
        assert!(st.multipliers[0] > 0.0);
        assert!(d <= 1.6 + 1e-6 && d >= 1.6 - 1e-3, "delay {d}");
        assert!(st.demands[0][0] > 0.485);
    }

    #[test]
    fn impossible_budget_is_exempt() {
        let s = toy(vec![tight_msp(0.1)], vec![mrp(0.1)], 0.0);
        let st = follower_response(&[0.9], None, &s, &AdmmConfig::default()).unwrap();
        assert_eq!(st.delay_exempt, vec![true]);
        assert!((st.demands[0][0] - 0.485).abs() < 1e-12);
    }

    #[test]
    fn single_agent_constrained_reply_matches_solver() {
        let s = toy(vec![tight_msp(1.6)], vec![mrp(0.1)], 0.0);
        let cfg = AdmmConfig::default();
        let st = follower_response(&[0.9], None, &s, &cfg).unwrap();
        let row = constrained_row_best_response(0, &st.demands, &[0.9], &s, &cfg);
        assert!((row[0] - st.demands[0][0]).abs() < 1e-7);
    }

    #[test]
    fn both_inner_solvers_reach_the_same_point() {
        let mut msps = vec![tight_msp(1.8), tight_msp(2.2), msp(30.0, 30.0)];
        msps[1].alpha = 28.0;
        let s = toy(msps, vec![mrp(0.1), mrp(0.3)], 4.0);
        let prices = [0.9, 1.1];
        let exact = follower_response(&prices, None, &s, &AdmmConfig::default()).unwrap();
        let cfg = AdmmConfig {
            inner_solver: InnerSolver::Multipliers,
            ..AdmmConfig::default()
        };
        let mult = follower_response(&prices, None, &s, &cfg).unwrap();
        assert!(exact.multipliers[0] > 0.0);
        for (a, b) in exact.demands.iter().flatten().zip(mult.demands.iter().flatten()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (a, b) in exact.multipliers.iter().zip(&mult.multipliers) {
            assert!((a - b).abs() < 1e-4 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn lagrangian_row_zeroes_the_slope() {
        let s = toy(vec![tight_msp(1.6), msp(25.0, 20.0)], vec![mrp(0.1), mrp(0.2)], 3.0);
        let prices = [0.7, 1.3];
        let theta = crate::game_model::pairing_unchecked(&prices);
        let demands = vec![vec![0.2, 0.3], vec![0.4, 0.1]];
        let problem = RowProblem::new(0, &demands, &prices, &theta, &s);
        for eta in [0.01, 1.0, 30.0] {
            let row = problem.lagrangian_argmax(eta);
            for (j, &b) in row.iter().enumerate() {
                let slope = problem.augmented_slope(j, b, 0.0, eta, 0.0, 0.0);
                assert!(b == 1.0 || slope.abs() < 1e-9, "eta {eta} col {j} b {b} slope {slope}");
            }
        }
    }
}
