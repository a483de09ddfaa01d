//! The market as a multi-agent POMDP.
//!
//! Each slot every MRP posts a price and every MSP a demand vector. Agents
//! see only an L-slot history of past prices and demands; MRPs also see
//! their current queue rates. Rewards are the game utilities, except that
//! an MSP missing its delay budget earns 0.
//!
//! Observation layout, oldest slot first, each slot row-major:
//! * MRP j: `[B, P] × L` then `λ_j^t, μ_j^t`, length L·(N·M + M) + 2
//! * MSP i: `[B without row i, P] × L`, length L·((N−1)·M + M)

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{delay_feasible, msp_utility, mrp_utility, Scenario, StrategyProfile};
use crate::scenario::Sampler;

/// Standard deviation of the per-slot λ_j and μ_j redraws.
pub const RATE_REDRAW_SD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub history_len: usize,
    pub episode_len: usize,
    pub seed: u64,
    pub redraw_rates_each_step: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            history_len: 3,
            episode_len: 100,
            seed: 0,
            redraw_rates_each_step: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 {
            return Err(Error::config("history_len", "must be >= 1"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("episode_len", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Mrp,
    Msp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub role: Role,
    pub index: usize,
}

impl AgentId {
    pub fn mrp(index: usize) -> Self {
        AgentId { role: Role::Mrp, index }
    }
    pub fn msp(index: usize) -> Self {
        AgentId { role: Role::Msp, index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: AgentId,
    /// Slot the observation is taken at (1-based).
    pub slot: usize,
    pub values: Vec<f64>,
}

/// Observations of all agents, MRPs and MSPs kept apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub mrp: Vec<Observation>,
    pub msp: Vec<Observation>,
}

/// Joint action of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actions {
    pub prices: Vec<f64>,
    pub demands: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub mrp: Vec<f64>,
    pub msp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Whether any submitted action lay outside its box and was clipped.
    pub clipped: bool,
    pub clipped_prices: Vec<bool>,
    pub clipped_demands: Vec<Vec<bool>>,
    /// Per MSP: expected delay exceeded the budget, reward zeroed.
    pub delay_violated: Vec<bool>,
    /// (λ_j, μ_j) in force during the stepped slot.
    pub rates: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observations: Observations,
    pub actions: Actions,
    pub rewards: Rewards,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    /// [c_j, p^max] per MRP.
    pub prices: Vec<(f64, f64)>,
    /// [0, demand_max] for every demand entry.
    pub demands: (f64, f64),
}

pub fn mrp_obs_len(n: usize, m: usize, l: usize) -> usize {
    l * (n * m + m) + 2
}

pub fn msp_obs_len(n: usize, m: usize, l: usize) -> usize {
    l * ((n - 1) * m + m)
}

pub fn action_bounds(scenario: &Scenario) -> ActionBounds {
    ActionBounds {
        prices: (0..scenario.n_mrps()).map(|j| scenario.price_bounds(j)).collect(),
        demands: (0.0, scenario.demand_max()),
    }
}

#[derive(Debug, Clone)]
struct Slot {
    prices: Vec<f64>,
    demands: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    scenario: Scenario,
    sampler: Sampler,
    history: VecDeque<Slot>,
    rates: Vec<(f64, f64)>,
    t: usize,
    done: bool,
}

impl Env {
    /// Builds the environment and resets it with `config.seed`.
    pub fn new(config: EnvConfig, scenario: Scenario) -> Result<Self> {
        config.validate()?;
        let mut env = Env {
            sampler: Sampler::new(config.seed),
            history: VecDeque::with_capacity(config.history_len),
            rates: base_rates(&scenario),
            config,
            scenario,
            t: 1,
            done: false,
        };
        env.reset(None);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }
    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
    /// Current slot, 1-based.
    pub fn slot(&self) -> usize {
        self.t
    }
    pub fn is_done(&self) -> bool {
        self.done
    }
    pub fn rates(&self) -> &[(f64, f64)] {
        &self.rates
    }
    pub fn obs_lengths(&self) -> (usize, usize) {
        let (n, m, l) = (self.scenario.n_msps(), self.scenario.n_mrps(), self.config.history_len);
        (mrp_obs_len(n, m, l), msp_obs_len(n, m, l))
    }

    /// Starts a new episode. `seed` replaces the configured seed when given.
    ///
    /// The history is filled slot by slot with uniform prices on [c_j, p^max]
    /// then uniform demands on [0, demand_max], row-major. The slot-1 rates
    /// are drawn next when redrawing is enabled.
    pub fn reset(&mut self, seed: Option<u64>) -> Observations {
        self.sampler = Sampler::new(seed.unwrap_or(self.config.seed));
        let (n, m) = (self.scenario.n_msps(), self.scenario.n_mrps());
        let dmax = self.scenario.demand_max();
        self.history.clear();
        for _ in 0..self.config.history_len {
            let prices = (0..m)
                .map(|j| {
                    let (lo, hi) = self.scenario.price_bounds(j);
                    self.sampler.uniform_in(lo, hi)
                })
                .collect();
            let demands = (0..n)
                .map(|_| (0..m).map(|_| self.sampler.uniform_in(0.0, dmax)).collect())
                .collect();
            self.history.push_back(Slot { prices, demands });
        }
        self.t = 1;
        self.done = false;
        self.rates = if self.config.redraw_rates_each_step {
            self.draw_rates()
        } else {
            base_rates(&self.scenario)
        };
        self.observations()
    }

    fn draw_rates(&mut self) -> Vec<(f64, f64)> {
        self.scenario
            .mrps()
            .iter()
            .map(|r| self.sampler.queue_rates(r.arrival_rate, RATE_REDRAW_SD, r.service_rate, RATE_REDRAW_SD))
            .collect()
    }

    pub fn observations(&self) -> Observations {
        let (n, m) = (self.scenario.n_msps(), self.scenario.n_mrps());
        let mrp = (0..m)
            .map(|j| {
                let mut values = Vec::with_capacity(mrp_obs_len(n, m, self.config.history_len));
                for slot in &self.history {
                    slot.demands.iter().for_each(|row| values.extend_from_slice(row));
                    values.extend_from_slice(&slot.prices);
                }
                values.push(self.rates[j].0);
                values.push(self.rates[j].1);
                Observation {
                    agent: AgentId::mrp(j),
                    slot: self.t,
                    values,
                }
            })
            .collect();
        let msp = (0..n)
            .map(|i| {
                let mut values = Vec::with_capacity(msp_obs_len(n, m, self.config.history_len));
                for slot in &self.history {
                    for (k, row) in slot.demands.iter().enumerate() {
                        if k != i {
                            values.extend_from_slice(row);
                        }
                    }
                    values.extend_from_slice(&slot.prices);
                }
                Observation {
                    agent: AgentId::msp(i),
                    slot: self.t,
                    values,
                }
            })
            .collect();
        Observations { mrp, msp }
    }

    /// Plays one slot. Out-of-box actions are clipped and flagged; NaN or a
    /// wrong shape is rejected.
    pub fn step(&mut self, actions: &Actions) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let (n, m) = (self.scenario.n_msps(), self.scenario.n_mrps());
        if actions.prices.len() != m {
            return Err(Error::InvalidAction(format!("expected {m} prices, got {}", actions.prices.len())));
        }
        if actions.demands.len() != n || actions.demands.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidAction(format!("demands must be a {n}x{m} matrix")));
        }
        if actions.prices.iter().chain(actions.demands.iter().flatten()).any(|v| v.is_nan()) {
            return Err(Error::InvalidAction("actions must not be NaN".into()));
        }

        let mut clipped_prices = vec![false; m];
        let prices: Vec<f64> = (0..m)
            .map(|j| {
                let (lo, hi) = self.scenario.price_bounds(j);
                let p = actions.prices[j].clamp(lo, hi);
                clipped_prices[j] = p != actions.prices[j];
                p
            })
            .collect();
        let dmax = self.scenario.demand_max();
        let mut clipped_demands = vec![vec![false; m]; n];
        let demands: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let b = actions.demands[i][j].clamp(0.0, dmax);
                        clipped_demands[i][j] = b != actions.demands[i][j];
                        b
                    })
                    .collect()
            })
            .collect();
        let clipped = clipped_prices.iter().chain(clipped_demands.iter().flatten()).any(|&c| c);

        let profile = StrategyProfile::new(prices, demands);
        let slot_scenario = self.scenario.with_rates(&self.rates)?;
        let mrp_rewards: Vec<f64> = (0..m).map(|j| mrp_utility(j, &profile, &slot_scenario)).collect();
        let delay_violated: Vec<bool> = (0..n).map(|i| !delay_feasible(i, &profile, &slot_scenario)).collect();
        let msp_rewards: Vec<f64> = (0..n)
            .map(|i| if delay_violated[i] { 0.0 } else { msp_utility(i, &profile, &slot_scenario) })
            .collect();
        let info = StepInfo {
            clipped,
            clipped_prices,
            clipped_demands,
            delay_violated,
            rates: self.rates.clone(),
        };

        self.history.pop_front();
        self.history.push_back(Slot {
            prices: profile.prices.clone(),
            demands: profile.demands.clone(),
        });
        self.done = self.t >= self.config.episode_len;
        self.t += 1;
        if self.config.redraw_rates_each_step && !self.done {
            self.rates = self.draw_rates();
        }

        Ok(Transition {
            observations: self.observations(),
            actions: Actions {
                prices: profile.prices,
                demands: profile.demands,
            },
            rewards: Rewards {
                mrp: mrp_rewards,
                msp: msp_rewards,
            },
            done: self.done,
            info,
        })
    }
}

fn base_rates(scenario: &Scenario) -> Vec<(f64, f64)> {
    scenario.mrps().iter().map(|r| (r.arrival_rate, r.service_rate)).collect()
}

/// One agent's action: a price for an MRP, a demand row for an MSP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentAction {
    Price(f64),
    Demands(Vec<f64>),
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn policy_seed(seed: u64, agent: AgentId, t: usize) -> u64 {
    let role = match agent.role {
        Role::Mrp => 1,
        Role::Msp => 2,
    };
    mix(mix(mix(seed) ^ role) ^ agent.index as u64) ^ mix(t as u64)
}

/// Uniform draw over the agent's action box, a pure function of (seed, agent, t).
pub fn random_policy(agent: AgentId, seed: u64, t: usize, scenario: &Scenario) -> AgentAction {
    let mut s = Sampler::new(policy_seed(seed, agent, t));
    match agent.role {
        Role::Mrp => {
            let (lo, hi) = scenario.price_bounds(agent.index);
            AgentAction::Price(s.uniform_in(lo, hi))
        }
        Role::Msp => {
            let dmax = scenario.demand_max();
            AgentAction::Demands((0..scenario.n_mrps()).map(|_| s.uniform_in(0.0, dmax)).collect())
        }
    }
}

/// All agents acting by [`random_policy`].
pub fn random_actions(seed: u64, t: usize, scenario: &Scenario) -> Actions {
    let prices = (0..scenario.n_mrps())
        .map(|j| match random_policy(AgentId::mrp(j), seed, t, scenario) {
            AgentAction::Price(p) => p,
            AgentAction::Demands(_) => unreachable!(),
        })
        .collect();
    let demands = (0..scenario.n_msps())
        .map(|i| match random_policy(AgentId::msp(i), seed, t, scenario) {
            AgentAction::Demands(d) => d,
            AgentAction::Price(_) => unreachable!(),
        })
        .collect();
    Actions { prices, demands }
}

/// A baseline in which every agent of one role acts uniformly at random
/// while the other role is left to its learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegeneratePolicy {
    pub random_role: Role,
    pub seed: u64,
}

pub fn degenerate_policy(role: Role, seed: u64) -> DegeneratePolicy {
    DegeneratePolicy { random_role: role, seed }
}

impl DegeneratePolicy {
    /// The random action for `agent` at slot `t`, or `None` for agents of the learning role.
    pub fn act(&self, agent: AgentId, t: usize, scenario: &Scenario) -> Option<AgentAction> {
        (agent.role == self.random_role).then(|| random_policy(agent, self.seed, t, scenario))
    }
}
