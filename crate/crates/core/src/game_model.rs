//! Closed-form quantities of the bandwidth market: pairing probabilities,
//! transmission rates, the three-part migration delay, utilities of both
//! roles and their analytic derivatives.
//!
//! Bandwidth is measured in internal units of `Scenario::bandwidth_unit_hz`
//! (10 MHz by default), so demands and utilities stay O(1)–O(10).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1 MB = 8 × 10⁶ bits.
pub const BITS_PER_MEGABYTE: f64 = 8.0e6;

/// Default size of one internal bandwidth unit.
pub const DEFAULT_BANDWIDTH_UNIT_HZ: f64 = 1.0e7;

/// Residual allowed when checking that a profile sits at the follower best response.
pub const BEST_RESPONSE_CHECK_TOL: f64 = 1e-6;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub channel_gain_db: f64,
    pub distance_m: f64,
    pub path_loss_exp: f64,
    pub noise_power_dbm: f64,
}

impl Default for RadioParams {
    /// 40 dBm transmitter, −20 dB unit gain, 500 m, ε = 2, −150 dBm noise.
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 40.0,
            channel_gain_db: -20.0,
            distance_m: 500.0,
            path_loss_exp: 2.0,
            noise_power_dbm: -150.0,
        }
    }
}

impl RadioParams {
    pub fn snr_linear(&self) -> f64 {
        let p = dbm_to_watts(self.tx_power_dbm);
        let h = db_to_linear(self.channel_gain_db);
        let n0 = dbm_to_watts(self.noise_power_dbm);
        p * h * self.distance_m.powf(-self.path_loss_exp) / n0
    }

    /// Shannon spectral efficiency in bits/s/Hz.
    pub fn spectral_efficiency(&self) -> f64 {
        (1.0 + self.snr_linear()).log2()
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            self.tx_power_dbm,
            self.channel_gain_db,
            self.distance_m,
            self.path_loss_exp,
            self.noise_power_dbm,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("radio: all fields must be finite".into()));
        }
        if self.distance_m <= 0.0 {
            return Err(Error::Invariant("radio: distance_m must be > 0".into()));
        }
        if self.path_loss_exp <= 0.0 {
            return Err(Error::Invariant("radio: path_loss_exp must be > 0".into()));
        }
        let snr = self.snr_linear();
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(Error::Invariant(format!("radio: linear SNR {snr} is not positive and finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MigrationTask {
    pub data_size_bits: f64,
    pub cpu_cycles: f64,
    pub max_delay_s: f64,
}

impl MigrationTask {
    pub fn from_megabytes(data_size_mb: f64, cpu_cycles: f64, max_delay_s: f64) -> Self {
        MigrationTask {
            data_size_bits: data_size_mb * BITS_PER_MEGABYTE,
            cpu_cycles,
            max_delay_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MspParams {
    pub task: MigrationTask,
    /// Satisfaction coefficient α.
    pub alpha: f64,
    /// Sensitivity coefficient β.
    pub beta: f64,
    /// Sampled for completeness; re-instantiation runs on the MRP's server.
    pub compute_capability_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrpParams {
    /// Unit migration cost c.
    pub cost: f64,
    /// Task arrival rate λ of the M/M/1 re-instantiation queue.
    pub arrival_rate: f64,
    /// Task service rate μ.
    pub service_rate: f64,
    pub cpu_hz: f64,
    pub price_max: f64,
}

/// Symmetric, non-negative tie strengths with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SocialMatrix(Vec<Vec<f64>>);

impl SocialMatrix {
    pub fn new(w: Vec<Vec<f64>>) -> Result<Self> {
        let n = w.len();
        for (i, row) in w.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Invariant(format!(
                    "social: row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Invariant(format!("social: w[{i}][{k}] = {v} must be finite and non-negative")));
                }
                if i == k && v != 0.0 {
                    return Err(Error::Invariant(format!("social: diagonal w[{i}][{i}] must be zero")));
                }
                if v != w[k][i] {
                    return Err(Error::Invariant(format!("social: w[{i}][{k}] != w[{k}][{i}]")));
                }
            }
        }
        Ok(SocialMatrix(w))
    }

    pub fn zeros(n: usize) -> Self {
        SocialMatrix(vec![vec![0.0; n]; n])
    }

    /// Every off-diagonal entry equal to `w`.
    pub fn uniform(n: usize, w: f64) -> Result<Self> {
        let m = (0..n)
            .map(|i| (0..n).map(|k| if i == k { 0.0 } else { w }).collect())
            .collect();
        SocialMatrix::new(m)
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.0[i][k]
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for SocialMatrix {
    type Error = Error;
    fn try_from(w: Vec<Vec<f64>>) -> Result<Self> {
        SocialMatrix::new(w)
    }
}

impl From<SocialMatrix> for Vec<Vec<f64>> {
    fn from(m: SocialMatrix) -> Self {
        m.0
    }
}

/// A validated market instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    msps: Vec<MspParams>,
    mrps: Vec<MrpParams>,
    social: SocialMatrix,
    radio: RadioParams,
    bandwidth_unit_hz: f64,
    demand_max: f64,
    rate_per_unit: f64,
}

impl Scenario {
    pub fn new(
        msps: Vec<MspParams>,
        mrps: Vec<MrpParams>,
        social: SocialMatrix,
        radio: RadioParams,
        bandwidth_unit_hz: f64,
        demand_max: f64,
    ) -> Result<Self> {
        if msps.is_empty() {
            return Err(Error::Invariant("scenario needs at least one MSP".into()));
        }
        if mrps.is_empty() {
            return Err(Error::Invariant("scenario needs at least one MRP".into()));
        }
        if social.dim() != msps.len() {
            return Err(Error::Invariant(format!(
                "social matrix is {0}x{0} but there are {1} MSPs",
                social.dim(),
                msps.len()
            )));
        }
        radio.validate()?;
        if !(bandwidth_unit_hz > 0.0 && bandwidth_unit_hz.is_finite()) {
            return Err(Error::Invariant("bandwidth_unit_hz must be positive".into()));
        }
        if !(demand_max > 0.0 && demand_max.is_finite()) {
            return Err(Error::Invariant("demand_max must be positive".into()));
        }
        for (i, m) in msps.iter().enumerate() {
            let t = &m.task;
            let positive = [
                ("data_size_bits", t.data_size_bits),
                ("cpu_cycles", t.cpu_cycles),
                ("max_delay_s", t.max_delay_s),
                ("alpha", m.alpha),
                ("beta", m.beta),
                ("compute_capability_hz", m.compute_capability_hz),
            ];
            for (name, v) in positive {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Invariant(format!("MSP {i}: {name} = {v} must be positive")));
                }
            }
        }
        for (j, r) in mrps.iter().enumerate() {
            let positive = [
                ("cost", r.cost),
                ("arrival_rate", r.arrival_rate),
                ("service_rate", r.service_rate),
                ("cpu_hz", r.cpu_hz),
                ("price_max", r.price_max),
            ];
            for (name, v) in positive {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Invariant(format!("MRP {j}: {name} = {v} must be positive")));
                }
            }
            if r.arrival_rate >= r.service_rate {
                return Err(Error::Invariant(format!(
                    "MRP {j}: arrival_rate {} >= service_rate {} (M/M/1 queue unstable)",
                    r.arrival_rate, r.service_rate
                )));
            }
            if r.price_max < r.cost {
                return Err(Error::Invariant(format!(
                    "MRP {j}: price_max {} < cost {}",
                    r.price_max, r.cost
                )));
            }
        }
        let rate_per_unit = bandwidth_unit_hz * radio.spectral_efficiency();
        Ok(Scenario {
            msps,
            mrps,
            social,
            radio,
            bandwidth_unit_hz,
            demand_max,
            rate_per_unit,
        })
    }

    pub fn n_msps(&self) -> usize {
        self.msps.len()
    }
    pub fn n_mrps(&self) -> usize {
        self.mrps.len()
    }
    pub fn msps(&self) -> &[MspParams] {
        &self.msps
    }
    pub fn mrps(&self) -> &[MrpParams] {
        &self.mrps
    }
    pub fn msp(&self, i: usize) -> &MspParams {
        &self.msps[i]
    }
    pub fn mrp(&self, j: usize) -> &MrpParams {
        &self.mrps[j]
    }
    pub fn social(&self) -> &SocialMatrix {
        &self.social
    }
    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }
    pub fn bandwidth_unit_hz(&self) -> f64 {
        self.bandwidth_unit_hz
    }
    pub fn demand_max(&self) -> f64 {
        self.demand_max
    }
    /// Bits per second carried by one internal bandwidth unit.
    pub fn rate_per_unit(&self) -> f64 {
        self.rate_per_unit
    }

    /// Same market with the queue rates of every MRP replaced.
    pub fn with_rates(&self, rates: &[(f64, f64)]) -> Result<Scenario> {
        if rates.len() != self.n_mrps() {
            return Err(Error::Invariant(format!(
                "expected {} (λ, μ) pairs, got {}",
                self.n_mrps(),
                rates.len()
            )));
        }
        let mrps = self
            .mrps
            .iter()
            .zip(rates)
            .map(|(m, &(arrival_rate, service_rate))| MrpParams {
                arrival_rate,
                service_rate,
                ..*m
            })
            .collect();
        Scenario::new(
            self.msps.clone(),
            mrps,
            self.social.clone(),
            self.radio,
            self.bandwidth_unit_hz,
            self.demand_max,
        )
    }

    /// Lower and upper price bound of MRP `j`.
    pub fn price_bounds(&self, j: usize) -> (f64, f64) {
        (self.mrps[j].cost, self.mrps[j].price_max)
    }
}

/// Joint decision state: one price per MRP and an N×M demand matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub prices: Vec<f64>,
    pub demands: Vec<Vec<f64>>,
}

impl StrategyProfile {
    pub fn new(prices: Vec<f64>, demands: Vec<Vec<f64>>) -> Self {
        StrategyProfile { prices, demands }
    }

    /// Checks shape and the price/demand boxes of `scenario`.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let (n, m) = (scenario.n_msps(), scenario.n_mrps());
        if self.prices.len() != m {
            return Err(Error::Invariant(format!("profile has {} prices, expected {m}", self.prices.len())));
        }
        if self.demands.len() != n || self.demands.iter().any(|r| r.len() != m) {
            return Err(Error::Invariant(format!("profile demand matrix must be {n}x{m}")));
        }
        for (j, &p) in self.prices.iter().enumerate() {
            let (lo, hi) = scenario.price_bounds(j);
            if !(p >= lo && p <= hi) {
                return Err(Error::Invariant(format!("price p[{j}] = {p} outside [{lo}, {hi}]")));
            }
        }
        let dmax = scenario.demand_max();
        for (i, row) in self.demands.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                if !(0.0..=dmax).contains(&b) {
                    return Err(Error::Invariant(format!("demand b[{i}][{j}] = {b} outside [0, {dmax}]")));
                }
            }
        }
        Ok(())
    }

    pub fn total_demand(&self, i: usize) -> f64 {
        self.demands[i].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub transmission_s: f64,
    pub queue_s: f64,
    pub reinstantiation_s: f64,
    pub total_s: f64,
}

/// θ_·j for every MRP; the same row applies to every MSP.
pub fn pairing_probabilities(prices: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &price)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::NonPositivePrice { index, price });
    }
    Ok(pairing_unchecked(prices))
}

/// θ_j = 1 / Σ_l (p_j / p_l). Written as a sum of price ratios so that
/// equal prices give exactly 1/M and power-of-two rescaling is exact.
pub(crate) fn pairing_unchecked(prices: &[f64]) -> Vec<f64> {
    prices
        .iter()
        .map(|&pj| 1.0 / prices.iter().map(|&pl| pj / pl).sum::<f64>())
        .collect()
}

/// r = b · unit_hz · log₂(1 + SNR).
pub fn transmission_rate(b: f64, radio: &RadioParams, unit_hz: f64) -> f64 {
    b * unit_hz * radio.spectral_efficiency()
}

/// M/M/1 mean waiting time λ / (μ(μ − λ)).
pub fn queue_delay(arrival_rate: f64, service_rate: f64) -> f64 {
    arrival_rate / (service_rate * (service_rate - arrival_rate))
}

pub fn migration_delay(i: usize, j: usize, b_ij: f64, scenario: &Scenario) -> DelayBreakdown {
    let task = &scenario.msp(i).task;
    let mrp = scenario.mrp(j);
    let transmission_s = if b_ij > 0.0 {
        task.data_size_bits / (b_ij * scenario.rate_per_unit())
    } else {
        f64::INFINITY
    };
    let queue_s = queue_delay(mrp.arrival_rate, mrp.service_rate);
    let reinstantiation_s = task.cpu_cycles / mrp.cpu_hz;
    DelayBreakdown {
        transmission_s,
        queue_s,
        reinstantiation_s,
        total_s: transmission_s + queue_s + reinstantiation_s,
    }
}

/// Σ_j θ_j T_ij for one demand row; +∞ if any θ-weighted entry is zero.
pub fn expected_delay(i: usize, row: &[f64], theta: &[f64], scenario: &Scenario) -> f64 {
    row.iter()
        .zip(theta)
        .enumerate()
        .map(|(j, (&b, &t))| t * migration_delay(i, j, b, scenario).total_s)
        .sum()
}

/// Whether MSP `i` meets its delay budget under `profile`.
pub fn delay_feasible(i: usize, profile: &StrategyProfile, scenario: &Scenario) -> bool {
    let theta = pairing_unchecked(&profile.prices);
    expected_delay(i, &profile.demands[i], &theta, scenario) <= scenario.msp(i).task.max_delay_s
}

/// Σ_{k≠i} w_ik b_kj.
#[inline]
pub fn social_pull(i: usize, j: usize, demands: &[Vec<f64>], scenario: &Scenario) -> f64 {
    let w = scenario.social();
    demands
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(k, row)| w.get(i, k) * row[j])
        .sum()
}

/// ψ_ij: the stationary point of U_Fi along b_ij, before any clipping.
#[inline]
pub fn interior_response(i: usize, j: usize, demands: &[Vec<f64>], price: f64, scenario: &Scenario) -> f64 {
    let msp = scenario.msp(i);
    (msp.alpha + social_pull(i, j, demands, scenario) - price) / (2.0 * msp.beta)
}

/// U_Fi evaluated with `row` substituted for MSP i's demands.
pub(crate) fn msp_utility_with_row(
    i: usize,
    row: &[f64],
    demands: &[Vec<f64>],
    prices: &[f64],
    theta: &[f64],
    scenario: &Scenario,
) -> f64 {
    let msp = scenario.msp(i);
    row.iter()
        .enumerate()
        .map(|(j, &b)| {
            let s = social_pull(i, j, demands, scenario);
            theta[j] * (msp.alpha * b - msp.beta * b * b + s * b - b * prices[j])
        })
        .sum()
}

pub fn msp_utility(i: usize, profile: &StrategyProfile, scenario: &Scenario) -> f64 {
    let theta = pairing_unchecked(&profile.prices);
    msp_utility_with_row(i, &profile.demands[i], &profile.demands, &profile.prices, &theta, scenario)
}

pub(crate) fn mrp_utility_with(j: usize, prices: &[f64], theta: &[f64], demands: &[Vec<f64>], scenario: &Scenario) -> f64 {
    let margin = prices[j] - scenario.mrp(j).cost;
    demands.iter().map(|row| theta[j] * row[j] * margin).sum()
}

pub fn mrp_utility(j: usize, profile: &StrategyProfile, scenario: &Scenario) -> f64 {
    let theta = pairing_unchecked(&profile.prices);
    mrp_utility_with(j, &profile.prices, &theta, &profile.demands, scenario)
}

/// (∂U_Fi/∂b_ij, ∂²U_Fi/∂b_ij²).
pub fn msp_utility_grad(i: usize, j: usize, profile: &StrategyProfile, scenario: &Scenario) -> (f64, f64) {
    let theta = pairing_unchecked(&profile.prices);
    let msp = scenario.msp(i);
    let b = profile.demands[i][j];
    let s = social_pull(i, j, &profile.demands, scenario);
    let first = theta[j] * (msp.alpha - 2.0 * msp.beta * b + s - profile.prices[j]);
    let second = -2.0 * msp.beta * theta[j];
    (first, second)
}

/// First and second derivative of the leader's reduced utility U_Lj(p_j)
/// when every follower re-best-responds to p_j.
///
/// The follower column j depends only on p_j; on the set of MSPs whose
/// response is interior it solves (2·diag(β) − W) b = α − p_j + (pull of
/// clipped MSPs), so db/dp_j = −(2·diag(β) − W)⁻¹·1 there and zero elsewhere.
pub fn mrp_utility_derivs(j: usize, profile: &StrategyProfile, scenario: &Scenario) -> Result<(f64, f64)> {
    let prices = &profile.prices;
    pairing_probabilities(prices)?;
    let p = prices[j];
    let dmax = scenario.demand_max();
    let n = scenario.n_msps();

    let mut interior = Vec::with_capacity(n);
    for i in 0..n {
        let psi = interior_response(i, j, &profile.demands, p, scenario);
        let br = psi.clamp(0.0, dmax);
        let residual = (profile.demands[i][j] - br).abs();
        if residual > BEST_RESPONSE_CHECK_TOL {
            return Err(Error::NotAtFollowerBestResponse { msp: i, mrp: j, residual });
        }
        if psi > 0.0 && psi < dmax {
            interior.push(i);
        }
    }

    let slope_sum = if interior.is_empty() {
        0.0
    } else {
        let k = interior.len();
        let w = scenario.social();
        let a = DMatrix::from_fn(k, k, |r, c| {
            let (ir, ic) = (interior[r], interior[c]);
            if r == c {
                2.0 * scenario.msp(ir).beta
            } else {
                -w.get(ir, ic)
            }
        });
        let rhs = DVector::from_element(k, -1.0);
        let slopes = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Invariant(format!("follower response system for MRP {j} is singular")))?;
        slopes.iter().sum()
    };

    let others: f64 = prices
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != j)
        .map(|(_, &pl)| 1.0 / pl)
        .sum();
    let theta = 1.0 / (1.0 + p * others);
    let d_theta = -others * theta * theta;
    let d2_theta = 2.0 * others * others * theta * theta * theta;

    let margin = p - scenario.mrp(j).cost;
    let column_sum: f64 = profile.demands.iter().map(|r| r[j]).sum();
    let g = margin * column_sum;
    let dg = column_sum + margin * slope_sum;
    let d2g = 2.0 * slope_sum;

    let first = d_theta * g + theta * dg;
    let second = d2_theta * g + 2.0 * d_theta * dg + theta * d2g;
    Ok((first, second))
}
