//! Stackelberg Equilibrium computation.
//!
//! Followers (MSPs) play a Nash game in demands for fixed prices; leaders
//! (MRPs) price against the followers' response. [`admm_solve`] runs the
//! two-loop scheme: an inner loop over follower demands under each MSP's
//! expected-delay budget, and an outer loop in
//! which every MRP moves to its best price. [`verify_equilibrium`] certifies
//! a profile by searching for profitable unilateral deviations.

mod admm;
mod follower;
mod leader;
pub mod search;
mod verify;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::StrategyProfile;

pub use admm::admm_solve;
pub use follower::{follower_fixed_point, follower_response, msp_best_response, FollowerState};
pub use leader::{mrp_best_response, reduced_mrp_utility};
pub use verify::{verify_equilibrium, DeviationReport};

/// How the inner loop enforces the followers' delay budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Best-response sweeps over each MSP's exact constrained reply.
    #[default]
    ExactReplies,
    /// Augmented-Lagrangian sweeps with the multiplier step η ← max(0, η + ρ·g).
    Multipliers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    /// Penalty coefficient ρ of the augmented Lagrangian and step of the multiplier update.
    pub damping: f64,
    /// Ξ: stop once |Σ_j U_Lj^(q) − Σ_j U_Lj^(q−1)| falls to this level.
    pub stop_threshold: f64,
    /// Outer iterations also require every price to move by at most this much.
    pub price_tol: f64,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub outer_max_iters: usize,
    pub price_grid_points: usize,
    /// Initial value of every delay multiplier η_i.
    pub multiplier_init: f64,
    /// Deviation gap below which an equilibrium counts as certified.
    pub certify_tol: f64,
    /// Random deviations tried per agent during certification.
    pub certify_probes: usize,
    pub inner_solver: InnerSolver,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            damping: 1.0,
            stop_threshold: 1e-4,
            price_tol: 1e-3,
            inner_tol: 1e-8,
            inner_max_iters: 10_000,
            outer_max_iters: 200,
            price_grid_points: 128,
            multiplier_init: 0.0,
            certify_tol: 1e-3,
            certify_probes: 64,
            inner_solver: InnerSolver::ExactReplies,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::config("damping", "must be > 0"));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(Error::config("stop_threshold", "must be > 0"));
        }
        if !(self.price_tol > 0.0) {
            return Err(Error::config("price_tol", "must be > 0"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::config("inner_tol", "must be > 0"));
        }
        if self.inner_max_iters == 0 || self.outer_max_iters == 0 {
            return Err(Error::config("max_iters", "iteration limits must be >= 1"));
        }
        if self.price_grid_points < 64 {
            return Err(Error::config("price_grid_points", "must be >= 64"));
        }
        if !(self.multiplier_init >= 0.0) {
            return Err(Error::config("multiplier_init", "must be >= 0"));
        }
        if !(self.certify_tol > 0.0) {
            return Err(Error::config("certify_tol", "must be > 0"));
        }
        Ok(())
    }
}

/// One outer iteration of the ADMM loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer_iter: usize,
    pub prices: Vec<f64>,
    pub demands: Vec<Vec<f64>>,
    pub mrp_utility_sum: f64,
    /// |ΔΣU_L| against the previous record; infinite for the initial record.
    #[serde(with = "finite_or_null")]
    pub stop_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub profile: StrategyProfile,
    pub msp_utilities: Vec<f64>,
    pub mrp_utilities: Vec<f64>,
    pub social_welfare: f64,
    pub multipliers: Vec<f64>,
    /// MSPs whose delay budget cannot be met even at maximum demand.
    pub delay_exempt: Vec<usize>,
    pub outer_iters: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
    pub deviation_gaps: DeviationReport,
    pub certified: bool,
}

impl EquilibriumReport {
    pub fn final_stop_stat(&self) -> f64 {
        self.trace.last().map_or(f64::INFINITY, |r| r.stop_stat)
    }
}

/// Header of the outer-loop trace CSV. Demand columns are `b_{i}{j}`
/// (1-based), with an underscore between indices once either exceeds 9.
pub fn trace_header(n_msps: usize, n_mrps: usize) -> Vec<String> {
    let wide = n_msps > 9 || n_mrps > 9;
    let mut h = vec!["outer_iter".to_string()];
    h.extend((1..=n_mrps).map(|j| format!("p_{j}")));
    for i in 1..=n_msps {
        for j in 1..=n_mrps {
            h.push(if wide { format!("b_{i}_{j}") } else { format!("b_{i}{j}") });
        }
    }
    h.push("U_L_sum".to_string());
    h.push("stop_stat".to_string());
    h
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let (n, m) = trace
        .first()
        .map_or((0, 0), |r| (r.demands.len(), r.prices.len()));
    out.write_record(trace_header(n, m))?;
    for r in trace {
        let mut row = vec![r.outer_iter.to_string()];
        row.extend(r.prices.iter().map(f64::to_string));
        row.extend(r.demands.iter().flatten().map(f64::to_string));
        row.push(r.mrp_utility_sum.to_string());
        row.push(if r.stop_stat.is_finite() { r.stop_stat.to_string() } else { String::new() });
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
