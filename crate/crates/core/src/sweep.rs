//! One-parameter sweeps of the equilibrium, averaged over sampling seeds.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{admm_solve, AdmmConfig, EquilibriumReport};
use crate::error::{Error, Result};
use crate::scenario::{sample_scenario, ScenarioSpec};

/// Smallest unit cost a sweep will configure; costs must be positive.
pub const MIN_COST: f64 = 1e-6;

/// Costs of MRP 2 and MRP 3 in the MRP-1 cost sweep.
pub const MRP1_SWEEP_OTHER_COSTS: [f64; 2] = [0.1, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NMsps,
    NMrps,
    MeanCost,
    MeanAlpha,
    MeanSocial,
    Mrp1Cost,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::NMsps,
        SweepAxis::NMrps,
        SweepAxis::MeanCost,
        SweepAxis::MeanAlpha,
        SweepAxis::MeanSocial,
        SweepAxis::Mrp1Cost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NMsps => "n_msps",
            SweepAxis::NMrps => "n_mrps",
            SweepAxis::MeanCost => "mean_cost",
            SweepAxis::MeanAlpha => "mean_alpha",
            SweepAxis::MeanSocial => "mean_social",
            SweepAxis::Mrp1Cost => "mrp1_cost",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::NMsps => vec![2.0, 3.0, 4.0, 5.0, 6.0],
            SweepAxis::NMrps => vec![2.0, 3.0, 4.0],
            SweepAxis::MeanCost => vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            SweepAxis::MeanAlpha => vec![25.0, 30.0, 35.0],
            SweepAxis::MeanSocial => vec![4.0, 4.5, 5.0, 5.5, 6.0],
            SweepAxis::Mrp1Cost => vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        }
    }

    /// Market size held fixed while this axis moves.
    pub fn default_base(self) -> ScenarioSpec {
        let (n_msps, n_mrps) = match self {
            SweepAxis::NMsps => (2, 2),
            SweepAxis::NMrps => (3, 2),
            _ => (4, 3),
        };
        ScenarioSpec {
            n_msps,
            n_mrps,
            ..ScenarioSpec::default()
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioSpec, value: f64) -> Result<ScenarioSpec> {
        let mut spec = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::spec(self.name(), format!("{v} is not a positive integer")))
            }
        };
        match self {
            SweepAxis::NMsps => {
                spec.n_msps = count(value)?;
                spec.alpha_override = None;
            }
            SweepAxis::NMrps => {
                spec.n_mrps = count(value)?;
                spec.cost_override = None;
            }
            SweepAxis::MeanCost => spec.mean_cost = value,
            SweepAxis::MeanAlpha => spec.mean_alpha = value,
            SweepAxis::MeanSocial => spec.mean_social = value,
            SweepAxis::Mrp1Cost => {
                let mut costs = match &base.cost_override {
                    Some(c) => c.clone(),
                    None if base.n_mrps == 1 + MRP1_SWEEP_OTHER_COSTS.len() => {
                        let mut c = vec![0.0];
                        c.extend_from_slice(&MRP1_SWEEP_OTHER_COSTS);
                        c
                    }
                    None => {
                        return Err(Error::spec(
                            "mrp1_cost",
                            "needs n_mrps = 3 or an explicit cost_override for the other MRPs",
                        ))
                    }
                };
                costs[0] = value.max(MIN_COST);
                spec.cost_override = Some(costs);
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Seeds per axis point; seed r is `seed + r`, shared by every point.
    pub repeats: usize,
    pub seed: u64,
    pub base: ScenarioSpec,
    pub admm: AdmmConfig,
}

impl SweepConfig {
    pub fn new(axis: SweepAxis, repeats: usize, seed: u64) -> Self {
        SweepConfig {
            axis,
            values: axis.default_values(),
            repeats,
            seed,
            base: axis.default_base(),
            admm: AdmmConfig::default(),
        }
    }
}

/// Seed-averaged outcome at one axis value. Per-agent vectors are indexed
/// by agent; averages are over MSPs or MRPs and then over converged runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub avg_msp_demand: f64,
    pub avg_msp_utility: f64,
    pub avg_mrp_price: f64,
    pub avg_mrp_utility: f64,
    pub social_welfare: f64,
    pub msp_demand: Vec<f64>,
    pub msp_utility: Vec<f64>,
    pub mrp_price: Vec<f64>,
    pub mrp_utility: Vec<f64>,
    pub converged_runs: usize,
    pub failed_runs: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64).collect()
}

fn aggregate(axis_value: f64, n: usize, m: usize, runs: &[Option<EquilibriumReport>]) -> SweepPoint {
    let ok: Vec<&EquilibriumReport> = runs.iter().flatten().collect();
    let demand: Vec<Vec<f64>> = ok
        .iter()
        .map(|r| (0..n).map(|i| r.profile.total_demand(i)).collect())
        .collect();
    let msp_u: Vec<Vec<f64>> = ok.iter().map(|r| r.msp_utilities.clone()).collect();
    let price: Vec<Vec<f64>> = ok.iter().map(|r| r.profile.prices.clone()).collect();
    let mrp_u: Vec<Vec<f64>> = ok.iter().map(|r| r.mrp_utilities.clone()).collect();
    let (msp_demand, msp_utility, mrp_price, mrp_utility) = if ok.is_empty() {
        (vec![f64::NAN; n], vec![f64::NAN; n], vec![f64::NAN; m], vec![f64::NAN; m])
    } else {
        (mean_columns(&demand), mean_columns(&msp_u), mean_columns(&price), mean_columns(&mrp_u))
    };
    let welfare: Vec<f64> = ok.iter().map(|r| r.social_welfare).collect();
    SweepPoint {
        axis_value,
        avg_msp_demand: mean(&msp_demand),
        avg_msp_utility: mean(&msp_utility),
        avg_mrp_price: mean(&mrp_price),
        avg_mrp_utility: mean(&mrp_utility),
        social_welfare: if ok.is_empty() { f64::NAN } else { mean(&welfare) },
        msp_demand,
        msp_utility,
        mrp_price,
        mrp_utility,
        converged_runs: ok.len(),
        failed_runs: runs.len() - ok.len(),
    }
}

/// Solves every (axis value, seed) pair in parallel. Runs that fail to
/// converge are logged, counted in `failed_runs` and left out of the averages.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if config.repeats == 0 {
        return Err(Error::config("repeats", "must be >= 1"));
    }
    if config.values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one axis value"));
    }
    config.admm.validate()?;
    let specs: Vec<ScenarioSpec> = config
        .values
        .iter()
        .map(|&v| config.axis.apply(&config.base, v))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|k| (0..config.repeats as u64).map(move |r| (k, r)))
        .collect();
    let results: Vec<Result<Option<EquilibriumReport>>> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let spec = ScenarioSpec {
                seed: config.seed.wrapping_add(r),
                ..specs[k].clone()
            };
            let scenario = sample_scenario(&spec)?;
            match admm_solve(&scenario, &config.admm) {
                Ok(report) => Ok(Some(report)),
                Err(e @ (Error::AdmmNoConvergence { .. } | Error::FollowerNoConvergence { .. })) => {
                    log::warn!("{} = {}, seed {}: {e}", config.axis, config.values[k], spec.seed);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let results: Vec<Option<EquilibriumReport>> = results.into_iter().collect::<Result<_>>()?;
    Ok(results
        .chunks(config.repeats)
        .zip(&config.values)
        .zip(&specs)
        .map(|((runs, &v), spec)| aggregate(v, spec.n_msps, spec.n_mrps, runs))
        .collect())
}

pub const SUMMARY_COLUMNS: [&str; 6] = [
    "axis_value",
    "avg_msp_demand",
    "avg_msp_utility",
    "avg_mrp_price",
    "avg_mrp_utility",
    "social_welfare",
];

pub fn sweep_header(max_msps: usize, max_mrps: usize) -> Vec<String> {
    let mut h: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 1..=max_msps {
        h.push(format!("msp{i}_demand"));
        h.push(format!("msp{i}_utility"));
    }
    for j in 1..=max_mrps {
        h.push(format!("mrp{j}_price"));
        h.push(format!("mrp{j}_utility"));
    }
    h.push("converged_runs".into());
    h.push("failed_runs".into());
    h
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Writes one row per axis point. Agents absent at a point leave their cells empty.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let max_n = points.iter().map(|p| p.msp_demand.len()).max().unwrap_or(0);
    let max_m = points.iter().map(|p| p.mrp_price.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(sweep_header(max_n, max_m))?;
    for p in points {
        let mut row: Vec<String> = [
            p.axis_value,
            p.avg_msp_demand,
            p.avg_msp_utility,
            p.avg_mrp_price,
            p.avg_mrp_utility,
            p.social_welfare,
        ]
        .into_iter()
        .map(cell)
        .collect();
        for i in 0..max_n {
            row.push(p.msp_demand.get(i).map_or(String::new(), |&v| cell(v)));
            row.push(p.msp_utility.get(i).map_or(String::new(), |&v| cell(v)));
        }
        for j in 0..max_m {
            row.push(p.mrp_price.get(j).map_or(String::new(), |&v| cell(v)));
            row.push(p.mrp_utility.get(j).map_or(String::new(), |&v| cell(v)));
        }
        row.push(p.converged_runs.to_string());
        row.push(p.failed_runs.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
