//! Market instances: seeded sampling from the default simulation laws and
//! the JSON scenario file format.
//!
//! Sampling uses ChaCha8 seeded from a `u64` and a Box–Muller transform that
//! always consumes two uniforms per normal draw, so a given seed produces
//! the same scenario on every platform. Values are drawn in a fixed order:
//! per MSP (α, β, D, L, K^max, f), then the upper triangle of the social
//! matrix row by row, then per MRP (c, λ, μ, f). Overrides replace a drawn
//! value after the draw so the stream stays aligned.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{
    MigrationTask, MrpParams, MspParams, RadioParams, Scenario, SocialMatrix, DEFAULT_BANDWIDTH_UNIT_HZ,
};

pub const FILE_VERSION: &str = "1";

/// Draws rejected before a sample is clamped to its bound.
pub const MAX_RESAMPLES: usize = 64;

/// Seed of the bundled three-MSP / two-MRP convergence scenario.
pub const FIG3_SEED: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub n_msps: usize,
    pub n_mrps: usize,
    pub mean_alpha: f64,
    pub sd_alpha: f64,
    pub mean_beta: f64,
    pub sd_beta: f64,
    pub mean_social: f64,
    pub sd_social: f64,
    pub mean_cost: f64,
    pub sd_cost: f64,
    pub data_size_mb_min: f64,
    pub data_size_mb_max: f64,
    pub cpu_megacycles_mean: f64,
    pub cpu_megacycles_sd: f64,
    pub max_delay_s_min: f64,
    pub max_delay_s_max: f64,
    pub arrival_rate_mean: f64,
    pub arrival_rate_sd: f64,
    pub service_rate_mean: f64,
    pub service_rate_sd: f64,
    pub cpu_ghz_mean: f64,
    pub cpu_ghz_sd: f64,
    pub price_max: f64,
    pub radio: RadioParams,
    pub bandwidth_unit_hz: f64,
    pub demand_max: f64,
    /// Fixed α per MSP instead of sampled values.
    pub alpha_override: Option<Vec<f64>>,
    /// Fixed c per MRP instead of sampled values.
    pub cost_override: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_msps: 3,
            n_mrps: 2,
            mean_alpha: 30.0,
            sd_alpha: 1.0,
            mean_beta: 30.0,
            sd_beta: 1.0,
            mean_social: 5.0,
            sd_social: 1.0,
            mean_cost: 0.1,
            sd_cost: 0.05,
            data_size_mb_min: 10.0,
            data_size_mb_max: 50.0,
            cpu_megacycles_mean: 5000.0,
            cpu_megacycles_sd: 500.0,
            max_delay_s_min: 2.0,
            max_delay_s_max: 4.0,
            arrival_rate_mean: 450.0,
            arrival_rate_sd: 20.0,
            service_rate_mean: 500.0,
            service_rate_sd: 20.0,
            cpu_ghz_mean: 15.0,
            cpu_ghz_sd: 5.0,
            price_max: 1.5,
            radio: RadioParams::default(),
            bandwidth_unit_hz: DEFAULT_BANDWIDTH_UNIT_HZ,
            demand_max: 1.0,
            alpha_override: None,
            cost_override: None,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// Three MSPs with α = (30, 25, 35), two MRPs with c = (0.3, 0.1).
    pub fn fig3() -> Self {
        ScenarioSpec {
            n_msps: 3,
            n_mrps: 2,
            alpha_override: Some(vec![30.0, 25.0, 35.0]),
            cost_override: Some(vec![0.3, 0.1]),
            seed: FIG3_SEED,
            ..ScenarioSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_msps == 0 {
            return Err(Error::spec("n_msps", "must be >= 1"));
        }
        if self.n_mrps == 0 {
            return Err(Error::spec("n_mrps", "must be >= 1"));
        }
        let non_negative = [
            ("sd_alpha", self.sd_alpha),
            ("sd_beta", self.sd_beta),
            ("sd_social", self.sd_social),
            ("sd_cost", self.sd_cost),
            ("cpu_megacycles_sd", self.cpu_megacycles_sd),
            ("arrival_rate_sd", self.arrival_rate_sd),
            ("service_rate_sd", self.service_rate_sd),
            ("cpu_ghz_sd", self.cpu_ghz_sd),
            ("mean_social", self.mean_social),
            ("mean_cost", self.mean_cost),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::spec(field, format!("{v} must be finite and >= 0")));
            }
        }
        let positive = [
            ("mean_alpha", self.mean_alpha),
            ("mean_beta", self.mean_beta),
            ("cpu_megacycles_mean", self.cpu_megacycles_mean),
            ("arrival_rate_mean", self.arrival_rate_mean),
            ("service_rate_mean", self.service_rate_mean),
            ("cpu_ghz_mean", self.cpu_ghz_mean),
            ("price_max", self.price_max),
            ("bandwidth_unit_hz", self.bandwidth_unit_hz),
            ("demand_max", self.demand_max),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::spec(field, format!("{v} must be finite and > 0")));
            }
        }
        let ranges = [
            ("data_size_mb", self.data_size_mb_min, self.data_size_mb_max),
            ("max_delay_s", self.max_delay_s_min, self.max_delay_s_max),
        ];
        for (field, lo, hi) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::spec(field, format!("range [{lo}, {hi}] must be non-empty and positive")));
            }
        }
        if let Some(a) = &self.alpha_override {
            if a.len() != self.n_msps {
                return Err(Error::spec("alpha_override", format!("needs {} entries, got {}", self.n_msps, a.len())));
            }
            if a.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::spec("alpha_override", "entries must be > 0"));
            }
        }
        if let Some(c) = &self.cost_override {
            if c.len() != self.n_mrps {
                return Err(Error::spec("cost_override", format!("needs {} entries, got {}", self.n_mrps, c.len())));
            }
            if c.iter().any(|v| !(*v > 0.0 && *v <= self.price_max)) {
                return Err(Error::spec("cost_override", format!("entries must lie in (0, {}]", self.price_max)));
            }
        }
        Ok(())
    }
}

/// Seeded sampler with platform-stable uniform and normal draws.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Box–Muller, cosine branch; both uniforms are always consumed.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        mean + sd * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Normal draw restricted to `accept`, resampled up to [`MAX_RESAMPLES`]
    /// times and then replaced by `fallback`.
    pub fn normal_where<F: Fn(f64) -> bool>(&mut self, mean: f64, sd: f64, accept: F, fallback: f64) -> f64 {
        for _ in 0..MAX_RESAMPLES {
            let v = self.normal(mean, sd);
            if accept(v) {
                return v;
            }
        }
        fallback
    }

    /// Normal draw strictly above `floor`; clamps to `floor + margin` after the resample budget.
    pub fn normal_above(&mut self, mean: f64, sd: f64, floor: f64, margin: f64) -> f64 {
        self.normal_where(mean, sd, |v| v > floor, floor + margin)
    }

    /// A (λ, μ) pair with 0 < λ < μ.
    pub fn queue_rates(&mut self, arrival_mean: f64, arrival_sd: f64, service_mean: f64, service_sd: f64) -> (f64, f64) {
        let arrival = self.normal_above(arrival_mean, arrival_sd, 0.0, 1.0);
        let service = self.normal_above(service_mean, service_sd, arrival, 1.0);
        (arrival, service)
    }
}

/// Draws a market instance from `spec`. Deterministic in `spec.seed`.
pub fn sample_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut s = Sampler::new(spec.seed);
    let (n, m) = (spec.n_msps, spec.n_mrps);

    let mut msps = Vec::with_capacity(n);
    for i in 0..n {
        let mut alpha = s.normal_above(spec.mean_alpha, spec.sd_alpha, 0.0, 1e-3);
        let beta = s.normal_above(spec.mean_beta, spec.sd_beta, 0.0, 1e-3);
        let data_mb = s.uniform_in(spec.data_size_mb_min, spec.data_size_mb_max);
        let megacycles = s.normal_above(spec.cpu_megacycles_mean, spec.cpu_megacycles_sd, 0.0, 1.0);
        let max_delay = s.uniform_in(spec.max_delay_s_min, spec.max_delay_s_max);
        let ghz = s.normal_above(spec.cpu_ghz_mean, spec.cpu_ghz_sd, 0.0, 0.1);
        if let Some(a) = &spec.alpha_override {
            alpha = a[i];
        }
        msps.push(MspParams {
            task: MigrationTask::from_megabytes(data_mb, megacycles * 1e6, max_delay),
            alpha,
            beta,
            compute_capability_hz: ghz * 1e9,
        });
    }

    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in (i + 1)..n {
            let v = s.normal_where(spec.mean_social, spec.sd_social, |v| v >= 0.0, 0.0);
            w[i][k] = v;
            w[k][i] = v;
        }
    }

    let mut mrps = Vec::with_capacity(m);
    for j in 0..m {
        let pmax = spec.price_max;
        let floor = 1e-3_f64.min(pmax);
        let mut cost = s.normal_where(spec.mean_cost, spec.sd_cost, |v| v > 0.0 && v <= pmax, spec.mean_cost.clamp(floor, pmax));
        let (arrival_rate, service_rate) = s.queue_rates(
            spec.arrival_rate_mean,
            spec.arrival_rate_sd,
            spec.service_rate_mean,
            spec.service_rate_sd,
        );
        let ghz = s.normal_above(spec.cpu_ghz_mean, spec.cpu_ghz_sd, 0.0, 0.1);
        if let Some(c) = &spec.cost_override {
            cost = c[j];
        }
        mrps.push(MrpParams {
            cost,
            arrival_rate,
            service_rate,
            cpu_hz: ghz * 1e9,
            price_max: pmax,
        });
    }

    Scenario::new(msps, mrps, SocialMatrix::new(w)?, spec.radio, spec.bandwidth_unit_hz, spec.demand_max)
}

pub fn fig3_scenario() -> Scenario {
    sample_scenario(&ScenarioSpec::fig3()).expect("bundled scenario spec is valid")
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub version: String,
    pub radio: RadioParams,
    pub msps: Vec<MspParams>,
    pub mrps: Vec<MrpParams>,
    pub social: Vec<Vec<f64>>,
    pub bandwidth_unit_hz: f64,
    pub demand_max: f64,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            version: FILE_VERSION.to_string(),
            radio: *s.radio(),
            msps: s.msps().to_vec(),
            mrps: s.mrps().to_vec(),
            social: s.social().rows().to_vec(),
            bandwidth_unit_hz: s.bandwidth_unit_hz(),
            demand_max: s.demand_max(),
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        if self.version != FILE_VERSION {
            return Err(Error::Schema(format!(
                "unsupported scenario version `{}` (expected `{FILE_VERSION}`)",
                self.version
            )));
        }
        Scenario::new(
            self.msps,
            self.mrps,
            SocialMatrix::new(self.social)?,
            self.radio,
            self.bandwidth_unit_hz,
            self.demand_max,
        )
    }
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(scenario)).expect("scenario serializes")
}

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| {
        let msg = format!("line {} column {}: {e}", e.line(), e.column());
        match e.classify() {
            serde_json::error::Category::Data => Error::Schema(msg),
            _ => Error::Parse(msg),
        }
    })?;
    file.into_scenario()
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let mut text = scenario_to_json(scenario);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    scenario_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let spec = ScenarioSpec {
            n_msps: 5,
            n_mrps: 3,
            seed: 42,
            ..ScenarioSpec::default()
        };
        assert_eq!(sample_scenario(&spec).unwrap(), sample_scenario(&spec).unwrap());
        let other = ScenarioSpec { seed: 43, ..spec.clone() };
        assert_ne!(sample_scenario(&spec).unwrap(), sample_scenario(&other).unwrap());
    }

    #[test]
    fn overrides_apply_without_shifting_the_stream() {
        let base = ScenarioSpec {
            seed: 9,
            ..ScenarioSpec::default()
        };
        let a = sample_scenario(&base).unwrap();
        let b = sample_scenario(&ScenarioSpec {
            alpha_override: Some(vec![1.0, 2.0, 3.0]),
            ..base
        })
        .unwrap();
        assert_eq!(b.msp(1).alpha, 2.0);
        assert_eq!(a.msp(1).beta, b.msp(1).beta);
        assert_eq!(a.mrps(), b.mrps());
    }

    #[test]
    fn fig3_has_published_coefficients() {
        let s = fig3_scenario();
        let alphas: Vec<f64> = s.msps().iter().map(|m| m.alpha).collect();
        assert_eq!(alphas, vec![30.0, 25.0, 35.0]);
        assert_eq!(s.mrp(0).cost, 0.3);
        assert_eq!(s.mrp(1).cost, 0.1);
        assert_eq!(s.mrp(0).price_max, 1.5);
    }

    #[test]
    fn cost_mean_with_clamping() {
        let mut s = Sampler::new(2024);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| s.normal_where(0.1, 0.05, |v| v > 0.0 && v <= 1.5, 0.1))
            .sum::<f64>()
            / n as f64;
        assert!((0.095..=0.115).contains(&mean), "{mean}");
    }

    #[test]
    fn normal_moments() {
        let mut s = Sampler::new(1);
        let xs: Vec<f64> = (0..50_000).map(|_| s.normal(2.0, 3.0)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((mean - 2.0).abs() < 0.05);
        assert!((var.sqrt() - 3.0).abs() < 0.05);
    }

    #[test]
    fn resample_budget_then_clamp() {
        let mut s = Sampler::new(0);
        assert_eq!(s.normal_where(0.0, 1.0, |_| false, 7.5), 7.5);
        let (l, m) = s.queue_rates(500.0, 0.0, 400.0, 0.0);
        assert_eq!((l, m), (500.0, 501.0));
    }

    #[test]
    fn spec_validation_names_field() {
        let bad = ScenarioSpec {
            n_mrps: 0,
            ..ScenarioSpec::default()
        };
        match sample_scenario(&bad) {
            Err(Error::SpecInvalid { field, .. }) => assert_eq!(field, "n_mrps"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = ScenarioSpec {
            cost_override: Some(vec![0.1]),
            ..ScenarioSpec::default()
        };
        assert!(matches!(sample_scenario(&bad), Err(Error::SpecInvalid { .. })));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = fig3_scenario();
        assert_eq!(scenario_from_json(&scenario_to_json(&s)).unwrap(), s);
    }

    #[test]
    fn schema_and_invariant_errors() {
        let s = fig3_scenario();
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&s)).unwrap();
        v.as_object_mut().unwrap().remove("radio");
        match scenario_from_json(&v.to_string()) {
            Err(Error::Schema(msg)) => assert!(msg.contains("radio"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }

        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&s)).unwrap();
        v["mrps"][1]["arrival_rate"] = serde_json::json!(900.0);
        match scenario_from_json(&v.to_string()) {
            Err(Error::Invariant(msg)) => assert!(msg.contains("MRP 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(scenario_from_json("{ not json"), Err(Error::Parse(_))));
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&s)).unwrap();
        v["version"] = serde_json::json!("7");
        assert!(matches!(scenario_from_json(&v.to_string()), Err(Error::Schema(_))));
    }
}
