//! Equivalent consumption minimization: the instantaneous engine/battery
//! power split.
//!
//! Battery power is converted into an equivalent fuel mass flow through a
//! fixed factor `s` and the split minimizes the summed equivalent
//! consumption under a power balance constraint. The minimizer runs over a
//! discrete engine-power grid because the engine efficiency depends on the
//! operating point; the exact bounds of the feasible interval are always
//! added as candidates so cap-limited optima are hit without grid error.
//!
//! Stage logic: charge-depleting (CD) above the sustain threshold,
//! charge-sustaining (CS) below it, with a hysteresis band on re-entry. In
//! CS the battery only assists demand the engine cannot cover on its own,
//! which keeps the state of charge parked near the threshold.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::VehicleParams;

#[derive(Debug, Error, PartialEq)]
pub enum EcmsError {
    #[error("engine power must be non-negative, got {0} kW")]
    NegativeEnginePower(f64),
    #[error("demand {demand_kw:.3} kW exceeds engine plus battery capability {max_kw:.3} kW")]
    InfeasibleDemand { demand_kw: f64, max_kw: f64 },
    #[error("initial SOC {0} outside [0, 1]")]
    InvalidSoc(f64),
    #[error("invalid ECMS config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum EcmsConfigError {
    #[error(transparent)]
    Invalid(#[from] EcmsError),
    #[error("cannot read ECMS config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed ECMS config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Tunables of the power split strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcmsConfig {
    /// Equivalent factor `s` converting battery power to fuel mass flow.
    pub equivalence_factor: f64,
    /// SOC below which the vehicle sustains charge instead of depleting it.
    pub soc_cs_threshold: f64,
    /// Hysteresis band above the threshold for switching back to depletion.
    pub soc_cs_band: f64,
    /// Maximum engine power in kW.
    pub p_eng_max_kw: f64,
    /// Maximum battery discharge power in kW.
    pub p_batt_discharge_max_kw: f64,
    /// Maximum battery charge power in kW (applied as negative battery power).
    pub p_batt_charge_max_kw: f64,
    /// Engine-power grid step of the split search, in kW.
    pub grid_resolution_kw: f64,
}

impl Default for EcmsConfig {
    fn default() -> Self {
        EcmsConfig {
            equivalence_factor: 2.5,
            soc_cs_threshold: 0.30,
            soc_cs_band: 0.03,
            p_eng_max_kw: 80.0,
            p_batt_discharge_max_kw: 50.0,
            p_batt_charge_max_kw: 50.0,
            grid_resolution_kw: 0.1,
        }
    }
}

impl EcmsConfig {
    pub fn validate(&self) -> Result<(), EcmsError> {
        let fail = |reason: &str| EcmsError::InvalidConfig(reason.to_string());
        if !(self.equivalence_factor > 0.0) {
            return Err(fail("equivalence factor must be positive"));
        }
        if !(self.soc_cs_threshold > 0.0 && self.soc_cs_threshold < 1.0) {
            return Err(fail("sustain threshold must lie in (0, 1)"));
        }
        if !(self.soc_cs_band >= 0.0) {
            return Err(fail("hysteresis band must be non-negative"));
        }
        if !(self.p_eng_max_kw > 0.0) {
            return Err(fail("engine power limit must be positive"));
        }
        if !(self.p_batt_discharge_max_kw > 0.0) {
            return Err(fail("battery discharge limit must be positive"));
        }
        if !(self.p_batt_charge_max_kw >= 0.0) {
            return Err(fail("battery charge limit must be non-negative"));
        }
        if !(self.grid_resolution_kw > 0.0) {
            return Err(fail("grid resolution must be positive"));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, EcmsConfigError> {
        let text = fs::read_to_string(path)?;
        let cfg: EcmsConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Operating stage of the energy management strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "CD")]
    ChargeDepleting,
    #[serde(rename = "CS")]
    ChargeSustaining,
}

/// Battery state of charge and the stage derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocState {
    pub soc: f64,
    pub stage: Stage,
}

/// Slack on the band-top comparison so a SOC written as `threshold + band`
/// does not flip stage over the last bit of the sum.
const BAND_EPS: f64 = 1e-9;

impl SocState {
    /// Classifies a fresh SOC reading with no stage history. The top of the
    /// hysteresis band still counts as sustaining.
    pub fn from_initial_soc(soc: f64, cfg: &EcmsConfig) -> Result<Self, EcmsError> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(EcmsError::InvalidSoc(soc));
        }
        let stage = if soc > cfg.soc_cs_threshold + cfg.soc_cs_band + BAND_EPS {
            Stage::ChargeDepleting
        } else {
            Stage::ChargeSustaining
        };
        Ok(SocState { soc, stage })
    }
}

fn next_stage(stage: Stage, soc: f64, cfg: &EcmsConfig) -> Stage {
    match stage {
        Stage::ChargeDepleting if soc <= cfg.soc_cs_threshold => Stage::ChargeSustaining,
        Stage::ChargeSustaining
            if soc > cfg.soc_cs_threshold + cfg.soc_cs_band + BAND_EPS =>
        {
            Stage::ChargeDepleting
        }
        unchanged => unchanged,
    }
}

/// Engine and battery power pair. Negative battery power charges the pack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSplit {
    pub p_eng_kw: f64,
    pub p_batt_kw: f64,
}

impl PowerSplit {
    pub const IDLE: PowerSplit = PowerSplit {
        p_eng_kw: 0.0,
        p_batt_kw: 0.0,
    };
}

/// Engine efficiency at a given output power.
///
/// Concave in the load fraction `u = p/rated`: `clamp(η_max·(2u − u²),
/// η_min, η_max)`, so idle-like loads sit on the floor and the rated point
/// reaches the peak.
pub fn engine_efficiency(p_eng_kw: f64, params: &VehicleParams) -> Result<f64, EcmsError> {
    if p_eng_kw < 0.0 {
        return Err(EcmsError::NegativeEnginePower(p_eng_kw));
    }
    let u = p_eng_kw / params.engine_rated_power_kw;
    let eta = params.engine_eta_max * (2.0 * u - u * u);
    Ok(eta.clamp(params.engine_eta_min, params.engine_eta_max))
}

/// Equivalent fuel mass flow of running the engine at `p_eng_kw`, in g/s.
pub(crate) fn engine_fuel_rate_g_s(p_eng_kw: f64, params: &VehicleParams) -> Result<f64, EcmsError> {
    let eta = engine_efficiency(p_eng_kw, params)?;
    Ok(p_eng_kw / (eta * params.fuel_lhv_mj_kg))
}

/// Reusable split minimizer for one (config, vehicle) pair.
///
/// Equivalent fuel rates along the engine grid are precomputed, which
/// matters when the split runs once per trajectory second.
pub struct SplitSolver<'a> {
    cfg: &'a EcmsConfig,
    params: &'a VehicleParams,
    grid_fuel_g_s: Vec<f64>,
}

impl<'a> SplitSolver<'a> {
    pub fn new(cfg: &'a EcmsConfig, params: &'a VehicleParams) -> Result<Self, EcmsError> {
        cfg.validate()?;
        let n = (cfg.p_eng_max_kw / cfg.grid_resolution_kw).floor() as usize;
        let mut grid_fuel_g_s = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let p = i as f64 * cfg.grid_resolution_kw;
            grid_fuel_g_s.push(engine_fuel_rate_g_s(p, params)?);
        }
        Ok(SplitSolver {
            cfg,
            params,
            grid_fuel_g_s,
        })
    }

    fn objective(&self, fuel_g_s: f64, p_batt_kw: f64) -> f64 {
        fuel_g_s + self.cfg.equivalence_factor * p_batt_kw / self.params.fuel_lhv_mj_kg
    }

    /// Battery discharge allowed in the current stage. Sustaining parks the
    /// battery and only lets it cover demand beyond the engine limit.
    fn discharge_cap_kw(&self, demand_kw: f64, stage: Stage) -> f64 {
        match stage {
            Stage::ChargeDepleting => self.cfg.p_batt_discharge_max_kw,
            Stage::ChargeSustaining => (demand_kw - self.cfg.p_eng_max_kw)
                .max(0.0)
                .min(self.cfg.p_batt_discharge_max_kw),
        }
    }

    pub fn split(&self, demand_kw: f64, state: &SocState) -> Result<PowerSplit, EcmsError> {
        if demand_kw < 0.0 {
            // Regeneration: charge up to the cap, discard the rest as
            // friction braking.
            return Ok(PowerSplit {
                p_eng_kw: 0.0,
                p_batt_kw: demand_kw.max(-self.cfg.p_batt_charge_max_kw),
            });
        }
        let max_kw = self.cfg.p_eng_max_kw + self.cfg.p_batt_discharge_max_kw;
        if demand_kw > max_kw {
            return Err(EcmsError::InfeasibleDemand {
                demand_kw,
                max_kw,
            });
        }

        let d_cap = self.discharge_cap_kw(demand_kw, state.stage);
        let lo = (demand_kw - d_cap).max(0.0);
        let hi = (demand_kw + self.cfg.p_batt_charge_max_kw).min(self.cfg.p_eng_max_kw);

        let res = self.cfg.grid_resolution_kw;
        let mut best_p = lo;
        let mut best_obj = {
            let fuel = engine_fuel_rate_g_s(lo, self.params)?;
            self.objective(fuel, demand_kw - lo)
        };
        // Ties go to the smaller engine power while depleting and to the
        // larger one while sustaining.
        let keep = |cand: f64, best: f64, stage: Stage| match stage {
            Stage::ChargeDepleting => cand < best,
            Stage::ChargeSustaining => cand <= best,
        };

        let first_idx = (lo / res).floor() as usize + 1;
        let mut idx = first_idx;
        loop {
            let p = idx as f64 * res;
            if p >= hi || idx >= self.grid_fuel_g_s.len() {
                break;
            }
            let obj = self.objective(self.grid_fuel_g_s[idx], demand_kw - p);
            if keep(obj, best_obj, state.stage) {
                best_obj = obj;
                best_p = p;
            }
            idx += 1;
        }
        if hi > lo {
            let fuel = engine_fuel_rate_g_s(hi, self.params)?;
            let obj = self.objective(fuel, demand_kw - hi);
            if keep(obj, best_obj, state.stage) {
                best_p = hi;
            }
        }

        Ok(PowerSplit {
            p_eng_kw: best_p,
            p_batt_kw: demand_kw - best_p,
        })
    }
}

/// One-shot power split; see [`SplitSolver`] for the loop-friendly form.
pub fn split_power(
    demand_kw: f64,
    state: &SocState,
    cfg: &EcmsConfig,
    params: &VehicleParams,
) -> Result<PowerSplit, EcmsError> {
    SplitSolver::new(cfg, params)?.split(demand_kw, state)
}

/// Advances the state of charge by one step of battery power.
///
/// `soc' = soc − p_batt·dt / (3600·capacity)`, clamped to [0, 1], with the
/// stage re-derived under hysteresis.
pub fn step_soc(
    state: &SocState,
    split: &PowerSplit,
    dt_s: f64,
    cfg: &EcmsConfig,
    params: &VehicleParams,
) -> SocState {
    let delta = split.p_batt_kw * dt_s / (3600.0 * params.battery_capacity_kwh);
    let soc = (state.soc - delta).clamp(0.0, 1.0);
    SocState {
        soc,
        stage: next_stage(state.stage, soc, cfg),
    }
}
