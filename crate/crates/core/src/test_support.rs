//! Shared fixtures and independent oracles for unit tests.

use crate::ecms::{EcmsConfig, PowerSplit, SocState, Stage};
use crate::vehicle::VehicleParams;

/// Mid-size sedan fixture used throughout the unit tests.
pub(crate) fn sonata() -> VehicleParams {
    VehicleParams {
        id: 1,
        make: "Hyundai".to_string(),
        model: "Sonata".to_string(),
        mass_kg: 1650.0,
        battery_capacity_kwh: 7.6,
        frontal_area_m2: 2.2,
        drag_coefficient: 0.3,
        air_density_kg_m3: 1.2,
        friction_coefficient: 0.01,
        gravity_m_s2: 9.81,
        accel_coefficient: 0.3,
        congestion_factor: 1.0,
        fuel_lhv_mj_kg: 44.0,
        fuel_density_g_per_l: 725.0,
        engine_rated_power_kw: 80.0,
        engine_eta_max: 0.36,
        engine_eta_min: 0.10,
    }
}

/// Brute-force power split over an engine grid of the given resolution,
/// written from the objective definition without touching the solver.
pub(crate) fn brute_force_split(
    demand_kw: f64,
    state: &SocState,
    cfg: &EcmsConfig,
    params: &VehicleParams,
    resolution_kw: f64,
) -> Option<PowerSplit> {
    if demand_kw < 0.0 {
        return Some(PowerSplit {
            p_eng_kw: 0.0,
            p_batt_kw: demand_kw.max(-cfg.p_batt_charge_max_kw),
        });
    }
    if demand_kw > cfg.p_eng_max_kw + cfg.p_batt_discharge_max_kw {
        return None;
    }
    let d_cap = match state.stage {
        Stage::ChargeDepleting => cfg.p_batt_discharge_max_kw,
        Stage::ChargeSustaining => (demand_kw - cfg.p_eng_max_kw)
            .max(0.0)
            .min(cfg.p_batt_discharge_max_kw),
    };
    let lo = (demand_kw - d_cap).max(0.0);
    let hi = (demand_kw + cfg.p_batt_charge_max_kw).min(cfg.p_eng_max_kw);
    let mut candidates = vec![lo];
    let mut idx = (lo / resolution_kw).floor() as usize + 1;
    loop {
        let p = idx as f64 * resolution_kw;
        if p >= hi {
            break;
        }
        candidates.push(p);
        idx += 1;
    }
    if hi > lo {
        candidates.push(hi);
    }
    let objective = |p_eng: f64| {
        let u = p_eng / params.engine_rated_power_kw;
        let eta = (params.engine_eta_max * (2.0 * u - u * u))
            .clamp(params.engine_eta_min, params.engine_eta_max);
        p_eng / (eta * params.fuel_lhv_mj_kg)
            + cfg.equivalence_factor * (demand_kw - p_eng) / params.fuel_lhv_mj_kg
    };
    let mut best = candidates[0];
    let mut best_obj = objective(best);
    for &p in &candidates[1..] {
        let obj = objective(p);
        let better = match state.stage {
            Stage::ChargeDepleting => obj < best_obj,
            Stage::ChargeSustaining => obj <= best_obj,
        };
        if better {
            best = p;
            best_obj = obj;
        }
    }
    Some(PowerSplit {
        p_eng_kw: best,
        p_batt_kw: demand_kw - best,
    })
}
