//! Vehicle parameters and longitudinal power demand.
//!
//! Two models of the instantaneous tractive power live here. [`total_force`]
//! is the physical one: rolling friction, grade, aerodynamic drag and a
//! feature-weighted acceleration term. [`power_demand`] is the fitted
//! regression form used for route cost estimation once a vehicle has been
//! calibrated; its coefficients absorb the physical constants.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::CostCoefficients;

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("invalid vehicle parameters for car {id}: {reason}")]
    InvalidParams { id: u32, reason: String },
    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u32),
    #[error("cannot read vehicle file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed vehicle file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Static physical and powertrain constants for one PHEV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub id: u32,
    pub make: String,
    pub model: String,
    /// Curb mass in kg.
    pub mass_kg: f64,
    /// Usable battery capacity in kWh.
    pub battery_capacity_kwh: f64,
    /// Frontal area in m².
    pub frontal_area_m2: f64,
    /// Aerodynamic drag coefficient (dimensionless).
    pub drag_coefficient: f64,
    /// Ambient air density in kg/m³.
    pub air_density_kg_m3: f64,
    /// Rolling friction coefficient (dimensionless).
    pub friction_coefficient: f64,
    /// Gravitational acceleration in m/s².
    pub gravity_m_s2: f64,
    /// Scale factor on the acceleration force term (dimensionless).
    pub accel_coefficient: f64,
    /// Baseline congestion multiplier added to the path feature counts.
    pub congestion_factor: f64,
    /// Fuel lower heating value in MJ/kg (numerically equal to kJ/g).
    pub fuel_lhv_mj_kg: f64,
    /// Fuel density in g/L.
    pub fuel_density_g_per_l: f64,
    /// Engine rated power in kW.
    pub engine_rated_power_kw: f64,
    /// Peak engine efficiency, in (0, 1).
    pub engine_eta_max: f64,
    /// Engine efficiency floor at idle-like loads, in (0, eta_max).
    pub engine_eta_min: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let fail = |reason: &str| VehicleError::InvalidParams {
            id: self.id,
            reason: reason.to_string(),
        };
        if !(self.mass_kg > 0.0) {
            return Err(fail("mass must be positive"));
        }
        if !(self.battery_capacity_kwh > 0.0) {
            return Err(fail("battery capacity must be positive"));
        }
        if !(self.fuel_lhv_mj_kg > 0.0) {
            return Err(fail("fuel lower heating value must be positive"));
        }
        if !(self.fuel_density_g_per_l > 0.0) {
            return Err(fail("fuel density must be positive"));
        }
        if !(self.engine_rated_power_kw > 0.0) {
            return Err(fail("engine rated power must be positive"));
        }
        if !(self.engine_eta_min > 0.0 && self.engine_eta_min < self.engine_eta_max) {
            return Err(fail("engine efficiency floor must lie in (0, eta_max)"));
        }
        if !(self.engine_eta_max < 1.0) {
            return Err(fail("peak engine efficiency must lie below 1"));
        }
        Ok(())
    }
}

/// Loads a fleet description keyed by car number from a JSON file.
pub fn load_vehicles(path: &Path) -> Result<BTreeMap<u32, VehicleParams>, VehicleError> {
    let text = fs::read_to_string(path)?;
    let fleet: BTreeMap<u32, VehicleParams> = serde_json::from_str(&text)?;
    for params in fleet.values() {
        params.validate()?;
    }
    Ok(fleet)
}

/// Looks up one vehicle in a fleet file.
pub fn load_vehicle(path: &Path, id: u32) -> Result<VehicleParams, VehicleError> {
    let fleet = load_vehicles(path)?;
    fleet
        .get(&id)
        .cloned()
        .ok_or(VehicleError::UnknownVehicle(id))
}

/// Per-path feature counts entering the acceleration term: traffic
/// lights/stop signs, neighbouring edges, and points of interest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathFeatures {
    pub traffic_stops: u32,
    pub neighbor_edges: u32,
    pub poi: u32,
}

impl PathFeatures {
    pub fn new(traffic_stops: u32, neighbor_edges: u32, poi: u32) -> Self {
        Self {
            traffic_stops,
            neighbor_edges,
            poi,
        }
    }

    pub fn count_sum(&self) -> f64 {
        f64::from(self.traffic_stops) + f64::from(self.neighbor_edges) + f64::from(self.poi)
    }
}

impl std::ops::Add for PathFeatures {
    type Output = PathFeatures;

    fn add(self, rhs: PathFeatures) -> PathFeatures {
        PathFeatures {
            traffic_stops: self.traffic_stops + rhs.traffic_stops,
            neighbor_edges: self.neighbor_edges + rhs.neighbor_edges,
            poi: self.poi + rhs.poi,
        }
    }
}

/// Total tractive force in newton at one instant.
///
/// `μmg·cosθ + mg·sinθ + ½φCᵣA·v² + β·m·a·(γ + |ts| + |n| + |poi|)`
///
/// A negative acceleration makes the last term negative, which is the
/// regeneration potential of the sample.
pub fn total_force(
    v_ms: f64,
    accel_ms2: f64,
    theta_rad: f64,
    feats: &PathFeatures,
    params: &VehicleParams,
) -> f64 {
    let weight = params.mass_kg * params.gravity_m_s2;
    let friction = params.friction_coefficient * weight * theta_rad.cos();
    let grade = weight * theta_rad.sin();
    let drag = 0.5
        * params.drag_coefficient
        * params.air_density_kg_m3
        * params.frontal_area_m2
        * v_ms
        * v_ms;
    let accel = params.accel_coefficient
        * params.mass_kg
        * accel_ms2
        * (params.congestion_factor + feats.count_sum());
    friction + grade + drag + accel
}

/// Fitted total power demand in kW at one instant.
///
/// `k₁·v + k₂·v³ + (k₃ + k₄·|ts| + k₅·|n| + k₆·|poi|)·v·Δv`
///
/// May be negative on deceleration samples; the power split decides how much
/// of that is recoverable.
pub fn power_demand(v_ms: f64, dv_ms: f64, feats: &PathFeatures, coeffs: &CostCoefficients) -> f64 {
    let accel_gain = coeffs.k3
        + coeffs.k4 * f64::from(feats.traffic_stops)
        + coeffs.k5 * f64::from(feats.neighbor_edges)
        + coeffs.k6 * f64::from(feats.poi);
    coeffs.k1 * v_ms + coeffs.k2 * v_ms.powi(3) + accel_gain * v_ms * dv_ms
}
