//! Eco-routing engine for plug-in hybrid vehicles.
//!
//! The crate covers the full pipeline: a per-second consumption simulator
//! that produces ground-truth readings, least-squares calibration of a
//! per-vehicle cost model, a road network with shortest/fastest search, a
//! crowdsensed traffic store, and the route recommendation and evaluation
//! layers on top.

// Validation predicates are written as negated comparisons on purpose:
// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost_model;
pub mod ecms;
pub mod eval;
pub mod recommend;
pub mod roadnet;
pub mod sim;
pub mod traffic;
pub mod trajectory;
pub mod vehicle;

#[cfg(test)]
pub(crate) mod test_support;

pub use cost_model::{
    calibrate, instantaneous_cost, route_cost, route_cost_from_state, CalibrationSample,
    CostBreakdown, CostCoefficients, PriceTable, RouteCost,
};
pub use ecms::{
    engine_efficiency, split_power, step_soc, EcmsConfig, PowerSplit, SocState, SplitSolver, Stage,
};
pub use sim::{
    generate_synthetic_trajectory, simulate, simulate_with, ConsumptionReadings, DriveProfile,
};
pub use trajectory::{Trajectory, TrajectoryPoint};
pub use vehicle::{load_vehicle, load_vehicles, power_demand, total_force, PathFeatures, VehicleParams};
