//! Route recommendation: estimate the shortest and fastest candidates and
//! pick the cheaper one.
//!
//! Path costs follow the edge decomposition: each edge is costed on its
//! representative crowdsensed trajectory (or a free-flow synthetic when the
//! window is empty), with the battery state carried across edges so the sum
//! equals the whole-trip cost.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{route_cost_from_state, CostBreakdown, CostCoefficients, PriceTable};
use crate::ecms::{EcmsConfig, SocState};
use crate::roadnet::{fastest_path, shortest_path, Edge, EdgeId, NetworkError, NodeId, Path, RoadNetwork};
use crate::sim::SimError;
use crate::traffic::{interpolate, TrafficConfig, TrafficError, TrafficStore};
use crate::trajectory::{Trajectory, TrajectoryPoint};
use crate::vehicle::VehicleParams;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("actual route cost must be positive, got {0}")]
    InvalidActualCost(f64),
}

/// Everything needed to price a path for one vehicle.
#[derive(Clone, Copy)]
pub struct RecommendContext<'a> {
    pub net: &'a RoadNetwork,
    pub store: &'a TrafficStore,
    pub traffic_cfg: &'a TrafficConfig,
    pub ecms_cfg: &'a EcmsConfig,
    pub params: &'a VehicleParams,
    pub coeffs: &'a CostCoefficients,
    pub prices: &'a PriceTable,
}

/// Cost of traversing a single edge during estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub edge_id: EdgeId,
    pub cost: CostBreakdown,
    pub duration_s: f64,
    /// True when no crowdsensed trajectory was available and the free-flow
    /// synthetic stood in.
    pub fallback: bool,
    pub soc_after: f64,
}

/// Estimated cost of one candidate path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEstimate {
    pub cost: CostBreakdown,
    pub per_edge: Vec<EdgeCost>,
    pub final_state: SocState,
    pub fallback_edges: Vec<EdgeId>,
    pub clipped_samples: usize,
}

/// Constant-speed stand-in trajectory covering an edge at free flow. The
/// speed is nudged so a whole number of seconds covers the exact length.
pub fn free_flow_trajectory(edge: &Edge, net: &RoadNetwork) -> Trajectory {
    let seconds = edge.free_flow_time_s().round().max(1.0);
    let kmh = edge.length_km / seconds * 3600.0;
    let from = net.node(edge.from).expect("edge endpoint in network");
    let to = net.node(edge.to).expect("edge endpoint in network");
    let n = seconds as usize;
    let points = (0..=n)
        .map(|i| {
            let w = i as f64 / n as f64;
            TrajectoryPoint {
                t_s: i as f64,
                lat: from.lat + w * (to.lat - from.lat),
                lon: from.lon + w * (to.lon - from.lon),
                speed_kmh: kmh,
                cum_distance_km: Some(w * edge.length_km),
            }
        })
        .collect();
    Trajectory::new(points).expect("free-flow trajectory is valid")
}

/// Prices a path edge by edge from a fresh initial SOC.
pub fn estimate_path_cost(
    ctx: &RecommendContext,
    path: &Path,
    t0: NaiveDateTime,
    soc0: f64,
) -> Result<RouteEstimate, RecommendError> {
    let state = SocState::from_initial_soc(soc0, ctx.ecms_cfg).map_err(SimError::from)?;
    estimate_path_cost_from_state(ctx, path, t0, state)
}

/// Prices a path edge by edge, carrying the battery state across edges.
pub fn estimate_path_cost_from_state(
    ctx: &RecommendContext,
    path: &Path,
    t0: NaiveDateTime,
    initial: SocState,
) -> Result<RouteEstimate, RecommendError> {
    let mut state = initial;
    let mut cost = CostBreakdown::default();
    let mut per_edge = Vec::with_capacity(path.edges.len());
    let mut fallback_edges = Vec::new();
    let mut clipped_samples = 0;

    for &edge_id in &path.edges {
        let edge = ctx.net.edge(edge_id).expect("path edge in network");
        let (raw, fallback) = match ctx.store.representative_trajectory(edge, t0, ctx.traffic_cfg)
        {
            Some(traj) if traj.len() >= 2 => (traj, false),
            _ => (free_flow_trajectory(edge, ctx.net), true),
        };
        if fallback {
            fallback_edges.push(edge_id);
        }
        let traj = interpolate(&raw, 1.0)?;
        let rc = route_cost_from_state(
            &traj,
            &edge.features,
            ctx.coeffs,
            ctx.params,
            ctx.ecms_cfg,
            ctx.prices,
            state,
        )?;
        cost.accumulate(&rc.breakdown);
        clipped_samples += rc.clipped_samples;
        state = rc.final_state;
        per_edge.push(EdgeCost {
            edge_id,
            cost: rc.breakdown,
            duration_s: traj.duration_s(),
            fallback,
            soc_after: state.soc,
        });
    }

    Ok(RouteEstimate {
        cost,
        per_edge,
        final_state: state,
        fallback_edges,
        clipped_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteChoice {
    Shortest,
    Fastest,
}

/// One candidate route with its estimate, as serialized in recommendations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteReport {
    pub edges: Vec<EdgeId>,
    pub total_length_km: f64,
    pub travel_time_s: f64,
    pub cost: CostBreakdown,
    pub per_edge: Vec<EdgeCost>,
    pub fallback_edges: Vec<EdgeId>,
    pub clipped_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub chosen: RouteChoice,
    pub shortest: RouteReport,
    pub fastest: RouteReport,
    /// Signed saving between the two candidates relative to the cheaper one.
    pub candidate_saving_pct: f64,
    /// Saving of the recommended route against a known actual route cost.
    pub saving_vs_actual_pct: Option<f64>,
}

impl Recommendation {
    pub fn chosen_report(&self) -> &RouteReport {
        match self.chosen {
            RouteChoice::Shortest => &self.shortest,
            RouteChoice::Fastest => &self.fastest,
        }
    }
}

/// Signed candidate saving: `(shortest − fastest) / min{shortest, fastest}`.
pub fn saving_between_candidates_pct(shortest_cny: f64, fastest_cny: f64) -> f64 {
    let denom = shortest_cny.min(fastest_cny);
    if denom.abs() < 1e-12 {
        0.0
    } else {
        (shortest_cny - fastest_cny) / denom * 100.0
    }
}

/// Saving of the recommended route against the actually driven one.
pub fn saving_vs_actual_pct(actual_cny: f64, eco_cny: f64) -> f64 {
    (actual_cny - eco_cny) / actual_cny * 100.0
}

/// Computes both candidate routes, prices them, and recommends the cheaper
/// one. Ties go to the fastest route, which buys time at equal money.
pub fn recommend(
    ctx: &RecommendContext,
    source: NodeId,
    destination: NodeId,
    t0: NaiveDateTime,
    soc0: f64,
    actual_cost_cny: Option<f64>,
) -> Result<Recommendation, RecommendError> {
    if let Some(actual) = actual_cost_cny {
        if actual <= 0.0 {
            return Err(RecommendError::InvalidActualCost(actual));
        }
    }
    let shortest = shortest_path(ctx.net, source, destination)?;
    let fastest = fastest_path(ctx.net, source, destination, t0, ctx.store, ctx.traffic_cfg)?;
    let short_est = estimate_path_cost(ctx, &shortest, t0, soc0)?;
    let fast_est = estimate_path_cost(ctx, &fastest, t0, soc0)?;

    let chosen = if fast_est.cost.total_cny <= short_est.cost.total_cny {
        RouteChoice::Fastest
    } else {
        RouteChoice::Shortest
    };
    let candidate_saving_pct =
        saving_between_candidates_pct(short_est.cost.total_cny, fast_est.cost.total_cny);
    let eco_cny = short_est.cost.total_cny.min(fast_est.cost.total_cny);
    let saving_vs_actual_pct = actual_cost_cny.map(|actual| saving_vs_actual_pct(actual, eco_cny));

    let report = |path: Path, est: RouteEstimate| RouteReport {
        travel_time_s: est.per_edge.iter().map(|e| e.duration_s).sum::<f64>().max(0.0),
        total_length_km: path.total_length_km,
        edges: path.edges,
        cost: est.cost,
        per_edge: est.per_edge,
        fallback_edges: est.fallback_edges,
        clipped_samples: est.clipped_samples,
    };

    Ok(Recommendation {
        chosen,
        shortest: report(shortest, short_est),
        fastest: report(fastest, fast_est),
        candidate_saving_pct,
        saving_vs_actual_pct,
    })
}
