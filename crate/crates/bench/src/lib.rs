//! Shared fixtures for the engine benchmarks.

use phevroute_core::roadnet::{EdgeRecord, Node, RoadNetwork};
use phevroute_core::VehicleParams;

/// Mid-size sedan with the usual physics constants.
pub fn bench_vehicle() -> VehicleParams {
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

/// A `width` x `height` grid with bidirectional links of varied lengths.
pub fn grid_network(width: u64, height: u64) -> RoadNetwork {
    let node_id = |x: u64, y: u64| y * width + x + 1;
    let mut nodes = Vec::new();
    for y in 0..height {
        for x in 0..width {
            nodes.push(Node {
                id: node_id(x, y),
                lat: 39.9 + y as f64 * 0.005,
                lon: 116.4 + x as f64 * 0.005,
            });
        }
    }
    let mut edges = Vec::new();
    let mut id: u64 = 0;
    let mut link = |edges: &mut Vec<EdgeRecord>, a: u64, b: u64| {
        for (from, to) in [(a, b), (b, a)] {
            id += 1;
            edges.push(EdgeRecord {
                id,
                from,
                to,
                length_km: 0.4 + ((from * 7 + to * 13 + id) % 10) as f64 * 0.1,
                ffs_kmh: 40.0,
                ts: (id % 3) as u32,
                poi: (id % 2) as u32,
                theta: 0.0,
            });
        }
    };
    for y in 0..height {
        for x in 0..width {
            if x + 1 < width {
                link(&mut edges, node_id(x, y), node_id(x + 1, y));
            }
            if y + 1 < height {
                link(&mut edges, node_id(x, y), node_id(x, y + 1));
            }
        }
    }
    RoadNetwork::from_parts(nodes, edges).expect("grid network is valid")
}
