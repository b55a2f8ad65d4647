//! Evaluation harness: error metrics, a seeded synthetic corpus, and the
//! experiment runner behind the CLI `evaluate` command.
//!
//! The corpus stands in for a city-scale GPS dataset. Every corpus path is
//! a chain of edges with a true 1 Hz trajectory and an unknown per-edge
//! road slope the cost model cannot see, so even estimates fed the exact
//! trajectory carry a per-edge model error. Crowdsensed estimates instead
//! consume coarse, noisy observations contributed by other drivers on each
//! edge. Ground truth is always the consumption simulator run on the true
//! trajectory over the true slopes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{
    calibrate, route_cost_from_state, CalibrationError, CalibrationSample, CostCoefficients,
    PriceTable,
};
use crate::ecms::{EcmsConfig, SocState};
use crate::recommend::{
    estimate_path_cost, recommend, RecommendContext, RecommendError, RouteChoice,
};
use crate::roadnet::{EdgeId, EdgeRecord, NetworkError, Node, NodeId, Path, RoadNetwork};
use crate::sim::{generate_synthetic_trajectory, simulate_with, DriveProfile, SimError};
use crate::traffic::{TrafficConfig, TrafficError, TrafficObservation, TrafficStore};
use crate::trajectory::{Trajectory, TrajectoryError, TrajectoryPoint};
use crate::vehicle::{total_force, PathFeatures, VehicleParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("actual cost must be positive, got {0}")]
    NonPositiveActual(f64),
    #[error("no error records")]
    EmptyRecords,
    #[error("no calibrated coefficients for vehicle {0}")]
    MissingCalibration(u32),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize report: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Signed estimation error in percent: `(estimated − actual)/actual × 100`.
pub fn route_error(estimated_cny: f64, actual_cny: f64) -> Result<f64, EvalError> {
    if actual_cny <= 0.0 {
        return Err(EvalError::NonPositiveActual(actual_cny));
    }
    Ok((estimated_cny - actual_cny) / actual_cny * 100.0)
}

/// One estimated-vs-actual comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub path_id: u32,
    pub path_length_km: f64,
    pub soc0: f64,
    pub estimated_cny: f64,
    pub actual_cny: f64,
    pub error_pct: f64,
}

/// Mean absolute percentage error over the records. Signed per-record
/// errors are kept in the records themselves; aggregates take magnitudes so
/// over- and under-estimates cannot cancel.
pub fn mean_error(records: &[ErrorRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    Ok(records.iter().map(|r| r.error_pct.abs()).sum::<f64>() / records.len() as f64)
}

/// Path-length bins in km; the last bin is closed at 25.
pub const LENGTH_BINS_KM: [(f64, f64); 5] = [
    (0.0, 5.0),
    (5.0, 10.0),
    (10.0, 15.0),
    (15.0, 20.0),
    (20.0, 25.0),
];

pub fn length_bin_index(length_km: f64) -> Option<usize> {
    if !(0.0..=25.0 + 1e-9).contains(&length_km) {
        return None;
    }
    Some(((length_km / 5.0).floor() as usize).min(4))
}

fn subseed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Corpus generation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_paths: usize,
    pub min_length_km: f64,
    pub max_length_km: f64,
    /// Crowdsensing drivers contributing observations per edge.
    pub drivers_per_edge: usize,
    /// Sampling period of crowdsensed observations, in seconds.
    pub subsample_period_s: f64,
    /// Speed noise on crowdsensed observations, in km/h.
    pub speed_noise_kmh: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 42,
            n_paths: 200,
            min_length_km: 1.0,
            max_length_km: 25.0,
            drivers_per_edge: 3,
            subsample_period_s: 6.0,
            speed_noise_kmh: 1.0,
        }
    }
}

/// One corpus path: a chain of edges whose true per-edge trajectories
/// share their boundary samples.
#[derive(Debug, Clone)]
pub struct CorpusPath {
    pub id: u32,
    pub profile: DriveProfile,
    pub edge_ids: Vec<EdgeId>,
    pub true_segments: Vec<Trajectory>,
    pub length_km: f64,
}

pub struct Corpus {
    pub config: CorpusConfig,
    pub network: RoadNetwork,
    pub store: TrafficStore,
    pub paths: Vec<CorpusPath>,
    pub request_time: NaiveDateTime,
}

pub fn default_request_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2016, 3, 1)
        .expect("valid date")
        .and_hms_opt(8, 30, 0)
        .expect("valid time")
}

fn profile_mean_speed_ms(profile: DriveProfile) -> f64 {
    match profile {
        DriveProfile::Urban => 6.5,
        DriveProfile::Arterial => 12.0,
        DriveProfile::Highway => 24.0,
    }
}

fn profile_ffs_kmh(profile: DriveProfile) -> f64 {
    match profile {
        DriveProfile::Urban => 40.0,
        DriveProfile::Arterial => 60.0,
        DriveProfile::Highway => 100.0,
    }
}

/// Keeps every `period`-th sample plus the final point.
fn subsample(traj: &Trajectory, period_s: f64) -> Trajectory {
    let k = (period_s.round() as usize).max(1);
    let last = traj.points.len() - 1;
    let points: Vec<TrajectoryPoint> = traj
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| i % k == 0 || *i == last)
        .map(|(_, p)| *p)
        .collect();
    Trajectory::new(points).expect("subsample of a valid trajectory")
}

/// Adds Gaussian speed noise and rebuilds the odometer from the noisy
/// speeds so distances stay consistent.
fn add_speed_noise(traj: &Trajectory, sigma_kmh: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    if sigma_kmh <= 0.0 {
        return traj.clone();
    }
    let noise = Normal::new(0.0, sigma_kmh).expect("positive sigma");
    let mut points = traj.points.clone();
    for p in &mut points {
        p.speed_kmh = (p.speed_kmh + noise.sample(rng)).max(0.0);
    }
    let mut cum = 0.0;
    for i in 0..points.len() {
        if i > 0 {
            let dt = points[i].t_s - points[i - 1].t_s;
            cum += (points[i - 1].speed_kmh + points[i].speed_kmh) / 2.0 / 3.6 * dt / 1000.0;
        }
        points[i].cum_distance_km = Some(cum);
    }
    Trajectory::new(points).expect("noisy speeds stay valid")
}

/// Uniformly rescales speeds, rebuilding the odometer.
fn scale_speeds(traj: &Trajectory, factor: f64) -> Trajectory {
    let mut points = traj.points.clone();
    let mut cum = 0.0;
    for i in 0..points.len() {
        points[i].speed_kmh *= factor;
        if i > 0 {
            let dt = points[i].t_s - points[i - 1].t_s;
            cum += (points[i - 1].speed_kmh + points[i].speed_kmh) / 2.0 / 3.6 * dt / 1000.0;
        }
        points[i].cum_distance_km = Some(cum);
    }
    Trajectory::new(points).expect("scaled speeds stay valid")
}

fn mean_speed_kmh(traj: &Trajectory) -> f64 {
    traj.points.iter().map(|p| p.speed_kmh).sum::<f64>() / traj.len() as f64
}

/// Contiguous window of `traj` whose travelled distance is closest to
/// `target_km`, re-based to start at time zero.
fn clip_to_distance(traj: &Trajectory, start: usize, target_km: f64) -> Option<Trajectory> {
    let points = &traj.points;
    if start + 1 >= points.len() {
        return None;
    }
    let base = points[start].cum_distance_km?;
    let mut best_end = start + 1;
    let mut best_gap = f64::INFINITY;
    for (offset, p) in points.iter().enumerate().skip(start + 1) {
        let d = p.cum_distance_km? - base;
        let gap = (d - target_km).abs();
        if gap < best_gap {
            best_gap = gap;
            best_end = offset;
        }
        if d > target_km * 1.5 {
            break;
        }
    }
    let t_base = points[start].t_s;
    let out: Vec<TrajectoryPoint> = points[start..=best_end]
        .iter()
        .map(|p| TrajectoryPoint {
            t_s: p.t_s - t_base,
            cum_distance_km: p.cum_distance_km.map(|d| d - base),
            ..*p
        })
        .collect();
    Trajectory::new(out).ok()
}

/// Generates the seeded desk-scale corpus: disjoint edge chains with true
/// per-edge trajectories, and a populated crowdsensing store.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus, EvalError> {
    let request_time = default_request_time();
    let store = TrafficStore::new();
    let mut nodes = Vec::new();
    let mut records = Vec::new();
    let mut paths = Vec::new();
    let profiles = [DriveProfile::Urban, DriveProfile::Arterial, DriveProfile::Highway];

    for i in 0..cfg.n_paths {
        let path_id = i as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, u64::from(path_id)));
        let span = cfg.max_length_km - cfg.min_length_km;
        let target_km = cfg.min_length_km
            + span * ((i as f64 + rng.random_range(0.05..0.95)) / cfg.n_paths as f64);
        let profile = profiles[i % profiles.len()];

        // Generate until the trajectory covers the target distance.
        let mean_ms = profile_mean_speed_ms(profile);
        let mut duration = (target_km * 1000.0 / mean_ms * 1.4 + 180.0) as u32;
        let mut full = generate_synthetic_trajectory(
            subseed(cfg.seed, 1_000_000 + u64::from(path_id)),
            duration,
            profile,
        );
        for _ in 0..3 {
            if full.cumulative_distance_km() >= target_km {
                break;
            }
            duration *= 2;
            full = generate_synthetic_trajectory(
                subseed(cfg.seed, 1_000_000 + u64::from(path_id)),
                duration,
                profile,
            );
        }
        let reachable = full.cumulative_distance_km();
        let target_km = target_km.min(reachable * 0.95);
        let path_traj =
            clip_to_distance(&full, 0, target_km).expect("corpus trajectory covers target");

        // Cut into edges at seeded distance marks; boundary points shared.
        let total_km = path_traj.cumulative_distance_km();
        let mut marks = Vec::new();
        let mut at = 0.0;
        loop {
            let step = rng.random_range(0.8..2.2);
            at += step;
            if at >= total_km - 0.4 {
                break;
            }
            marks.push(at);
        }
        let mut cut_indexes = Vec::new();
        let mut from_idx = 0;
        for mark in marks {
            let mut best = from_idx;
            let mut best_gap = f64::INFINITY;
            for (idx, p) in path_traj.points.iter().enumerate().skip(from_idx + 2) {
                let d = p.cum_distance_km.expect("corpus trajectories carry odometers");
                let gap = (d - mark).abs();
                if gap < best_gap {
                    best_gap = gap;
                    best = idx;
                }
            }
            if best > from_idx + 1 && best + 2 < path_traj.points.len() {
                cut_indexes.push(best);
                from_idx = best;
            }
        }

        let mut true_segments = Vec::new();
        let mut rest = path_traj.clone();
        let mut consumed = 0;
        for &cut in &cut_indexes {
            let (seg, tail) = rest.split_at(cut - consumed).expect("valid cut index");
            consumed = cut;
            true_segments.push(seg);
            rest = tail;
        }
        true_segments.push(rest);

        // Chain nodes and edges; lengths are the exact segment distances.
        let node_base: NodeId = (u64::from(path_id) + 1) * 1000;
        let edge_base: EdgeId = (u64::from(path_id) + 1) * 1000;
        for (k, seg) in true_segments.iter().enumerate() {
            let first = seg.points.first().expect("segment non-empty");
            if k == 0 {
                nodes.push(Node {
                    id: node_base,
                    lat: first.lat,
                    lon: first.lon,
                });
            }
            let last = seg.points.last().expect("segment non-empty");
            nodes.push(Node {
                id: node_base + k as u64 + 1,
                lat: last.lat,
                lon: last.lon,
            });
            // Unknown road slope: present in the ground truth, invisible to
            // the regression features. This is the irreducible model error.
            records.push(EdgeRecord {
                id: edge_base + k as u64,
                from: node_base + k as u64,
                to: node_base + k as u64 + 1,
                length_km: seg.cumulative_distance_km(),
                ffs_kmh: profile_ffs_kmh(profile),
                ts: rng.random_range(0..=2),
                poi: rng.random_range(0..=2),
                theta: rng.random_range(-0.003..0.003),
            });
        }
        let edge_ids: Vec<EdgeId> =
            (0..true_segments.len()).map(|k| edge_base + k as u64).collect();

        // Crowdsensed observations from other drivers on each edge, stored
        // at the coarse sampling rate real vehicles report.
        for (k, seg) in true_segments.iter().enumerate() {
            let seg_km = seg.cumulative_distance_km();
            for j in 0..cfg.drivers_per_edge {
                let tag = 3_000_000
                    + u64::from(path_id) * 1000
                    + (k as u64) * 16
                    + j as u64;
                let mut obs_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, tag));
                let delta: f64 = obs_rng.random_range(-0.06..0.06);
                let target = (seg_km * (1.0 + delta)).max(0.05);
                let duration =
                    (target * 1000.0 / profile_mean_speed_ms(profile) * 2.0 + 240.0) as u32;
                let other = generate_synthetic_trajectory(subseed(cfg.seed, tag ^ 0x5555), duration, profile);
                // Drivers on the same edge in the same window share traffic
                // state, so pace the observation to the observed segment.
                let pace = (mean_speed_kmh(seg) / mean_speed_kmh(&other).max(1.0))
                    .clamp(0.75, 1.3);
                let other = scale_speeds(&other, pace);
                // Clip from the flowing middle of the drive, past the
                // standing-start ramp that an en-route edge never sees.
                let start =
                    obs_rng.random_range(other.points.len() / 3..other.points.len() / 2);
                if let Some(clip) = clip_to_distance(&other, start, target) {
                    if clip.len() < 8 {
                        continue;
                    }
                    let sparse = subsample(&clip, cfg.subsample_period_s);
                    let noisy = add_speed_noise(&sparse, cfg.speed_noise_kmh, &mut obs_rng);
                    let minutes = 5 + (u64::from(path_id) + (k as u64) * 3 + (j as u64) * 13) % 45;
                    store
                        .ingest(TrafficObservation {
                            driver_id: format!("mcs-{path_id}-{k}-{j}"),
                            edge_id: edge_ids[k],
                            submitted_at: request_time - Duration::minutes(minutes as i64),
                            trajectory: noisy,
                        })
                        .map_err(EvalError::from)?;
                }
            }
            // One stale record per first edge keeps the window filter honest.
            if k == 0 {
                store
                    .ingest(TrafficObservation {
                        driver_id: format!("stale-{path_id}"),
                        edge_id: edge_ids[k],
                        submitted_at: request_time - Duration::hours(3),
                        trajectory: seg.clone(),
                    })
                    .map_err(EvalError::from)?;
            }
        }

        paths.push(CorpusPath {
            id: path_id,
            profile,
            edge_ids,
            length_km: true_segments.iter().map(|s| s.cumulative_distance_km()).sum(),
            true_segments,
        });
    }

    let network = RoadNetwork::from_parts(nodes, records)?;
    Ok(Corpus {
        config: cfg.clone(),
        network,
        store,
        paths,
        request_time,
    })
}

/// Ground-truth money: the simulator driven over the true per-edge
/// segments with the battery state carried across edges.
pub fn oracle_route_cost_cny(
    corpus_path: &CorpusPath,
    network: &RoadNetwork,
    params: &VehicleParams,
    ecms: &EcmsConfig,
    prices: &PriceTable,
    soc0: f64,
) -> Result<f64, EvalError> {
    let mut state = SocState::from_initial_soc(soc0, ecms).map_err(SimError::from)?;
    let mut total = 0.0;
    for (edge_id, seg) in corpus_path.edge_ids.iter().zip(&corpus_path.true_segments) {
        let edge = network.edge(*edge_id).expect("corpus edge in network");
        let readings = simulate_with(seg, &edge.features, edge.theta_rad, params, ecms, state)?;
        total += prices.gasoline_cny_per_liter * readings.gasoline_liters(params)
            + prices.electricity_cny_per_kwh * readings.battery_kwh;
        state = readings.final_state;
    }
    Ok(total)
}

/// Estimate with the driver's own trajectory as input: same speeds as the
/// ground truth, so any error is pure model mismatch.
fn estimate_from_own_trajectory(
    corpus_path: &CorpusPath,
    network: &RoadNetwork,
    coeffs: &CostCoefficients,
    params: &VehicleParams,
    ecms: &EcmsConfig,
    prices: &PriceTable,
    soc0: f64,
) -> Result<f64, EvalError> {
    let mut state = SocState::from_initial_soc(soc0, ecms).map_err(SimError::from)?;
    let mut total = 0.0;
    for (edge_id, seg) in corpus_path.edge_ids.iter().zip(&corpus_path.true_segments) {
        let edge = network.edge(*edge_id).expect("corpus edge in network");
        let rc = route_cost_from_state(seg, &edge.features, coeffs, params, ecms, prices, state)?;
        total += rc.breakdown.total_cny;
        state = rc.final_state;
    }
    Ok(total)
}

/// Calibration samples taken from the true segments of the given paths.
pub fn calibration_samples(
    corpus: &Corpus,
    path_ids: &[u32],
    params: &VehicleParams,
    max_rows: usize,
) -> Vec<CalibrationSample> {
    let mut samples = Vec::new();
    for path in corpus.paths.iter().filter(|p| path_ids.contains(&p.id)) {
        for (edge_id, seg) in path.edge_ids.iter().zip(&path.true_segments) {
            let edge = corpus.network.edge(*edge_id).expect("corpus edge");
            let speeds = seg.speeds_ms();
            for i in 0..speeds.len() - 1 {
                let v = speeds[i];
                let dv = speeds[i + 1] - speeds[i];
                let force = total_force(v, dv, edge.theta_rad, &edge.features, params);
                samples.push(CalibrationSample {
                    v_ms: v,
                    dv_ms: dv,
                    features: edge.features,
                    q_kw: force * v / 1000.0,
                });
            }
        }
    }
    if samples.len() > max_rows {
        let stride = samples.len().div_ceil(max_rows);
        samples = samples.into_iter().step_by(stride).collect();
    }
    samples
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub soc_grid: Vec<f64>,
    pub train_fraction: f64,
    /// Initial SOC of the crowdsensed-estimation comparison.
    pub mcs_soc0: f64,
    /// Vehicle used for the binned and crowdsensed tables.
    pub primary_vehicle: u32,
    pub max_training_rows: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            soc_grid: vec![0.8, 0.5, 0.33],
            train_fraction: 0.3,
            mcs_soc0: 0.8,
            primary_vehicle: 1,
            max_training_rows: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBinError {
    pub vehicle_id: u32,
    pub soc0: f64,
    pub bin_lo_km: f64,
    pub bin_hi_km: f64,
    pub n_paths: usize,
    pub mape_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleBinError {
    pub vehicle_id: u32,
    pub soc0: f64,
    pub n_paths: usize,
    pub mape_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsComparisonRow {
    pub bin_lo_km: f64,
    pub bin_hi_km: f64,
    pub n_paths: usize,
    pub mape_actual_pct: f64,
    pub mape_mcs_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocSweepPoint {
    pub soc0: f64,
    pub shortest_cny: f64,
    pub fastest_cny: f64,
    pub chosen: RouteChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: u32,
    pub actual_km: f64,
    pub actual_cny: f64,
    pub fastest_km: f64,
    pub fastest_cny: f64,
    pub shortest_km: f64,
    pub shortest_cny: f64,
    pub chosen: RouteChoice,
    pub candidate_saving_pct: f64,
    pub saving_vs_actual_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub error_by_length: Vec<LengthBinError>,
    pub error_by_vehicle: Vec<VehicleBinError>,
    pub crowdsensed_vs_actual: Vec<McsComparisonRow>,
    pub soc_sweep: Vec<SocSweepPoint>,
    pub cases: Vec<CaseSummary>,
    pub records: BTreeMap<u32, Vec<ErrorRecord>>,
    /// Crowdsensed-estimate records of the primary vehicle.
    pub mcs_records: Vec<ErrorRecord>,
}

fn mean_error_in_bin(records: &[ErrorRecord], bin: usize) -> Option<(usize, f64)> {
    let in_bin: Vec<ErrorRecord> = records
        .iter()
        .filter(|r| length_bin_index(r.path_length_km) == Some(bin))
        .cloned()
        .collect();
    if in_bin.is_empty() {
        None
    } else {
        let mape = mean_error(&in_bin).expect("non-empty bin");
        Some((in_bin.len(), mape))
    }
}

/// Runs the full evaluation: calibration on a training split, binned
/// estimation errors per vehicle and SOC, the crowdsensed-vs-actual
/// comparison, the engineered SOC sweep, and the savings case studies.
pub fn run_experiment(
    corpus: &Corpus,
    vehicles: &BTreeMap<u32, VehicleParams>,
    vehicle_ids: &[u32],
    ecms: &EcmsConfig,
    prices: &PriceTable,
    traffic_cfg: &TrafficConfig,
    exp: &ExperimentConfig,
) -> Result<EvalReport, EvalError> {
    // Deterministic train/test split by path.
    let mut order: Vec<u32> = corpus.paths.iter().map(|p| p.id).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(subseed(corpus.config.seed, 0xC0FF));
    for i in (1..order.len()).rev() {
        let j = split_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((order.len() as f64) * exp.train_fraction).ceil() as usize;
    let train_ids: Vec<u32> = order[..n_train.min(order.len())].to_vec();
    let test_ids: Vec<u32> = order[n_train.min(order.len())..].to_vec();

    // Per-vehicle calibration on the training split.
    let mut coefficients: BTreeMap<u32, CostCoefficients> = BTreeMap::new();
    for &vid in vehicle_ids {
        let params = vehicles.get(&vid).ok_or(EvalError::MissingCalibration(vid))?;
        let samples = calibration_samples(corpus, &train_ids, params, exp.max_training_rows);
        coefficients.insert(vid, calibrate(&samples)?);
    }

    // Estimation error records per vehicle and SOC.
    let mut records: BTreeMap<u32, Vec<ErrorRecord>> = BTreeMap::new();
    for &vid in vehicle_ids {
        let params = &vehicles[&vid];
        let coeffs = &coefficients[&vid];
        let mut vehicle_records = Vec::new();
        for &pid in &test_ids {
            let path = &corpus.paths[pid as usize];
            for &soc0 in &exp.soc_grid {
                let actual =
                    oracle_route_cost_cny(path, &corpus.network, params, ecms, prices, soc0)?;
                if actual <= 0.0 {
                    continue;
                }
                let estimated = estimate_from_own_trajectory(
                    path,
                    &corpus.network,
                    coeffs,
                    params,
                    ecms,
                    prices,
                    soc0,
                )?;
                vehicle_records.push(ErrorRecord {
                    path_id: pid,
                    path_length_km: path.length_km,
                    soc0,
                    estimated_cny: estimated,
                    actual_cny: actual,
                    error_pct: route_error(estimated, actual)?,
                });
            }
        }
        records.insert(vid, vehicle_records);
    }

    // Crowdsensed estimates for the primary vehicle.
    let primary = exp.primary_vehicle;
    let primary_params = vehicles
        .get(&primary)
        .ok_or(EvalError::MissingCalibration(primary))?;
    let primary_coeffs = coefficients
        .get(&primary)
        .ok_or(EvalError::MissingCalibration(primary))?;
    let mut mcs_records = Vec::new();
    for &pid in &test_ids {
        let path = &corpus.paths[pid as usize];
        let actual = oracle_route_cost_cny(
            path,
            &corpus.network,
            primary_params,
            ecms,
            prices,
            exp.mcs_soc0,
        )?;
        if actual <= 0.0 {
            continue;
        }
        let node_base = (u64::from(pid) + 1) * 1000;
        let route = Path {
            source: node_base,
            destination: node_base + path.edge_ids.len() as u64,
            edges: path.edge_ids.clone(),
            total_length_km: path.length_km,
        };
        let ctx = RecommendContext {
            net: &corpus.network,
            store: &corpus.store,
            traffic_cfg,
            ecms_cfg: ecms,
            params: primary_params,
            coeffs: primary_coeffs,
            prices,
        };
        let est = estimate_path_cost(&ctx, &route, corpus.request_time, exp.mcs_soc0)?;
        mcs_records.push(ErrorRecord {
            path_id: pid,
            path_length_km: path.length_km,
            soc0: exp.mcs_soc0,
            estimated_cny: est.cost.total_cny,
            actual_cny: actual,
            error_pct: route_error(est.cost.total_cny, actual)?,
        });
    }

    // Binned tables.
    let mut error_by_length = Vec::new();
    for &vid in vehicle_ids {
        for &soc0 in &exp.soc_grid {
            let at_soc: Vec<ErrorRecord> = records[&vid]
                .iter()
                .filter(|r| r.soc0 == soc0)
                .cloned()
                .collect();
            for (bin, (lo, hi)) in LENGTH_BINS_KM.iter().enumerate() {
                if let Some((n, mape)) = mean_error_in_bin(&at_soc, bin) {
                    error_by_length.push(LengthBinError {
                        vehicle_id: vid,
                        soc0,
                        bin_lo_km: *lo,
                        bin_hi_km: *hi,
                        n_paths: n,
                        mape_pct: mape,
                    });
                }
            }
        }
    }

    // Per-vehicle errors in the 10 km bin.
    let ten_km_bin = length_bin_index(10.0).expect("10 km is in range");
    let mut error_by_vehicle = Vec::new();
    for &vid in vehicle_ids {
        for &soc0 in &exp.soc_grid {
            let at_soc: Vec<ErrorRecord> = records[&vid]
                .iter()
                .filter(|r| r.soc0 == soc0)
                .cloned()
                .collect();
            if let Some((n, mape)) = mean_error_in_bin(&at_soc, ten_km_bin) {
                error_by_vehicle.push(VehicleBinError {
                    vehicle_id: vid,
                    soc0,
                    n_paths: n,
                    mape_pct: mape,
                });
            }
        }
    }

    // Crowdsensed vs own-trajectory estimation per bin.
    let primary_at_mcs_soc: Vec<ErrorRecord> = records[&primary]
        .iter()
        .filter(|r| r.soc0 == exp.mcs_soc0)
        .cloned()
        .collect();
    let mut crowdsensed_vs_actual = Vec::new();
    for (bin, (lo, hi)) in LENGTH_BINS_KM.iter().enumerate() {
        let own = mean_error_in_bin(&primary_at_mcs_soc, bin);
        let mcs = mean_error_in_bin(&mcs_records, bin);
        if let (Some((n, own_mape)), Some((_, mcs_mape))) = (own, mcs) {
            crowdsensed_vs_actual.push(McsComparisonRow {
                bin_lo_km: *lo,
                bin_hi_km: *hi,
                n_paths: n,
                mape_actual_pct: own_mape,
                mape_mcs_pct: mcs_mape,
            });
        }
    }

    // Engineered two-route sweep and the savings case studies.
    let fixture = two_route_fixture(primary_params);
    let soc_grid: Vec<f64> = (0..=12).map(|i| 0.3 + 0.05 * f64::from(i)).collect();
    let soc_sweep = soc_sweep(&fixture, prices, traffic_cfg, &soc_grid)?;
    let cases = case_studies(
        corpus.config.seed,
        primary_params,
        primary_coeffs,
        ecms,
        prices,
        traffic_cfg,
    )?;

    Ok(EvalReport {
        error_by_length,
        error_by_vehicle,
        crowdsensed_vs_actual,
        soc_sweep,
        cases,
        records,
        mcs_records,
    })
}

/// Two-route network engineered so the cheaper route depends on the
/// initial SOC: a short arm dense with stop events against a longer smooth
/// high-speed arm, driven by a small-engine vehicle variant whose cruise
/// efficiency strongly favors high load.
pub struct TwoRouteFixture {
    pub network: RoadNetwork,
    pub store: TrafficStore,
    pub vehicle: VehicleParams,
    pub ecms: EcmsConfig,
    pub request_time: NaiveDateTime,
    pub source: NodeId,
    pub destination: NodeId,
}

fn stop_go_speeds_kmh(
    cruise_ms: f64,
    n_cycles: usize,
    cruise_s: usize,
    dwell_s: usize,
    accel: f64,
    decel: f64,
) -> Vec<f64> {
    let mut speeds = vec![0.0];
    for _ in 0..n_cycles {
        let mut v: f64 = 0.0;
        while v < cruise_ms {
            v = (v + accel).min(cruise_ms);
            speeds.push(v * 3.6);
        }
        for _ in 0..cruise_s {
            speeds.push(cruise_ms * 3.6);
        }
        while v > 0.0 {
            v = (v - decel).max(0.0);
            speeds.push(v * 3.6);
        }
        speeds.extend(std::iter::repeat_n(0.0, dwell_s));
    }
    speeds
}

fn cruise_speeds_kmh(cruise_ms: f64, accel: f64, target_km: f64, ramp_up: bool, ramp_down: bool) -> Vec<f64> {
    let mut speeds = vec![if ramp_up { 0.0 } else { cruise_ms * 3.6 }];
    let mut v = if ramp_up { 0.0 } else { cruise_ms };
    let mut dist_m = 0.0;
    while v < cruise_ms && ramp_up {
        let next = (v + accel).min(cruise_ms);
        dist_m += (v + next) / 2.0;
        v = next;
        speeds.push(v * 3.6);
    }
    let tail_m = if ramp_down { v * v / (2.0 * accel) } else { 0.0 };
    while dist_m + tail_m < target_km * 1000.0 {
        dist_m += v;
        speeds.push(v * 3.6);
    }
    if ramp_down {
        while v > 0.0 {
            v = (v - accel).max(0.0);
            speeds.push(v * 3.6);
        }
    }
    speeds
}

pub fn two_route_fixture(base_vehicle: &VehicleParams) -> TwoRouteFixture {
    // Small range-extender engine: cruise loads land near the efficient
    // operating region only at high speed.
    let vehicle = VehicleParams {
        engine_rated_power_kw: 30.0,
        ..base_vehicle.clone()
    };
    let ecms = EcmsConfig {
        p_eng_max_kw: 30.0,
        p_batt_charge_max_kw: 0.0,
        ..EcmsConfig::default()
    };
    let request_time = default_request_time();

    // Short arm: two stop-heavy 7 m/s edges. Long arm: two 33 m/s edges.
    let short_rep = stop_go_speeds_kmh(7.0, 12, 35, 6, 0.5, 0.7);
    let long_lead = cruise_speeds_kmh(33.0, 0.5, 4.5, true, false);
    let long_tail = cruise_speeds_kmh(33.0, 0.5, 4.5, false, true);

    let short_traj = Trajectory::from_speeds_kmh(&short_rep).expect("valid fixture speeds");
    let long_lead_traj = Trajectory::from_speeds_kmh(&long_lead).expect("valid fixture speeds");
    let long_tail_traj = Trajectory::from_speeds_kmh(&long_tail).expect("valid fixture speeds");

    let nodes = vec![
        Node { id: 1, lat: 39.90, lon: 116.40 },
        Node { id: 2, lat: 39.92, lon: 116.42 },
        Node { id: 3, lat: 39.88, lon: 116.44 },
        Node { id: 4, lat: 39.91, lon: 116.47 },
    ];
    let short_km = short_traj.cumulative_distance_km();
    let records = vec![
        EdgeRecord {
            id: 11,
            from: 1,
            to: 2,
            length_km: short_km,
            ffs_kmh: 30.0,
            ts: 2,
            poi: 1,
            theta: 0.0,
        },
        EdgeRecord {
            id: 12,
            from: 2,
            to: 4,
            length_km: short_km,
            ffs_kmh: 30.0,
            ts: 2,
            poi: 1,
            theta: 0.0,
        },
        EdgeRecord {
            id: 21,
            from: 1,
            to: 3,
            length_km: long_lead_traj.cumulative_distance_km(),
            ffs_kmh: 120.0,
            ts: 0,
            poi: 0,
            theta: 0.0,
        },
        EdgeRecord {
            id: 22,
            from: 3,
            to: 4,
            length_km: long_tail_traj.cumulative_distance_km(),
            ffs_kmh: 120.0,
            ts: 0,
            poi: 0,
            theta: 0.0,
        },
    ];
    let network = RoadNetwork::from_parts(nodes, records).expect("fixture network is valid");

    let store = TrafficStore::new();
    for (edge_id, traj) in [
        (11, short_traj.clone()),
        (12, short_traj),
        (21, long_lead_traj),
        (22, long_tail_traj),
    ] {
        store
            .ingest(TrafficObservation {
                driver_id: format!("fixture-{edge_id}"),
                edge_id,
                submitted_at: request_time - Duration::minutes(10),
                trajectory: traj,
            })
            .expect("fixture observation is valid");
    }

    TwoRouteFixture {
        network,
        store,
        vehicle,
        ecms,
        request_time,
        source: 1,
        destination: 4,
    }
}

/// Candidate costs across an initial-SOC grid on the two-route fixture.
pub fn soc_sweep(
    fixture: &TwoRouteFixture,
    prices: &PriceTable,
    traffic_cfg: &TrafficConfig,
    soc_grid: &[f64],
) -> Result<Vec<SocSweepPoint>, EvalError> {
    let coeffs = CostCoefficients::from_vehicle_dynamics(&fixture.vehicle);
    let ctx = RecommendContext {
        net: &fixture.network,
        store: &fixture.store,
        traffic_cfg,
        ecms_cfg: &fixture.ecms,
        params: &fixture.vehicle,
        coeffs: &coeffs,
        prices,
    };
    let mut points = Vec::with_capacity(soc_grid.len());
    for &soc0 in soc_grid {
        let rec = recommend(&ctx, fixture.source, fixture.destination, fixture.request_time, soc0, None)?;
        points.push(SocSweepPoint {
            soc0,
            shortest_cny: rec.shortest.cost.total_cny,
            fastest_cny: rec.fastest.cost.total_cny,
            chosen: rec.chosen,
        });
    }
    Ok(points)
}

/// Four diamond case studies: candidates estimated from crowdsensed data
/// against an "actually driven" congested detour along the short arm.
pub fn case_studies(
    seed: u64,
    params: &VehicleParams,
    coeffs: &CostCoefficients,
    ecms: &EcmsConfig,
    prices: &PriceTable,
    traffic_cfg: &TrafficConfig,
) -> Result<Vec<CaseSummary>, EvalError> {
    let request_time = default_request_time();
    let mut cases = Vec::new();
    for case_id in 0..4u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 7_000_000 + u64::from(case_id)));
        let base: NodeId = 900_000 + u64::from(case_id) * 100;
        let short_len: f64 = rng.random_range(1.2..2.0);
        let long_len: f64 = short_len * rng.random_range(1.15..1.4);
        let nodes = vec![
            Node { id: base + 1, lat: 39.9, lon: 116.4 },
            Node { id: base + 2, lat: 39.91, lon: 116.41 },
            Node { id: base + 3, lat: 39.89, lon: 116.42 },
            Node { id: base + 4, lat: 39.9, lon: 116.44 },
        ];
        let records = vec![
            EdgeRecord {
                id: base + 11,
                from: base + 1,
                to: base + 2,
                length_km: short_len,
                ffs_kmh: 35.0,
                ts: 2,
                poi: 1,
                theta: 0.0,
            },
            EdgeRecord {
                id: base + 12,
                from: base + 2,
                to: base + 4,
                length_km: short_len,
                ffs_kmh: 35.0,
                ts: 2,
                poi: 1,
                theta: 0.0,
            },
            EdgeRecord {
                id: base + 21,
                from: base + 1,
                to: base + 3,
                length_km: long_len,
                ffs_kmh: 70.0,
                ts: 0,
                poi: 1,
                theta: 0.0,
            },
            EdgeRecord {
                id: base + 22,
                from: base + 3,
                to: base + 4,
                length_km: long_len,
                ffs_kmh: 70.0,
                ts: 0,
                poi: 1,
                theta: 0.0,
            },
        ];
        let network = RoadNetwork::from_parts(nodes, records)?;
        let store = TrafficStore::new();

        // Crowdsensed speeds: moderate urban flow on the short arm, smooth
        // arterial flow on the long arm.
        for (edge_id, len, cruise, stops) in [
            (base + 11, short_len, 8.0, 2),
            (base + 12, short_len, 8.0, 2),
            (base + 21, long_len, 17.0, 0),
            (base + 22, long_len, 17.0, 0),
        ] {
            for j in 0..2 {
                let cruise_jitter = cruise + rng.random_range(-1.0..1.0);
                let cruise_s =
                    ((len * 1000.0 / cruise_jitter) as usize / (stops + 1)).max(20);
                let speeds = if stops > 0 {
                    stop_go_speeds_kmh(cruise_jitter, stops + 1, cruise_s, 5, 0.7, 0.9)
                } else {
                    cruise_speeds_kmh(cruise_jitter, 0.7, len, true, j == 1)
                };
                let traj = Trajectory::from_speeds_kmh(&speeds).expect("case speeds valid");
                if let Some(clip) = clip_to_distance(&traj, 0, len) {
                    store
                        .ingest(TrafficObservation {
                            driver_id: format!("case-{case_id}-{edge_id}-{j}"),
                            edge_id,
                            submitted_at: request_time - Duration::minutes(8 + j as i64 * 9),
                            trajectory: clip,
                        })
                        .map_err(EvalError::from)?;
                }
            }
        }

        // The driver actually crawled along the short arm in congestion,
        // covering extra distance.
        let actual_len = short_len * 2.0 * rng.random_range(1.15..1.35);
        let congested = stop_go_speeds_kmh(5.5, 8, 40, 12, 0.5, 0.7);
        let actual_raw = Trajectory::from_speeds_kmh(&congested).expect("valid");
        let actual_traj = clip_to_distance(&actual_raw, 0, actual_len)
            .expect("congested trajectory covers the detour");
        let actual_feats = PathFeatures::new(5, 4, 2);
        let readings = simulate_with(
            &actual_traj,
            &actual_feats,
            0.0,
            params,
            ecms,
            SocState::from_initial_soc(0.8, ecms).map_err(SimError::from)?,
        )?;
        let actual_cny = prices.gasoline_cny_per_liter * readings.gasoline_liters(params)
            + prices.electricity_cny_per_kwh * readings.battery_kwh;

        let ctx = RecommendContext {
            net: &network,
            store: &store,
            traffic_cfg,
            ecms_cfg: ecms,
            params,
            coeffs,
            prices,
        };
        let rec = recommend(&ctx, base + 1, base + 4, request_time, 0.8, Some(actual_cny))?;
        cases.push(CaseSummary {
            case_id,
            actual_km: actual_traj.cumulative_distance_km(),
            actual_cny,
            fastest_km: rec.fastest.total_length_km,
            fastest_cny: rec.fastest.cost.total_cny,
            shortest_km: rec.shortest.total_length_km,
            shortest_cny: rec.shortest.cost.total_cny,
            chosen: rec.chosen,
            candidate_saving_pct: rec.candidate_saving_pct,
            saving_vs_actual_pct: rec.saving_vs_actual_pct.expect("actual cost supplied"),
        });
    }
    Ok(cases)
}

impl EvalReport {
    /// Writes the plot-ready CSV tables and a machine-readable summary.
    pub fn write_files(&self, dir: &FsPath) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;

        let mut f = fs::File::create(dir.join("error_by_length.csv"))?;
        writeln!(f, "vehicle_id,soc0,bin_lo_km,bin_hi_km,n_paths,mape_pct")?;
        for r in &self.error_by_length {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.vehicle_id, r.soc0, r.bin_lo_km, r.bin_hi_km, r.n_paths, r.mape_pct
            )?;
        }

        let mut f = fs::File::create(dir.join("error_by_vehicle.csv"))?;
        writeln!(f, "vehicle_id,soc0,n_paths,mape_pct")?;
        for r in &self.error_by_vehicle {
            writeln!(f, "{},{},{},{}", r.vehicle_id, r.soc0, r.n_paths, r.mape_pct)?;
        }

        let mut f = fs::File::create(dir.join("crowdsensed_vs_actual.csv"))?;
        writeln!(
            f,
            "bin_lo_km,bin_hi_km,n_paths,mape_actual_pct,mape_mcs_pct"
        )?;
        for r in &self.crowdsensed_vs_actual {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.bin_lo_km, r.bin_hi_km, r.n_paths, r.mape_actual_pct, r.mape_mcs_pct
            )?;
        }

        let mut f = fs::File::create(dir.join("soc_sweep.csv"))?;
        writeln!(f, "soc0,shortest_cny,fastest_cny,chosen")?;
        for p in &self.soc_sweep {
            let chosen = match p.chosen {
                RouteChoice::Shortest => "shortest",
                RouteChoice::Fastest => "fastest",
            };
            writeln!(f, "{},{},{},{}", p.soc0, p.shortest_cny, p.fastest_cny, chosen)?;
        }

        let mut f = fs::File::create(dir.join("cases.csv"))?;
        writeln!(
            f,
            "case_id,actual_km,actual_cny,fastest_km,fastest_cny,shortest_km,shortest_cny,chosen,candidate_saving_pct,saving_vs_actual_pct"
        )?;
        for c in &self.cases {
            let chosen = match c.chosen {
                RouteChoice::Shortest => "shortest",
                RouteChoice::Fastest => "fastest",
            };
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                c.case_id,
                c.actual_km,
                c.actual_cny,
                c.fastest_km,
                c.fastest_cny,
                c.shortest_km,
                c.shortest_cny,
                chosen,
                c.candidate_saving_pct,
                c.saving_vs_actual_pct
            )?;
        }

        let mut f = fs::File::create(dir.join("records.csv"))?;
        writeln!(
            f,
            "vehicle_id,path_id,path_length_km,soc0,estimated_cny,actual_cny,error_pct"
        )?;
        for (vid, records) in &self.records {
            for r in records {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{}",
                    vid,
                    r.path_id,
                    r.path_length_km,
                    r.soc0,
                    r.estimated_cny,
                    r.actual_cny,
                    r.error_pct
                )?;
            }
        }

        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}
