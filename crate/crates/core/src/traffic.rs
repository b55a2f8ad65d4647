//! Crowdsensed per-edge trajectory store.
//!
//! Observations arrive as (driver, edge) pairs and are retrieved over a
//! sliding time window: one hour during rush hours, two hours otherwise.
//! Among the observations in the window, the representative trajectory for
//! an edge is the one whose cumulative travel distance best matches the
//! edge length.
//!
//! The store is in-memory behind a read-write lock; ingest and queries may
//! run concurrently and queries never observe a partially inserted record.
//! An optional append-only JSON-lines log makes a store replayable.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::{Edge, EdgeId};
use crate::trajectory::{Trajectory, TrajectoryError, TrajectoryPoint};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("observation has an empty trajectory")]
    EmptyObservation,
    #[error("interpolation needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("interpolation step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("cannot access observation log: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed observation record: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// One crowdsensed trajectory clipped to a single edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficObservation {
    pub driver_id: String,
    pub edge_id: EdgeId,
    pub submitted_at: NaiveDateTime,
    pub trajectory: Trajectory,
}

/// Hour-of-day range, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    /// Retrieval window during rush hours, in seconds.
    pub window_rush_s: f64,
    /// Retrieval window outside rush hours, in seconds.
    pub window_offpeak_s: f64,
    pub rush_hours: Vec<HourRange>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            window_rush_s: 3600.0,
            window_offpeak_s: 7200.0,
            rush_hours: vec![
                HourRange { start: 7, end: 9 },
                HourRange { start: 17, end: 19 },
            ],
        }
    }
}

impl TrafficConfig {
    pub fn is_rush(&self, t: NaiveDateTime) -> bool {
        let hour = t.hour();
        self.rush_hours
            .iter()
            .any(|range| hour >= range.start && hour < range.end)
    }

    pub fn window_s(&self, t: NaiveDateTime) -> f64 {
        if self.is_rush(t) {
            self.window_rush_s
        } else {
            self.window_offpeak_s
        }
    }
}

#[derive(Default)]
struct StoreInner {
    by_edge: HashMap<EdgeId, Vec<Arc<TrafficObservation>>>,
    seen: HashSet<(String, EdgeId, NaiveDateTime)>,
    count: usize,
    log: Option<BufWriter<File>>,
}

/// Thread-safe observation store indexed by edge.
#[derive(Default)]
pub struct TrafficStore {
    inner: RwLock<StoreInner>,
}

impl TrafficStore {
    pub fn new() -> Self {
        TrafficStore::default()
    }

    /// Opens a store that appends every ingested observation to a
    /// JSON-lines log at `path` (created if missing).
    pub fn with_log_file(path: &Path) -> Result<Self, TrafficError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let store = TrafficStore::new();
        store.inner.write().expect("store lock").log = Some(BufWriter::new(file));
        Ok(store)
    }

    /// Replays a JSON-lines observation log into the store. Replayed
    /// records are not re-appended to this store's own log.
    pub fn load_jsonl(&self, path: &Path) -> Result<usize, TrafficError> {
        let reader = BufReader::new(File::open(path)?);
        let mut ingested = 0;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let obs: TrafficObservation = serde_json::from_str(&line)?;
            if self.ingest_inner(obs, false)? {
                ingested += 1;
            }
        }
        Ok(ingested)
    }

    /// Indexes one observation. Duplicate (driver, edge, submitted_at)
    /// keys are ignored; returns whether the record was new.
    pub fn ingest(&self, obs: TrafficObservation) -> Result<bool, TrafficError> {
        self.ingest_inner(obs, true)
    }

    fn ingest_inner(&self, obs: TrafficObservation, log: bool) -> Result<bool, TrafficError> {
        if obs.trajectory.is_empty() {
            return Err(TrafficError::EmptyObservation);
        }
        let mut inner = self.inner.write().expect("store lock");
        let key = (obs.driver_id.clone(), obs.edge_id, obs.submitted_at);
        if !inner.seen.insert(key) {
            return Ok(false);
        }
        if log {
            if let Some(writer) = inner.log.as_mut() {
                serde_json::to_writer(&mut *writer, &obs)?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
        }
        inner.count += 1;
        inner
            .by_edge
            .entry(obs.edge_id)
            .or_default()
            .push(Arc::new(obs));
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock").count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Observations on `edge_id` with `t0 − T ≤ submitted_at ≤ t0`.
    pub fn observations_in_window(
        &self,
        edge_id: EdgeId,
        t0: NaiveDateTime,
        cfg: &TrafficConfig,
    ) -> Vec<Arc<TrafficObservation>> {
        let window = Duration::milliseconds((cfg.window_s(t0) * 1000.0) as i64);
        let earliest = t0 - window;
        let inner = self.inner.read().expect("store lock");
        inner
            .by_edge
            .get(&edge_id)
            .map(|observations| {
                observations
                    .iter()
                    .filter(|obs| obs.submitted_at >= earliest && obs.submitted_at <= t0)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The windowed observation whose cumulative travel distance is closest
    /// to the edge length; ties break toward the most recent submission.
    /// `None` means the caller should fall back to a free-flow trajectory.
    pub fn representative_trajectory(
        &self,
        edge: &Edge,
        t0: NaiveDateTime,
        cfg: &TrafficConfig,
    ) -> Option<Trajectory> {
        let candidates = self.observations_in_window(edge.id, t0, cfg);
        candidates
            .iter()
            .min_by(|a, b| {
                let da = (a.trajectory.cumulative_distance_km() - edge.length_km).abs();
                let db = (b.trajectory.cumulative_distance_km() - edge.length_km).abs();
                da.total_cmp(&db)
                    .then_with(|| b.submitted_at.cmp(&a.submitted_at))
                    .then_with(|| a.driver_id.cmp(&b.driver_id))
            })
            .map(|obs| obs.trajectory.clone())
    }
}

/// Resamples a trajectory to a uniform `target_dt_s` grid by linear
/// interpolation of speed and position. Endpoints and total duration are
/// preserved exactly; an input already on the target grid is returned
/// unchanged.
pub fn interpolate(traj: &Trajectory, target_dt_s: f64) -> Result<Trajectory, TrafficError> {
    if traj.len() < 2 {
        return Err(TrafficError::TooFewPoints(traj.len()));
    }
    if target_dt_s <= 0.0 {
        return Err(TrafficError::NonPositiveStep(target_dt_s));
    }
    let points = &traj.points;
    if points
        .windows(2)
        .all(|w| w[1].t_s - w[0].t_s == target_dt_s)
    {
        return Ok(traj.clone());
    }

    let t_first = points[0].t_s;
    let t_last = points[points.len() - 1].t_s;
    let with_cum = points.iter().all(|p| p.cum_distance_km.is_some());
    let steps = ((t_last - t_first) / target_dt_s + 1e-9).floor() as usize;

    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| t_first + k as f64 * target_dt_s)
        .collect();
    if *grid.last().expect("non-empty grid") < t_last - 1e-9 {
        grid.push(t_last);
    }

    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0;
    for &t in &grid {
        while j + 2 < points.len() && points[j + 1].t_s <= t {
            j += 1;
        }
        let a = &points[j];
        let b = &points[j + 1];
        let point = if t <= a.t_s {
            TrajectoryPoint { t_s: t, ..*a }
        } else if t >= b.t_s {
            TrajectoryPoint { t_s: t, ..*b }
        } else {
            let w = (t - a.t_s) / (b.t_s - a.t_s);
            TrajectoryPoint {
                t_s: t,
                lat: a.lat + w * (b.lat - a.lat),
                lon: a.lon + w * (b.lon - a.lon),
                speed_kmh: a.speed_kmh + w * (b.speed_kmh - a.speed_kmh),
                cum_distance_km: if with_cum {
                    let da = a.cum_distance_km.expect("checked");
                    let db = b.cum_distance_km.expect("checked");
                    Some(da + w * (db - da))
                } else {
                    None
                },
            }
        };
        out.push(point);
    }
    Ok(Trajectory::new(out)?)
}
