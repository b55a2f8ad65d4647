//! Time-ordered GPS trajectories.
//!
//! Wire format keeps speed in km/h as sampled by the vehicle; everything
//! downstream converts to m/s exactly once through [`Trajectory::speeds_ms`].
//!
//! A trajectory of `n` points covers `n − 1` one-second integration
//! intervals once resampled; segment boundaries share their cut point, so
//! per-edge runs compose exactly into the whole-trip run.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KMH_PER_MS: f64 = 3.6;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory is empty")]
    Empty,
    #[error("trajectory needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("timestamps not strictly increasing at point {index}")]
    NonMonotonicTime { index: usize },
    #[error("negative speed at point {index}")]
    NegativeSpeed { index: usize },
    #[error("expected uniform {expected_dt_s} s sampling, found {found_dt_s} s at point {index}")]
    NonUniformSpacing {
        expected_dt_s: f64,
        found_dt_s: f64,
        index: usize,
    },
    #[error("segments do not share a boundary point (t {left} vs {right})")]
    DisjointSegments { left: f64, right: f64 },
    #[error("cannot read trajectory: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t_s: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed_kmh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cum_distance_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self, TrajectoryError> {
        if points.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for i in 0..points.len() {
            if points[i].speed_kmh < 0.0 {
                return Err(TrajectoryError::NegativeSpeed { index: i });
            }
            if i > 0 && points[i].t_s <= points[i - 1].t_s {
                return Err(TrajectoryError::NonMonotonicTime { index: i });
            }
        }
        Ok(Trajectory { points })
    }

    /// Builds a 1 Hz trajectory from a speed sequence in km/h, integrating
    /// positions along a fixed heading from the origin.
    pub fn from_speeds_kmh(speeds: &[f64]) -> Result<Self, TrajectoryError> {
        Self::from_speeds_kmh_at(speeds, 39.90, 116.40, 0.0)
    }

    pub fn from_speeds_kmh_at(
        speeds: &[f64],
        lat0: f64,
        lon0: f64,
        bearing_rad: f64,
    ) -> Result<Self, TrajectoryError> {
        const KM_PER_DEG: f64 = 111.32;
        let mut points = Vec::with_capacity(speeds.len());
        let mut cum_km = 0.0;
        for (i, &v) in speeds.iter().enumerate() {
            if i > 0 {
                // Trapezoidal distance over the preceding one-second interval.
                cum_km += (speeds[i - 1] + v) / 2.0 / KMH_PER_MS / 1000.0;
            }
            points.push(TrajectoryPoint {
                t_s: i as f64,
                lat: lat0 + cum_km * bearing_rad.cos() / KM_PER_DEG,
                lon: lon0 + cum_km * bearing_rad.sin() / (KM_PER_DEG * lat0.to_radians().cos()),
                speed_kmh: v,
                cum_distance_km: Some(cum_km),
            });
        }
        Trajectory::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t_s - a.t_s,
            _ => 0.0,
        }
    }

    /// Speeds converted to m/s; the single km/h conversion point.
    pub fn speeds_ms(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.speed_kmh / KMH_PER_MS).collect()
    }

    /// Checks uniform sampling at `dt_s` within `tol_s`.
    pub fn expect_uniform(&self, dt_s: f64, tol_s: f64) -> Result<(), TrajectoryError> {
        for i in 1..self.points.len() {
            let found = self.points[i].t_s - self.points[i - 1].t_s;
            if (found - dt_s).abs() > tol_s {
                return Err(TrajectoryError::NonUniformSpacing {
                    expected_dt_s: dt_s,
                    found_dt_s: found,
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Cumulative travel distance in km: the recorded odometer when present,
    /// otherwise the trapezoidal integral of speed.
    pub fn cumulative_distance_km(&self) -> f64 {
        if let (Some(first), Some(last)) = (self.points.first(), self.points.last()) {
            if let (Some(d0), Some(d1)) = (first.cum_distance_km, last.cum_distance_km) {
                return d1 - d0;
            }
        }
        let mut cum = 0.0;
        for w in self.points.windows(2) {
            let dt = w[1].t_s - w[0].t_s;
            cum += (w[0].speed_kmh + w[1].speed_kmh) / 2.0 / KMH_PER_MS * dt / 1000.0;
        }
        cum
    }

    /// Splits after point `index`, which becomes the shared boundary point
    /// of both halves.
    pub fn split_at(&self, index: usize) -> Result<(Trajectory, Trajectory), TrajectoryError> {
        if index == 0 || index + 1 >= self.points.len() {
            return Err(TrajectoryError::TooFewPoints {
                needed: index + 2,
                got: self.points.len(),
            });
        }
        let left = Trajectory {
            points: self.points[..=index].to_vec(),
        };
        let right = Trajectory {
            points: self.points[index..].to_vec(),
        };
        Ok((left, right))
    }

    /// Joins segments that share boundary points: the first point of each
    /// subsequent segment is treated as coincident with the running last
    /// point and dropped after time-shifting.
    pub fn concat(segments: &[Trajectory]) -> Result<Trajectory, TrajectoryError> {
        let first = segments.first().ok_or(TrajectoryError::Empty)?;
        let mut points = first.points.clone();
        for seg in &segments[1..] {
            if seg.points.is_empty() {
                return Err(TrajectoryError::Empty);
            }
            let last = *points.last().ok_or(TrajectoryError::Empty)?;
            let boundary = seg.points[0];
            if (boundary.speed_kmh - last.speed_kmh).abs() > 1e-9 {
                return Err(TrajectoryError::DisjointSegments {
                    left: last.t_s,
                    right: boundary.t_s,
                });
            }
            let t_shift = last.t_s - boundary.t_s;
            let d_shift = match (last.cum_distance_km, boundary.cum_distance_km) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            };
            for p in &seg.points[1..] {
                points.push(TrajectoryPoint {
                    t_s: p.t_s + t_shift,
                    lat: p.lat,
                    lon: p.lon,
                    speed_kmh: p.speed_kmh,
                    cum_distance_km: match (p.cum_distance_km, d_shift) {
                        (Some(d), Some(s)) => Some(d + s),
                        _ => None,
                    },
                });
            }
        }
        Trajectory::new(points)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, TrajectoryError> {
        let file = File::open(path)?;
        Self::from_csv_reader(BufReader::new(file))
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, TrajectoryError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let has_cum = headers.iter().any(|h| h == "cum_km");
        let mut points = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let field = |i: usize| -> Result<f64, TrajectoryError> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        TrajectoryError::Csv(csv::Error::from(std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("bad field {i} in record {record:?}"),
                        )))
                    })
            };
            points.push(TrajectoryPoint {
                t_s: field(0)?,
                lat: field(1)?,
                lon: field(2)?,
                speed_kmh: field(3)?,
                cum_distance_km: if has_cum { Some(field(4)?) } else { None },
            });
        }
        Trajectory::new(points)
    }

    pub fn to_csv_file(&self, path: &Path) -> Result<(), TrajectoryError> {
        let file = File::create(path)?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TrajectoryError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let with_cum = self.points.iter().all(|p| p.cum_distance_km.is_some());
        if with_cum {
            wtr.write_record(["t", "lat", "lon", "v_kmh", "cum_km"])?;
        } else {
            wtr.write_record(["t", "lat", "lon", "v_kmh"])?;
        }
        for p in &self.points {
            let mut fields = vec![
                p.t_s.to_string(),
                p.lat.to_string(),
                p.lon.to_string(),
                p.speed_kmh.to_string(),
            ];
            if with_cum {
                fields.push(p.cum_distance_km.unwrap_or(0.0).to_string());
            }
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
