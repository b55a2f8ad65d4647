//! Per-second consumption simulation.
//!
//! Drives the force model and the power split along a recorded speed
//! profile and emits gasoline and electricity readings. The simulation is
//! kinematic: it follows the recorded speeds exactly instead of closing a
//! driver loop, so the readings are a pure function of the trajectory.
//!
//! A trajectory of `n` points yields `n − 1` one-second samples; sample `i`
//! uses the forward speed difference into point `i + 1`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecms::{engine_fuel_rate_g_s, step_soc, EcmsConfig, EcmsError, SocState, SplitSolver};
use crate::trajectory::{Trajectory, TrajectoryError};
use crate::vehicle::{total_force, PathFeatures, VehicleParams};

const DT_S: f64 = 1.0;
const SPACING_TOL_S: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Ecms(#[from] EcmsError),
}

/// One integrated second of the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleReading {
    pub t_s: f64,
    pub fuel_rate_g_s: f64,
    pub p_eng_kw: f64,
    pub p_batt_kw: f64,
    /// State of charge at the end of the sample.
    pub soc: f64,
}

/// Full readings of one simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionReadings {
    pub samples: Vec<SampleReading>,
    pub gasoline_g: f64,
    /// Net battery energy drawn over the trip; negative means the pack
    /// gained charge.
    pub battery_kwh: f64,
    pub final_state: SocState,
    /// Samples whose demand exceeded the combined engine and battery limit.
    pub clipped_samples: usize,
    /// Demand beyond the limit on clipped samples, in kWh.
    pub unmet_energy_kwh: f64,
    /// Regeneration beyond the charge limit, lost to friction braking.
    pub discarded_regen_kwh: f64,
}

impl ConsumptionReadings {
    pub fn gasoline_liters(&self, params: &VehicleParams) -> f64 {
        self.gasoline_g / params.fuel_density_g_per_l
    }
}

/// Simulates a trajectory with no path features on a level road.
pub fn simulate(
    traj: &Trajectory,
    params: &VehicleParams,
    cfg: &EcmsConfig,
    soc0: f64,
) -> Result<ConsumptionReadings, SimError> {
    let state = SocState::from_initial_soc(soc0, cfg)?;
    simulate_with(traj, &PathFeatures::default(), 0.0, params, cfg, state)
}

/// Simulates a trajectory on an edge with known features and slope,
/// continuing from an existing powertrain state.
pub fn simulate_with(
    traj: &Trajectory,
    feats: &PathFeatures,
    theta_rad: f64,
    params: &VehicleParams,
    cfg: &EcmsConfig,
    initial: SocState,
) -> Result<ConsumptionReadings, SimError> {
    if traj.len() < 2 {
        return Err(TrajectoryError::TooFewPoints {
            needed: 2,
            got: traj.len(),
        }
        .into());
    }
    traj.expect_uniform(DT_S, SPACING_TOL_S)?;

    let solver = SplitSolver::new(cfg, params)?;
    let speeds = traj.speeds_ms();
    let q_max = cfg.p_eng_max_kw + cfg.p_batt_discharge_max_kw;

    let mut state = initial;
    let mut samples = Vec::with_capacity(speeds.len() - 1);
    let mut gasoline_g = 0.0;
    let mut battery_kwh = 0.0;
    let mut clipped_samples = 0;
    let mut unmet_energy_kwh = 0.0;
    let mut discarded_regen_kwh = 0.0;

    for i in 0..speeds.len() - 1 {
        let v = speeds[i];
        let dv = speeds[i + 1] - speeds[i];
        let accel = dv / DT_S;
        let force_n = total_force(v, accel, theta_rad, feats, params);
        let demand_kw = force_n * v / 1000.0;

        let applied_kw = if demand_kw > q_max {
            clipped_samples += 1;
            unmet_energy_kwh += (demand_kw - q_max) * DT_S / 3600.0;
            q_max
        } else {
            demand_kw
        };

        let split = solver.split(applied_kw, &state)?;
        if applied_kw < 0.0 {
            discarded_regen_kwh += (split.p_batt_kw - applied_kw) * DT_S / 3600.0;
        }
        let fuel_rate = engine_fuel_rate_g_s(split.p_eng_kw, params)?;

        gasoline_g += fuel_rate * DT_S;
        battery_kwh += split.p_batt_kw * DT_S / 3600.0;
        state = step_soc(&state, &split, DT_S, cfg, params);
        samples.push(SampleReading {
            t_s: traj.points[i].t_s,
            fuel_rate_g_s: fuel_rate,
            p_eng_kw: split.p_eng_kw,
            p_batt_kw: split.p_batt_kw,
            soc: state.soc,
        });
    }

    Ok(ConsumptionReadings {
        samples,
        gasoline_g,
        battery_kwh,
        final_state: state,
        clipped_samples,
        unmet_energy_kwh,
        discarded_regen_kwh,
    })
}

pub fn write_readings_csv(readings: &ConsumptionReadings, path: &Path) -> Result<(), std::io::Error> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,m_f_gps,p_eng_kw,p_batt_kw,soc")?;
    for s in &readings.samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.t_s, s.fuel_rate_g_s, s.p_eng_kw, s.p_batt_kw, s.soc
        )?;
    }
    out.flush()
}

/// Driving condition archetypes for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveProfile {
    Urban,
    Arterial,
    Highway,
}

impl std::str::FromStr for DriveProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "urban" => Ok(DriveProfile::Urban),
            "arterial" => Ok(DriveProfile::Arterial),
            "highway" => Ok(DriveProfile::Highway),
            other => Err(format!("unknown profile '{other}'")),
        }
    }
}

struct ProfileSpec {
    cruise_lo: f64,
    cruise_hi: f64,
    accel: f64,
    decel: f64,
    jitter: f64,
    cruise_lo_s: u32,
    cruise_hi_s: u32,
    stop_prob: f64,
    dwell_lo_s: u32,
    dwell_hi_s: u32,
    /// Force a stop whenever this much time passed without one.
    forced_stop_gap_s: Option<u32>,
}

impl DriveProfile {
    fn spec(self) -> ProfileSpec {
        match self {
            DriveProfile::Urban => ProfileSpec {
                cruise_lo: 6.0,
                cruise_hi: 12.0,
                accel: 0.9,
                decel: 0.9,
                jitter: 0.35,
                cruise_lo_s: 15,
                cruise_hi_s: 45,
                stop_prob: 0.7,
                dwell_lo_s: 4,
                dwell_hi_s: 15,
                forced_stop_gap_s: Some(150),
            },
            DriveProfile::Arterial => ProfileSpec {
                cruise_lo: 11.0,
                cruise_hi: 17.0,
                accel: 0.6,
                decel: 0.6,
                jitter: 0.3,
                cruise_lo_s: 25,
                cruise_hi_s: 70,
                stop_prob: 0.25,
                dwell_lo_s: 3,
                dwell_hi_s: 8,
                forced_stop_gap_s: None,
            },
            DriveProfile::Highway => ProfileSpec {
                cruise_lo: 23.0,
                cruise_hi: 31.0,
                accel: 0.35,
                decel: 0.35,
                jitter: 0.25,
                cruise_lo_s: 40,
                cruise_hi_s: 90,
                stop_prob: 0.0,
                dwell_lo_s: 0,
                dwell_hi_s: 0,
                forced_stop_gap_s: None,
            },
        }
    }
}

enum Phase {
    Accel { target: f64 },
    Cruise { target: f64, remaining: u32 },
    Decel { target: f64 },
    Dwell { remaining: u32 },
}

/// Generates a deterministic 1 Hz speed profile of `duration_s` seconds
/// (`duration_s + 1` points). Speeds stay within [0, 33] m/s and
/// second-to-second accelerations within ±3 m/s².
pub fn generate_synthetic_trajectory(
    seed: u64,
    duration_s: u32,
    profile: DriveProfile,
) -> Trajectory {
    let spec = profile.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = duration_s as usize + 1;

    let mut speeds = Vec::with_capacity(n);
    let mut v: f64 = 0.0;
    let mut since_stop: u32 = 0;
    let mut phase = Phase::Accel {
        target: rng.random_range(spec.cruise_lo..spec.cruise_hi),
    };
    speeds.push(v);

    while speeds.len() < n {
        match phase {
            Phase::Accel { target } => {
                v = (v + spec.accel).min(target);
                if v >= target - 1e-9 {
                    phase = Phase::Cruise {
                        target,
                        remaining: rng.random_range(spec.cruise_lo_s..=spec.cruise_hi_s),
                    };
                }
            }
            Phase::Cruise { target, remaining } => {
                let jitter = rng.random_range(-spec.jitter..spec.jitter);
                let drift = (target - v).clamp(-spec.decel, spec.accel);
                v = (v + drift + jitter).max(0.3);
                if remaining == 0 {
                    let forced = spec
                        .forced_stop_gap_s
                        .is_some_and(|gap| since_stop >= gap);
                    if forced || rng.random_bool(spec.stop_prob) {
                        phase = Phase::Decel { target: 0.0 };
                    } else {
                        // Change pace instead of stopping.
                        let next = rng.random_range(spec.cruise_lo..spec.cruise_hi);
                        phase = if next > v {
                            Phase::Accel { target: next }
                        } else {
                            Phase::Decel { target: next }
                        };
                    }
                } else {
                    phase = Phase::Cruise {
                        target,
                        remaining: remaining - 1,
                    };
                }
            }
            Phase::Decel { target } => {
                v = (v - spec.decel).max(target);
                if v <= target + 1e-9 {
                    phase = if target <= 0.0 {
                        v = 0.0;
                        since_stop = 0;
                        Phase::Dwell {
                            remaining: rng.random_range(spec.dwell_lo_s..=spec.dwell_hi_s),
                        }
                    } else {
                        Phase::Cruise {
                            target,
                            remaining: rng.random_range(spec.cruise_lo_s..=spec.cruise_hi_s),
                        }
                    };
                }
            }
            Phase::Dwell { remaining } => {
                v = 0.0;
                phase = if remaining == 0 {
                    Phase::Accel {
                        target: rng.random_range(spec.cruise_lo..spec.cruise_hi),
                    }
                } else {
                    Phase::Dwell {
                        remaining: remaining - 1,
                    }
                };
            }
        }
        v = v.clamp(0.0, 33.0);
        since_stop += 1;
        speeds.push(v);
    }

    let speeds_kmh: Vec<f64> = speeds.iter().map(|s| s * 3.6).collect();
    let lat0 = 39.80 + rng.random_range(0.0..0.2);
    let lon0 = 116.20 + rng.random_range(0.0..0.4);
    let bearing = rng.random_range(0.0..std::f64::consts::TAU);
    Trajectory::from_speeds_kmh_at(&speeds_kmh, lat0, lon0, bearing)
        .expect("generated speeds are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::sonata;

    #[test]
    fn zero_speed_trajectory_consumes_nothing() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let traj = Trajectory::from_speeds_kmh(&[0.0; 61]).unwrap();
        let readings = simulate(&traj, &params, &cfg, 0.7).unwrap();
        assert_eq!(readings.gasoline_g, 0.0);
        assert_eq!(readings.battery_kwh, 0.0);
        assert_eq!(readings.final_state.soc, 0.7);
        assert_eq!(readings.samples.len(), 60);
    }

    #[test]
    fn deep_depletion_cruise_runs_on_battery_alone() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let traj = Trajectory::from_speeds_kmh(&[36.0; 101]).unwrap();
        let readings = simulate(&traj, &params, &cfg, 0.8).unwrap();
        let q_kw = total_force(10.0, 0.0, 0.0, &PathFeatures::default(), &params) * 10.0 / 1000.0;
        assert_eq!(readings.gasoline_g, 0.0);
        assert!((readings.battery_kwh - q_kw * 100.0 / 3600.0).abs() < 1e-12);
        assert_eq!(readings.clipped_samples, 0);
    }

    #[test]
    fn sustaining_start_burns_gasoline_on_the_same_cruise() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let traj = Trajectory::from_speeds_kmh(&[36.0; 101]).unwrap();
        let readings = simulate(&traj, &params, &cfg, 0.30).unwrap();
        assert!(readings.gasoline_g > 0.0);
    }

    #[test]
    fn totals_match_sample_sums() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let traj = generate_synthetic_trajectory(4, 400, DriveProfile::Urban);
        let readings = simulate(&traj, &params, &cfg, 0.45).unwrap();
        let fuel: f64 = readings.samples.iter().map(|s| s.fuel_rate_g_s).sum();
        let batt: f64 = readings.samples.iter().map(|s| s.p_batt_kw / 3600.0).sum();
        assert!((fuel - readings.gasoline_g).abs() < 1e-9);
        assert!((batt - readings.battery_kwh).abs() < 1e-9);
        assert!(readings.gasoline_g >= 0.0);
    }

    #[test]
    fn tractive_energy_bookkeeping_balances() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        for seed in [1, 2, 3] {
            let traj = generate_synthetic_trajectory(seed, 500, DriveProfile::Urban);
            let readings = simulate(&traj, &params, &cfg, 0.5).unwrap();
            let speeds = traj.speeds_ms();
            let mut positive_demand_kwh = 0.0;
            let mut delivered_kwh = 0.0;
            for i in 0..speeds.len() - 1 {
                let dv = speeds[i + 1] - speeds[i];
                let q = total_force(speeds[i], dv, 0.0, &PathFeatures::default(), &params)
                    * speeds[i]
                    / 1000.0;
                if q > 0.0 {
                    positive_demand_kwh += q / 3600.0;
                    let s = readings.samples[i];
                    delivered_kwh += (s.p_eng_kw + s.p_batt_kw) / 3600.0;
                }
            }
            let balance = delivered_kwh + readings.unmet_energy_kwh;
            assert!(
                ((positive_demand_kwh - balance) / positive_demand_kwh.max(1e-9)).abs() < 1e-6,
                "seed {seed}: demand {positive_demand_kwh} vs delivered {balance}"
            );
        }
    }

    #[test]
    fn soc_stays_in_unit_interval_and_sustains_inside_band() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let traj = generate_synthetic_trajectory(8, 900, DriveProfile::Arterial);
        let readings = simulate(&traj, &params, &cfg, 0.34).unwrap();
        assert_eq!(readings.clipped_samples, 0);
        let floor = cfg.soc_cs_threshold - cfg.soc_cs_band;
        let ceiling = cfg.soc_cs_threshold + cfg.soc_cs_band;
        let mut was_cs = false;
        for s in &readings.samples {
            assert!((0.0..=1.0).contains(&s.soc));
            // Once sustaining is entered, discharge past the engine limit is
            // the only way below the band.
            if was_cs && s.p_eng_kw < cfg.p_eng_max_kw - 1e-9 {
                assert!(
                    s.soc >= floor - 1e-9 && s.soc <= ceiling + 1e-9 || s.soc > ceiling,
                    "soc {} left the sustain band without an assist",
                    s.soc
                );
            }
            was_cs = s.soc <= ceiling;
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let traj = generate_synthetic_trajectory(21, 300, DriveProfile::Urban);
        let a = simulate(&traj, &params, &cfg, 0.6).unwrap();
        let b = simulate(&traj, &params, &cfg, 0.6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gasoline_non_increasing_in_initial_soc() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        for seed in 0..10 {
            let traj = generate_synthetic_trajectory(seed, 420, DriveProfile::Urban);
            let mut prev = f64::INFINITY;
            for step in 0..20 {
                let soc0 = 0.05 + 0.045 * f64::from(step);
                let readings = simulate(&traj, &params, &cfg, soc0).unwrap();
                assert!(
                    readings.gasoline_g <= prev + 1e-9,
                    "seed {seed}: gasoline rose from {prev} at soc0 {soc0}"
                );
                prev = readings.gasoline_g;
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic_trajectory(42, 600, DriveProfile::Urban);
        let b = generate_synthetic_trajectory(42, 600, DriveProfile::Urban);
        assert_eq!(a, b);
    }

    #[test]
    fn urban_profile_stops_at_least_once_per_300_s() {
        for seed in [0, 7, 13, 42, 99] {
            let traj = generate_synthetic_trajectory(seed, 1200, DriveProfile::Urban);
            for (w, chunk) in traj.points.chunks(300).enumerate() {
                if chunk.len() < 300 {
                    continue;
                }
                assert!(
                    chunk.iter().any(|p| p.speed_kmh == 0.0),
                    "seed {seed}: no stop in window {w}"
                );
            }
        }
    }

    #[test]
    fn highway_is_faster_than_urban_on_average() {
        for seed in [1, 5, 23] {
            let urban = generate_synthetic_trajectory(seed, 900, DriveProfile::Urban);
            let highway = generate_synthetic_trajectory(seed, 900, DriveProfile::Highway);
            let mean = |t: &Trajectory| {
                t.points.iter().map(|p| p.speed_kmh).sum::<f64>() / t.len() as f64
            };
            assert!(mean(&highway) > mean(&urban));
        }
    }

    #[test]
    fn generated_kinematics_stay_in_bounds() {
        for profile in [DriveProfile::Urban, DriveProfile::Arterial, DriveProfile::Highway] {
            let traj = generate_synthetic_trajectory(3, 800, profile);
            let speeds = traj.speeds_ms();
            for w in speeds.windows(2) {
                assert!((0.0..=33.0).contains(&w[0]));
                assert!((w[1] - w[0]).abs() <= 3.0 + 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_uniform_sampling() {
        let params = sonata();
        let cfg = EcmsConfig::default();
        let mut traj = Trajectory::from_speeds_kmh(&[10.0, 10.0, 10.0]).unwrap();
        traj.points[2].t_s = 4.0;
        assert!(matches!(
            simulate(&traj, &params, &cfg, 0.5),
            Err(SimError::Trajectory(TrajectoryError::NonUniformSpacing { .. }))
        ));
    }
}
