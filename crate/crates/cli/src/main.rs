//! Command-line front end tying the engine together: consumption
//! simulation, synthetic data generation, cost-model calibration, route
//! recommendation, and the evaluation harness.
//!
//! Exit codes: 0 success, 2 input error, 3 no route between the endpoints,
//! 4 calibration failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::NaiveDateTime;
use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phevroute_core::cost_model::{
    calibrate, CalibrationError, CalibrationSample, CostCoefficients, PriceTable,
};
use phevroute_core::ecms::EcmsConfig;
use phevroute_core::eval::{
    default_request_time, generate_corpus, run_experiment, CorpusConfig, ExperimentConfig,
};
use phevroute_core::recommend::{recommend, RecommendContext, RecommendError};
use phevroute_core::roadnet::{load_network, NetworkError};
use phevroute_core::sim::{
    generate_synthetic_trajectory, simulate_with, write_readings_csv, DriveProfile,
};
use phevroute_core::traffic::{interpolate, TrafficConfig, TrafficStore};
use phevroute_core::trajectory::Trajectory;
use phevroute_core::vehicle::{load_vehicle, load_vehicles, total_force, PathFeatures};
use phevroute_core::SocState;

#[derive(Parser)]
#[command(
    name = "phevroute",
    about = "Eco-routing engine for plug-in hybrid vehicles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Urban,
    Arterial,
    Highway,
}

impl From<ProfileArg> for DriveProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Urban => DriveProfile::Urban,
            ProfileArg::Arterial => DriveProfile::Arterial,
            ProfileArg::Highway => DriveProfile::Highway,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate per-second consumption readings for a trajectory.
    Simulate {
        /// Trajectory CSV (t,lat,lon,v_kmh).
        #[arg(long)]
        trajectory: PathBuf,
        /// Vehicle fleet JSON keyed by car number.
        #[arg(long)]
        vehicles: PathBuf,
        #[arg(long)]
        vehicle_id: u32,
        /// ECMS configuration JSON; defaults are built in.
        #[arg(long)]
        ecms: Option<PathBuf>,
        /// Initial battery state of charge.
        #[arg(long)]
        soc0: f64,
        /// Traffic stops along the path.
        #[arg(long, default_value_t = 0)]
        ts: u32,
        /// Neighbouring edges along the path.
        #[arg(long, default_value_t = 0)]
        neighbors: u32,
        /// Points of interest along the path.
        #[arg(long, default_value_t = 0)]
        poi: u32,
        /// Road slope in radians.
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        /// Output readings CSV (t,m_f_gps,p_eng_kw,p_batt_kw,soc).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one synthetic drive cycle as a trajectory CSV.
    Synth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Duration in seconds.
        #[arg(long, default_value_t = 600)]
        duration: u32,
        #[arg(long, value_enum, default_value_t = ProfileArg::Urban)]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a calibration corpus: trajectory CSVs plus features.json.
    SynthCorpus {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of trajectories.
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit cost-model coefficients for one vehicle from a trajectory corpus.
    Calibrate {
        /// Directory of trajectory CSVs with an optional features.json.
        #[arg(long)]
        corpus_dir: PathBuf,
        #[arg(long)]
        vehicles: PathBuf,
        #[arg(long)]
        vehicle_id: u32,
        /// Fraction of trajectories used for training.
        #[arg(long, default_value_t = 0.3)]
        train_fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output coefficients JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional held-out residual report JSON.
        #[arg(long)]
        holdout_out: Option<PathBuf>,
    },
    /// Recommend the cheaper of the shortest and fastest routes.
    Recommend {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        vehicles: PathBuf,
        #[arg(long)]
        vehicle_id: u32,
        /// Calibrated coefficients JSON for this vehicle.
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long)]
        ecms: Option<PathBuf>,
        /// Crowdsensed observation log (JSON lines).
        #[arg(long)]
        traffic_log: Option<PathBuf>,
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
        /// Request time, e.g. 2016-03-01T08:30:00.
        #[arg(long)]
        time: Option<String>,
        #[arg(long)]
        soc0: f64,
        /// Known cost of the actually driven route, for savings reporting.
        #[arg(long)]
        actual_cost: Option<f64>,
        /// Output recommendation JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the evaluation harness on a seeded synthetic corpus.
    Evaluate {
        #[arg(long)]
        vehicles: PathBuf,
        /// Comma-separated car numbers to evaluate.
        #[arg(long, default_value = "1")]
        vehicle_ids: String,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long)]
        ecms: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n_paths: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

enum CliError {
    Input(anyhow::Error),
    NoPath(anyhow::Error),
    Calibration(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::NoPath(_) => 3,
            CliError::Calibration(_) => 4,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Input(e) | CliError::NoPath(e) | CliError::Calibration(e) => e,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

impl From<RecommendError> for CliError {
    fn from(e: RecommendError) -> Self {
        match e {
            RecommendError::Network(NetworkError::NoPath { .. }) => {
                CliError::NoPath(anyhow::Error::new(e))
            }
            other => CliError::Input(anyhow::Error::new(other)),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Calibration(anyhow::Error::new(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn load_ecms(path: &Option<PathBuf>) -> Result<EcmsConfig, CliError> {
    match path {
        Some(p) => {
            EcmsConfig::from_json_file(p).map_err(|e| CliError::Input(anyhow::Error::new(e)))
        }
        None => Ok(EcmsConfig::default()),
    }
}

fn load_prices(path: &Option<PathBuf>) -> Result<PriceTable, CliError> {
    match path {
        Some(p) => {
            PriceTable::from_json_file(p).map_err(|e| CliError::Input(anyhow::Error::new(e)))
        }
        None => Ok(PriceTable::default()),
    }
}

/// Resamples to 1 Hz when the input is coarser; pass-through otherwise.
fn ensure_one_hz(traj: Trajectory, label: &str) -> Result<Trajectory, CliError> {
    if traj.expect_uniform(1.0, 1e-6).is_ok() {
        return Ok(traj);
    }
    eprintln!("note: resampling {label} to 1 s by linear interpolation");
    interpolate(&traj, 1.0).map_err(|e| CliError::Input(anyhow::Error::new(e)))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            trajectory,
            vehicles,
            vehicle_id,
            ecms,
            soc0,
            ts,
            neighbors,
            poi,
            theta,
            out,
        } => {
            let params = load_vehicle(&vehicles, vehicle_id)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let cfg = load_ecms(&ecms)?;
            let traj = Trajectory::from_csv_file(&trajectory)
                .with_context(|| format!("reading {}", trajectory.display()))?;
            let traj = ensure_one_hz(traj, "trajectory")?;
            let feats = PathFeatures::new(ts, neighbors, poi);
            let state = SocState::from_initial_soc(soc0, &cfg)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let readings = simulate_with(&traj, &feats, theta, &params, &cfg, state)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            write_readings_csv(&readings, &out).context("writing readings")?;
            println!(
                "simulated {} s: gasoline {:.2} g ({:.4} L), battery {:.4} kWh, final soc {:.4}, clipped {}",
                readings.samples.len(),
                readings.gasoline_g,
                readings.gasoline_liters(&params),
                readings.battery_kwh,
                readings.final_state.soc,
                readings.clipped_samples
            );
            Ok(())
        }
        Command::Synth {
            seed,
            duration,
            profile,
            out,
        } => {
            let traj = generate_synthetic_trajectory(seed, duration, profile.into());
            traj.to_csv_file(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} points, {:.3} km",
                traj.len(),
                traj.cumulative_distance_km()
            );
            Ok(())
        }
        Command::SynthCorpus {
            seed,
            count,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir).context("creating corpus directory")?;
            let profiles = [DriveProfile::Urban, DriveProfile::Arterial, DriveProfile::Highway];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut features = BTreeMap::new();
            for i in 0..count {
                let name = format!("traj_{i:04}.csv");
                let duration = rng.random_range(300..900);
                let traj = generate_synthetic_trajectory(
                    seed.wrapping_add(i as u64),
                    duration,
                    profiles[i % profiles.len()],
                );
                traj.to_csv_file(&out_dir.join(&name))
                    .with_context(|| format!("writing {name}"))?;
                features.insert(
                    name,
                    CorpusFeatures {
                        ts: rng.random_range(0..=3),
                        n: rng.random_range(0..=3),
                        poi: rng.random_range(0..=3),
                        theta: 0.0,
                    },
                );
            }
            fs::write(
                out_dir.join("features.json"),
                serde_json::to_string_pretty(&features).context("serializing features")?,
            )
            .context("writing features.json")?;
            println!("wrote {count} trajectories to {}", out_dir.display());
            Ok(())
        }
        Command::Calibrate {
            corpus_dir,
            vehicles,
            vehicle_id,
            train_fraction,
            seed,
            out,
            holdout_out,
        } => cmd_calibrate(
            &corpus_dir,
            &vehicles,
            vehicle_id,
            train_fraction,
            seed,
            &out,
            holdout_out.as_deref(),
        ),
        Command::Recommend {
            network,
            vehicles,
            vehicle_id,
            coeffs,
            prices,
            ecms,
            traffic_log,
            from,
            to,
            time,
            soc0,
            actual_cost,
            out,
        } => {
            let net = load_network(&network)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let params = load_vehicle(&vehicles, vehicle_id)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let coeffs = CostCoefficients::from_json_file(&coeffs)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let prices = load_prices(&prices)?;
            let ecms = load_ecms(&ecms)?;
            let store = TrafficStore::new();
            if let Some(log) = traffic_log {
                let n = store
                    .load_jsonl(&log)
                    .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
                eprintln!("loaded {n} observations from {}", log.display());
            }
            let t0 = match time {
                Some(text) => NaiveDateTime::parse_from_str(&text, "%Y-%m-%dT%H:%M:%S")
                    .map_err(|e| CliError::Input(anyhow!("bad --time value: {e}")))?,
                None => default_request_time(),
            };
            let traffic_cfg = TrafficConfig::default();
            let ctx = RecommendContext {
                net: &net,
                store: &store,
                traffic_cfg: &traffic_cfg,
                ecms_cfg: &ecms,
                params: &params,
                coeffs: &coeffs,
                prices: &prices,
            };
            let rec = recommend(&ctx, from, to, t0, soc0, actual_cost)?;
            let chosen = rec.chosen_report();
            println!(
                "shortest {:?} = {:.4} CNY over {:.2} km; fastest {:?} = {:.4} CNY over {:.2} km",
                rec.shortest.edges,
                rec.shortest.cost.total_cny,
                rec.shortest.total_length_km,
                rec.fastest.edges,
                rec.fastest.cost.total_cny,
                rec.fastest.total_length_km,
            );
            println!(
                "recommended: {:?} route, {:.4} CNY (candidate saving {:.1} %{})",
                rec.chosen,
                chosen.cost.total_cny,
                rec.candidate_saving_pct,
                rec.saving_vs_actual_pct
                    .map(|s| format!(", saving vs actual {s:.1} %"))
                    .unwrap_or_default()
            );
            if let Some(out) = out {
                fs::write(
                    &out,
                    serde_json::to_string_pretty(&rec).context("serializing recommendation")?,
                )
                .with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(())
        }
        Command::Evaluate {
            vehicles,
            vehicle_ids,
            prices,
            ecms,
            seed,
            n_paths,
            out_dir,
        } => {
            let fleet = load_vehicles(&vehicles)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let ids: Vec<u32> = vehicle_ids
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Input(anyhow!("bad --vehicle-ids: {e}")))?;
            let prices = load_prices(&prices)?;
            let ecms = load_ecms(&ecms)?;
            let corpus = generate_corpus(&CorpusConfig {
                seed,
                n_paths,
                ..CorpusConfig::default()
            })
            .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            let exp = ExperimentConfig {
                primary_vehicle: ids[0],
                ..ExperimentConfig::default()
            };
            let report = run_experiment(
                &corpus,
                &fleet,
                &ids,
                &ecms,
                &prices,
                &TrafficConfig::default(),
                &exp,
            )
            .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            report
                .write_files(&out_dir)
                .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
            for row in &report.error_by_length {
                if row.vehicle_id == ids[0] {
                    println!(
                        "vehicle {} soc {:.2} bin [{:>2}, {:>2}) km: mape {:6.2} % over {} paths",
                        row.vehicle_id,
                        row.soc0,
                        row.bin_lo_km,
                        row.bin_hi_km,
                        row.mape_pct,
                        row.n_paths
                    );
                }
            }
            println!("report written to {}", out_dir.display());
            Ok(())
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize, Clone, Copy, Default)]
#[serde(default)]
struct CorpusFeatures {
    ts: u32,
    n: u32,
    poi: u32,
    theta: f64,
}

fn cmd_calibrate(
    corpus_dir: &Path,
    vehicles: &Path,
    vehicle_id: u32,
    train_fraction: f64,
    seed: u64,
    out: &Path,
    holdout_out: Option<&Path>,
) -> Result<(), CliError> {
    if !(0.0 < train_fraction && train_fraction <= 1.0) {
        return Err(CliError::Input(anyhow!(
            "--train-fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let params =
        load_vehicle(vehicles, vehicle_id).map_err(|e| CliError::Input(anyhow::Error::new(e)))?;

    let mut files: Vec<PathBuf> = fs::read_dir(corpus_dir)
        .with_context(|| format!("reading {}", corpus_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(anyhow!(
            "no trajectory CSVs in {}",
            corpus_dir.display()
        )));
    }

    let features: BTreeMap<String, CorpusFeatures> = {
        let path = corpus_dir.join("features.json");
        if path.exists() {
            serde_json::from_str(&fs::read_to_string(&path).context("reading features.json")?)
                .context("parsing features.json")?
        } else {
            eprintln!("note: no features.json, assuming zero feature counts");
            BTreeMap::new()
        }
    };

    // Deterministic train/test split over whole trajectories.
    let mut order: Vec<usize> = (0..files.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((files.len() as f64) * train_fraction).ceil().max(1.0) as usize;

    let mut train_samples = Vec::new();
    let mut test_samples = Vec::new();
    for (rank, &idx) in order.iter().enumerate() {
        let path = &files[idx];
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let feats_entry = features.get(&name).copied().unwrap_or_default();
        let feats = PathFeatures::new(feats_entry.ts, feats_entry.n, feats_entry.poi);
        let traj = Trajectory::from_csv_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let traj = ensure_one_hz(traj, &name)?;
        if traj.len() < 2 {
            continue;
        }
        let speeds = traj.speeds_ms();
        let sink = if rank < n_train {
            &mut train_samples
        } else {
            &mut test_samples
        };
        for i in 0..speeds.len() - 1 {
            let v = speeds[i];
            let dv = speeds[i + 1] - speeds[i];
            let force = total_force(v, dv, feats_entry.theta, &feats, &params);
            sink.push(CalibrationSample {
                v_ms: v,
                dv_ms: dv,
                features: feats,
                q_kw: force * v / 1000.0,
            });
        }
    }

    let coeffs = calibrate(&train_samples)?;
    coeffs
        .to_json_file(out)
        .map_err(|e| CliError::Input(anyhow::Error::new(e)))?;
    println!(
        "calibrated vehicle {vehicle_id} on {} samples: k = {:?}, training rms {:.4} kW",
        coeffs.n_training_samples,
        coeffs.k(),
        coeffs.residual_rms_kw
    );

    if test_samples.is_empty() {
        eprintln!("warning: train fraction {train_fraction} leaves no held-out trajectories");
    } else {
        let sse: f64 = test_samples
            .iter()
            .map(|s| {
                let pred = phevroute_core::power_demand(s.v_ms, s.dv_ms, &s.features, &coeffs);
                (pred - s.q_kw).powi(2)
            })
            .sum();
        let holdout_rms = (sse / test_samples.len() as f64).sqrt();
        println!(
            "held-out residual rms {:.4} kW over {} samples",
            holdout_rms,
            test_samples.len()
        );
        if let Some(path) = holdout_out {
            let report = serde_json::json!({
                "vehicle_id": vehicle_id,
                "holdout_residual_rms_kw": holdout_rms,
                "n_holdout_samples": test_samples.len(),
                "n_training_samples": coeffs.n_training_samples,
            });
            fs::write(path, serde_json::to_string_pretty(&report).context("serializing")?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}
