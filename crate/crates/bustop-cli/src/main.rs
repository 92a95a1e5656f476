//! `bustop` — multi-command front end for the stay-location pipeline:
//! synth → ingest-check → cluster → featurize → train → eval/ablate →
//! predict → eta / eta-table → report.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bustop_core::eta::{
    daywise_error, eta_error_table, fit_stay_profile, predict_arrival, ChainStop, RouteChain,
    StayProfile,
};
use bustop_core::features::{build_feature_vector, FeatureVector, MfccConfig};
use bustop_core::learner::{
    ablate_feature_groups, cross_validate, predict_stay_types, train_bustop, BuStopModel,
    CvReport, DataRow, Dataset, ForestParams,
};
use bustop_core::mapenc::TileStore;
use bustop_core::report::{pilot_statistics, to_csv as report_csv};
use bustop_core::staypoint::{
    assign_marks, cluster_stays, extract_zero_speed, ClusterParams, StayLocation,
};
use bustop_core::synth::{gen_bundle, SynthConfig};
use bustop_core::trace::{parse_trip, reorient_imu, validate_trace, StayType, TripTrace};

/// Resolved pipeline constants. Defaults match the published values; a JSON
/// config file overrides defaults, explicit flags override both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    chi: f64,
    rho: f64,
    n_trees: usize,
    max_depth: usize,
    selector_estimators: usize,
    speed_mps: f64,
    zoom: u32,
    box_m: f64,
    seed: u64,
    utc_offset_min: i32,
    folds: usize,
    repeats: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            chi: 3.0,
            rho: 30.0,
            n_trees: 100,
            max_depth: 8,
            selector_estimators: 250,
            speed_mps: 17.0,
            zoom: 18,
            box_m: 300.0,
            seed: 7,
            utc_offset_min: 330,
            folds: 5,
            repeats: 10,
        }
    }
}

impl PipelineConfig {
    fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            chi: self.chi,
            rho: self.rho,
        }
    }

    fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            seed: self.seed,
            ..ForestParams::default()
        }
    }

    /// Slack when aligning ground-truth marks to stays: the time the bus
    /// needs to cross the cluster radius at the zero-speed threshold.
    fn mark_slack_s(&self) -> f64 {
        self.rho / self.chi
    }
}

/// Flags shared by every subcommand, overriding config-file values.
#[derive(Debug, Args)]
struct Overrides {
    /// JSON config file with PipelineConfig fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and continue.
    #[arg(long, global = true)]
    print_config: bool,
    /// Base seed (also via BUSTOP_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Zero-speed threshold, m/s.
    #[arg(long, global = true)]
    chi: Option<f64>,
    /// Cluster radius, meters.
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Cruise speed for arrival prediction, m/s.
    #[arg(long, global = true)]
    speed: Option<f64>,
    /// Local offset from UTC, minutes.
    #[arg(long, global = true)]
    utc_offset: Option<i32>,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let body = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&body)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Ok(seed) = std::env::var("BUSTOP_SEED") {
            cfg.seed = seed
                .parse()
                .context("BUSTOP_SEED must be an unsigned 64-bit integer")?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.chi {
            cfg.chi = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.speed {
            cfg.speed_mps = v;
        }
        if let Some(v) = self.utc_offset {
            cfg.utc_offset_min = v;
        }
        if self.print_config {
            println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
        }
        Ok(cfg)
    }
}

#[derive(Parser)]
#[command(name = "bustop", version, about = "Bus stay-location characterization pipeline")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle (trips + tiles + manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Stay instances per type across all trips.
        #[arg(long, default_value_t = 100)]
        stays_per_type: usize,
        #[arg(long, default_value_t = 20)]
        trips: usize,
        /// Enable the duration/speed/position noise regime.
        #[arg(long)]
        noisy: bool,
    },
    /// Parse and validate a trip directory.
    IngestCheck {
        #[arg(long)]
        trip: PathBuf,
    },
    /// Extract zero-speed points and cluster them into stays.
    Cluster {
        #[arg(long)]
        trip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the 13-feature vectors for one or more trips.
    Featurize {
        #[arg(long, required = true)]
        trip: Vec<PathBuf>,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the clustered stays (with trip-qualified ids).
        #[arg(long)]
        stays_out: Option<PathBuf>,
    },
    /// Report tiles missing from a store for a set of stays.
    TilesCheck {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        stays: PathBuf,
    },
    /// Train the five one-vs-all forests.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stays JSON (from featurize --stays-out) to fit the dwell profile.
        #[arg(long)]
        stays: Option<PathBuf>,
        #[arg(long)]
        profile_out: Option<PathBuf>,
    },
    /// Repeated stratified cross-validation.
    Eval {
        #[arg(long)]
        features: PathBuf,
        /// folds x repeats, e.g. 5x10.
        #[arg(long, default_value = "5x10")]
        cv: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spatial-only / temporal-only / full feature-group comparison.
    Ablate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "5x10")]
        cv: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict type sets for featurized stays.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Arrival-time estimates along one trip.
    Eta {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        trip: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise bus-stop arrival-error matrix over trips.
    EtaTable {
        #[arg(long, required = true)]
        trip: Vec<PathBuf>,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write day-wise/band error quartiles.
        #[arg(long)]
        daywise_out: Option<PathBuf>,
    },
    /// Pilot statistics: per-type stay-duration, WiFi density and SNR.
    Report {
        #[arg(long, required = true)]
        trip: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_trip_with_stays(
    dir: &Path,
    cfg: &PipelineConfig,
) -> Result<(TripTrace, Vec<StayLocation>)> {
    let trace = parse_trip(dir).with_context(|| format!("parsing trip {}", dir.display()))?;
    let zs = extract_zero_speed(&trace, &cfg.cluster_params());
    let mut stays = cluster_stays(&zs, &cfg.cluster_params(), cfg.utc_offset_min);
    let unmatched = assign_marks(&mut stays, &trace.marks, cfg.mark_slack_s());
    if !unmatched.is_empty() {
        eprintln!(
            "warning: {} ground-truth mark(s) in {} matched no stay",
            unmatched.len(),
            trace.trip_id
        );
    }
    Ok((trace, stays))
}

fn open_store(tiles: &Path, cfg: &PipelineConfig) -> Result<TileStore> {
    let mut store =
        TileStore::open(tiles).with_context(|| format!("opening tiles {}", tiles.display()))?;
    store.box_m = (cfg.box_m, cfg.box_m);
    Ok(store)
}

fn parse_cv(cv: &str) -> Result<(usize, usize)> {
    let (f, r) = cv
        .split_once('x')
        .with_context(|| format!("--cv must look like 5x10, got `{cv}`"))?;
    Ok((f.trim().parse()?, r.trim().parse()?))
}

fn featurize_trips(
    trips: &[PathBuf],
    store: &TileStore,
    cfg: &PipelineConfig,
) -> Result<(Dataset, Vec<StayLocation>)> {
    let mut dataset = Dataset::default();
    let mut all_stays = Vec::new();
    let mfcc_cfg = MfccConfig::default();
    for dir in trips {
        let (trace, mut stays) = load_trip_with_stays(dir, cfg)?;
        let imu = reorient_imu(&trace.imu)?;
        for i in 0..stays.len() {
            let prev = if i > 0 { Some(&stays[i - 1]) } else { None };
            let fv = build_feature_vector(&trace, &imu, prev, &stays[i], store, &mfcc_cfg)
                .with_context(|| format!("featurizing {}/{}", trace.trip_id, stays[i].stay_id))?;
            dataset.rows.push(DataRow {
                stay_id: format!("{}/{}", trace.trip_id, stays[i].stay_id),
                features: fv.as_array(),
                labels: stays[i].truth.clone(),
            });
        }
        for stay in &mut stays {
            stay.stay_id = format!("{}/{}", trace.trip_id, stay.stay_id);
        }
        all_stays.extend(stays);
    }
    Ok((dataset, all_stays))
}

fn print_cv_report(name: &str, report: &CvReport) {
    for (ty, cv) in &report.per_type {
        println!(
            "{name}{}: weighted F1 {:.4} +/- {:.4}  (tp {} fp {} tn {} fn {})",
            ty,
            cv.mean_f1,
            cv.sd_f1,
            cv.confusion.tp,
            cv.confusion.fp,
            cv.confusion.tn,
            cv.confusion.fn_
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Synth {
            out,
            stays_per_type,
            trips,
            noisy,
        } => {
            let mut synth_cfg = SynthConfig {
                seed: cfg.seed,
                stays_per_type: [stays_per_type; 5],
                n_trips: trips,
                utc_offset_min: cfg.utc_offset_min,
                ..SynthConfig::default()
            };
            if noisy {
                synth_cfg = synth_cfg.noisy();
            }
            let manifest = gen_bundle(&synth_cfg, &out)?;
            println!(
                "wrote {} trips, {} stops to {}",
                manifest.trips.len(),
                manifest.stops.len(),
                out.display()
            );
        }
        Command::IngestCheck { trip } => {
            let trace = parse_trip(&trip)?;
            let report = validate_trace(&trace);
            println!(
                "trip {}: {} gps, {} imu, {} audio samples, {} wifi scans, {} marks",
                trace.trip_id,
                report.gps_records,
                report.imu_records,
                report.audio_samples,
                report.wifi_scans,
                trace.marks.len()
            );
            if !report.violations.is_empty() {
                for v in &report.violations {
                    eprintln!("violation: {v}");
                }
                bail!("{} invariant violation(s)", report.violations.len());
            }
            println!("ok");
        }
        Command::Cluster { trip, out } => {
            let (_, stays) = load_trip_with_stays(&trip, &cfg)?;
            std::fs::write(&out, serde_json::to_string_pretty(&stays).unwrap())?;
            println!("wrote {} stays to {}", stays.len(), out.display());
        }
        Command::Featurize {
            trip,
            tiles,
            out,
            stays_out,
        } => {
            let store = open_store(&tiles, &cfg)?;
            let (dataset, stays) = featurize_trips(&trip, &store, &cfg)?;
            dataset.save_csv(&out)?;
            if let Some(path) = stays_out {
                std::fs::write(&path, serde_json::to_string_pretty(&stays).unwrap())?;
            }
            println!("wrote {} feature rows to {}", dataset.rows.len(), out.display());
        }
        Command::TilesCheck { tiles, stays } => {
            let store = open_store(&tiles, &cfg)?;
            let stays: Vec<StayLocation> =
                serde_json::from_str(&std::fs::read_to_string(&stays)?)?;
            let missing = store.missing_tiles(&stays);
            if missing.is_empty() {
                println!("ok: all tiles present for {} stays", stays.len());
            } else {
                for (x, y) in &missing {
                    eprintln!("missing: {}", store.tile_path(*x, *y).display());
                }
                bail!("{} missing tile(s)", missing.len());
            }
        }
        Command::Train {
            features,
            out,
            stays,
            profile_out,
        } => {
            let dataset = Dataset::load_csv(&features)?;
            let model = train_bustop(
                &dataset,
                &cfg.forest_params(),
                cfg.seed,
                cfg.selector_estimators,
            )?;
            model.save(&out)?;
            println!("wrote model for {} types to {}", model.per_type.len(), out.display());
            if let Some(profile_path) = profile_out {
                let stays_path =
                    stays.context("--profile-out requires --stays to fit dwell means")?;
                let stays: Vec<StayLocation> =
                    serde_json::from_str(&std::fs::read_to_string(&stays_path)?)?;
                let profile = fit_stay_profile(&stays, cfg.utc_offset_min)?;
                profile.save(&profile_path)?;
                println!("wrote dwell profile to {}", profile_path.display());
            }
        }
        Command::Eval { features, cv, out } => {
            let dataset = Dataset::load_csv(&features)?;
            let (folds, repeats) = parse_cv(&cv)?;
            let report = cross_validate(&dataset, folds, repeats, &cfg.forest_params(), cfg.seed)?;
            print_cv_report("", &report);
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())?;
            }
        }
        Command::Ablate { features, cv, out } => {
            let dataset = Dataset::load_csv(&features)?;
            let (folds, repeats) = parse_cv(&cv)?;
            let report =
                ablate_feature_groups(&dataset, folds, repeats, &cfg.forest_params(), cfg.seed)?;
            print_cv_report("spatial/", &report.spatial_only);
            print_cv_report("temporal/", &report.temporal_only);
            print_cv_report("full/", &report.full);
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())?;
            }
        }
        Command::Predict {
            model,
            features,
            out,
        } => {
            let model = BuStopModel::load(&model)?;
            let dataset = Dataset::load_csv(&features)?;
            let mut body = String::from("stay_id,predicted,truth\n");
            for row in &dataset.rows {
                let fv = FeatureVector::from_array(&row.features);
                let pred = predict_stay_types(&model, &fv);
                let join = |s: &BTreeSet<StayType>| {
                    s.iter().map(|t| t.name()).collect::<Vec<_>>().join("|")
                };
                body.push_str(&format!("{},{},{}\n", row.stay_id, join(&pred), join(&row.labels)));
            }
            std::fs::write(&out, body)?;
            println!("wrote {} predictions to {}", dataset.rows.len(), out.display());
        }
        Command::Eta {
            model,
            profile,
            trip,
            tiles,
            out,
        } => {
            let model = BuStopModel::load(&model)?;
            let profile = StayProfile::load(&profile)?;
            let store = open_store(&tiles, &cfg)?;
            let (dataset, stays) = featurize_trips(std::slice::from_ref(&trip), &store, &cfg)?;
            let stops: Vec<ChainStop> = stays
                .iter()
                .zip(&dataset.rows)
                .map(|(stay, row)| ChainStop {
                    stay_id: stay.stay_id.clone(),
                    centroid: stay.centroid,
                    types: predict_stay_types(&model, &FeatureVector::from_array(&row.features)),
                    actual_arrival: Some(stay.t_start),
                })
                .collect();
            let chain = RouteChain::from_stops(stops);
            let depart = chain.stops[0]
                .actual_arrival
                .context("trip has no stays")?;
            let estimates = predict_arrival(&chain, depart, &profile, cfg.speed_mps)?;
            let mut body = String::from("stay_id,predicted_arrival_ms,actual_arrival_ms,error_min\n");
            for (est, stop) in estimates.iter().zip(&chain.stops) {
                body.push_str(&format!(
                    "{},{},{},{}\n",
                    est.stay_id,
                    est.predicted_arrival,
                    stop.actual_arrival.map_or(String::new(), |a| a.to_string()),
                    est.error_min.map_or(String::new(), |e| format!("{e:.4}")),
                ));
            }
            std::fs::write(&out, body)?;
            println!("wrote {} estimates to {}", estimates.len(), out.display());
        }
        Command::EtaTable {
            trip,
            profile,
            out,
            daywise_out,
        } => {
            let profile = StayProfile::load(&profile)?;
            let mut chains = Vec::new();
            for dir in &trip {
                let (_, stays) = load_trip_with_stays(dir, &cfg)?;
                chains.push(RouteChain::from_stays(&stays));
            }
            let table = eta_error_table(&chains, &profile, cfg.speed_mps, cfg.rho)?;
            let mut body = String::from("from\\to,");
            body.push_str(&table.stops.join(","));
            body.push('\n');
            for (i, from) in table.stops.iter().enumerate() {
                body.push_str(from);
                for j in 0..table.stops.len() {
                    let cell = table.entries[i][j]
                        .map_or(String::new(), |v| format!("{v:.3}"));
                    body.push_str(&format!(",{cell}"));
                }
                body.push('\n');
            }
            std::fs::write(&out, body)?;
            println!(
                "wrote {}x{} error table to {}",
                table.stops.len(),
                table.stops.len(),
                out.display()
            );
            if let Some(path) = daywise_out {
                let rows = daywise_error(&chains, &profile, cfg.speed_mps)?;
                let mut body = String::from("day,band,q1,median,q3,n\n");
                for r in &rows {
                    body.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        r.day,
                        r.band.name(),
                        r.quartiles.q1,
                        r.quartiles.median,
                        r.quartiles.q3,
                        r.quartiles.n
                    ));
                }
                std::fs::write(&path, body)?;
            }
        }
        Command::Report { trip, out } => {
            let mut bundles = Vec::new();
            for dir in &trip {
                bundles.push(load_trip_with_stays(dir, &cfg)?);
            }
            let rows = pilot_statistics(&bundles);
            std::fs::write(&out, report_csv(&rows))?;
            println!("wrote {} statistic rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}
