//! Seeded synthetic trip generator with class-conditional multi-modal
//! signatures and exact ground truth.
//!
//! The route is a straight east-west line of stops with per-type signatures
//! that are separable by construction: disjoint dwell durations, audio
//! tones/amplitudes, WiFi pool sizes, road-roughness amplitudes and map-tile
//! class mixes. In the default (exact-model) configuration true dwell
//! durations equal their per-type means and the bus cruises at exactly the
//! model speed, so arrival predictions have near-zero error.

use crate::mapenc::{
    global_pixel, ground_resolution, write_ppm, LandmarkClass, Legend, MapError, TILE_SIZE,
};
use crate::rng::{derived_rng, TAG_SYNTH};
use crate::staypoint::EARTH_RADIUS_M;
use crate::trace::{
    io::write_trip, AudioStream, Direction, GeoPoint, GroundTruthMark, ImuSample, StayType,
    TraceError, TripTrace, WifiScan, AUDIO_SAMPLE_RATE,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

pub const IMU_RATE_HZ: u32 = 197;
/// Phase resolution for tabulated sine synthesis, cycles.
pub const PHASE_QUANTUM: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Labeled stay instances to produce per type across all trips.
    pub stays_per_type: [usize; 5],
    pub n_trips: usize,
    pub cruise_mps: f64,
    /// Distance between consecutive stops, meters. The default is an exact
    /// multiple of the cruise speed so edges take a whole number of seconds.
    pub stop_spacing_m: f64,
    /// Dwell-duration noise as a fraction of the mean (sd); 0 = exact model.
    pub duration_noise_frac: f64,
    /// Per-edge cruise-speed jitter, fraction of the nominal speed.
    pub speed_jitter_frac: f64,
    /// Positional jitter of zero-speed fixes, meters.
    pub position_jitter_m: f64,
    pub tile_zoom: u32,
    pub utc_offset_min: i32,
    /// Route origin (lat, lon).
    pub origin: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            stays_per_type: [100; 5],
            n_trips: 20,
            cruise_mps: 17.0,
            stop_spacing_m: 306.0,
            duration_noise_frac: 0.0,
            speed_jitter_frac: 0.0,
            position_jitter_m: 0.0,
            tile_zoom: 14,
            utc_offset_min: 330,
            origin: (23.52, 87.32),
        }
    }
}

impl SynthConfig {
    /// The noise regime exercised by the sub-60-second arrival-error check.
    pub fn noisy(self) -> SynthConfig {
        SynthConfig {
            duration_noise_frac: 0.2,
            speed_jitter_frac: 0.1,
            position_jitter_m: 2.0,
            ..self
        }
    }
}

/// Per-type generation parameters. All ranges are disjoint across types so
/// every feature family separates the classes on its own.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TypeSignature {
    pub dwell_s: u32,
    pub audio_amp: f64,
    pub tone_hz: u32,
    pub wifi_stay_pool: usize,
    pub wifi_edge_pool: usize,
    pub roughness_amp: f64,
    /// Percent residential / natural / road / special-landmark / other.
    pub tile_mix: [u32; 5],
}

pub fn signature(ty: StayType) -> TypeSignature {
    match ty {
        StayType::BusStop => TypeSignature {
            dwell_s: 12,
            audio_amp: 3000.0,
            tone_hz: 600,
            wifi_stay_pool: 30,
            wifi_edge_pool: 18,
            roughness_amp: 0.8,
            tile_mix: [55, 5, 25, 5, 10],
        },
        StayType::Signal => TypeSignature {
            dwell_s: 9,
            audio_amp: 6000.0,
            tone_hz: 1000,
            wifi_stay_pool: 22,
            wifi_edge_pool: 12,
            roughness_amp: 0.4,
            tile_mix: [25, 5, 55, 0, 15],
        },
        StayType::Congestion => TypeSignature {
            // the loudest class: ambient noise around congestion is higher
            dwell_s: 15,
            audio_amp: 12000.0,
            tone_hz: 1800,
            wifi_stay_pool: 10,
            wifi_edge_pool: 8,
            roughness_amp: 1.5,
            tile_mix: [10, 5, 75, 0, 10],
        },
        StayType::Turn => TypeSignature {
            dwell_s: 6,
            audio_amp: 1500.0,
            tone_hz: 2500,
            wifi_stay_pool: 4,
            wifi_edge_pool: 3,
            roughness_amp: 3.0,
            tile_mix: [5, 60, 25, 0, 10],
        },
        StayType::AdHoc => TypeSignature {
            dwell_s: 18,
            audio_amp: 9000.0,
            tone_hz: 3200,
            wifi_stay_pool: 15,
            wifi_edge_pool: 6,
            roughness_amp: 2.2,
            tile_mix: [35, 30, 20, 0, 15],
        },
    }
}

/// Cruise background signature (between stops).
const CRUISE_AMP: f64 = 400.0;
const CRUISE_TONE_HZ: u32 = 300;
const AUDIO_NOISE: i32 = 150;
const DWELL_ROUGHNESS: f64 = 0.1;
/// Fixed device-frame gravity direction; trips exercise IMU reorientation.
const DEVICE_GRAVITY: [f64; 3] = [0.2, -0.3, 0.9327379053088816];

pub fn synth_legend() -> Legend {
    Legend::new([
        ([200, 80, 80], LandmarkClass::Residential),
        ([80, 200, 80], LandmarkClass::Natural),
        ([90, 90, 90], LandmarkClass::Road),
        ([240, 220, 40], LandmarkClass::SpecialLandmark),
        ([255, 255, 255], LandmarkClass::Other),
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteStop {
    pub stop_id: String,
    pub lat: f64,
    pub lon: f64,
    pub stay_type: StayType,
    pub dwell_s: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Route {
    pub stops: Vec<RouteStop>,
    pub tile_zoom: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTrip {
    pub trip_id: String,
    pub depart_ms: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub tile_zoom: u32,
    pub utc_offset_min: i32,
    pub stops: Vec<RouteStop>,
    pub trips: Vec<ManifestTrip>,
}

/// Deterministic route: stops every `stop_spacing_m` meters east of the
/// origin, types dealt round-robin so each type appears
/// `ceil(stays_per_type / n_trips)` times.
pub fn gen_route(cfg: &SynthConfig) -> Result<Route, SynthError> {
    if cfg.n_trips == 0 {
        return Err(SynthError::BadConfig("n_trips must be > 0".into()));
    }
    if cfg.stop_spacing_m <= 60.0 {
        return Err(SynthError::BadConfig(
            "stop spacing must exceed 2*rho = 60 m".into(),
        ));
    }
    let per_type: Vec<usize> = cfg
        .stays_per_type
        .iter()
        .map(|&n| n.div_ceil(cfg.n_trips))
        .collect();
    let rounds = per_type.iter().copied().max().unwrap_or(0);
    let deg_per_m_lon =
        1.0 / (std::f64::consts::PI / 180.0 * EARTH_RADIUS_M * cfg.origin.0.to_radians().cos());
    let mut stops = Vec::new();
    for round in 0..rounds {
        for ty in StayType::ALL {
            if round < per_type[ty.index()] {
                let pos_m = stops.len() as f64 * cfg.stop_spacing_m;
                stops.push(RouteStop {
                    stop_id: format!("stop_{:03}", stops.len()),
                    lat: cfg.origin.0,
                    lon: cfg.origin.1 + pos_m * deg_per_m_lon,
                    stay_type: ty,
                    dwell_s: signature(ty).dwell_s,
                });
            }
        }
    }
    if stops.is_empty() {
        return Err(SynthError::BadConfig("no stops configured".into()));
    }
    Ok(Route {
        stops,
        tile_zoom: cfg.tile_zoom,
    })
}

fn pattern_hash(gx: i64, gy: i64) -> u32 {
    let mut z = (gx as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((gy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ((z ^ (z >> 31)) % 100) as u32
}

fn mix_color(mix: &[u32; 5], hash: u32, legend: &Legend) -> [u8; 3] {
    let mut cum = 0;
    for (i, &pct) in mix.iter().enumerate() {
        cum += pct;
        if hash < cum {
            return legend.color_of(LandmarkClass::ALL[i]).unwrap();
        }
    }
    legend.color_of(LandmarkClass::Other).unwrap()
}

/// The exact global-pixel box that `stitch_tiles` reads for a 300 m query
/// centered on a stop.
fn stop_pixel_box(stop: &RouteStop, zoom: u32) -> (i64, i64, i64, i64) {
    let res = ground_resolution(stop.lat, zoom);
    let w = (300.0 / res).round().max(1.0);
    let (cx, cy) = global_pixel(stop.lat, stop.lon, zoom);
    let x0 = (cx - w / 2.0).round() as i64;
    let y0 = (cy - w / 2.0).round() as i64;
    (x0, y0, x0 + w as i64, y0 + w as i64)
}

/// Render every tile touched by a stop's query box. Pixels inside a box get
/// the stop type's class mix via a deterministic hash pattern; everything
/// else is `Other`.
pub fn render_tiles(route: &Route, tiles_dir: &Path) -> Result<(), SynthError> {
    let legend = synth_legend();
    std::fs::create_dir_all(tiles_dir)?;
    legend.save(&tiles_dir.join("legend.json"))?;
    let zoom_dir = tiles_dir.join(route.tile_zoom.to_string());
    std::fs::create_dir_all(&zoom_dir)?;

    let boxes: Vec<(i64, i64, i64, i64, [u32; 5])> = route
        .stops
        .iter()
        .map(|s| {
            let (x0, y0, x1, y1) = stop_pixel_box(s, route.tile_zoom);
            (x0, y0, x1, y1, signature(s.stay_type).tile_mix)
        })
        .collect();

    let ts = TILE_SIZE as i64;
    let mut tiles: BTreeSet<(i64, i64)> = BTreeSet::new();
    for &(x0, y0, x1, y1, _) in &boxes {
        for tx in x0.div_euclid(ts)..=(x1 - 1).div_euclid(ts) {
            for ty in y0.div_euclid(ts)..=(y1 - 1).div_euclid(ts) {
                tiles.insert((tx, ty));
            }
        }
    }

    let other = legend.color_of(LandmarkClass::Other).unwrap();
    for (tx, ty) in tiles {
        let mut pixels = vec![other; (TILE_SIZE * TILE_SIZE) as usize];
        for py in 0..ts {
            let gy = ty * ts + py;
            for px in 0..ts {
                let gx = tx * ts + px;
                if let Some(&(_, _, _, _, mix)) = boxes
                    .iter()
                    .find(|b| gx >= b.0 && gx < b.2 && gy >= b.1 && gy < b.3)
                {
                    pixels[(py * ts + px) as usize] =
                        mix_color(&mix, pattern_hash(gx, gy), &legend);
                }
            }
        }
        write_ppm(
            &zoom_dir.join(format!("{tx}_{ty}.ppm")),
            TILE_SIZE,
            TILE_SIZE,
            &pixels,
        )?;
    }
    Ok(())
}

/// One waveform period of `amp * sin(2*pi*f*t)` at the audio rate, phases
/// quantized to [`PHASE_QUANTUM`] cycles before the transcendental call.
fn tone_period(amp: f64, f_hz: u32) -> Vec<f64> {
    let rate = AUDIO_SAMPLE_RATE;
    let g = gcd(f_hz, rate);
    let period = (rate / g) as usize;
    (0..period)
        .map(|n| {
            let phase = (n as u64 * f_hz as u64 % rate as u64) as f64 / rate as f64;
            let q = (phase / PHASE_QUANTUM).round() * PHASE_QUANTUM;
            amp * (2.0 * std::f64::consts::PI * q).sin()
        })
        .collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Per-second travel plan entry.
#[derive(Clone, Copy)]
enum Seg {
    /// Dwelling at stop k.
    Dwell(usize),
    /// Cruising toward stop k.
    Travel(usize),
}

/// Generate one trip over the route. Deterministic given (cfg.seed, trip_idx).
pub fn gen_trip(route: &Route, cfg: &SynthConfig, trip_idx: usize) -> TripTrace {
    let mut rng = derived_rng(cfg.seed, TAG_SYNTH, trip_idx as u64 + 1);
    let depart_ms = trip_depart_ms(cfg, trip_idx);
    let deg_per_m_lat = 1.0 / (std::f64::consts::PI / 180.0 * EARTH_RADIUS_M);
    let deg_per_m_lon = deg_per_m_lat / cfg.origin.0.to_radians().cos();

    // dwell durations for this trip
    let dwell: Vec<u32> = route
        .stops
        .iter()
        .map(|s| {
            if cfg.duration_noise_frac > 0.0 {
                // uniform with sd = noise_frac * mean
                let half = s.dwell_s as f64 * cfg.duration_noise_frac * 3f64.sqrt();
                let d = s.dwell_s as f64 + rng.gen_range(-half..=half);
                (d.round() as i64).max(2) as u32
            } else {
                s.dwell_s
            }
        })
        .collect();

    // per-second plan + GPS rows
    let mut seg: Vec<Seg> = Vec::new();
    let mut gps: Vec<GeoPoint> = Vec::new();
    let mut marks: Vec<GroundTruthMark> = Vec::new();
    for (k, stop) in route.stops.iter().enumerate() {
        // approach cruise toward stop k; the route lead-in starts one spacing
        // west of stop 0 so even the first stay has an approach window. The
        // last cruise row reaches the stop, still moving, one second before
        // its first dwell row, so consecutive stay starts are exactly
        // dwell + spacing/speed apart.
        {
            let nominal_s = cfg.stop_spacing_m / cfg.cruise_mps;
            let travel_s = if cfg.speed_jitter_frac > 0.0 {
                let u = rng.gen_range(-cfg.speed_jitter_frac..=cfg.speed_jitter_frac);
                (nominal_s / (1.0 + u)).round().max(1.0) as usize
            } else {
                nominal_s.round().max(1.0) as usize
            };
            let v = cfg.stop_spacing_m / travel_s as f64;
            for j in 1..=travel_s {
                let t = seg.len() as i64;
                let pos_m = (k as f64 - 1.0) * cfg.stop_spacing_m + j as f64 * v;
                gps.push(GeoPoint {
                    lat: cfg.origin.0,
                    lon: cfg.origin.1 + pos_m * deg_per_m_lon,
                    t: depart_ms + t * 1000,
                    speed: v,
                });
                seg.push(Seg::Travel(k));
            }
        }
        let stay_start_s = seg.len() as i64;
        for _ in 0..dwell[k] {
            let t = seg.len() as i64;
            let (mut lat, mut lon) = (stop.lat, stop.lon);
            if cfg.position_jitter_m > 0.0 {
                lat += rng.gen_range(-cfg.position_jitter_m..=cfg.position_jitter_m)
                    * deg_per_m_lat;
                lon += rng.gen_range(-cfg.position_jitter_m..=cfg.position_jitter_m)
                    * deg_per_m_lon;
            }
            gps.push(GeoPoint {
                lat,
                lon,
                t: depart_ms + t * 1000,
                speed: 0.0,
            });
            seg.push(Seg::Dwell(k));
        }
        marks.push(GroundTruthMark {
            t: depart_ms + stay_start_s * 1000 + 500,
            types: [stop.stay_type].into_iter().collect(),
        });
    }
    let total_s = seg.len();

    // audio: per-segment tone period tables + uniform noise, rounded to i16
    let cruise_tone = tone_period(CRUISE_AMP, CRUISE_TONE_HZ);
    let tones: Vec<Vec<f64>> = StayType::ALL
        .iter()
        .map(|&ty| {
            let sig = signature(ty);
            tone_period(sig.audio_amp, sig.tone_hz)
        })
        .collect();
    let mut samples = Vec::with_capacity(total_s * AUDIO_SAMPLE_RATE as usize);
    for (s, &sg) in seg.iter().enumerate() {
        let table = match sg {
            Seg::Dwell(k) => &tones[route.stops[k].stay_type.index()],
            Seg::Travel(_) => &cruise_tone,
        };
        let base = s * AUDIO_SAMPLE_RATE as usize;
        for n in 0..AUDIO_SAMPLE_RATE as usize {
            let tone = table[(base + n) % table.len()];
            let noise = rng.gen_range(-AUDIO_NOISE..=AUDIO_NOISE);
            let v = (tone.round() as i32 + noise).clamp(i16::MIN as i32, i16::MAX as i32);
            samples.push(v as i16);
        }
    }

    // IMU at 197 Hz: world-frame gravity + roughness, projected onto a fixed
    // device orientation so ingestion has to reorient it
    let n_imu = total_s * IMU_RATE_HZ as usize;
    let mut imu = Vec::with_capacity(n_imu);
    for n in 0..n_imu {
        let t = n as i64 * 1000 / IMU_RATE_HZ as i64;
        let sec = (t / 1000) as usize;
        let rough = match seg[sec.min(total_s - 1)] {
            Seg::Dwell(_) => DWELL_ROUGHNESS,
            Seg::Travel(k) => signature(route.stops[k].stay_type).roughness_amp,
        };
        let az_world = 9.81 + rough * rng.gen_range(-1.0..=1.0);
        imu.push(ImuSample {
            t: depart_ms + t,
            ax: az_world * DEVICE_GRAVITY[0],
            ay: az_world * DEVICE_GRAVITY[1],
            az: az_world * DEVICE_GRAVITY[2],
        });
    }

    // WiFi: a scan every 2 s from the current stop or edge pool
    let mut wifi = Vec::new();
    for (s, &sg) in seg.iter().enumerate().step_by(2) {
        let (prefix, idx, pool) = match sg {
            Seg::Dwell(k) => ("S", k, signature(route.stops[k].stay_type).wifi_stay_pool),
            Seg::Travel(k) => ("E", k, signature(route.stops[k].stay_type).wifi_edge_pool),
        };
        let mut bssids: Vec<String> = (0..pool)
            .filter(|_| rng.gen_bool(0.8))
            .map(|i| format!("{prefix}{idx:03}_{i:02}"))
            .collect();
        bssids.sort();
        if !bssids.is_empty() {
            wifi.push(WifiScan {
                t: depart_ms + s as i64 * 1000,
                bssids,
            });
        }
    }

    TripTrace {
        trip_id: format!("trip_{trip_idx:03}"),
        direction: Direction::Up,
        gps,
        imu,
        audio: AudioStream {
            sample_rate: AUDIO_SAMPLE_RATE,
            samples,
            t0: depart_ms,
        },
        wifi,
        marks,
    }
}

/// Trips rotate through the four collection bands, one band per trip, a new
/// local day every four trips, departing 30 minutes into the band.
pub fn trip_depart_ms(cfg: &SynthConfig, trip_idx: usize) -> i64 {
    const BAND_START_H: [i64; 4] = [6, 9, 13, 17];
    let day = (trip_idx / 4) as i64;
    let h = BAND_START_H[trip_idx % 4];
    (day * 86_400 + h * 3600 + 1800 - cfg.utc_offset_min as i64 * 60) * 1000
}

/// Generate the full bundle: `<out>/trips/trip_NNN/`, `<out>/tiles/`,
/// `<out>/manifest.json`.
pub fn gen_bundle(cfg: &SynthConfig, out: &Path) -> Result<Manifest, SynthError> {
    let route = gen_route(cfg)?;
    render_tiles(&route, &out.join("tiles"))?;
    let mut trips = Vec::with_capacity(cfg.n_trips);
    for i in 0..cfg.n_trips {
        let trace = gen_trip(&route, cfg, i);
        write_trip(&trace, &out.join("trips").join(&trace.trip_id))?;
        trips.push(ManifestTrip {
            trip_id: trace.trip_id,
            depart_ms: trace.audio.t0,
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        tile_zoom: cfg.tile_zoom,
        utc_offset_min: cfg.utc_offset_min,
        stops: route.stops,
        trips,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(manifest)
}
