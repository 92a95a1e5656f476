//! Domain types for multi-modal trip traces, ingestion, validation and IMU
//! reorientation.

pub mod io;

pub use io::{parse_trip, write_trip};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

/// The only audio sample rate accepted by the pipeline.
pub const AUDIO_SAMPLE_RATE: u32 = 8000;

/// Minimum IMU sample count for a usable gravity estimate.
pub const MIN_IMU_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed record: {reason}")]
    MalformedRecord {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: non-monotonic timestamp")]
    NonMonotonicTimestamp { file: String, line: usize },
    #[error("audio sample rate {0} is not supported (expected {AUDIO_SAMPLE_RATE})")]
    WrongSampleRate(u32),
    #[error("insufficient IMU samples: {have} (need {need})")]
    InsufficientSamples { have: usize, need: usize },
    #[error("degenerate gravity estimate: mean acceleration magnitude {magnitude:.3} m/s^2")]
    DegenerateGravity { magnitude: f64 },
}

/// One per-second GPS record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    /// Unix epoch milliseconds.
    pub t: i64,
    /// Speed over ground, m/s.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: i64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioStream {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
    /// Epoch ms of the first sample.
    pub t0: i64,
}

impl AudioStream {
    /// Sample index of epoch instant `t_ms`, clamped to the stream.
    pub fn index_at(&self, t_ms: i64) -> usize {
        if t_ms <= self.t0 {
            return 0;
        }
        let idx = (t_ms - self.t0) * self.sample_rate as i64 / 1000;
        (idx as usize).min(self.samples.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WifiScan {
    pub t: i64,
    /// Unique access-point identifiers sighted in this scan.
    pub bssids: Vec<String>,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum StayType {
    BusStop,
    Signal,
    Congestion,
    Turn,
    AdHoc,
}

impl StayType {
    pub const ALL: [StayType; 5] = [
        StayType::BusStop,
        StayType::Signal,
        StayType::Congestion,
        StayType::Turn,
        StayType::AdHoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StayType::BusStop => "BusStop",
            StayType::Signal => "Signal",
            StayType::Congestion => "Congestion",
            StayType::Turn => "Turn",
            StayType::AdHoc => "AdHoc",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|t| *t == self).unwrap()
    }

    pub fn from_name(s: &str) -> Option<StayType> {
        Self::ALL.iter().copied().find(|t| t.name() == s)
    }
}

impl fmt::Display for StayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground-truth button press: the instant and the reasons for a stop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMark {
    pub t: i64,
    pub types: BTreeSet<StayType>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

/// One bus trip's synchronized multi-modal streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TripTrace {
    pub trip_id: String,
    pub direction: Direction,
    pub gps: Vec<GeoPoint>,
    pub imu: Vec<ImuSample>,
    pub audio: AudioStream,
    pub wifi: Vec<WifiScan>,
    pub marks: Vec<GroundTruthMark>,
}

impl TripTrace {
    pub fn t_span(&self) -> (i64, i64) {
        let t0 = self.gps.first().map(|g| g.t).unwrap_or(0);
        let t1 = self.gps.last().map(|g| g.t).unwrap_or(0);
        (t0, t1)
    }
}

/// Stream counts, time span and the list of invariant violations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub gps_records: usize,
    pub imu_records: usize,
    pub wifi_scans: usize,
    pub audio_samples: usize,
    pub marks: usize,
    pub t_start_ms: i64,
    pub t_end_ms: i64,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Slack, in ms, allowed for non-GPS stream timestamps around the GPS span.
const SPAN_SLACK_MS: i64 = 60_000;

/// Check every trace invariant; violations are reported as data, not errors.
pub fn validate_trace(trace: &TripTrace) -> ValidationReport {
    let mut violations = Vec::new();
    let (t0, t1) = trace.t_span();
    let lo = t0 - SPAN_SLACK_MS;
    let hi = t1 + SPAN_SLACK_MS;

    if trace.gps.is_empty() {
        violations.push("gps stream is empty".to_string());
    }
    for (i, g) in trace.gps.iter().enumerate() {
        if !(-90.0..=90.0).contains(&g.lat) || !(-180.0..=180.0).contains(&g.lon) {
            violations.push(format!("gps[{i}]: coordinates out of range"));
        }
        if g.speed < 0.0 || !g.speed.is_finite() {
            violations.push(format!("gps[{i}]: invalid speed"));
        }
        if i > 0 && g.t <= trace.gps[i - 1].t {
            violations.push(format!("gps[{i}]: timestamp not strictly increasing"));
        }
    }
    for (i, s) in trace.imu.iter().enumerate() {
        if ![s.ax, s.ay, s.az].iter().all(|v| v.is_finite()) {
            violations.push(format!("imu[{i}]: non-finite component"));
        }
        if i > 0 && s.t < trace.imu[i - 1].t {
            violations.push(format!("imu[{i}]: timestamp decreases"));
        }
        if s.t < lo || s.t > hi {
            violations.push(format!("imu[{i}]: stream out of span"));
        }
    }
    if trace.audio.sample_rate != AUDIO_SAMPLE_RATE {
        violations.push(format!(
            "audio: sample rate {} != {AUDIO_SAMPLE_RATE}",
            trace.audio.sample_rate
        ));
    }
    if !trace.audio.samples.is_empty() && (trace.audio.t0 < lo || trace.audio.t0 > hi) {
        violations.push("audio: stream out of span".to_string());
    }
    for (i, w) in trace.wifi.iter().enumerate() {
        if w.t < lo || w.t > hi {
            violations.push(format!("wifi[{i}]: stream out of span"));
        }
        let mut seen = BTreeSet::new();
        for b in &w.bssids {
            if !seen.insert(b) {
                violations.push(format!("wifi[{i}]: duplicate bssid {b}"));
            }
        }
    }
    for (i, m) in trace.marks.iter().enumerate() {
        if m.types.is_empty() {
            violations.push(format!("mark[{i}]: empty type set"));
        }
        if m.types.contains(&StayType::AdHoc) && m.types.len() > 1 {
            violations.push(format!("mark[{i}]: ad-hoc exclusivity"));
        }
        if m.t < lo || m.t > hi {
            violations.push(format!("mark[{i}]: stream out of span"));
        }
    }

    ValidationReport {
        gps_records: trace.gps.len(),
        imu_records: trace.imu.len(),
        wifi_scans: trace.wifi.len(),
        audio_samples: trace.audio.samples.len(),
        marks: trace.marks.len(),
        t_start_ms: t0,
        t_end_ms: t1,
        violations,
    }
}

/// Rotate the IMU stream so the trip-mean acceleration (the gravity estimate)
/// aligns with +z. The rotation is the unique minimal rotation taking the
/// mean vector to +z; per-sample magnitudes are preserved.
pub fn reorient_imu(imu: &[ImuSample]) -> Result<Vec<ImuSample>, TraceError> {
    if imu.len() < MIN_IMU_SAMPLES {
        return Err(TraceError::InsufficientSamples {
            have: imu.len(),
            need: MIN_IMU_SAMPLES,
        });
    }
    let n = imu.len() as f64;
    let mx = imu.iter().map(|s| s.ax).sum::<f64>() / n;
    let my = imu.iter().map(|s| s.ay).sum::<f64>() / n;
    let mz = imu.iter().map(|s| s.az).sum::<f64>() / n;
    let mag = (mx * mx + my * my + mz * mz).sqrt();
    if mag < 1.0 {
        return Err(TraceError::DegenerateGravity { magnitude: mag });
    }

    let rot = rotation_to_z([mx / mag, my / mag, mz / mag]);
    Ok(imu
        .iter()
        .map(|s| {
            let v = apply_rotation(&rot, [s.ax, s.ay, s.az]);
            ImuSample {
                t: s.t,
                ax: v[0],
                ay: v[1],
                az: v[2],
            }
        })
        .collect())
}

/// Row-major 3x3 rotation matrix taking the unit vector `u` to +z
/// (Rodrigues form about the axis u x z).
fn rotation_to_z(u: [f64; 3]) -> [[f64; 3]; 3] {
    let c = u[2]; // u . z
    if c > 1.0 - 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    if c < -1.0 + 1e-15 {
        // antiparallel: rotate pi about x
        return [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    }
    // axis = u x z, normalized
    let ax = u[1];
    let ay = -u[0];
    let norm = (ax * ax + ay * ay).sqrt();
    let (kx, ky, kz) = (ax / norm, ay / norm, 0.0);
    let s = norm; // sin(theta) = |u x z|
    let t = 1.0 - c;
    [
        [
            t * kx * kx + c,
            t * kx * ky - s * kz,
            t * kx * kz + s * ky,
        ],
        [
            t * kx * ky + s * kz,
            t * ky * ky + c,
            t * ky * kz - s * kx,
        ],
        [
            t * kx * kz - s * ky,
            t * ky * kz + s * kx,
            t * kz * kz + c,
        ],
    ]
}

fn apply_rotation(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}
