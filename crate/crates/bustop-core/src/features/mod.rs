//! Per-stay feature extraction: the 13-dimensional vector f1-f13.

pub mod mfcc;

pub use mfcc::{mfcc as mfcc_matrix, MfccConfig, MfccError};

use crate::mapenc::{MapError, TileStore};
use crate::staypoint::{haversine, StayLocation};
use crate::trace::{ImuSample, TripTrace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Length of the road segment inspected before a stay for the RSI, meters.
pub const RSI_WINDOW_M: f64 = 50.0;

pub const FEATURE_NAMES: [&str; 13] = [
    "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10", "f11", "f12", "f13",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no audio in stay window")]
    NoAudioInWindow,
    #[error(transparent)]
    Mfcc(#[from] MfccError),
    #[error("no motion before stay (mean speed is zero)")]
    NoMotionBeforeStay,
    #[error("no IMU samples in the approach window")]
    NoImuInWindow,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("missing feature(s) {fields}: {source}")]
    MissingFeature {
        fields: &'static str,
        source: Box<FeatureError>,
    },
}

/// The 13-dimensional feature record for one stay-location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Stay duration, seconds.
    pub f1_stay_duration: f64,
    /// Top-5 mean MFCC coefficients, descending.
    pub f2_f6_mfcc_top5: [f64; 5],
    /// Unique APs sighted during the stay.
    pub f7_wifi_stay: u32,
    /// Unique APs sighted on the approach edge.
    pub f8_wifi_edge: u32,
    /// Road surface index.
    pub f9_rsi: f64,
    pub f10_residential_pct: f64,
    pub f11_natural_pct: f64,
    pub f12_road_pct: f64,
    pub f13_highly_populated: u8,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 13] {
        let m = &self.f2_f6_mfcc_top5;
        [
            self.f1_stay_duration,
            m[0],
            m[1],
            m[2],
            m[3],
            m[4],
            self.f7_wifi_stay as f64,
            self.f8_wifi_edge as f64,
            self.f9_rsi,
            self.f10_residential_pct,
            self.f11_natural_pct,
            self.f12_road_pct,
            self.f13_highly_populated as f64,
        ]
    }

    pub fn from_array(a: &[f64; 13]) -> FeatureVector {
        FeatureVector {
            f1_stay_duration: a[0],
            f2_f6_mfcc_top5: [a[1], a[2], a[3], a[4], a[5]],
            f7_wifi_stay: a[6] as u32,
            f8_wifi_edge: a[7] as u32,
            f9_rsi: a[8],
            f10_residential_pct: a[9],
            f11_natural_pct: a[10],
            f12_road_pct: a[11],
            f13_highly_populated: a[12] as u8,
        }
    }
}

fn stay_audio<'a>(trace: &'a TripTrace, stay: &StayLocation) -> &'a [i16] {
    let a = &trace.audio;
    let start = a.index_at(stay.t_start);
    let end = a.index_at(stay.t_end + 1000);
    &a.samples[start..end]
}

/// f2-f6: mean MFCC per coefficient over the stay's audio window, sorted
/// descending, top five. Coefficient 0 (energy) is included; sorting is by
/// signed value.
pub fn top5_mfcc(
    trace: &TripTrace,
    stay: &StayLocation,
    cfg: &MfccConfig,
) -> Result<[f64; 5], FeatureError> {
    let window = stay_audio(trace, stay);
    if window.len() < cfg.frame_len {
        return Err(FeatureError::NoAudioInWindow);
    }
    let coeffs = mfcc::mfcc(window, cfg)?;
    let n = coeffs.len() as f64;
    let mut means = vec![0.0; cfg.n_ceps];
    for frame in &coeffs {
        for (m, c) in means.iter_mut().zip(frame) {
            *m += c / n;
        }
    }
    means.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok([means[0], means[1], means[2], means[3], means[4]])
}

/// Report-only SNR for the stay's audio window:
/// `20 log10(total RMS / noise-floor RMS)` where the floor is the mean RMS of
/// the quietest decile of frames.
pub fn snr_db(trace: &TripTrace, stay: &StayLocation) -> Result<f64, FeatureError> {
    let cfg = MfccConfig::default();
    let window = stay_audio(trace, stay);
    let n_frames = if window.len() >= cfg.frame_len {
        (window.len() - cfg.frame_len) / cfg.hop + 1
    } else {
        0
    };
    if n_frames < 10 {
        return Err(FeatureError::Mfcc(MfccError::WindowTooShort {
            have: window.len(),
            need: cfg.frame_len + 9 * cfg.hop,
        }));
    }
    let mut frame_rms: Vec<f64> = (0..n_frames)
        .map(|f| {
            let s = &window[f * cfg.hop..f * cfg.hop + cfg.frame_len];
            (s.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / cfg.frame_len as f64).sqrt()
        })
        .collect();
    let total_rms =
        (window.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / window.len() as f64).sqrt();
    frame_rms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let decile = (n_frames / 10).max(1);
    let floor = frame_rms[..decile].iter().sum::<f64>() / decile as f64;
    Ok(20.0 * (total_rms.max(1e-7) / floor.max(1e-7)).log10())
}

/// f7: unique APs over scans inside `[t_start, t_end]`.
pub fn wifi_count_at_stay(trace: &TripTrace, stay: &StayLocation) -> u32 {
    let mut set = BTreeSet::new();
    for scan in &trace.wifi {
        if scan.t >= stay.t_start && scan.t <= stay.t_end {
            set.extend(scan.bssids.iter());
        }
    }
    set.len() as u32
}

/// f8: unique APs on the open interval between the previous stay and this
/// one. With no predecessor the window starts at trip start.
pub fn wifi_count_on_edge(
    trace: &TripTrace,
    prev: Option<&StayLocation>,
    cur: &StayLocation,
) -> u32 {
    let from = match prev {
        Some(p) => p.t_end,
        None => trace.t_span().0 - 1,
    };
    let mut set = BTreeSet::new();
    for scan in &trace.wifi {
        if scan.t > from && scan.t < cur.t_start {
            set.extend(scan.bssids.iter());
        }
    }
    set.len() as u32
}

/// f9: over the trail segment covering the [`RSI_WINDOW_M`] of travel
/// immediately before the stay, RMS of gravity-removed z-acceleration divided
/// by mean GPS speed. `imu` must already be reoriented; gravity removal
/// subtracts the trip-mean z.
pub fn rsi(trace: &TripTrace, imu: &[ImuSample], stay: &StayLocation) -> Result<f64, FeatureError> {
    // walk the GPS trail backwards from the stay start until 50 m accumulate
    let before: Vec<_> = trace.gps.iter().filter(|g| g.t < stay.t_start).collect();
    if before.is_empty() {
        return Err(FeatureError::NoMotionBeforeStay);
    }
    let mut dist = 0.0;
    let mut start_idx = before.len() - 1;
    while start_idx > 0 && dist < RSI_WINDOW_M {
        let a = before[start_idx - 1];
        let b = before[start_idx];
        dist += haversine((a.lat, a.lon), (b.lat, b.lon));
        start_idx -= 1;
    }
    let window = &before[start_idx..];
    let t_lo = window[0].t;

    let mean_speed = window.iter().map(|g| g.speed).sum::<f64>() / window.len() as f64;
    if mean_speed == 0.0 {
        return Err(FeatureError::NoMotionBeforeStay);
    }

    let mean_z = imu.iter().map(|s| s.az).sum::<f64>() / imu.len().max(1) as f64;
    let resid: Vec<f64> = imu
        .iter()
        .filter(|s| s.t >= t_lo && s.t < stay.t_start)
        .map(|s| s.az - mean_z)
        .collect();
    if resid.is_empty() {
        return Err(FeatureError::NoImuInWindow);
    }
    let rms = (resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64).sqrt();
    Ok(rms / mean_speed)
}

fn missing(fields: &'static str) -> impl FnOnce(FeatureError) -> FeatureError {
    move |source| FeatureError::MissingFeature {
        fields,
        source: Box::new(source),
    }
}

/// Assemble the full vector for one stay. `imu` must be the reoriented
/// stream. Any component failure surfaces as a missing-feature error, never a
/// partial vector.
pub fn build_feature_vector(
    trace: &TripTrace,
    imu: &[ImuSample],
    prev_stay: Option<&StayLocation>,
    stay: &StayLocation,
    tiles: &TileStore,
    cfg: &MfccConfig,
) -> Result<FeatureVector, FeatureError> {
    let mfcc_top5 = top5_mfcc(trace, stay, cfg).map_err(missing("f2..f6"))?;
    let f9 = rsi(trace, imu, stay).map_err(missing("f9"))?;
    let (f10, f11, f12, f13) = tiles
        .spatial_features(stay.centroid)
        .map_err(|e| missing("f10..f13")(e.into()))?;
    Ok(FeatureVector {
        f1_stay_duration: stay.duration_s as f64,
        f2_f6_mfcc_top5: mfcc_top5,
        f7_wifi_stay: wifi_count_at_stay(trace, stay),
        f8_wifi_edge: wifi_count_on_edge(trace, prev_stay, stay),
        f9_rsi: f9,
        f10_residential_pct: f10,
        f11_natural_pct: f11,
        f12_road_pct: f12,
        f13_highly_populated: f13,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{AudioStream, Direction, GeoPoint, TripTrace, WifiScan};
    use std::collections::BTreeSet;

    fn base_trace() -> TripTrace {
        TripTrace {
            trip_id: "t".into(),
            direction: Direction::Up,
            gps: (0..60)
                .map(|i| GeoPoint {
                    lat: 23.5,
                    lon: 87.3 + i as f64 * 1e-4,
                    t: i * 1000,
                    speed: if i >= 40 { 0.0 } else { 10.0 },
                })
                .collect(),
            imu: vec![],
            audio: AudioStream {
                sample_rate: 8000,
                samples: vec![0; 8000 * 60],
                t0: 0,
            },
            wifi: vec![],
            marks: vec![],
        }
    }

    fn stay(t_start: i64, t_end: i64) -> StayLocation {
        StayLocation {
            stay_id: "s".into(),
            centroid: (23.5, 87.3),
            members: vec![],
            t_start,
            t_end,
            duration_s: ((t_end - t_start) / 1000 + 1) as u32,
            truth: BTreeSet::new(),
            band: crate::staypoint::TimeBand::Morning,
        }
    }

    #[test]
    fn top5_of_zero_audio_is_floor_dct() {
        let trace = base_trace();
        let cfg = MfccConfig::default();
        let got = top5_mfcc(&trace, &stay(40_000, 50_000), &cfg).unwrap();
        let mut expected = mfcc::dct_ii(&vec![cfg.log_floor.ln(); cfg.n_mel], cfg.n_ceps);
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-9);
        }
        // sorted-descending contract
        for w in got.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn wifi_union_counts() {
        let mut trace = base_trace();
        trace.wifi = vec![
            WifiScan {
                t: 41_000,
                bssids: vec!["A".into(), "B".into()],
            },
            WifiScan {
                t: 42_000,
                bssids: vec!["A".into()],
            },
            WifiScan {
                t: 10_000,
                bssids: vec!["C".into(), "D".into()],
            },
        ];
        let s = stay(40_000, 50_000);
        assert_eq!(wifi_count_at_stay(&trace, &s), 2);
        assert_eq!(wifi_count_on_edge(&trace, None, &s), 2);
        // no scans in window
        assert_eq!(wifi_count_at_stay(&trace, &stay(55_000, 58_000)), 0);
    }

    #[test]
    fn rsi_constant_residual_over_constant_speed() {
        let trace = base_trace();
        // alternating +/- 2 around a 9.81 mean: RMS of residual = 2
        let imu: Vec<ImuSample> = (0..40_000 / 5)
            .map(|i| ImuSample {
                t: i * 5,
                ax: 0.0,
                ay: 0.0,
                az: 9.81 + if i % 2 == 0 { 2.0 } else { -2.0 },
            })
            .collect();
        let got = rsi(&trace, &imu, &stay(40_000, 50_000)).unwrap();
        assert!((got - 0.2).abs() < 1e-9, "{got}");
    }

    #[test]
    fn rsi_zero_residual_is_zero() {
        let trace = base_trace();
        let imu: Vec<ImuSample> = (0..8000)
            .map(|i| ImuSample {
                t: i * 5,
                ax: 0.0,
                ay: 0.0,
                az: 9.81,
            })
            .collect();
        let got = rsi(&trace, &imu, &stay(40_000, 50_000)).unwrap();
        assert!(got.abs() < 1e-12);
    }

    #[test]
    fn rsi_requires_motion() {
        let mut trace = base_trace();
        for g in &mut trace.gps {
            g.speed = 0.0;
        }
        let imu: Vec<ImuSample> = (0..8000)
            .map(|i| ImuSample {
                t: i * 5,
                ax: 0.0,
                ay: 0.0,
                az: 9.81,
            })
            .collect();
        assert!(matches!(
            rsi(&trace, &imu, &stay(40_000, 50_000)),
            Err(FeatureError::NoMotionBeforeStay)
        ));
    }

    #[test]
    fn snr_constant_amplitude_is_zero_db() {
        let mut trace = base_trace();
        trace.audio.samples = vec![1000; 8000 * 60];
        let got = snr_db(&trace, &stay(40_000, 50_000)).unwrap();
        assert!(got.abs() < 1e-9);
    }

    #[test]
    fn snr_with_silent_frames_is_large() {
        let mut trace = base_trace();
        // half the window silent
        for (i, s) in trace.audio.samples.iter_mut().enumerate() {
            *s = if (i / 8000) % 2 == 0 { 5000 } else { 0 };
        }
        let got = snr_db(&trace, &stay(40_000, 50_000)).unwrap();
        assert!(got > 40.0, "{got}");
    }
}
