//! Zero-speed point extraction and greedy clustering into stay-locations.

use crate::trace::{GeoPoint, GroundTruthMark, StayType, TripTrace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Mean Earth radius used for all great-circle distances, meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Maximum temporal gap (seconds) between consecutive members of one cluster.
/// Keeps revisits to the same spot on a return trail from merging.
pub const CLUSTER_GAP_S: i64 = 120;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Zero-speed threshold, m/s.
    pub chi: f64,
    /// Cluster radius, meters.
    pub rho: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { chi: 3.0, rho: 30.0 }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum TimeBand {
    EarlyMorning,
    Morning,
    Afternoon,
    Evening,
}

impl TimeBand {
    pub const ALL: [TimeBand; 4] = [
        TimeBand::EarlyMorning,
        TimeBand::Morning,
        TimeBand::Afternoon,
        TimeBand::Evening,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TimeBand::EarlyMorning => "EarlyMorning",
            TimeBand::Morning => "Morning",
            TimeBand::Afternoon => "Afternoon",
            TimeBand::Evening => "Evening",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroSpeedPoint {
    pub point: GeoPoint,
}

/// A clustered zero-speed region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StayLocation {
    pub stay_id: String,
    pub centroid: (f64, f64),
    pub members: Vec<GeoPoint>,
    pub t_start: i64,
    pub t_end: i64,
    /// Seconds, counted as the number of 1 Hz member records.
    pub duration_s: u32,
    pub truth: BTreeSet<StayType>,
    pub band: TimeBand,
}

/// Great-circle distance between two (lat, lon) pairs on the reference sphere.
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Filter the GPS trail down to points slower than `chi`, in temporal order.
pub fn extract_zero_speed(trace: &TripTrace, p: &ClusterParams) -> Vec<ZeroSpeedPoint> {
    trace
        .gps
        .iter()
        .filter(|g| g.speed < p.chi)
        .map(|g| ZeroSpeedPoint { point: *g })
        .collect()
}

/// Local hour band. `utc_offset_min` is the local offset from UTC in minutes.
/// Hours outside the 06:00-21:00 collection window clamp to the nearest band.
pub fn assign_timezone(t_ms: i64, utc_offset_min: i32) -> TimeBand {
    let local_s = t_ms.div_euclid(1000) + utc_offset_min as i64 * 60;
    let hour = local_s.rem_euclid(86_400) / 3600;
    match hour {
        0..=8 => TimeBand::EarlyMorning,
        9..=12 => TimeBand::Morning,
        13..=16 => TimeBand::Afternoon,
        _ => TimeBand::Evening,
    }
}

/// Greedy temporal clustering of zero-speed points.
///
/// The first unassigned point seeds a cluster; each subsequent point joins the
/// open cluster iff it is within `rho` meters of the seed and within
/// [`CLUSTER_GAP_S`] of the cluster's last member, otherwise it seeds a new
/// cluster. Membership is tested against the seed, not a moving centroid.
pub fn cluster_stays(
    points: &[ZeroSpeedPoint],
    p: &ClusterParams,
    utc_offset_min: i32,
) -> Vec<StayLocation> {
    let mut clusters: Vec<Vec<GeoPoint>> = Vec::new();
    for zsp in points {
        let g = zsp.point;
        let joined = match clusters.last_mut() {
            Some(cluster) => {
                let seed = cluster[0];
                let last_t = cluster.last().unwrap().t;
                if haversine((seed.lat, seed.lon), (g.lat, g.lon)) <= p.rho
                    && g.t - last_t <= CLUSTER_GAP_S * 1000
                {
                    cluster.push(g);
                    true
                } else {
                    false
                }
            }
            None => false,
        };
        if !joined {
            clusters.push(vec![g]);
        }
    }

    clusters
        .into_iter()
        .enumerate()
        .map(|(i, members)| {
            let n = members.len() as f64;
            let lat = members.iter().map(|m| m.lat).sum::<f64>() / n;
            let lon = members.iter().map(|m| m.lon).sum::<f64>() / n;
            let t_start = members[0].t;
            let t_end = members.last().unwrap().t;
            StayLocation {
                stay_id: format!("stay_{i:04}"),
                centroid: (lat, lon),
                duration_s: members.len() as u32,
                t_start,
                t_end,
                band: assign_timezone(t_start, utc_offset_min),
                truth: BTreeSet::new(),
                members,
            }
        })
        .collect()
}

/// Attach ground-truth marks to the stay-location whose time span contains
/// them, with `slack_s` seconds of slack on each side. Returns the indices of
/// marks that matched no stay.
pub fn assign_marks(
    stays: &mut [StayLocation],
    marks: &[GroundTruthMark],
    slack_s: f64,
) -> Vec<usize> {
    let slack_ms = (slack_s * 1000.0).round() as i64;
    let mut unmatched = Vec::new();
    for (i, mark) in marks.iter().enumerate() {
        let hit = stays.iter_mut().find(|s| {
            mark.t >= s.t_start - slack_ms && mark.t <= s.t_end + slack_ms
        });
        match hit {
            Some(stay) => stay.truth.extend(mark.types.iter().copied()),
            None => unmatched.push(i),
        }
    }
    unmatched
}
