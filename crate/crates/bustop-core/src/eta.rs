//! Markov-chain expected-arrival-time estimation over a sequence of
//! characterized stay-locations.
//!
//! Arrival at the l-th stay depends only on arrival at the previous one:
//! arrival(l) = arrival(l-1) + dwell(l-1) + distance(l-1, l) / speed, where
//! dwell is the mean stay-duration of the previous stay's type in the time
//! band of the predicted arrival instant there.

use crate::staypoint::{assign_timezone, haversine, StayLocation, TimeBand};
use crate::trace::StayType;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

/// Cruising speed between stays, m/s.
pub const DEFAULT_SPEED_MPS: f64 = 17.0;

#[derive(Debug, Error)]
pub enum EtaError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty route chain")]
    EmptyChain,
    #[error("speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("no trip visits both bus-stop {0} and bus-stop {1}")]
    NoCommonTrips(usize, usize),
    #[error("bad profile JSON: {0}")]
    BadJson(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean stay-durations per (type, band), with fallbacks for unseen cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StayProfile {
    pub mean_duration: BTreeMap<StayType, BTreeMap<TimeBand, f64>>,
    pub fallback_by_type: BTreeMap<StayType, f64>,
    pub global_fallback: f64,
    /// Local offset from UTC in minutes, used to place instants into bands.
    pub utc_offset_min: i32,
}

impl StayProfile {
    /// Mean for one (type, band) cell: the cell itself, else the type's
    /// all-band mean, else the global mean.
    pub fn mean_of(&self, ty: StayType, band: TimeBand) -> f64 {
        self.mean_duration
            .get(&ty)
            .and_then(|per_band| per_band.get(&band))
            .or_else(|| self.fallback_by_type.get(&ty))
            .copied()
            .unwrap_or(self.global_fallback)
    }

    /// Dwell seconds for a stay: the max over its types (a stop that is both
    /// bus-stop and signal waits for the longer constraint). An empty type
    /// set falls back to the global mean.
    pub fn dwell_s(&self, types: &BTreeSet<StayType>, band: TimeBand) -> f64 {
        types
            .iter()
            .map(|&ty| self.mean_of(ty, band))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .unwrap_or(self.global_fallback)
    }

    pub fn save(&self, path: &Path) -> Result<(), EtaError> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<StayProfile, EtaError> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| EtaError::BadJson(e.to_string()))
    }
}

/// Arithmetic means of stay-durations grouped by (type, band). Confounded
/// stays contribute their duration to every listed type.
pub fn fit_stay_profile(
    stays: &[StayLocation],
    utc_offset_min: i32,
) -> Result<StayProfile, EtaError> {
    if stays.is_empty() {
        return Err(EtaError::EmptyTrainingSet);
    }
    let mut cell: BTreeMap<(StayType, TimeBand), (f64, usize)> = BTreeMap::new();
    let mut by_type: BTreeMap<StayType, (f64, usize)> = BTreeMap::new();
    let mut global = (0.0, 0usize);
    for stay in stays {
        let d = stay.duration_s as f64;
        global.0 += d;
        global.1 += 1;
        for &ty in &stay.truth {
            let c = cell.entry((ty, stay.band)).or_insert((0.0, 0));
            c.0 += d;
            c.1 += 1;
            let t = by_type.entry(ty).or_insert((0.0, 0));
            t.0 += d;
            t.1 += 1;
        }
    }
    let mut mean_duration: BTreeMap<StayType, BTreeMap<TimeBand, f64>> = BTreeMap::new();
    for ((ty, band), (sum, n)) in cell {
        mean_duration.entry(ty).or_default().insert(band, sum / n as f64);
    }
    Ok(StayProfile {
        mean_duration,
        fallback_by_type: by_type
            .into_iter()
            .map(|(ty, (sum, n))| (ty, sum / n as f64))
            .collect(),
        global_fallback: global.0 / global.1 as f64,
        utc_offset_min,
    })
}

/// One stop along a travelled route, in travel order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainStop {
    pub stay_id: String,
    pub centroid: (f64, f64),
    pub types: BTreeSet<StayType>,
    /// Observed arrival instant, unix ms, when the trip actually visited it.
    pub actual_arrival: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteChain {
    pub stops: Vec<ChainStop>,
    /// Haversine meters between consecutive stops; `len = stops.len() - 1`.
    pub distances: Vec<f64>,
}

impl RouteChain {
    pub fn from_stops(stops: Vec<ChainStop>) -> RouteChain {
        let distances = stops
            .windows(2)
            .map(|w| haversine(w[0].centroid, w[1].centroid))
            .collect();
        RouteChain { stops, distances }
    }

    /// Build a chain from clustered stays, using truth labels and cluster
    /// start times as the observed arrivals.
    pub fn from_stays(stays: &[StayLocation]) -> RouteChain {
        RouteChain::from_stops(
            stays
                .iter()
                .map(|s| ChainStop {
                    stay_id: s.stay_id.clone(),
                    centroid: s.centroid,
                    types: s.truth.clone(),
                    actual_arrival: Some(s.t_start),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub stay_id: String,
    pub predicted_arrival: i64,
    /// (predicted − actual) in minutes, when the actual arrival is known.
    pub error_min: Option<f64>,
}

/// Run the arrival recurrence from `depart` at the first stop. Deterministic
/// and pure; the dwell band is evaluated at the predicted arrival instant.
pub fn predict_arrival(
    chain: &RouteChain,
    depart: i64,
    profile: &StayProfile,
    speed_mps: f64,
) -> Result<Vec<EtaEstimate>, EtaError> {
    if chain.stops.is_empty() {
        return Err(EtaError::EmptyChain);
    }
    if !(speed_mps > 0.0) {
        return Err(EtaError::BadSpeed(speed_mps));
    }
    let mut out = Vec::with_capacity(chain.stops.len());
    let mut arrival = depart;
    for (l, stop) in chain.stops.iter().enumerate() {
        if l > 0 {
            let prev = &chain.stops[l - 1];
            let band = assign_timezone(arrival, profile.utc_offset_min);
            let dwell_ms = (profile.dwell_s(&prev.types, band) * 1000.0).round() as i64;
            let travel_ms = (chain.distances[l - 1] / speed_mps * 1000.0).round() as i64;
            arrival += dwell_ms + travel_ms;
        }
        out.push(EtaEstimate {
            stay_id: stop.stay_id.clone(),
            predicted_arrival: arrival,
            error_min: stop
                .actual_arrival
                .map(|a| (arrival - a) as f64 / 60_000.0),
        });
    }
    Ok(out)
}

/// Pairwise bus-stop arrival-error matrix: entry (i, j), i < j, is the mean
/// over trips of (predicted arrival at stop j departing from the observed
/// arrival at stop i) − (actual arrival at stop j), in minutes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaTable {
    /// Canonical bus-stop labels in route order.
    pub stops: Vec<String>,
    pub entries: Vec<Vec<Option<f64>>>,
}

impl EtaTable {
    pub fn entry(&self, i: usize, j: usize) -> Result<f64, EtaError> {
        self.entries
            .get(i)
            .and_then(|row| row.get(j).copied().flatten())
            .ok_or(EtaError::NoCommonTrips(i, j))
    }
}

/// Snap bus-stop stays across trips to canonical route positions: a stop
/// joins the first canonical position within `rho` meters, else founds a new
/// one, in order of first appearance.
fn canonical_bus_stops(chains: &[RouteChain], rho: f64) -> (Vec<(f64, f64)>, Vec<Vec<(usize, usize)>>) {
    let mut canon: Vec<(f64, f64)> = Vec::new();
    // per chain: (position in chain, canonical index) for each bus-stop stop
    let mut memberships = Vec::with_capacity(chains.len());
    for chain in chains {
        let mut member = Vec::new();
        for (pos, stop) in chain.stops.iter().enumerate() {
            if !stop.types.contains(&StayType::BusStop) {
                continue;
            }
            let ci = canon
                .iter()
                .position(|&c| haversine(c, stop.centroid) <= rho)
                .unwrap_or_else(|| {
                    canon.push(stop.centroid);
                    canon.len() - 1
                });
            member.push((pos, ci));
        }
        memberships.push(member);
    }
    (canon, memberships)
}

pub fn eta_error_table(
    chains: &[RouteChain],
    profile: &StayProfile,
    speed_mps: f64,
    rho: f64,
) -> Result<EtaTable, EtaError> {
    let (canon, memberships) = canonical_bus_stops(chains, rho);
    let n = canon.len();
    let mut sums = vec![vec![(0.0f64, 0usize); n]; n];
    for (chain, member) in chains.iter().zip(&memberships) {
        for (a, &(pos_i, ci)) in member.iter().enumerate() {
            let Some(depart) = chain.stops[pos_i].actual_arrival else {
                continue;
            };
            let sub = RouteChain {
                stops: chain.stops[pos_i..].to_vec(),
                distances: chain.distances[pos_i..].to_vec(),
            };
            let estimates = predict_arrival(&sub, depart, profile, speed_mps)?;
            for &(pos_j, cj) in &member[a + 1..] {
                if let Some(err) = estimates[pos_j - pos_i].error_min {
                    sums[ci][cj].0 += err;
                    sums[ci][cj].1 += 1;
                }
            }
        }
    }
    Ok(EtaTable {
        stops: (0..n).map(|i| format!("BS_{i}")).collect(),
        entries: sums
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(sum, count)| (count > 0).then(|| sum / count as f64))
                    .collect()
            })
            .collect(),
    })
}

/// Linear-interpolation quartiles of a sample (the common "type 7" rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub n: usize,
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let at = |p: f64| {
        let idx = p * (v.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        v[lo] + (idx - lo as f64) * (v[hi] - v[lo])
    };
    Some(Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        n: v.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaywiseRow {
    /// Local calendar day, days since the unix epoch.
    pub day: i64,
    pub band: TimeBand,
    pub quartiles: Quartiles,
}

/// Next-stop arrival errors grouped by local day and time band: for every
/// consecutive stop pair with observed arrivals, predict the next arrival
/// from the observed arrival at the previous stop.
pub fn daywise_error(
    chains: &[RouteChain],
    profile: &StayProfile,
    speed_mps: f64,
) -> Result<Vec<DaywiseRow>, EtaError> {
    let mut groups: BTreeMap<(i64, TimeBand), Vec<f64>> = BTreeMap::new();
    for chain in chains {
        for l in 1..chain.stops.len() {
            let Some(depart) = chain.stops[l - 1].actual_arrival else {
                continue;
            };
            let sub = RouteChain {
                stops: chain.stops[l - 1..=l].to_vec(),
                distances: chain.distances[l - 1..l].to_vec(),
            };
            let est = predict_arrival(&sub, depart, profile, speed_mps)?;
            if let Some(err) = est[1].error_min {
                let local_s = depart.div_euclid(1000) + profile.utc_offset_min as i64 * 60;
                let day = local_s.div_euclid(86_400);
                let band = assign_timezone(depart, profile.utc_offset_min);
                groups.entry((day, band)).or_default().push(err);
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((day, band), errs)| DaywiseRow {
            day,
            band,
            quartiles: quartiles(&errs).unwrap(),
        })
        .collect())
}
