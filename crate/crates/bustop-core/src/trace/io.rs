//! Trip directory ingestion and serialization.
//!
//! Layout (UTF-8 text, audio little-endian):
//!   gps.csv     `t_ms,lat,lon,speed_mps`
//!   imu.csv     `t_ms,ax,ay,az,gx,gy,gz` (gyroscope columns accepted, unused)
//!   wifi.csv    `t_ms,bssid`
//!   labels.csv  `t_ms,types` with `|`-separated type names
//!   audio.pcm   raw mono signed 16-bit LE PCM
//!   audio.json  `{"sample_rate": 8000, "t0_ms": <int>}`

use super::*;
use serde::Deserialize;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Deserialize, Serialize)]
struct AudioMeta {
    sample_rate: u32,
    t0_ms: i64,
}

fn read_to_string(path: &Path) -> Result<String, TraceError> {
    if !path.is_file() {
        return Err(TraceError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Iterate data lines of a CSV file, checking the mandatory header.
fn csv_lines<'a>(
    body: &'a str,
    file: &str,
    header: &str,
) -> Result<impl Iterator<Item = (usize, &'a str)>, TraceError> {
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h.trim_end() == header => {}
        other => {
            return Err(TraceError::MalformedRecord {
                file: file.to_string(),
                line: 1,
                reason: format!(
                    "expected header `{header}`, found `{}`",
                    other.unwrap_or("")
                ),
            })
        }
    }
    Ok(body
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l)))
}

fn malformed(file: &str, line: usize, reason: impl Into<String>) -> TraceError {
    TraceError::MalformedRecord {
        file: file.to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_fields<const N: usize>(
    file: &str,
    line: usize,
    text: &str,
) -> Result<[f64; N], TraceError> {
    let mut out = [0.0; N];
    let mut it = text.split(',');
    for (i, slot) in out.iter_mut().enumerate() {
        let field = it
            .next()
            .ok_or_else(|| malformed(file, line, format!("expected {N} fields")))?;
        *slot = field
            .trim()
            .parse::<f64>()
            .map_err(|_| malformed(file, line, format!("field {}: not a number", i + 1)))?;
    }
    if it.next().is_some() {
        return Err(malformed(file, line, format!("expected {N} fields")));
    }
    Ok(out)
}

/// Parse a trip directory into a validated, time-sorted `TripTrace`.
///
/// The trip id is the directory name; a name ending in `_down` (or containing
/// `down`) marks a down trail, everything else is up.
pub fn parse_trip(dir: &Path) -> Result<TripTrace, TraceError> {
    let trip_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trip".to_string());
    let direction = if trip_id.to_ascii_lowercase().contains("down") {
        Direction::Down
    } else {
        Direction::Up
    };

    // gps.csv
    let body = read_to_string(&dir.join("gps.csv"))?;
    let mut gps = Vec::new();
    for (line, text) in csv_lines(&body, "gps.csv", "t_ms,lat,lon,speed_mps")? {
        let [t, lat, lon, speed] = parse_fields("gps.csv", line, text)?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(malformed("gps.csv", line, format!("lat {lat} out of range")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(malformed("gps.csv", line, format!("lon {lon} out of range")));
        }
        if speed < 0.0 || !speed.is_finite() {
            return Err(malformed("gps.csv", line, "negative speed"));
        }
        let t = t as i64;
        if let Some(prev) = gps.last() {
            let prev: &GeoPoint = prev;
            if t <= prev.t {
                return Err(TraceError::NonMonotonicTimestamp {
                    file: "gps.csv".to_string(),
                    line,
                });
            }
        }
        gps.push(GeoPoint { lat, lon, t, speed });
    }

    // imu.csv
    let body = read_to_string(&dir.join("imu.csv"))?;
    let mut imu = Vec::new();
    for (line, text) in csv_lines(&body, "imu.csv", "t_ms,ax,ay,az,gx,gy,gz")? {
        let [t, ax, ay, az, _gx, _gy, _gz] = parse_fields("imu.csv", line, text)?;
        if ![ax, ay, az].iter().all(|v| v.is_finite()) {
            return Err(malformed("imu.csv", line, "non-finite acceleration"));
        }
        let t = t as i64;
        if let Some(prev) = imu.last() {
            let prev: &ImuSample = prev;
            if t < prev.t {
                return Err(TraceError::NonMonotonicTimestamp {
                    file: "imu.csv".to_string(),
                    line,
                });
            }
        }
        imu.push(ImuSample { t, ax, ay, az });
    }

    // wifi.csv: one row per sighted AP; rows sharing a timestamp form a scan.
    let body = read_to_string(&dir.join("wifi.csv"))?;
    let mut wifi: Vec<WifiScan> = Vec::new();
    for (line, text) in csv_lines(&body, "wifi.csv", "t_ms,bssid")? {
        let (t_text, bssid) = text
            .split_once(',')
            .ok_or_else(|| malformed("wifi.csv", line, "expected 2 fields"))?;
        let t: i64 = t_text
            .trim()
            .parse()
            .map_err(|_| malformed("wifi.csv", line, "bad timestamp"))?;
        let bssid = bssid.trim().to_string();
        if bssid.is_empty() {
            return Err(malformed("wifi.csv", line, "empty bssid"));
        }
        match wifi.last_mut() {
            Some(scan) if scan.t == t => {
                if !scan.bssids.contains(&bssid) {
                    scan.bssids.push(bssid);
                }
            }
            _ => wifi.push(WifiScan {
                t,
                bssids: vec![bssid],
            }),
        }
    }
    wifi.sort_by_key(|s| s.t);
    for scan in &mut wifi {
        scan.bssids.sort();
    }

    // labels.csv
    let body = read_to_string(&dir.join("labels.csv"))?;
    let mut marks = Vec::new();
    for (line, text) in csv_lines(&body, "labels.csv", "t_ms,types")? {
        let (t_text, types_text) = text
            .split_once(',')
            .ok_or_else(|| malformed("labels.csv", line, "expected 2 fields"))?;
        let t: i64 = t_text
            .trim()
            .parse()
            .map_err(|_| malformed("labels.csv", line, "bad timestamp"))?;
        let mut types = BTreeSet::new();
        for name in types_text.split('|') {
            let name = name.trim();
            let ty = StayType::from_name(name)
                .ok_or_else(|| malformed("labels.csv", line, format!("unknown type `{name}`")))?;
            types.insert(ty);
        }
        if types.is_empty() {
            return Err(malformed("labels.csv", line, "empty type set"));
        }
        marks.push(GroundTruthMark { t, types });
    }
    marks.sort_by_key(|m| m.t);

    // audio.json + audio.pcm
    let meta_path = dir.join("audio.json");
    let meta_body = read_to_string(&meta_path)?;
    let meta: AudioMeta = serde_json::from_str(&meta_body).map_err(|e| {
        malformed("audio.json", 1, format!("invalid audio metadata: {e}"))
    })?;
    if meta.sample_rate != AUDIO_SAMPLE_RATE {
        return Err(TraceError::WrongSampleRate(meta.sample_rate));
    }
    let pcm_path = dir.join("audio.pcm");
    if !pcm_path.is_file() {
        return Err(TraceError::MissingFile(pcm_path));
    }
    let raw = fs::read(&pcm_path).map_err(|source| TraceError::Io {
        path: pcm_path.clone(),
        source,
    })?;
    if raw.len() % 2 != 0 {
        return Err(malformed("audio.pcm", 0, "odd byte count"));
    }
    let samples = raw
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();

    Ok(TripTrace {
        trip_id,
        direction,
        gps,
        imu,
        audio: AudioStream {
            sample_rate: meta.sample_rate,
            samples,
            t0: meta.t0_ms,
        },
        wifi,
        marks,
    })
}

/// Write a trace back out in the trip directory layout.
pub fn write_trip(trace: &TripTrace, dir: &Path) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(io_err)?;

    let mut gps = String::from("t_ms,lat,lon,speed_mps\n");
    for g in &trace.gps {
        gps.push_str(&format!("{},{},{},{}\n", g.t, g.lat, g.lon, g.speed));
    }
    fs::write(dir.join("gps.csv"), gps).map_err(io_err)?;

    let mut imu = String::from("t_ms,ax,ay,az,gx,gy,gz\n");
    for s in &trace.imu {
        imu.push_str(&format!("{},{},{},{},0,0,0\n", s.t, s.ax, s.ay, s.az));
    }
    fs::write(dir.join("imu.csv"), imu).map_err(io_err)?;

    let mut wifi = String::from("t_ms,bssid\n");
    for scan in &trace.wifi {
        for b in &scan.bssids {
            wifi.push_str(&format!("{},{}\n", scan.t, b));
        }
    }
    fs::write(dir.join("wifi.csv"), wifi).map_err(io_err)?;

    let mut labels = String::from("t_ms,types\n");
    for m in &trace.marks {
        let names: Vec<&str> = m.types.iter().map(|t| t.name()).collect();
        labels.push_str(&format!("{},{}\n", m.t, names.join("|")));
    }
    fs::write(dir.join("labels.csv"), labels).map_err(io_err)?;

    let meta = AudioMeta {
        sample_rate: trace.audio.sample_rate,
        t0_ms: trace.audio.t0,
    };
    fs::write(dir.join("audio.json"), serde_json::to_string(&meta).unwrap())
        .map_err(io_err)?;

    let mut pcm = fs::File::create(dir.join("audio.pcm")).map_err(io_err)?;
    let mut buf = Vec::with_capacity(trace.audio.samples.len() * 2);
    for s in &trace.audio.samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    pcm.write_all(&buf).map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture(dir: &Path, gps_rows: &str) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join("gps.csv"), format!("t_ms,lat,lon,speed_mps\n{gps_rows}")).unwrap();
        fs::write(
            dir.join("imu.csv"),
            "t_ms,ax,ay,az,gx,gy,gz\n0,0,0,9.81,0,0,0\n",
        )
        .unwrap();
        fs::write(dir.join("wifi.csv"), "t_ms,bssid\n500,aa:bb\n500,cc:dd\n").unwrap();
        fs::write(dir.join("labels.csv"), "t_ms,types\n1000,BusStop|Signal\n").unwrap();
        fs::write(dir.join("audio.json"), r#"{"sample_rate":8000,"t0_ms":0}"#).unwrap();
        fs::write(dir.join("audio.pcm"), [0u8, 0, 1, 0]).unwrap();
    }

    #[test]
    fn parses_fixture_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("trip_01");
        fixture(&dir, "0,23.5,87.3,4.0\n1000,23.5,87.3001,3.0\n2000,23.5,87.3002,2.0\n");
        let trace = parse_trip(&dir).unwrap();
        assert_eq!(trace.gps.len(), 3);
        assert_eq!(trace.direction, Direction::Up);
        assert_eq!(trace.wifi.len(), 1);
        assert_eq!(trace.wifi[0].bssids.len(), 2);
        assert_eq!(trace.marks[0].types.len(), 2);
        assert_eq!(trace.audio.samples, vec![0, 1]);
    }

    #[test]
    fn rejects_out_of_range_lat() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("t");
        fixture(&dir, "0,91.0,87.3,4.0\n");
        assert!(matches!(
            parse_trip(&dir),
            Err(TraceError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("t");
        fixture(&dir, "0,23.5,87.3,4.0\n");
        fs::write(dir.join("audio.json"), r#"{"sample_rate":44100,"t0_ms":0}"#).unwrap();
        assert!(matches!(
            parse_trip(&dir),
            Err(TraceError::WrongSampleRate(44100))
        ));
    }

    #[test]
    fn rejects_missing_file_and_bad_timestamps() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("t");
        fixture(&dir, "1000,23.5,87.3,4.0\n1000,23.5,87.3,4.0\n");
        assert!(matches!(
            parse_trip(&dir),
            Err(TraceError::NonMonotonicTimestamp { line: 3, .. })
        ));
        fs::write(dir.join("gps.csv"), "t_ms,lat,lon,speed_mps\n0,23.5,87.3,4.0\n").unwrap();
        fs::remove_file(dir.join("wifi.csv")).unwrap();
        assert!(matches!(parse_trip(&dir), Err(TraceError::MissingFile(_))));
    }

    #[test]
    fn round_trip_identity() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("trip_07_down");
        fixture(&dir, "0,23.5,87.3,4.0\n1000,23.51,87.31,0.5\n");
        let first = parse_trip(&dir).unwrap();
        assert_eq!(first.direction, Direction::Down);
        let dir2 = tmp.path().join("trip_07_down_copy");
        write_trip(&first, &dir2).unwrap();
        let second = parse_trip(&dir2).unwrap();
        assert_eq!(first.gps, second.gps);
        assert_eq!(first.imu, second.imu);
        assert_eq!(first.wifi, second.wifi);
        assert_eq!(first.marks, second.marks);
        assert_eq!(first.audio, second.audio);
    }
}
