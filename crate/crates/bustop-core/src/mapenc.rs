//! Spatial-encoding features f10-f13 from an offline store of rendered map
//! raster tiles.
//!
//! Tiles are 256x256 Web-Mercator rasters stored as plain binary PPM (P6)
//! under `<root>/<zoom>/<x>_<y>.ppm`, with a JSON color legend at
//! `<root>/legend.json`.

use crate::staypoint::StayLocation;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TILE_SIZE: u32 = 256;
pub const DEFAULT_ZOOM: u32 = 18;
/// Side of the square query box around a stay centroid, meters.
pub const DEFAULT_BOX_M: f64 = 300.0;
/// Web-Mercator ground resolution at the equator for zoom 0, m/px.
pub const EQUATOR_RESOLUTION: f64 = 156_543.033_92;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("missing tile {x}_{y} at zoom {zoom}")]
    MissingTile { x: i64, y: i64, zoom: u32 },
    #[error("bad tile {path}: {reason}")]
    BadTile { path: PathBuf, reason: String },
    #[error("bad legend: {0}")]
    BadLegend(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum LandmarkClass {
    Residential,
    Natural,
    Road,
    SpecialLandmark,
    Other,
}

impl LandmarkClass {
    pub const ALL: [LandmarkClass; 5] = [
        LandmarkClass::Residential,
        LandmarkClass::Natural,
        LandmarkClass::Road,
        LandmarkClass::SpecialLandmark,
        LandmarkClass::Other,
    ];
}

impl fmt::Display for LandmarkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Serialize, Deserialize)]
struct LegendEntry {
    rgb: [u8; 3],
    class: LandmarkClass,
}

#[derive(Serialize, Deserialize)]
struct LegendFile {
    colors: Vec<LegendEntry>,
}

/// Exact-match color legend; colors not listed classify as `Other`.
#[derive(Debug, Clone, Default)]
pub struct Legend {
    map: HashMap<[u8; 3], LandmarkClass>,
}

impl Legend {
    pub fn new(entries: impl IntoIterator<Item = ([u8; 3], LandmarkClass)>) -> Legend {
        Legend {
            map: entries.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Legend, MapError> {
        let body = fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: LegendFile =
            serde_json::from_str(&body).map_err(|e| MapError::BadLegend(e.to_string()))?;
        let mut map = HashMap::new();
        for entry in file.colors {
            if let Some(prev) = map.insert(entry.rgb, entry.class) {
                if prev != entry.class {
                    return Err(MapError::BadLegend(format!(
                        "color {:?} maps to both {prev} and {}",
                        entry.rgb, entry.class
                    )));
                }
            }
        }
        Ok(Legend { map })
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        let mut colors: Vec<LegendEntry> = self
            .map
            .iter()
            .map(|(rgb, class)| LegendEntry {
                rgb: *rgb,
                class: *class,
            })
            .collect();
        colors.sort_by_key(|e| e.rgb);
        let body = serde_json::to_string_pretty(&LegendFile { colors }).unwrap();
        fs::write(path, body).map_err(|source| MapError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn classify(&self, rgb: [u8; 3]) -> LandmarkClass {
        self.map.get(&rgb).copied().unwrap_or(LandmarkClass::Other)
    }

    pub fn color_of(&self, class: LandmarkClass) -> Option<[u8; 3]> {
        let mut colors: Vec<_> = self
            .map
            .iter()
            .filter(|(_, c)| **c == class)
            .map(|(rgb, _)| *rgb)
            .collect();
        colors.sort();
        colors.first().copied()
    }
}

/// Row-major RGB raster covering an m x n meter query box.
#[derive(Debug, Clone)]
pub struct CompositeRaster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
    pub meters_per_pixel: f64,
}

/// Ground resolution of Web-Mercator pixels at `lat` and `zoom`, m/px.
pub fn ground_resolution(lat: f64, zoom: u32) -> f64 {
    EQUATOR_RESOLUTION * lat.to_radians().cos() / (1u64 << zoom) as f64
}

/// Global Web-Mercator pixel coordinates of a WGS-84 position.
pub fn global_pixel(lat: f64, lon: f64, zoom: u32) -> (f64, f64) {
    let n = (TILE_SIZE as f64) * (1u64 << zoom) as f64;
    let x = (lon + 180.0) / 360.0 * n;
    let lat_rad = lat.to_radians();
    let y = (1.0 - lat_rad.tan().asinh() / std::f64::consts::PI) / 2.0 * n;
    (x, y)
}

/// Read-only tile store.
pub struct TileStore {
    pub root: PathBuf,
    pub zoom: u32,
    pub legend: Legend,
    /// Query box sides, meters.
    pub box_m: (f64, f64),
}

impl TileStore {
    /// Open a store rooted at `root`. The zoom level is taken from the single
    /// numeric tile subdirectory if one exists, else defaults to 18.
    pub fn open(root: &Path) -> Result<TileStore, MapError> {
        let legend = Legend::load(&root.join("legend.json"))?;
        let mut zoom = DEFAULT_ZOOM;
        if let Ok(entries) = fs::read_dir(root) {
            let mut zooms: Vec<u32> = entries
                .flatten()
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().to_string_lossy().parse().ok())
                .collect();
            zooms.sort_unstable();
            if let Some(z) = zooms.first() {
                zoom = *z;
            }
        }
        Ok(TileStore {
            root: root.to_path_buf(),
            zoom,
            legend,
            box_m: (DEFAULT_BOX_M, DEFAULT_BOX_M),
        })
    }

    pub fn tile_path(&self, x: i64, y: i64) -> PathBuf {
        self.root.join(self.zoom.to_string()).join(format!("{x}_{y}.ppm"))
    }

    fn load_tile(&self, x: i64, y: i64) -> Result<Vec<[u8; 3]>, MapError> {
        let path = self.tile_path(x, y);
        if !path.is_file() {
            return Err(MapError::MissingTile {
                x,
                y,
                zoom: self.zoom,
            });
        }
        let (w, h, pixels) = read_ppm(&path)?;
        if w != TILE_SIZE || h != TILE_SIZE {
            return Err(MapError::BadTile {
                path,
                reason: format!("tile is {w}x{h}, expected {TILE_SIZE}x{TILE_SIZE}"),
            });
        }
        Ok(pixels)
    }

    /// Assemble the composite raster covering the axis-aligned `m` x `n`
    /// meter box centered on `center`, cropped exactly to the box.
    pub fn stitch_tiles(
        &self,
        center: (f64, f64),
        m: f64,
        n: f64,
    ) -> Result<CompositeRaster, MapError> {
        let res = ground_resolution(center.0, self.zoom);
        let width = (m / res).round().max(1.0) as u32;
        let height = (n / res).round().max(1.0) as u32;
        let (cx, cy) = global_pixel(center.0, center.1, self.zoom);
        let x0 = (cx - width as f64 / 2.0).round() as i64;
        let y0 = (cy - height as f64 / 2.0).round() as i64;

        let mut cache: HashMap<(i64, i64), Vec<[u8; 3]>> = HashMap::new();
        let mut pixels = Vec::with_capacity((width * height) as usize);
        let ts = TILE_SIZE as i64;
        for row in 0..height as i64 {
            let gy = y0 + row;
            let (ty, py) = (gy.div_euclid(ts), gy.rem_euclid(ts));
            for col in 0..width as i64 {
                let gx = x0 + col;
                let (tx, px) = (gx.div_euclid(ts), gx.rem_euclid(ts));
                if !cache.contains_key(&(tx, ty)) {
                    cache.insert((tx, ty), self.load_tile(tx, ty)?);
                }
                let tile = &cache[&(tx, ty)];
                pixels.push(tile[(py * ts + px) as usize]);
            }
        }
        Ok(CompositeRaster {
            width,
            height,
            pixels,
            meters_per_pixel: res,
        })
    }

    /// f10-f13 for the box around `centroid`.
    pub fn spatial_features(
        &self,
        centroid: (f64, f64),
    ) -> Result<(f64, f64, f64, u8), MapError> {
        let raster = self.stitch_tiles(centroid, self.box_m.0, self.box_m.1)?;
        let fractions = classify_pixels(&raster, &self.legend);
        let frac = |c| fractions.get(&c).copied().unwrap_or(0.0);
        Ok((
            100.0 * frac(LandmarkClass::Residential),
            100.0 * frac(LandmarkClass::Natural),
            100.0 * frac(LandmarkClass::Road),
            (frac(LandmarkClass::SpecialLandmark) > 0.0) as u8,
        ))
    }

    /// Tiles required for the query boxes of `stays` that are absent from the
    /// store, deduplicated and sorted.
    pub fn missing_tiles(&self, stays: &[StayLocation]) -> Vec<(i64, i64)> {
        let mut missing = std::collections::BTreeSet::new();
        let ts = TILE_SIZE as i64;
        for stay in stays {
            let (lat, lon) = stay.centroid;
            let res = ground_resolution(lat, self.zoom);
            let (cx, cy) = global_pixel(lat, lon, self.zoom);
            let half_w = self.box_m.0 / res / 2.0;
            let half_h = self.box_m.1 / res / 2.0;
            let x0 = ((cx - half_w).round() as i64).div_euclid(ts);
            let x1 = ((cx + half_w).round() as i64 - 1).div_euclid(ts);
            let y0 = ((cy - half_h).round() as i64).div_euclid(ts);
            let y1 = ((cy + half_h).round() as i64 - 1).div_euclid(ts);
            for tx in x0..=x1 {
                for ty in y0..=y1 {
                    if !self.tile_path(tx, ty).is_file() {
                        missing.insert((tx, ty));
                    }
                }
            }
        }
        missing.into_iter().collect()
    }
}

/// Exact-RGB classification; fractions over all pixels sum to 1.
pub fn classify_pixels(
    raster: &CompositeRaster,
    legend: &Legend,
) -> BTreeMap<LandmarkClass, f64> {
    let mut counts: BTreeMap<LandmarkClass, u64> = BTreeMap::new();
    for px in &raster.pixels {
        *counts.entry(legend.classify(*px)).or_default() += 1;
    }
    let total = raster.pixels.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / total))
        .collect()
}

pub fn read_ppm(path: &Path) -> Result<(u32, u32, Vec<[u8; 3]>), MapError> {
    let bad = |reason: &str| MapError::BadTile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let data = fs::read(path).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // header: "P6" <w> <h> <maxval>, whitespace separated, then raw RGB
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Option<String> {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    if token(&data).as_deref() != Some("P6") {
        return Err(bad("not a P6 file"));
    }
    let w: u32 = token(&data)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad width"))?;
    let h: u32 = token(&data)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad height"))?;
    let maxval: u32 = token(&data)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1; // single whitespace after maxval
    let need = (w * h * 3) as usize;
    if data.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    let pixels = data[pos..pos + need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((w, h, pixels))
}

pub fn write_ppm(path: &Path, w: u32, h: u32, pixels: &[[u8; 3]]) -> Result<(), MapError> {
    assert_eq!(pixels.len(), (w * h) as usize);
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in pixels {
        buf.extend_from_slice(px);
    }
    fs::write(path, buf).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })
}
