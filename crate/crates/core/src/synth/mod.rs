//! Deterministic synthetic city: a grid-like road network, clustered POIs,
//! zoned land parcels, weather stations, and coupled speed/jam/weather series.
//!
//! Every component draws from its own ChaCha stream derived from one seed, so
//! growing one component never shifts the random draws of another.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::geometry::{point_polyline_distance, polyline_length, polyline_midpoint, Point, Rect};
use crate::kg::{LAND_TYPES, POI_TYPES};

pub const BLOCK_METERS: f64 = 200.0;
pub const SLOT_MINUTES: usize = 10;
pub const SLOTS_PER_DAY: usize = 24 * 60 / SLOT_MINUTES;
/// Weekday of the first simulated day (Monday = 1). A mid-week start puts a
/// weekend inside the first 70% of a one-week series.
pub const FIRST_WEEKDAY: u32 = 3;
/// Land types per zone; zones are residential, commercial, industrial, green.
pub const LAND_TYPES_PER_ZONE: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("need at least 2 roads, got {0}")]
    TooSmall(usize),
    #[error("need at least 1 day")]
    NoDays,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherVar {
    Tprt,
    Rain,
    Wind,
}

impl WeatherVar {
    pub const ALL: [WeatherVar; 3] = [WeatherVar::Tprt, WeatherVar::Rain, WeatherVar::Wind];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub line: Vec<Point>,
    pub length: f64,
    pub free_flow: f64,
    pub arterial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub point: Point,
    pub kind: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub rect: Rect,
    pub kind: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub point: Point,
    pub measures: Vec<WeatherVar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub seed: u64,
    pub roads: Vec<Road>,
    pub adjacency: Vec<Vec<usize>>,
    pub pois: Vec<Poi>,
    pub parcels: Vec<Parcel>,
    pub stations: Vec<Station>,
}

impl City {
    pub fn midpoint(&self, road: usize) -> Point {
        polyline_midpoint(&self.roads[road].line)
    }

    /// Nearest station measuring `var` to the road midpoint; ties go to the
    /// lower station index.
    pub fn nearest_station(&self, road: usize, var: WeatherVar) -> Option<usize> {
        let m = self.midpoint(road);
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.stations.iter().enumerate() {
            if !s.measures.contains(&var) {
                continue;
            }
            let d = s.point.dist(&m);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|b| b.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("city serializes")
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

type Node = (i64, i64);

fn edge_nodes(e: (Node, Node)) -> [Node; 2] {
    [e.0, e.1]
}

/// Grows a connected set of grid edges from the center outwards.
fn grow_edges(n: usize, rng: &mut ChaCha8Rng) -> Vec<(Node, Node)> {
    let mut g = 2i64;
    while ((2 * g * (g - 1)) as f64) < (n as f64 / 0.6).ceil() {
        g += 1;
    }
    let c = g / 2;
    let mut chosen: Vec<(Node, Node)> = vec![((c - 1, c), (c, c))];
    let mut nodes: std::collections::BTreeSet<Node> = [(c - 1, c), (c, c)].into_iter().collect();
    while chosen.len() < n {
        let mut frontier: Vec<(Node, Node)> = Vec::new();
        for &(x, y) in &nodes {
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let o = (x + dx, y + dy);
                if o.0 < 0 || o.1 < 0 || o.0 >= g || o.1 >= g {
                    continue;
                }
                let e = if (x, y) < o { ((x, y), o) } else { (o, (x, y)) };
                if !chosen.contains(&e) && !frontier.contains(&e) {
                    frontier.push(e);
                }
            }
        }
        frontier.sort();
        let e = *frontier.choose(rng).expect("grid large enough");
        nodes.extend(edge_nodes(e));
        chosen.push(e);
    }
    chosen
}

/// Builds a connected synthetic city with `n_roads` road segments.
pub fn generate_city(n_roads: usize, seed: u64) -> Result<City, SynthError> {
    if n_roads < 2 {
        return Err(SynthError::TooSmall(n_roads));
    }
    let mut rng = stream(seed, 1);
    let edges = grow_edges(n_roads, &mut rng);

    let mut roads = Vec::with_capacity(n_roads);
    for &(a, b) in &edges {
        let pa = Point::new(a.0 as f64 * BLOCK_METERS, a.1 as f64 * BLOCK_METERS);
        let pb = Point::new(b.0 as f64 * BLOCK_METERS, b.1 as f64 * BLOCK_METERS);
        let jitter = rng.gen_range(-15.0..15.0);
        let horizontal = a.1 == b.1;
        let mid = if horizontal {
            Point::new((pa.x + pb.x) / 2.0, pa.y + jitter)
        } else {
            Point::new(pa.x + jitter, (pa.y + pb.y) / 2.0)
        };
        let line = vec![pa, mid, pb];
        let arterial = if horizontal { a.1 % 3 == 0 } else { a.0 % 3 == 0 };
        let ff = if arterial {
            rng.gen_range(60.0..80.0)
        } else {
            rng.gen_range(30.0..50.0)
        };
        roads.push(Road {
            length: polyline_length(&line),
            line,
            free_flow: (ff * 10.0f64).round() / 10.0,
            arterial,
        });
    }
    let mut adjacency = vec![Vec::new(); n_roads];
    for i in 0..n_roads {
        for j in i + 1..n_roads {
            let shared = edge_nodes(edges[i]).iter().any(|n| edge_nodes(edges[j]).contains(n));
            if shared {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }

    let (mut lo, mut hi) = ((i64::MAX, i64::MAX), (i64::MIN, i64::MIN));
    for e in &edges {
        for n in edge_nodes(*e) {
            lo = (lo.0.min(n.0), lo.1.min(n.1));
            hi = (hi.0.max(n.0), hi.1.max(n.1));
        }
    }
    let bbox = Rect {
        min_x: lo.0 as f64 * BLOCK_METERS - 100.0,
        min_y: lo.1 as f64 * BLOCK_METERS - 100.0,
        max_x: hi.0 as f64 * BLOCK_METERS + 100.0,
        max_y: hi.1 as f64 * BLOCK_METERS + 100.0,
    };

    let mut rng = stream(seed, 2);
    let spread = Normal::new(0.0, 120.0).expect("valid sd");
    let mut pois = Vec::new();
    for kind in 0..POI_TYPES.len() {
        let clusters: Vec<Point> = (0..rng.gen_range(1..=3))
            .map(|_| {
                Point::new(
                    rng.gen_range(bbox.min_x..bbox.max_x),
                    rng.gen_range(bbox.min_y..bbox.max_y),
                )
            })
            .collect();
        let count = ((n_roads as f64 * 6.0 / POI_TYPES.len() as f64) * rng.gen_range(0.5..1.5))
            .round()
            .max(1.0) as usize;
        for _ in 0..count {
            let c = clusters[rng.gen_range(0..clusters.len())];
            let p = Point::new(
                (c.x + spread.sample(&mut rng)).clamp(bbox.min_x, bbox.max_x),
                (c.y + spread.sample(&mut rng)).clamp(bbox.min_y, bbox.max_y),
            );
            pois.push(Poi { point: p, kind });
        }
    }

    let mut rng = stream(seed, 3);
    let mut parcels = Vec::new();
    let inset = 6.0;
    for bx in (lo.0 - 1)..=hi.0 {
        for by in (lo.1 - 1)..=hi.1 {
            let zone = *[0usize, 0, 0, 1, 1, 2, 3].choose(&mut rng).unwrap();
            let (x0, y0) = (bx as f64 * BLOCK_METERS, by as f64 * BLOCK_METERS);
            let half = BLOCK_METERS / 2.0;
            for (sx, sy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                let rect = Rect {
                    min_x: x0 + sx * half + if sx == 0.0 { inset } else { 0.0 },
                    min_y: y0 + sy * half + if sy == 0.0 { inset } else { 0.0 },
                    max_x: x0 + (sx + 1.0) * half - if sx == 1.0 { inset } else { 0.0 },
                    max_y: y0 + (sy + 1.0) * half - if sy == 1.0 { inset } else { 0.0 },
                };
                let kind = zone * LAND_TYPES_PER_ZONE + rng.gen_range(0..LAND_TYPES_PER_ZONE);
                debug_assert!(kind < LAND_TYPES.len());
                parcels.push(Parcel { rect, kind });
            }
        }
    }

    let mut rng = stream(seed, 4);
    let n_st = rng.gen_range(4..=6);
    let mut stations: Vec<Station> = (0..n_st)
        .map(|_| {
            let point = Point::new(
                rng.gen_range(bbox.min_x..bbox.max_x),
                rng.gen_range(bbox.min_y..bbox.max_y),
            );
            let mut measures: Vec<WeatherVar> =
                WeatherVar::ALL.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
            if measures.is_empty() {
                measures.push(WeatherVar::ALL[rng.gen_range(0..3)]);
            }
            Station { point, measures }
        })
        .collect();
    for (k, var) in WeatherVar::ALL.iter().enumerate() {
        if !stations.iter().any(|s| s.measures.contains(var)) {
            let s = &mut stations[k % n_st];
            s.measures.push(*var);
            s.measures.sort();
        }
    }

    Ok(City {
        seed,
        roads,
        adjacency,
        pois,
        parcels,
        stations,
    })
}

/// Roads × slots matrix, row-major by road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedMatrix {
    pub n_roads: usize,
    pub n_slots: usize,
    pub values: Vec<f64>,
}

impl SpeedMatrix {
    pub fn zeros(n_roads: usize, n_slots: usize) -> Self {
        Self {
            n_roads,
            n_slots,
            values: vec![0.0; n_roads * n_slots],
        }
    }

    pub fn get(&self, road: usize, slot: usize) -> f64 {
        self.values[road * self.n_slots + slot]
    }

    pub fn set(&mut self, road: usize, slot: usize, v: f64) {
        self.values[road * self.n_slots + slot] = v;
    }

    pub fn road(&self, road: usize) -> &[f64] {
        &self.values[road * self.n_slots..(road + 1) * self.n_slots]
    }

    /// CSV with one row per slot and one column per road.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["slot".to_string()];
        header.extend((0..self.n_roads).map(|r| format!("road_{r}")));
        w.write_record(&header).expect("in-memory write");
        for t in 0..self.n_slots {
            let mut row = vec![t.to_string()];
            row.extend((0..self.n_roads).map(|r| self.get(r, t).to_string()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv(text: &str) -> Result<Self, SynthError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let n_roads = r.headers().map_err(|e| SynthError::Csv(e.to_string()))?.len().saturating_sub(1);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| SynthError::Csv(e.to_string()))?;
            let vals: Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse).collect();
            rows.push(vals.map_err(|e| SynthError::Csv(e.to_string()))?);
        }
        let mut m = Self::zeros(n_roads, rows.len());
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n_roads {
                return Err(SynthError::Csv(format!("row {t} has {} values", row.len())));
            }
            for (road, v) in row.iter().enumerate() {
                m.set(road, t, *v);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StationWeather {
    pub tprt: Option<Vec<f64>>,
    pub rain: Option<Vec<f64>>,
    pub wind: Option<Vec<f64>>,
}

impl StationWeather {
    pub fn var(&self, v: WeatherVar) -> Option<&[f64]> {
        match v {
            WeatherVar::Tprt => self.tprt.as_deref(),
            WeatherVar::Rain => self.rain.as_deref(),
            WeatherVar::Wind => self.wind.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitySeries {
    pub n_slots: usize,
    pub slot_minutes: usize,
    pub speed: SpeedMatrix,
    pub jam: SpeedMatrix,
    pub weather: Vec<StationWeather>,
}

impl CitySeries {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("series serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Multiplies every stochastic component; 0 gives the pure template.
    pub noise_scale: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self { noise_scale: 1.0 }
    }
}

/// Raised-cosine bump of half-width 3 h centered at `center` (hours).
fn bump(hour: f64, center: f64) -> f64 {
    let d = (hour - center).abs();
    if d >= 3.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * d / 3.0).cos())
    }
}

/// Day of week of slot `t` in 1..=7 (Monday = 1).
pub fn weekday_of_slot(t: usize) -> u32 {
    ((t / SLOTS_PER_DAY + FIRST_WEEKDAY as usize - 1) % 7) as u32 + 1
}

/// Deterministic congestion template at slot `t` for given peak amplitudes.
pub fn congestion_template(t: usize, am: f64, pm: f64) -> f64 {
    let hour = (t % SLOTS_PER_DAY) as f64 * SLOT_MINUTES as f64 / 60.0;
    let weekend = weekday_of_slot(t) >= 6;
    let base = am * bump(hour, 8.0) + pm * bump(hour, 18.0);
    if weekend {
        0.7 * base
    } else {
        base
    }
}

/// Jam factor of a congestion level.
pub fn jam_from_congestion(c: f64) -> f64 {
    (10.0 * c).clamp(0.0, 10.0)
}

/// Morning and evening peak amplitudes per road, derived from the POI mix
/// within 300 m and the land zones around the road midpoint.
pub fn peak_profiles(city: &City) -> Vec<(f64, f64)> {
    let mut rng = stream(city.seed, 5);
    let w: Vec<(f64, f64)> = (0..POI_TYPES.len())
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .collect();
    const ZONE: [(f64, f64); 4] = [(0.20, 0.05), (0.05, 0.25), (0.20, 0.10), (0.0, 0.0)];
    (0..city.roads.len())
        .map(|r| {
            let line = &city.roads[r].line;
            let near: Vec<&Poi> = city
                .pois
                .iter()
                .filter(|p| point_polyline_distance(p.point, line) <= 300.0)
                .collect();
            let (wa, wp) = if near.is_empty() {
                (0.3, 0.3)
            } else {
                let n = near.len() as f64;
                (
                    near.iter().map(|p| w[p.kind].0).sum::<f64>() / n,
                    near.iter().map(|p| w[p.kind].1).sum::<f64>() / n,
                )
            };
            let density = (near.len() as f64 / 10.0).min(1.0);
            let m = city.midpoint(r);
            let probe = Rect {
                min_x: m.x - 100.0,
                min_y: m.y - 100.0,
                max_x: m.x + 100.0,
                max_y: m.y + 100.0,
            };
            let zones: Vec<usize> = city
                .parcels
                .iter()
                .filter(|p| p.rect.intersects(&probe))
                .map(|p| p.kind / LAND_TYPES_PER_ZONE)
                .collect();
            let (za, zp) = if zones.is_empty() {
                (0.0, 0.0)
            } else {
                let n = zones.len() as f64;
                (
                    zones.iter().map(|&z| ZONE[z].0).sum::<f64>() / n,
                    zones.iter().map(|&z| ZONE[z].1).sum::<f64>() / n,
                )
            };
            let scale = if city.roads[r].arterial { 1.2 } else { 1.0 };
            let am = ((0.15 + 0.35 * wa * (0.5 + 0.5 * density) + za) * scale).clamp(0.05, 0.85);
            let pm = ((0.15 + 0.35 * wp * (0.5 + 0.5 * density) + zp) * scale).clamp(0.05, 0.85);
            (am, pm)
        })
        .collect()
}

pub fn generate_series(city: &City, n_days: usize, seed: u64) -> Result<CitySeries, SynthError> {
    generate_series_with(city, n_days, seed, &SeriesConfig::default())
}

/// Simulates `n_days` of 10-minute slots starting at 00:00 on [`FIRST_WEEKDAY`].
pub fn generate_series_with(
    city: &City,
    n_days: usize,
    seed: u64,
    cfg: &SeriesConfig,
) -> Result<CitySeries, SynthError> {
    if n_days == 0 {
        return Err(SynthError::NoDays);
    }
    let ns = cfg.noise_scale;
    let n_slots = n_days * SLOTS_PER_DAY;
    let n_roads = city.roads.len();
    let std_normal = Normal::new(0.0, 1.0).expect("valid sd");
    let tau = std::f64::consts::TAU;

    let mut rng = stream(seed, 10);
    let mut global_rain = vec![0.0; n_slots];
    let (mut raining, mut intensity) = (false, 0.0);
    for g in global_rain.iter_mut() {
        if raining {
            if rng.gen_bool(0.08) {
                raining = false;
            }
        } else if rng.gen_bool((0.01 * ns).clamp(0.0, 1.0)) {
            raining = true;
            intensity = rng.gen_range(1.0..10.0);
        }
        if raining {
            *g = intensity;
        }
    }
    let weather: Vec<StationWeather> = city
        .stations
        .iter()
        .map(|s| {
            let factor = rng.gen_range(0.6..1.4);
            let (mut at, mut aw) = (0.0, 0.0);
            let mut tprt = Vec::with_capacity(n_slots);
            let mut rain = Vec::with_capacity(n_slots);
            let mut wind = Vec::with_capacity(n_slots);
            for (t, g) in global_rain.iter().enumerate() {
                let hour = (t % SLOTS_PER_DAY) as f64 / 6.0;
                at = 0.95 * at + 0.2 * ns * std_normal.sample(&mut rng);
                aw = 0.9 * aw + 0.3 * ns * std_normal.sample(&mut rng);
                tprt.push(27.0 + 3.0 * (tau * (hour - 9.0) / 24.0).sin() + at - 0.3 * g);
                rain.push(g * factor);
                wind.push((3.0 + 1.5 * (tau * hour / 24.0).sin() + aw).max(0.0));
            }
            StationWeather {
                tprt: s.measures.contains(&WeatherVar::Tprt).then_some(tprt),
                rain: s.measures.contains(&WeatherVar::Rain).then_some(rain),
                wind: s.measures.contains(&WeatherVar::Wind).then_some(wind),
            }
        })
        .collect();

    let profiles = peak_profiles(city);
    let rain_src: Vec<usize> = (0..n_roads)
        .map(|r| city.nearest_station(r, WeatherVar::Rain).expect("rain station exists"))
        .collect();
    let mut rng = stream(seed, 11);
    let mut speed = SpeedMatrix::zeros(n_roads, n_slots);
    let mut jam = SpeedMatrix::zeros(n_roads, n_slots);
    let mut ar = vec![0.0; n_roads];
    let mut incident = vec![0.0; n_roads];
    let mut raw = vec![0.0; n_roads];
    for t in 0..n_slots {
        for r in 0..n_roads {
            ar[r] = 0.9 * ar[r] + 0.02 * ns * std_normal.sample(&mut rng);
            incident[r] *= 0.85;
            if rng.gen_bool((0.003 * ns).clamp(0.0, 1.0)) {
                incident[r] += rng.gen_range(0.2..0.4);
            }
            let rain = weather[rain_src[r]].rain.as_ref().map_or(0.0, |v| v[t]);
            let (am, pm) = profiles[r];
            raw[r] = congestion_template(t, am, pm) + 0.015 * rain + ar[r] + incident[r];
        }
        for r in 0..n_roads {
            let nb = &city.adjacency[r];
            let mean_nb = if nb.is_empty() {
                raw[r]
            } else {
                nb.iter().map(|&j| raw[j]).sum::<f64>() / nb.len() as f64
            };
            let c = (0.75 * raw[r] + 0.25 * mean_nb).clamp(0.0, 0.95);
            let ff = city.roads[r].free_flow;
            let noise = ns * std_normal.sample(&mut rng);
            speed.set(r, t, (ff * (1.0 - c) + noise).clamp(0.05 * ff, ff));
            jam.set(r, t, jam_from_congestion(c));
        }
    }
    Ok(CitySeries {
        n_slots,
        slot_minutes: SLOT_MINUTES,
        speed,
        jam,
        weather,
    })
}
