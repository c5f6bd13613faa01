//! Planar geometry for buffers around road polylines.
//!
//! Land-intersection areas are measured on a 1 m raster (cell centers at
//! half-integer offsets), which keeps the computation deterministic and exact
//! for the axis-aligned rectangles used as parcels.

use serde::{Deserialize, Serialize};

use super::KgError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, o: &Point) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }
}

/// Axis-aligned rectangle, half-open on the max side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x < self.max_x && p.y >= self.min_y && p.y < self.max_y
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x).max(0.0) * (self.max_y - self.min_y).max(0.0)
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min_x < o.max_x && o.min_x < self.max_x && self.min_y < o.max_y && o.min_y < self.max_y
    }
}

/// Distance from `p` to the segment `a`-`b` (a point when `a == b`).
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(&a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(&Point::new(a.x + t * dx, a.y + t * dy))
}

pub fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => p.dist(&line[0]),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn polyline_length(line: &[Point]) -> f64 {
    line.windows(2).map(|w| w[0].dist(&w[1])).sum()
}

/// Point halfway along the polyline by arc length.
pub fn polyline_midpoint(line: &[Point]) -> Point {
    let half = polyline_length(line) / 2.0;
    let mut acc = 0.0;
    for w in line.windows(2) {
        let l = w[0].dist(&w[1]);
        if acc + l >= half && l > 0.0 {
            let t = (half - acc) / l;
            return Point::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y));
        }
        acc += l;
    }
    line.first().copied().unwrap_or(Point::new(0.0, 0.0))
}

fn validate(line: &[Point], dist: f64) -> Result<(), KgError> {
    if line.is_empty() || !(dist > 0.0) || line.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(KgError::DegenerateGeometry);
    }
    Ok(())
}

fn bbox(line: &[Point], pad: f64) -> Rect {
    let mut r = Rect {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for p in line {
        r.min_x = r.min_x.min(p.x);
        r.min_y = r.min_y.min(p.y);
        r.max_x = r.max_x.max(p.x);
        r.max_y = r.max_y.max(p.y);
    }
    r.min_x -= pad;
    r.min_y -= pad;
    r.max_x += pad;
    r.max_y += pad;
    r
}

/// Visits the centers of all 1 m raster cells whose center lies within `dist`
/// of the polyline, passing the center and its distance.
fn for_each_cell(line: &[Point], dist: f64, mut f: impl FnMut(Point, f64)) {
    let b = bbox(line, dist);
    let (x0, y0) = (b.min_x.floor() as i64, b.min_y.floor() as i64);
    let (x1, y1) = (b.max_x.ceil() as i64, b.max_y.ceil() as i64);
    for iy in y0..y1 {
        let cy = iy as f64 + 0.5;
        for ix in x0..x1 {
            let c = Point::new(ix as f64 + 0.5, cy);
            let d = point_polyline_distance(c, line);
            if d <= dist {
                f(c, d);
            }
        }
    }
}

/// Fraction of the capsule buffer of radius `dist` around `line` covered by `parcel`.
pub fn buffer_land_ratio(line: &[Point], parcel: &Rect, dist: f64) -> Result<f64, KgError> {
    validate(line, dist)?;
    let (mut total, mut inside) = (0u64, 0u64);
    for_each_cell(line, dist, |c, _| {
        total += 1;
        if parcel.contains(c) {
            inside += 1;
        }
    });
    if total == 0 {
        return Err(KgError::DegenerateGeometry);
    }
    Ok(inside as f64 / total as f64)
}

/// Uniform-grid bucket index over parcels for fast point lookup.
#[derive(Debug, Clone)]
pub struct ParcelIndex {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl ParcelIndex {
    pub fn new(parcels: &[Rect], cell: f64) -> Self {
        if parcels.is_empty() {
            return Self {
                origin: Point::new(0.0, 0.0),
                cell,
                nx: 0,
                ny: 0,
                buckets: Vec::new(),
            };
        }
        let mut b = parcels[0];
        for p in parcels {
            b.min_x = b.min_x.min(p.min_x);
            b.min_y = b.min_y.min(p.min_y);
            b.max_x = b.max_x.max(p.max_x);
            b.max_y = b.max_y.max(p.max_y);
        }
        let nx = (((b.max_x - b.min_x) / cell).ceil() as usize).max(1);
        let ny = (((b.max_y - b.min_y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let origin = Point::new(b.min_x, b.min_y);
        for (i, p) in parcels.iter().enumerate() {
            let cx0 = ((p.min_x - origin.x) / cell).floor().max(0.0) as usize;
            let cy0 = ((p.min_y - origin.y) / cell).floor().max(0.0) as usize;
            let cx1 = (((p.max_x - origin.x) / cell).ceil() as usize).min(nx);
            let cy1 = (((p.max_y - origin.y) / cell).ceil() as usize).min(ny);
            for cy in cy0..cy1 {
                for cx in cx0..cx1 {
                    buckets[cy * nx + cx].push(i);
                }
            }
        }
        Self {
            origin,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    /// First parcel (lowest index) containing `p`.
    pub fn locate(&self, parcels: &[Rect], p: Point) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        if cx >= self.nx || cy >= self.ny {
            return None;
        }
        self.buckets[cy * self.nx + cx]
            .iter()
            .copied()
            .find(|&i| parcels[i].contains(p))
    }
}

/// Raster-accumulated land coverage of one road for every buffer distance.
///
/// Returns, per distance, the buffer cell count and the per-parcel cell counts
/// (sorted by parcel index).
pub fn land_coverage(
    line: &[Point],
    distances: &[f64],
    parcels: &[Rect],
    index: &ParcelIndex,
) -> Result<Vec<(u64, Vec<(usize, u64)>)>, KgError> {
    let max = distances.iter().cloned().fold(0.0, f64::max);
    validate(line, max)?;
    let mut totals = vec![0u64; distances.len()];
    let mut hits: Vec<std::collections::BTreeMap<usize, u64>> =
        vec![Default::default(); distances.len()];
    for_each_cell(line, max, |c, d| {
        let parcel = index.locate(parcels, c);
        for (k, &dk) in distances.iter().enumerate() {
            if d <= dk {
                totals[k] += 1;
                if let Some(p) = parcel {
                    *hits[k].entry(p).or_insert(0) += 1;
                }
            }
        }
    });
    Ok(totals
        .into_iter()
        .zip(hits)
        .map(|(t, h)| (t, h.into_iter().collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        let (a, b) = (Point::new(0.0, 0.0), Point::new(10.0, 0.0));
        assert_eq!(point_segment_distance(Point::new(5.0, 3.0), a, b), 3.0);
        assert_eq!(point_segment_distance(Point::new(-4.0, 3.0), a, b), 5.0);
        assert_eq!(point_segment_distance(Point::new(1.0, 1.0), a, a), 2f64.sqrt());
    }

    #[test]
    fn land_ratio_extremes() {
        let line = [Point::new(0.0, 0.0), Point::new(20.0, 0.0)];
        let cover = Rect {
            min_x: -100.0,
            min_y: -100.0,
            max_x: 100.0,
            max_y: 100.0,
        };
        let far = Rect {
            min_x: 500.0,
            min_y: 500.0,
            max_x: 600.0,
            max_y: 600.0,
        };
        assert_eq!(buffer_land_ratio(&line, &cover, 10.0).unwrap(), 1.0);
        assert_eq!(buffer_land_ratio(&line, &far, 10.0).unwrap(), 0.0);
        assert!(buffer_land_ratio(&line, &far, 0.0).is_err());
        assert!(buffer_land_ratio(&[], &far, 1.0).is_err());
    }

    #[test]
    fn half_plane_through_disk_center() {
        let line = [Point::new(0.0, 0.0), Point::new(0.0, 0.0)];
        let half = Rect {
            min_x: 0.0,
            min_y: -1e3,
            max_x: 1e3,
            max_y: 1e3,
        };
        let r = buffer_land_ratio(&line, &half, 50.0).unwrap();
        assert!((r - 0.5).abs() < 1e-3, "{r}");
    }

    #[test]
    fn coverage_matches_single_ratio() {
        let line = [Point::new(3.0, 4.0), Point::new(40.0, 10.0), Point::new(60.0, 50.0)];
        let parcels = vec![
            Rect {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 30.0,
                max_y: 30.0,
            },
            Rect {
                min_x: 30.0,
                min_y: 0.0,
                max_x: 80.0,
                max_y: 30.0,
            },
        ];
        let idx = ParcelIndex::new(&parcels, 25.0);
        let cov = land_coverage(&line, &[10.0, 20.0], &parcels, &idx).unwrap();
        for (k, d) in [10.0, 20.0].iter().enumerate() {
            for (pi, cnt) in &cov[k].1 {
                let r = buffer_land_ratio(&line, &parcels[*pi], *d).unwrap();
                assert!((r - *cnt as f64 / cov[k].0 as f64).abs() < 1e-12);
            }
        }
    }
}
