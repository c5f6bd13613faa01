use std::collections::VecDeque;

use rayon::prelude::*;

use super::geometry::{land_coverage, point_polyline_distance, ParcelIndex, Rect};
use super::{BufferConfig, EntityKind, Fact, KgError, KnowledgeGraph, Unit};
use crate::synth::City;

pub const POI_TYPES: [&str; 17] = [
    "School", "Hospital", "Mall", "Restaurant", "Office", "Hotel", "Bank", "Park", "Station",
    "Market", "Clinic", "Cinema", "Library", "Gym", "Worship", "Factory", "Parking",
];

/// Land types grouped by zone, seven each: residential, commercial,
/// industrial, green/civic.
pub const LAND_TYPES: [&str; 28] = [
    "ResidentialLow", "ResidentialMid", "ResidentialHigh", "Landed", "Dormitory", "MixedUse",
    "Village", "Retail", "OfficeLand", "HotelLand", "BusinessPark", "Entertainment",
    "CommercialMixed", "Wholesale", "LightIndustry", "HeavyIndustry", "Warehouse", "Utility",
    "Port", "Depot", "Quarry", "ParkLand", "Reserve", "Cemetery", "Sports", "Education",
    "Health", "Civic",
];

/// Breadth-first hop counts between roads, as `(from, to, order)` for every
/// ordered pair with `1 <= order <= max_order`, sorted by `(from, to)`.
pub fn compute_spatial_links(
    adjacency: &[Vec<usize>],
    max_order: u32,
) -> Result<Vec<(usize, usize, u32)>, KgError> {
    if !(1..=12).contains(&max_order) {
        return Err(KgError::InvalidConfig(format!("link order {max_order}")));
    }
    let n = adjacency.len();
    let mut out = Vec::new();
    for s in 0..n {
        let mut dist = vec![u32::MAX; n];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            if dist[u] == max_order {
                continue;
            }
            for &v in &adjacency[u] {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        for (t, &d) in dist.iter().enumerate() {
            if t != s && d != u32::MAX {
                out.push((s, t, d));
            }
        }
    }
    Ok(out)
}

/// Per-road counts of POIs by type within each buffer distance.
fn poi_counts(city: &City, road: usize, dists: &[f64], n_types: usize) -> Vec<Vec<u32>> {
    let mut counts = vec![vec![0u32; dists.len()]; n_types];
    let line = &city.roads[road].line;
    for p in &city.pois {
        let d = point_polyline_distance(p.point, line);
        for (k, &dk) in dists.iter().enumerate() {
            if d <= dk {
                counts[p.kind][k] += 1;
            }
        }
    }
    counts
}

/// Per-road land area ratio by land type within each buffer distance.
fn land_ratios(
    city: &City,
    road: usize,
    dists: &[f64],
    rects: &[Rect],
    index: &ParcelIndex,
    n_types: usize,
) -> Result<Vec<Vec<f64>>, KgError> {
    let cov = land_coverage(&city.roads[road].line, dists, rects, index)?;
    let mut ratios = vec![vec![0.0; dists.len()]; n_types];
    for (k, (total, hits)) in cov.iter().enumerate() {
        let mut per_type = vec![0u64; n_types];
        for &(p, c) in hits {
            per_type[city.parcels[p].kind] += c;
        }
        for (ty, c) in per_type.into_iter().enumerate() {
            ratios[ty][k] = c as f64 / *total as f64;
        }
    }
    Ok(ratios)
}

/// Emits the spatial unit: road entities (with free-flow speed as `y`),
/// symmetric adjacency, direct POI-type and land-type buffer facts, and
/// spatial links up to `max_link_order` (0 disables links).
pub fn build_spatial_unit(
    kg: &mut KnowledgeGraph,
    city: &City,
    buffer: &BufferConfig,
    max_link_order: u32,
) -> Result<(), KgError> {
    if city.roads.is_empty() {
        return Err(KgError::EmptyCity);
    }
    let roads: Vec<_> = (0..city.roads.len())
        .map(|i| kg.register_entity(&format!("road_{i}"), EntityKind::Road))
        .collect::<Result<_, _>>()?;
    for (i, &id) in roads.iter().enumerate() {
        kg.set_entity_attribute(id, city.roads[i].free_flow)?;
    }

    let adj = kg.register_relation("adjacentToRoad")?;
    for (a, nbrs) in city.adjacency.iter().enumerate() {
        for &b in nbrs {
            kg.add_fact(Unit::Spatial, Fact::new(roads[a], adj, roads[b], None))?;
        }
    }

    let dists: Vec<f64> = buffer.distances.iter().map(|&d| d as f64).collect();
    let rects: Vec<Rect> = city.parcels.iter().map(|p| p.rect).collect();
    let index = ParcelIndex::new(&rects, 200.0);
    let per_road: Vec<(Vec<Vec<u32>>, Vec<Vec<f64>>)> = (0..city.roads.len())
        .into_par_iter()
        .map(|r| {
            Ok((
                poi_counts(city, r, &dists, POI_TYPES.len()),
                land_ratios(city, r, &dists, &rects, &index, LAND_TYPES.len())?,
            ))
        })
        .collect::<Result<_, KgError>>()?;

    for (r, (pois, lands)) in per_road.iter().enumerate() {
        for (ty, counts) in pois.iter().enumerate() {
            for (k, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let tail = kg.register_entity(&format!("poiType_{}", POI_TYPES[ty]), EntityKind::PoiType)?;
                let rel = kg.register_relation(&format!(
                    "hasPoi{}InBuffer{}",
                    POI_TYPES[ty], buffer.distances[k]
                ))?;
                kg.add_fact(Unit::Spatial, Fact::new(roads[r], rel, tail, Some(c as f64)))?;
            }
        }
        for (ty, ratios) in lands.iter().enumerate() {
            for (k, &x) in ratios.iter().enumerate() {
                if x <= 0.0 {
                    continue;
                }
                let tail =
                    kg.register_entity(&format!("landType_{}", LAND_TYPES[ty]), EntityKind::LandType)?;
                let rel = kg.register_relation(&format!(
                    "hasLand{}InBuffer{}",
                    LAND_TYPES[ty], buffer.distances[k]
                ))?;
                kg.add_fact(Unit::Spatial, Fact::new(roads[r], rel, tail, Some(x)))?;
            }
        }
    }

    if max_link_order > 0 {
        for (a, b, k) in compute_spatial_links(&city.adjacency, max_link_order)? {
            let rel = kg.register_relation(&format!("spatiallyLink{k}"))?;
            kg.add_fact(Unit::Spatial, Fact::new(roads[a], rel, roads[b], None))?;
        }
    }
    kg.config.buffer = Some(buffer.clone());
    kg.config.max_link_order = Some(max_link_order);
    Ok(())
}
