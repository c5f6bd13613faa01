use std::collections::{HashMap, HashSet, VecDeque};

use ckg_core::kg::geometry::{point_segment_distance, Point};
use ckg_core::kg::{
    build_spatial_unit, build_temporal_unit, BufferConfig, EntityKind, KgError, KnowledgeGraph,
    TemporalConfig, Unit,
};
use ckg_core::synth::{generate_city, generate_series, City, Poi, Road};
use proptest::prelude::*;

fn one_road_city(poi: Point) -> City {
    let line = vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0)];
    City {
        seed: 0,
        roads: vec![Road {
            length: 100.0,
            line,
            free_flow: 50.0,
            arterial: false,
        }],
        adjacency: vec![vec![]],
        pois: vec![Poi { point: poi, kind: 0 }],
        parcels: vec![],
        stations: vec![],
    }
}

#[test]
fn school_at_fifty_meters() {
    let poi = Point::new(50.0, 50.0);
    let line = [Point::new(0.0, 0.0), Point::new(100.0, 0.0)];
    let d = point_segment_distance(poi, line[0], line[1]);
    let city = one_road_city(poi);
    let mut kg = KnowledgeGraph::new();
    build_spatial_unit(&mut kg, &city, &BufferConfig::near(), 0).unwrap();
    let got: Vec<(String, Option<f64>)> = kg
        .facts(Unit::Spatial)
        .iter()
        .map(|f| (kg.relation_name(f.relation).to_string(), f.attribute))
        .collect();
    let want: Vec<(String, Option<f64>)> = (1..=10)
        .map(|k| k * 10)
        .filter(|&b| b as f64 >= d)
        .map(|b| (format!("hasPoiSchoolInBuffer{b}"), Some(1.0)))
        .collect();
    assert_eq!(got, want);
    assert_eq!(want.len(), 6);
    assert_eq!(kg.entity(kg.roads()[0]).y, Some(50.0));
}

#[test]
fn empty_city_rejected() {
    let mut city = one_road_city(Point::new(0.0, 0.0));
    city.roads.clear();
    let mut kg = KnowledgeGraph::new();
    assert_eq!(
        build_spatial_unit(&mut kg, &city, &BufferConfig::near(), 1),
        Err(KgError::EmptyCity)
    );
}

fn bfs_hops(adj: &[Vec<usize>], s: usize) -> Vec<Option<u32>> {
    let mut d = vec![None; adj.len()];
    d[s] = Some(0);
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    d
}

#[test]
fn temporal_structure_is_time_invariant() {
    let city = generate_city(8, 4).unwrap();
    let series = generate_series(&city, 2, 4).unwrap();
    let cfg = TemporalConfig::default();
    let mut a = KnowledgeGraph::new();
    let mut b = KnowledgeGraph::new();
    build_temporal_unit(&mut a, &city, &series, &cfg, 10).unwrap();
    let schema = build_temporal_unit(&mut b, &city, &series, &cfg, 200).unwrap();
    let key = |kg: &KnowledgeGraph| -> Vec<(u32, u32, u32)> {
        kg.facts(Unit::Temporal)
            .iter()
            .map(|f| (f.head.0, f.relation.0, f.tail.0))
            .collect()
    };
    assert_eq!(key(&a), key(&b));
    let attrs_a: Vec<_> = a.facts(Unit::Temporal).iter().map(|f| f.attribute).collect();
    assert_ne!(attrs_a, b.facts(Unit::Temporal).iter().map(|f| f.attribute).collect::<Vec<_>>());
    assert_eq!(schema.attributes_at(&series, 10).unwrap(), attrs_a);
    // Six singleton context entities.
    for k in [EntityKind::Hour, EntityKind::Day, EntityKind::Jam, EntityKind::Tprt, EntityKind::Rain, EntityKind::Wind] {
        assert_eq!(a.entities().iter().filter(|e| e.kind == k).count(), 1);
    }
    assert!(matches!(
        schema.attributes_at(&series, 4),
        Err(KgError::InsufficientHistory { .. })
    ));
}

#[test]
fn jam_window_mean() {
    let city = generate_city(3, 9).unwrap();
    let mut series = generate_series(&city, 1, 9).unwrap();
    series.jam.set(0, 49, 2.0);
    series.jam.set(0, 50, 4.0);
    let cfg = TemporalConfig {
        past_minutes: vec![20],
        link_kinds: vec![],
        slot_minutes: 10,
    };
    let mut kg = KnowledgeGraph::new();
    build_temporal_unit(&mut kg, &city, &series, &cfg, 50).unwrap();
    let rel = kg.find_relation("hasJam20").unwrap();
    let f = kg
        .facts(Unit::Temporal)
        .iter()
        .find(|f| f.relation == rel && f.head == kg.roads()[0])
        .unwrap();
    assert_eq!(f.attribute, Some(3.0));
}

#[test]
fn json_round_trip() {
    let city = generate_city(6, 2).unwrap();
    let mut kg = KnowledgeGraph::new();
    build_spatial_unit(&mut kg, &city, &BufferConfig::near(), 3).unwrap();
    let text = kg.to_json();
    let back = KnowledgeGraph::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
    assert!(text.starts_with("{\"entities\":[{\"id\":0,\"name\":\"road_0\",\"kind\":\"road\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spatial_unit_invariants(seed in 0u64..1000, n in 2usize..14) {
        let city = generate_city(n, seed).unwrap();
        let mut kg = KnowledgeGraph::new();
        build_spatial_unit(&mut kg, &city, &BufferConfig::near(), 6).unwrap();
        let facts = kg.facts(Unit::Spatial);
        let set: HashSet<(u32, u32, u32)> =
            facts.iter().map(|f| (f.head.0, f.relation.0, f.tail.0)).collect();
        let mut link_of: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for f in facts {
            let name = kg.relation_name(f.relation);
            if name == "adjacentToRoad" || name.starts_with("spatiallyLink") {
                prop_assert!(set.contains(&(f.tail.0, f.relation.0, f.head.0)));
            }
            if let Some(k) = name.strip_prefix("spatiallyLink") {
                link_of.entry((f.head.0, f.tail.0)).or_default().push(k.parse().unwrap());
            }
        }
        for ((a, b), ks) in &link_of {
            prop_assert_eq!(ks.len(), 1);
            let hops = bfs_hops(&city.adjacency, *a as usize);
            prop_assert_eq!(hops[*b as usize], Some(ks[0]));
        }
        // The road graph is connected.
        let hops = bfs_hops(&city.adjacency, 0);
        prop_assert!(hops.iter().all(Option::is_some));
        // POI counts never drop as the buffer grows.
        let mut by_type: HashMap<(u32, String), Vec<(u32, f64)>> = HashMap::new();
        for f in facts {
            let name = kg.relation_name(f.relation);
            if let Some(rest) = name.strip_prefix("hasPoi") {
                let (ty, d) = rest.split_once("InBuffer").unwrap();
                by_type.entry((f.head.0, ty.to_string())).or_default()
                    .push((d.parse().unwrap(), f.attribute.unwrap()));
            }
            if name.starts_with("hasLand") {
                let x = f.attribute.unwrap();
                prop_assert!(x > 0.0 && x <= 1.0);
            }
        }
        for v in by_type.values_mut() {
            v.sort_by(|a, b| a.0.cmp(&b.0));
            prop_assert!(v.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }
}
