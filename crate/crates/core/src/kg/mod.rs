//! Knowledge-graph data model: registries, facts, and the spatial/temporal
//! unit builders.

pub mod geometry;
mod spatial;
mod temporal;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use spatial::{build_spatial_unit, compute_spatial_links, POI_TYPES, LAND_TYPES};
pub use temporal::{
    build_temporal_unit, day_of_slot, encode_day, encode_hour, hour_of_slot, link_of_relation, AttrSource,
    TemporalSchema, TempKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgError {
    #[error("duplicate fact ({0}, {1}, {2})")]
    DuplicateFact(u32, u32, u32),
    #[error("unknown id {0}")]
    UnknownId(u32),
    #[error("empty name")]
    EmptyName,
    #[error("non-finite attribute")]
    NonFiniteAttribute,
    #[error("city has no roads")]
    EmptyCity,
    #[error("slot {t} lacks {needed} slots of history")]
    InsufficientHistory { t: usize, needed: usize },
    #[error("value {0} out of range")]
    OutOfRange(i64),
    #[error("degenerate geometry")]
    DegenerateGeometry,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EntityKind {
    Road,
    PoiType,
    LandType,
    Hour,
    Day,
    Jam,
    Tprt,
    Rain,
    Wind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub attribute: Option<f64>,
}

impl Fact {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId, attribute: Option<f64>) -> Self {
        Self {
            head,
            relation,
            tail,
            attribute,
        }
    }

    fn key(&self) -> (u32, u32, u32) {
        (self.head.0, self.relation.0, self.tail.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
    pub y: Option<f64>,
}

/// Buffer distances in meters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub distances: Vec<u32>,
}

impl BufferConfig {
    pub fn new(distances: Vec<u32>) -> Result<Self, KgError> {
        if distances.is_empty()
            || distances[0] == 0
            || distances.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(KgError::InvalidConfig(format!("buffer distances {distances:?}")));
        }
        Ok(Self { distances })
    }

    /// 10..100 m in 10 m steps.
    pub fn near() -> Self {
        Self {
            distances: (1..=10).map(|k| k * 10).collect(),
        }
    }

    /// 100..500 m in 100 m steps.
    pub fn far() -> Self {
        Self {
            distances: (1..=5).map(|k| k * 100).collect(),
        }
    }

    /// Union of `near` and `far`; the shared 100 m bound appears once.
    pub fn all() -> Self {
        let mut d = Self::near().distances;
        d.extend(Self::far().distances.into_iter().skip(1));
        Self { distances: d }
    }

    /// Parses `near`/`far`/`all`, a range label `10-100`, or a comma list.
    pub fn parse(s: &str) -> Result<Self, KgError> {
        match s {
            "near" | "10-100" => Ok(Self::near()),
            "far" | "100-500" => Ok(Self::far()),
            "all" | "10-500" => Ok(Self::all()),
            _ => {
                let d: Result<Vec<u32>, _> = s.split(',').map(|p| p.trim().parse()).collect();
                Self::new(d.map_err(|_| KgError::InvalidConfig(format!("buffer set {s}")))?)
            }
        }
    }

    /// `first-last` label used in file names and reports.
    pub fn label(&self) -> String {
        format!(
            "{}-{}",
            self.distances.first().unwrap_or(&0),
            self.distances.last().unwrap_or(&0)
        )
    }
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Hour,
    Day,
    Week,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Hour, LinkKind::Day, LinkKind::Week];

    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Hour => "Hour",
            LinkKind::Day => "Day",
            LinkKind::Week => "Week",
        }
    }

    pub fn lag_minutes(self) -> usize {
        match self {
            LinkKind::Hour => 60,
            LinkKind::Day => 1440,
            LinkKind::Week => 10080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub past_minutes: Vec<u32>,
    pub link_kinds: Vec<LinkKind>,
    pub slot_minutes: u32,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            past_minutes: (1..=6).map(|k| k * 10).collect(),
            link_kinds: LinkKind::ALL.to_vec(),
            slot_minutes: 10,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<(), KgError> {
        if self.slot_minutes == 0
            || self.past_minutes.is_empty()
            || self
                .past_minutes
                .iter()
                .any(|&p| p == 0 || p % self.slot_minutes != 0)
        {
            return Err(KgError::InvalidConfig(format!(
                "past minutes {:?} with slot {}",
                self.past_minutes, self.slot_minutes
            )));
        }
        Ok(())
    }

    /// Slots of history needed before the first usable slot.
    pub fn history_slots(&self) -> usize {
        (*self.past_minutes.iter().max().unwrap_or(&0) / self.slot_minutes.max(1)) as usize
    }

    /// Parses `-`, `HDW`, or any combination of the letters H, D, W.
    pub fn parse_links(s: &str) -> Result<Vec<LinkKind>, KgError> {
        if s == "-" || s.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for c in s.chars() {
            let k = match c.to_ascii_uppercase() {
                'H' => LinkKind::Hour,
                'D' => LinkKind::Day,
                'W' => LinkKind::Week,
                _ => return Err(KgError::InvalidConfig(format!("link kinds {s}"))),
            };
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn links_label(&self) -> String {
        if self.link_kinds.is_empty() {
            "-".to_string()
        } else {
            self.link_kinds.iter().map(|k| &k.name()[..1]).collect()
        }
    }
}

/// Options the graph was built with, echoed into its serialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KgConfigEcho {
    pub buffer: Option<BufferConfig>,
    pub max_link_order: Option<u32>,
    pub temporal: Option<TemporalConfig>,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<String>,
    spatial: Vec<Fact>,
    temporal: Vec<Fact>,
    pub config: KgConfigEcho,
    entity_index: HashMap<(EntityKind, String), EntityId>,
    relation_index: HashMap<String, RelationId>,
    keys: [HashSet<(u32, u32, u32)>; 2],
}

fn unit_slot(unit: Unit) -> usize {
    match unit {
        Unit::Spatial => 0,
        Unit::Temporal => 1,
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an entity, returning the existing id when the (kind, name)
    /// pair is already known.
    pub fn register_entity(&mut self, name: &str, kind: EntityKind) -> Result<EntityId, KgError> {
        if name.is_empty() {
            return Err(KgError::EmptyName);
        }
        if let Some(&id) = self.entity_index.get(&(kind, name.to_string())) {
            return Ok(id);
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Entity {
            name: name.to_string(),
            kind,
            y: None,
        });
        self.entity_index.insert((kind, name.to_string()), id);
        Ok(id)
    }

    pub fn register_relation(&mut self, name: &str) -> Result<RelationId, KgError> {
        if name.is_empty() {
            return Err(KgError::EmptyName);
        }
        if let Some(&id) = self.relation_index.get(name) {
            return Ok(id);
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn set_entity_attribute(&mut self, id: EntityId, y: f64) -> Result<(), KgError> {
        if !y.is_finite() {
            return Err(KgError::NonFiniteAttribute);
        }
        self.entities
            .get_mut(id.0 as usize)
            .ok_or(KgError::UnknownId(id.0))?
            .y = Some(y);
        Ok(())
    }

    pub fn add_fact(&mut self, unit: Unit, fact: Fact) -> Result<(), KgError> {
        for e in [fact.head, fact.tail] {
            if e.0 as usize >= self.entities.len() {
                return Err(KgError::UnknownId(e.0));
            }
        }
        if fact.relation.0 as usize >= self.relations.len() {
            return Err(KgError::UnknownId(fact.relation.0));
        }
        if fact.attribute.is_some_and(|x| !x.is_finite()) {
            return Err(KgError::NonFiniteAttribute);
        }
        let (h, r, t) = fact.key();
        if !self.keys[unit_slot(unit)].insert(fact.key()) {
            return Err(KgError::DuplicateFact(h, r, t));
        }
        match unit {
            Unit::Spatial => self.spatial.push(fact),
            Unit::Temporal => self.temporal.push(fact),
        }
        Ok(())
    }

    pub fn facts(&self, unit: Unit) -> &[Fact] {
        match unit {
            Unit::Spatial => &self.spatial,
            Unit::Temporal => &self.temporal,
        }
    }

    /// Replaces the attributes of a unit's facts in order (used to re-time the
    /// temporal unit without changing its structure).
    pub fn set_attributes(&mut self, unit: Unit, attrs: &[Option<f64>]) -> Result<(), KgError> {
        let facts = match unit {
            Unit::Spatial => &mut self.spatial,
            Unit::Temporal => &mut self.temporal,
        };
        if attrs.len() != facts.len() {
            return Err(KgError::InvalidConfig("attribute count".into()));
        }
        for (f, a) in facts.iter_mut().zip(attrs) {
            if a.is_some_and(|x| !x.is_finite()) {
                return Err(KgError::NonFiniteAttribute);
            }
            f.attribute = *a;
        }
        Ok(())
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> &Entity {
        &self.entities[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.0 as usize]
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn find_entity(&self, name: &str, kind: EntityKind) -> Option<EntityId> {
        self.entity_index.get(&(kind, name.to_string())).copied()
    }

    pub fn find_relation(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    /// Road entities ordered by id.
    pub fn roads(&self) -> Vec<EntityId> {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EntityKind::Road)
            .map(|(i, _)| EntityId(i as u32))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = KgJson {
            entities: self
                .entities
                .iter()
                .enumerate()
                .map(|(i, e)| EntityJson {
                    id: i as u32,
                    name: e.name.clone(),
                    kind: e.kind,
                    y: e.y,
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .enumerate()
                .map(|(i, n)| RelationJson {
                    id: i as u32,
                    name: n.clone(),
                })
                .collect(),
            spatial: self.spatial.iter().map(fact_row).collect(),
            temporal: self.temporal.iter().map(fact_row).collect(),
            config: self.config.clone(),
        };
        serde_json::to_string(&doc).expect("kg serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KgError> {
        let doc: KgJson = serde_json::from_str(text).map_err(|e| KgError::Json(e.to_string()))?;
        let mut kg = KnowledgeGraph::new();
        for (i, e) in doc.entities.iter().enumerate() {
            if e.id as usize != i {
                return Err(KgError::Json(format!("entity id {} out of order", e.id)));
            }
            let id = kg.register_entity(&e.name, e.kind)?;
            if id.0 as usize != i {
                return Err(KgError::Json(format!("duplicate entity {}", e.name)));
            }
            if let Some(y) = e.y {
                kg.set_entity_attribute(id, y)?;
            }
        }
        for (i, r) in doc.relations.iter().enumerate() {
            if r.id as usize != i || kg.register_relation(&r.name)?.0 as usize != i {
                return Err(KgError::Json(format!("relation {} out of order", r.name)));
            }
        }
        for (unit, rows) in [(Unit::Spatial, &doc.spatial), (Unit::Temporal, &doc.temporal)] {
            for &(h, r, t, x) in rows {
                kg.add_fact(unit, Fact::new(EntityId(h), RelationId(r), EntityId(t), x))?;
            }
        }
        kg.config = doc.config;
        Ok(kg)
    }
}

type FactRow = (u32, u32, u32, Option<f64>);

fn fact_row(f: &Fact) -> FactRow {
    (f.head.0, f.relation.0, f.tail.0, f.attribute)
}

#[derive(Serialize, Deserialize)]
struct EntityJson {
    id: u32,
    name: String,
    kind: EntityKind,
    y: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RelationJson {
    id: u32,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct KgJson {
    entities: Vec<EntityJson>,
    relations: Vec<RelationJson>,
    spatial: Vec<FactRow>,
    temporal: Vec<FactRow>,
    #[serde(default)]
    config: KgConfigEcho,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_ids() {
        let mut kg = KnowledgeGraph::new();
        let ids: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|n| kg.register_entity(n, EntityKind::Road).unwrap())
            .collect();
        assert_eq!(ids, vec![EntityId(0), EntityId(1), EntityId(2)]);
        assert_eq!(kg.register_entity("a", EntityKind::Road).unwrap(), EntityId(0));
        assert_eq!(kg.register_entity("a", EntityKind::PoiType).unwrap(), EntityId(3));
        assert_eq!(kg.register_entity("", EntityKind::Road), Err(KgError::EmptyName));
    }

    #[test]
    fn duplicate_and_unknown() {
        let mut kg = KnowledgeGraph::new();
        let a = kg.register_entity("a", EntityKind::Road).unwrap();
        let b = kg.register_entity("b", EntityKind::Road).unwrap();
        let r = kg.register_relation("adjacentToRoad").unwrap();
        kg.add_fact(Unit::Spatial, Fact::new(a, r, b, None)).unwrap();
        assert_eq!(
            kg.add_fact(Unit::Spatial, Fact::new(a, r, b, Some(2.0))),
            Err(KgError::DuplicateFact(0, 0, 1))
        );
        kg.add_fact(Unit::Temporal, Fact::new(a, r, b, None)).unwrap();
        assert_eq!(
            kg.add_fact(Unit::Spatial, Fact::new(a, r, EntityId(9), None)),
            Err(KgError::UnknownId(9))
        );
        assert_eq!(
            kg.add_fact(Unit::Spatial, Fact::new(b, r, a, Some(f64::NAN))),
            Err(KgError::NonFiniteAttribute)
        );
    }

    #[test]
    fn buffer_sets() {
        assert_eq!(BufferConfig::near().distances.len(), 10);
        assert_eq!(BufferConfig::far().distances.len(), 5);
        let all = BufferConfig::all();
        assert_eq!(all.distances.len(), 14);
        assert_eq!(all.label(), "10-500");
        assert!(BufferConfig::new(vec![10, 10]).is_err());
        assert_eq!(BufferConfig::parse("10,20").unwrap().distances, vec![10, 20]);
    }

    #[test]
    fn link_labels() {
        let mut cfg = TemporalConfig::default();
        assert_eq!(cfg.links_label(), "HDW");
        cfg.link_kinds = TemporalConfig::parse_links("-").unwrap();
        assert_eq!(cfg.links_label(), "-");
        assert_eq!(TemporalConfig::parse_links("wh").unwrap(), vec![LinkKind::Hour, LinkKind::Week]);
        assert_eq!(cfg.history_slots(), 6);
    }
}
