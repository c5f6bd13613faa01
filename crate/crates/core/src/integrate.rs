//! Relation-path integration of KG embeddings into per-road context groups.
//!
//! Every road gets 17 group vectors per time slot: ten static spatial groups
//! and seven temporal groups recomputed from slot attributes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{link_of_relation, KgError, KnowledgeGraph, LinkKind, TemporalSchema, Unit};
use crate::kge::{EmbeddingSet, Family};
use crate::synth::CitySeries;

pub const GROUPS: usize = 17;
pub const SPATIAL_GROUPS: usize = 10;
pub const TEMPORAL_GROUPS: usize = GROUPS - SPATIAL_GROUPS;

pub const GROUP_LABELS: [&str; GROUPS] = [
    "road_s", "road", "poi", "land", "link1", "link2", "link3", "link4", "link5", "link6",
    "road_t", "time", "jam", "weather", "link_hour", "link_day", "link_week",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("path family {path} does not match embedding family {embedding}")]
    MixedFamilies { path: Family, embedding: Family },
    #[error("attribute {0} is outside [0, 1]")]
    UnnormalizedAttribute(f64),
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("vector length {got} does not match context dim {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty relation path")]
    EmptyPath,
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("context file: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, IntegrationError>;

/// Relations `r_1..r_l` leading from a road to the terminal entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationPath {
    pub relations: Vec<usize>,
    pub terminal: usize,
    pub family: Family,
}

impl RelationPath {
    pub fn single(relation: usize, terminal: usize, family: Family) -> Self {
        Self {
            relations: vec![relation],
            terminal,
            family,
        }
    }
}

fn check_path(path: &RelationPath, emb: &EmbeddingSet) -> Result<()> {
    if path.family != emb.family {
        return Err(IntegrationError::MixedFamilies {
            path: path.family,
            embedding: emb.family,
        });
    }
    if path.relations.is_empty() {
        return Err(IntegrationError::EmptyPath);
    }
    if path.terminal >= emb.n_entities {
        return Err(IntegrationError::MissingEmbedding(format!("entity {}", path.terminal)));
    }
    if let Some(&r) = path.relations.iter().find(|&&r| r >= emb.n_relations) {
        return Err(IntegrationError::MissingEmbedding(format!("relation {r}")));
    }
    Ok(())
}

/// Combines an entity vector with weighted relation vectors: a sum for
/// distance families, an elementwise product otherwise (complex product for
/// ComplEx, whose vectors are `concat(re, im)`).
pub fn combine(family: Family, e: &[f64], y: f64, rels: &[(&[f64], f64)]) -> Vec<f64> {
    let mut out: Vec<f64> = e.iter().map(|v| y * v).collect();
    if family.is_distance() {
        for (r, x) in rels {
            for (o, v) in out.iter_mut().zip(r.iter()) {
                *o += x * v;
            }
        }
    } else if family == Family::ComplEx {
        let h = out.len() / 2;
        for (r, x) in rels {
            for i in 0..h {
                let (a, b) = (out[i], out[h + i]);
                let (c, d) = (x * r[i], x * r[h + i]);
                out[i] = a * c - b * d;
                out[h + i] = a * d + b * c;
            }
        }
    } else {
        for (r, x) in rels {
            for (o, v) in out.iter_mut().zip(r.iter()) {
                *o *= x * v;
            }
        }
    }
    out
}

fn sized(v: Vec<f64>, dim: usize) -> Result<Vec<f64>> {
    if v.len() != dim {
        return Err(IntegrationError::ShapeMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    Ok(v)
}

/// Relation-dependent embedding of a path with neutral attributes.
pub fn path_embed(path: &RelationPath, emb: &EmbeddingSet) -> Result<Vec<f64>> {
    attribute_augment(path, &vec![1.0; path.relations.len()], 1.0, emb)
}

/// Path embedding with normalized fact attributes `x` (one per relation) and
/// terminal entity attribute `y`, all in `[0, 1]`.
pub fn attribute_augment(
    path: &RelationPath,
    x: &[f64],
    y: f64,
    emb: &EmbeddingSet,
) -> Result<Vec<f64>> {
    check_path(path, emb)?;
    if x.len() != path.relations.len() {
        return Err(IntegrationError::ShapeMismatch {
            expected: path.relations.len(),
            got: x.len(),
        });
    }
    if let Some(&bad) = x.iter().chain([&y]).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(IntegrationError::UnnormalizedAttribute(bad));
    }
    let e = emb.entity_vector(path.terminal);
    let dim = e.len();
    let rels: Vec<Vec<f64>> = path
        .relations
        .iter()
        .map(|&r| sized(emb.relation_vector(r), dim))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&[f64], f64)> = rels.iter().map(|r| r.as_slice()).zip(x.iter().copied()).collect();
    Ok(combine(emb.family, &e, y, &pairs))
}

/// Min-max statistics of one attribute column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(Self { min: v, max: v }),
            Some(m) => Some(Self {
                min: m.min.min(v),
                max: m.max.max(v),
            }),
        })
    }

    /// `(x - min) / (max - min)` clipped to `[0, 1]`; a constant column maps to 1.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max <= self.min {
            1.0
        } else {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

/// Min-max normalizes a column against its own statistics.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    match MinMax::fit(values.iter().copied()) {
        Some(m) => values.iter().map(|&v| m.apply(v)).collect(),
        None => Vec::new(),
    }
}

/// Per-relation normalization statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeNormalizer {
    stats: HashMap<u32, MinMax>,
}

impl AttributeNormalizer {
    /// Fits one column per relation id from `(relation, value)` pairs.
    pub fn fit(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut stats: HashMap<u32, MinMax> = HashMap::new();
        for (r, v) in pairs {
            let m = stats.entry(r).or_insert(MinMax { min: v, max: v });
            m.min = m.min.min(v);
            m.max = m.max.max(v);
        }
        Self { stats }
    }

    pub fn merge(&mut self, other: &AttributeNormalizer) {
        for (&r, m) in &other.stats {
            let e = self.stats.entry(r).or_insert(*m);
            e.min = e.min.min(m.min);
            e.max = e.max.max(m.max);
        }
    }

    pub fn get(&self, relation: u32) -> Option<MinMax> {
        self.stats.get(&relation).copied()
    }

    /// Normalized value; unattributed facts and unseen relations are neutral.
    pub fn apply(&self, relation: u32, x: Option<f64>) -> f64 {
        match (x, self.stats.get(&relation)) {
            (Some(v), Some(m)) => m.apply(v),
            _ => 1.0,
        }
    }
}

/// Context group of a relation name, or `None` for relations that feed no
/// group (spatial links beyond order 6).
pub fn group_of_relation(name: &str) -> Option<usize> {
    if name == "adjacentToRoad" {
        Some(1)
    } else if name.starts_with("hasPoi") {
        Some(2)
    } else if name.starts_with("hasLand") {
        Some(3)
    } else if let Some(k) = name.strip_prefix("spatiallyLink") {
        match k.parse::<usize>() {
            Ok(k @ 1..=6) => Some(3 + k),
            _ => None,
        }
    } else if name == "hasHour" || name == "hasDay" {
        Some(11)
    } else if name.starts_with("hasJam") {
        Some(12)
    } else if ["hasTprt", "hasRain", "hasWind"].iter().any(|p| name.starts_with(p)) {
        Some(13)
    } else {
        link_of_relation(name).map(|k| match k {
            LinkKind::Hour => 14,
            LinkKind::Day => 15,
            LinkKind::Week => 16,
        })
    }
}

/// Per-road, per-slot context groups.
///
/// Spatial groups are stored once per road (`[road, 10, dim]`); temporal
/// groups per slot (`[slot, road, 7, dim]`). Slot `i` of the tensor is series
/// slot `t0 + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTensor {
    pub roads: usize,
    pub t0: usize,
    pub slots: usize,
    pub dim: usize,
    spatial: Vec<f64>,
    temporal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextHeader {
    pub format: String,
    pub version: u32,
    pub roads: usize,
    pub t0: usize,
    pub slots: usize,
    pub groups: usize,
    pub dim: usize,
    pub group_labels: Vec<String>,
    pub layout: String,
}

const MAGIC: &[u8; 4] = b"CKGC";

impl ContextTensor {
    pub fn zeros(roads: usize, t0: usize, slots: usize, dim: usize) -> Self {
        Self {
            roads,
            t0,
            slots,
            dim,
            spatial: vec![0.0; roads * SPATIAL_GROUPS * dim],
            temporal: vec![0.0; slots * roads * TEMPORAL_GROUPS * dim],
        }
    }

    /// Series slots covered by the tensor.
    pub fn slot_range(&self) -> Range<usize> {
        self.t0..self.t0 + self.slots
    }

    fn offset(&self, road: usize, slot: usize, group: usize) -> (bool, usize) {
        assert!(road < self.roads && group < GROUPS, "context index out of range");
        if group < SPATIAL_GROUPS {
            (true, (road * SPATIAL_GROUPS + group) * self.dim)
        } else {
            let i = slot
                .checked_sub(self.t0)
                .filter(|&i| i < self.slots)
                .expect("slot inside the context range");
            (false, ((i * self.roads + road) * TEMPORAL_GROUPS + group - SPATIAL_GROUPS) * self.dim)
        }
    }

    /// Group vector of `road` at series slot `slot`.
    pub fn group(&self, road: usize, slot: usize, group: usize) -> &[f64] {
        let (s, o) = self.offset(road, slot, group);
        let buf = if s { &self.spatial } else { &self.temporal };
        &buf[o..o + self.dim]
    }

    pub fn group_mut(&mut self, road: usize, slot: usize, group: usize) -> &mut [f64] {
        let (s, o) = self.offset(road, slot, group);
        let dim = self.dim;
        let buf = if s { &mut self.spatial } else { &mut self.temporal };
        &mut buf[o..o + dim]
    }

    /// All 17 groups of one cell, concatenated.
    pub fn cell(&self, road: usize, slot: usize) -> Vec<f64> {
        (0..GROUPS).flat_map(|g| self.group(road, slot, g).to_vec()).collect()
    }

    /// Copy with the listed groups set to zero.
    pub fn with_zeroed(&self, groups: impl IntoIterator<Item = usize>) -> Self {
        let mut out = self.clone();
        for g in groups {
            for r in 0..self.roads {
                if g < SPATIAL_GROUPS {
                    out.group_mut(r, self.t0, g).fill(0.0);
                } else {
                    for t in self.slot_range() {
                        out.group_mut(r, t, g).fill(0.0);
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.spatial.iter().chain(&self.temporal).all(|v| v.is_finite())
    }

    pub fn header(&self) -> ContextHeader {
        ContextHeader {
            format: "ckg-context".into(),
            version: 1,
            roads: self.roads,
            t0: self.t0,
            slots: self.slots,
            groups: GROUPS,
            dim: self.dim,
            group_labels: GROUP_LABELS.iter().map(|s| s.to_string()).collect(),
            layout: "spatial[road][group 0-9][dim] then temporal[slot][road][group 10-16][dim], f64 LE"
                .into(),
        }
    }

    /// `CKGC`, header length (u32 LE), JSON header, then the f64 blocks.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity((self.spatial.len() + self.temporal.len()) * 8);
        for v in self.spatial.iter().chain(&self.temporal) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("in-memory write");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| IntegrationError::Format(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(IntegrationError::Format("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(fmt)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(fmt)?;
        let h: ContextHeader = serde_json::from_slice(&header)
            .map_err(|e| IntegrationError::Format(e.to_string()))?;
        if h.groups != GROUPS || h.version != 1 {
            return Err(IntegrationError::Format("unsupported header".into()));
        }
        let mut t = Self::zeros(h.roads, h.t0, h.slots, h.dim);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(fmt)?;
        if bytes.len() != (t.spatial.len() + t.temporal.len()) * 8 {
            return Err(IntegrationError::Format("truncated data".into()));
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for v in t.spatial.iter_mut().chain(t.temporal.iter_mut()) {
            *v = vals.next().expect("length checked");
        }
        Ok(t)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

/// Spatial groups that a context variant keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextVariant {
    /// Spatial and temporal groups.
    SpatioTemporal,
    /// Temporal groups zeroed.
    Spatial,
    /// Spatial groups zeroed.
    Temporal,
}

impl ContextVariant {
    pub fn name(self) -> &'static str {
        match self {
            ContextVariant::SpatioTemporal => "ST",
            ContextVariant::Spatial => "S",
            ContextVariant::Temporal => "T",
        }
    }

    pub fn apply(self, ctx: &ContextTensor) -> ContextTensor {
        match self {
            ContextVariant::SpatioTemporal => ctx.clone(),
            ContextVariant::Spatial => ctx.with_zeroed(SPATIAL_GROUPS..GROUPS),
            ContextVariant::Temporal => ctx.with_zeroed(0..SPATIAL_GROUPS),
        }
    }
}

struct Prepared {
    family: Family,
    dim: usize,
    entity: Vec<Option<Vec<f64>>>,
    relation: Vec<Option<Vec<f64>>>,
}

impl Prepared {
    fn new(emb: &EmbeddingSet) -> Result<Self> {
        let dim = emb.entity_vector(0).len();
        let entity = (0..emb.n_entities).map(|e| Some(emb.entity_vector(e))).collect();
        let relation = (0..emb.n_relations)
            .map(|r| sized(emb.relation_vector(r), dim).map(Some))
            .collect::<Result<_>>()?;
        Ok(Self {
            family: emb.family,
            dim,
            entity,
            relation,
        })
    }

    fn entity(&self, kg: &KnowledgeGraph, e: u32) -> Result<&[f64]> {
        self.entity
            .get(e as usize)
            .and_then(Option::as_deref)
            .ok_or_else(|| {
                IntegrationError::MissingEmbedding(format!(
                    "entity {}",
                    kg.entities().get(e as usize).map_or("?", |x| x.name.as_str())
                ))
            })
    }

    fn relation(&self, kg: &KnowledgeGraph, r: u32) -> Result<&[f64]> {
        self.relation
            .get(r as usize)
            .and_then(Option::as_deref)
            .ok_or_else(|| {
                IntegrationError::MissingEmbedding(format!(
                    "relation {}",
                    kg.relations().get(r as usize).map_or("?", String::as_str)
                ))
            })
    }
}

/// One fact prepared for pooling.
struct PoolFact {
    road: usize,
    group: usize,
    relation: u32,
    tail: u32,
    y: f64,
}

fn pool_facts(kg: &KnowledgeGraph, unit: Unit, road_index: &HashMap<u32, usize>) -> Vec<Option<PoolFact>> {
    let roads = kg.roads();
    let ys: Vec<f64> = roads.iter().filter_map(|&r| kg.entity(r).y).collect();
    let y_norm = MinMax::fit(ys);
    kg.facts(unit)
        .iter()
        .map(|f| {
            let road = *road_index.get(&f.head.0)?;
            let group = group_of_relation(kg.relation_name(f.relation))?;
            let tail = kg.entity(f.tail);
            let y = match (tail.kind, tail.y, y_norm) {
                (crate::kg::EntityKind::Road, Some(v), Some(m)) => m.apply(v),
                _ => 1.0,
            };
            Some(PoolFact {
                road,
                group,
                relation: f.relation.0,
                tail: f.tail.0,
                y,
            })
        })
        .collect()
}

fn mean_into(dst: &mut [f64], sum: &[f64], n: usize) {
    if n > 0 {
        for (d, s) in dst.iter_mut().zip(sum) {
            *d = s / n as f64;
        }
    }
}

/// Normalization statistics for the temporal unit over series slots `window`.
pub fn fit_temporal_normalizer(
    kg: &KnowledgeGraph,
    schema: &TemporalSchema,
    series: &CitySeries,
    window: Range<usize>,
) -> Result<AttributeNormalizer> {
    let facts = kg.facts(Unit::Temporal);
    let parts: Vec<AttributeNormalizer> = window
        .into_par_iter()
        .map(|t| {
            let attrs = schema.attributes_at(series, t)?;
            Ok(AttributeNormalizer::fit(
                facts.iter().zip(attrs).filter_map(|(f, a)| a.map(|v| (f.relation.0, v))),
            ))
        })
        .collect::<std::result::Result<_, KgError>>()?;
    let mut out = AttributeNormalizer::default();
    for p in &parts {
        out.merge(p);
    }
    Ok(out)
}

/// Builds the context tensor over series slots `t_range`, with temporal
/// normalization statistics taken from `train_window` only.
pub fn build_context_tensor(
    kg: &KnowledgeGraph,
    emb_s: &EmbeddingSet,
    emb_t: &EmbeddingSet,
    schema: &TemporalSchema,
    series: &CitySeries,
    t_range: Range<usize>,
    train_window: Range<usize>,
) -> Result<ContextTensor> {
    let roads = kg.roads();
    if roads.is_empty() {
        return Err(KgError::EmptyCity.into());
    }
    if t_range.start + 1 < schema.history_slots || t_range.end > series.n_slots {
        return Err(KgError::InsufficientHistory {
            t: t_range.start,
            needed: schema.history_slots,
        }
        .into());
    }
    let road_index: HashMap<u32, usize> = roads.iter().enumerate().map(|(i, r)| (r.0, i)).collect();
    let ps = Prepared::new(emb_s)?;
    let pt = Prepared::new(emb_t)?;
    if ps.dim != pt.dim {
        return Err(IntegrationError::ShapeMismatch {
            expected: ps.dim,
            got: pt.dim,
        });
    }
    let dim = ps.dim;
    let mut ctx = ContextTensor::zeros(roads.len(), t_range.start, t_range.len(), dim);

    // Spatial groups: static attributes, statistics over all facts.
    let s_facts = kg.facts(Unit::Spatial);
    let s_norm = AttributeNormalizer::fit(
        s_facts.iter().filter_map(|f| f.attribute.map(|v| (f.relation.0, v))),
    );
    let mut sums = vec![0.0; roads.len() * SPATIAL_GROUPS * dim];
    let mut counts = vec![0usize; roads.len() * SPATIAL_GROUPS];
    for (f, p) in s_facts.iter().zip(pool_facts(kg, Unit::Spatial, &road_index)) {
        let Some(p) = p else { continue };
        let x = s_norm.apply(f.relation.0, f.attribute);
        let v = combine(ps.family, ps.entity(kg, p.tail)?, p.y, &[(ps.relation(kg, p.relation)?, x)]);
        let cell = p.road * SPATIAL_GROUPS + p.group;
        counts[cell] += 1;
        for (s, a) in sums[cell * dim..(cell + 1) * dim].iter_mut().zip(&v) {
            *s += a;
        }
    }
    for (i, &road) in roads.iter().enumerate() {
        ctx.group_mut(i, t_range.start, 0).copy_from_slice(ps.entity(kg, road.0)?);
        for g in 1..SPATIAL_GROUPS {
            let cell = i * SPATIAL_GROUPS + g;
            mean_into(ctx.group_mut(i, t_range.start, g), &sums[cell * dim..(cell + 1) * dim], counts[cell]);
        }
    }

    // Temporal groups: attributes recomputed per slot on fixed embeddings.
    let t_norm = fit_temporal_normalizer(kg, schema, series, train_window)?;
    let t_facts = kg.facts(Unit::Temporal);
    let pooled: Vec<Option<PoolFact>> = pool_facts(kg, Unit::Temporal, &road_index);
    let mut vectors = Vec::with_capacity(pooled.len());
    for p in pooled.iter().flatten() {
        vectors.push((pt.entity(kg, p.tail)?, pt.relation(kg, p.relation)?));
    }
    let road_t: Vec<&[f64]> = roads.iter().map(|r| pt.entity(kg, r.0)).collect::<Result<_>>()?;
    let block = roads.len() * TEMPORAL_GROUPS * dim;
    let t0 = t_range.start;
    ctx.temporal
        .par_chunks_mut(block)
        .enumerate()
        .try_for_each(|(i, out)| -> Result<()> {
            let attrs = schema.attributes_at(series, t0 + i)?;
            let mut counts = vec![0usize; roads.len() * TEMPORAL_GROUPS];
            let mut k = 0;
            for ((f, p), a) in t_facts.iter().zip(&pooled).zip(attrs) {
                let Some(p) = p else { continue };
                let (e, r) = vectors[k];
                k += 1;
                let x = t_norm.apply(f.relation.0, a);
                let v = combine(pt.family, e, p.y, &[(r, x)]);
                let cell = p.road * TEMPORAL_GROUPS + p.group - SPATIAL_GROUPS;
                counts[cell] += 1;
                for (s, a) in out[cell * dim..(cell + 1) * dim].iter_mut().zip(&v) {
                    *s += a;
                }
            }
            for (cell, &n) in counts.iter().enumerate() {
                let dst = &mut out[cell * dim..(cell + 1) * dim];
                if n > 0 {
                    dst.iter_mut().for_each(|v| *v /= n as f64);
                }
            }
            for (road, e) in road_t.iter().enumerate() {
                let cell = road * TEMPORAL_GROUPS;
                out[cell * dim..(cell + 1) * dim].copy_from_slice(e);
            }
            Ok(())
        })?;
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_normalize(&[3.0, 3.0]), vec![1.0, 1.0]);
        let m = MinMax { min: 0.0, max: 10.0 };
        assert_eq!(m.apply(10.0), 1.0);
        assert_eq!(m.apply(12.0), 1.0);
        assert_eq!(m.apply(-1.0), 0.0);
    }

    #[test]
    fn groups_by_name() {
        assert_eq!(group_of_relation("adjacentToRoad"), Some(1));
        assert_eq!(group_of_relation("hasPoiSchoolInBuffer50"), Some(2));
        assert_eq!(group_of_relation("hasLandParkLandInBuffer10"), Some(3));
        assert_eq!(group_of_relation("spatiallyLink6"), Some(9));
        assert_eq!(group_of_relation("spatiallyLink9"), None);
        assert_eq!(group_of_relation("hasDay"), Some(11));
        assert_eq!(group_of_relation("hasJam30"), Some(12));
        assert_eq!(group_of_relation("hasWind60"), Some(13));
        assert_eq!(group_of_relation("temporallyLinkJamHour"), Some(14));
        assert_eq!(group_of_relation("temporallyLinkWindWeek"), Some(16));
    }

    #[test]
    fn complex_product_with_unit_relation() {
        let e = [1.0, 2.0, 3.0, 4.0];
        let one = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(combine(Family::ComplEx, &e, 1.0, &[(&one, 1.0)]), e.to_vec());
        let i = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(combine(Family::ComplEx, &e, 1.0, &[(&i, 1.0)]), vec![-3.0, -4.0, 1.0, 2.0]);
    }

    #[test]
    fn binary_roundtrip() {
        let mut c = ContextTensor::zeros(2, 5, 3, 4);
        c.group_mut(1, 6, 12)[2] = 0.125;
        c.group_mut(0, 7, 3)[0] = -1.5;
        let back = ContextTensor::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.group(0, 5, 3)[0], -1.5);
        assert!(ContextTensor::from_bytes(b"nope").is_err());
    }
}
