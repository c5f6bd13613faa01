//! Browser bindings: city and graph generation, embedding training with
//! mean-rank evaluation, and an attention-weight heatmap. Every export takes
//! plain numbers or strings and returns a JSON string.

use ckg_core::autodiff::{ParamStore, Tensor};
use ckg_core::forecast::{mhsa, AttentionBlock};
use ckg_core::kg::{build_spatial_unit, BufferConfig, KnowledgeGraph, Unit};
use ckg_core::kge::{train, Family, TrainConfig};
use ckg_core::rank::{evaluate_mr, split_holdout, Side};
use ckg_core::synth::generate_city;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_family(name: &str) -> Result<Family, JsError> {
    Family::ALL
        .into_iter()
        .find(|f| f.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| js_err(format!("unknown model family {name}")))
}

fn spatial_kg(n_roads: usize, seed: u64, buffer: &str, link_order: u32) -> Result<(ckg_core::synth::City, KnowledgeGraph), JsError> {
    let city = generate_city(n_roads, seed).map_err(js_err)?;
    let mut kg = KnowledgeGraph::new();
    let buffer = BufferConfig::parse(buffer).map_err(js_err)?;
    build_spatial_unit(&mut kg, &city, &buffer, link_order).map_err(js_err)?;
    Ok((city, kg))
}

#[derive(Serialize)]
struct RelationCount {
    relation: String,
    facts: usize,
}

/// Synthesizes a city and its spatial unit. Returns road polylines, POIs,
/// parcels and per-relation fact counts.
#[wasm_bindgen]
pub fn city_graph(n_roads: usize, seed: u64, buffer: &str, link_order: u32) -> Result<String, JsError> {
    let (city, kg) = spatial_kg(n_roads, seed, buffer, link_order)?;
    let facts = kg.facts(Unit::Spatial);
    let mut counts: Vec<RelationCount> = kg
        .relations()
        .iter()
        .map(|r| RelationCount {
            relation: r.clone(),
            facts: 0,
        })
        .collect();
    for f in facts {
        counts[f.relation.0 as usize].facts += 1;
    }
    counts.retain(|c| c.facts > 0);
    counts.sort_by(|a, b| b.facts.cmp(&a.facts).then(a.relation.cmp(&b.relation)));
    let roads: Vec<Vec<[f64; 2]>> = city
        .roads
        .iter()
        .map(|r| r.line.iter().map(|p| [p.x, p.y]).collect())
        .collect();
    Ok(json!({
        "roads": roads,
        "free_flow": city.roads.iter().map(|r| r.free_flow).collect::<Vec<_>>(),
        "pois": city.pois.iter().map(|p| [p.point.x, p.point.y, p.kind as f64]).collect::<Vec<_>>(),
        "parcels": city.parcels.iter().map(|p| [p.rect.min_x, p.rect.min_y, p.rect.max_x, p.rect.max_y, p.kind as f64]).collect::<Vec<_>>(),
        "entities": kg.num_entities(),
        "relations": kg.num_relations(),
        "facts": facts.len(),
        "relation_counts": counts,
    })
    .to_string())
}

/// Trains one model family on 90% of the spatial unit and ranks the rest.
#[wasm_bindgen]
pub fn embed_and_rank(
    n_roads: usize,
    seed: u64,
    buffer: &str,
    link_order: u32,
    family: &str,
    epochs: usize,
    dim: usize,
) -> Result<String, JsError> {
    let family = parse_family(family)?;
    let (_, kg) = spatial_kg(n_roads, seed, buffer, link_order)?;
    let (train_facts, test) = split_holdout(kg.facts(Unit::Spatial), 0.1, seed);
    let cfg = TrainConfig {
        dim,
        rel_dim: dim,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate(family).map_err(js_err)?;
    let emb = train(&train_facts, kg.num_entities(), kg.num_relations(), family, &cfg).map_err(js_err)?;
    let report = evaluate_mr(&test, &emb, Side::Both).map_err(js_err)?;
    let n = kg.num_entities() as f64;
    Ok(json!({
        "family": family.name(),
        "train_facts": train_facts.len(),
        "test_facts": test.len(),
        "entities": kg.num_entities(),
        "mr_left": report.value(Side::Left),
        "mr_right": report.value(Side::Right),
        "mr_both": report.value(Side::Both),
        "random_mr": (n + 1.0) / 2.0,
    })
    .to_string())
}

/// Attention weights of a randomly initialized multi-head block over
/// `tokens` random inputs, averaged over heads.
#[wasm_bindgen]
pub fn attention_heatmap(tokens: usize, d_model: usize, heads: usize, causal: bool, seed: u64) -> Result<String, JsError> {
    if tokens == 0 || tokens > 64 {
        return Err(js_err("tokens must be in 1..=64"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = AttentionBlock::standard(&mut store, "demo", d_model, heads, causal, &mut rng).map_err(js_err)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data: Vec<f64> = (0..tokens * d_model).map(|_| normal.sample(&mut rng)).collect();
    let x = Tensor::new(vec![tokens, d_model], data).map_err(js_err)?;
    let (_, weights) = mhsa(&block, &store, &x).map_err(js_err)?;
    let rows: Vec<Vec<f64>> = weights.data().chunks(tokens).map(|r| r.to_vec()).collect();
    Ok(json!({ "tokens": tokens, "weights": rows }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_rows_are_distributions() {
        let out: serde_json::Value = serde_json::from_str(&attention_heatmap(6, 8, 2, true, 3).unwrap()).unwrap();
        let rows = out["weights"].as_array().unwrap();
        for (i, row) in rows.iter().enumerate() {
            let row: Vec<f64> = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row[i + 1..].iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn city_graph_reports_counts() {
        let out: serde_json::Value = serde_json::from_str(&city_graph(8, 1, "near", 2).unwrap()).unwrap();
        assert_eq!(out["roads"].as_array().unwrap().len(), 8);
        let total: u64 = out["relation_counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["facts"].as_u64().unwrap())
            .sum();
        assert_eq!(total, out["facts"].as_u64().unwrap());
    }
}
