//! Pipeline stages. Each stage reads the artifacts of earlier stages from the
//! output root and writes its own; nothing is passed in memory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ckg_core::forecast::{heatmap_to_csv, metric_rows_to_csv, EpochLog, ForecastData, Forecaster, MetricRow};
use ckg_core::integrate::{build_context_tensor, ContextTensor, ContextVariant};
use ckg_core::kg::{
    build_spatial_unit, build_temporal_unit, BufferConfig, KnowledgeGraph, TemporalConfig, TemporalSchema, Unit,
};
use ckg_core::kge::{train, EmbeddingSet, Family};
use ckg_core::rank::{evaluate_mr, mr_rows_to_csv, split_holdout, MrRow};
use ckg_core::synth::{generate_city, generate_series_with, City, CitySeries, SeriesConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SweepOptions};
use crate::error::{CliError, Result};

pub const STAGES: [&str; 7] = ["synth", "build-kg", "embed", "eval-mr", "integrate", "forecast", "report"];

/// File layout under the output root.
pub mod paths {
    pub const CITY: &str = "city.json";
    pub const SERIES: &str = "series.json";
    pub const SPEED: &str = "speed.csv";
    pub const KG: &str = "kg.json";
    pub const SCHEMA: &str = "temporal_schema.json";
    pub const EMB_SPATIAL: &str = "embeddings/spatial.json";
    pub const EMB_TEMPORAL: &str = "embeddings/temporal.json";
    pub const MR_SPATIAL: &str = "mr/spatial.csv";
    pub const MR_TEMPORAL: &str = "mr/temporal.csv";
    pub const CONTEXT: &str = "context/context.bin";
    pub const CONTEXT_HEADER: &str = "context/header.json";
    pub const METRICS: &str = "forecast/metrics.csv";
    pub const REPORT: &str = "report";
}

pub(crate) fn write(root: &Path, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub(crate) fn read(root: &Path, rel: &str) -> Result<Vec<u8>> {
    let path = root.join(rel);
    if !path.exists() {
        return Err(CliError::MissingInput(path.display().to_string()));
    }
    fs::read(&path).map_err(|e| CliError::io(&path, e))
}

pub(crate) fn read_text(root: &Path, rel: &str) -> Result<String> {
    String::from_utf8(read(root, rel)?).map_err(|e| CliError::io(&root.join(rel), e))
}

fn parse<T: for<'de> Deserialize<'de>>(root: &Path, rel: &str) -> Result<T> {
    serde_json::from_str(&read_text(root, rel)?).map_err(|e| CliError::io(&root.join(rel), e))
}

fn log(stage: &str, msg: impl std::fmt::Display) {
    eprintln!("[{stage}] {msg}");
}

pub fn load_city(root: &Path) -> Result<City> {
    parse(root, paths::CITY)
}

pub fn load_series(root: &Path) -> Result<CitySeries> {
    parse(root, paths::SERIES)
}

pub fn load_kg(root: &Path) -> Result<KnowledgeGraph> {
    Ok(KnowledgeGraph::from_json(&read_text(root, paths::KG)?)?)
}

pub fn load_schema(root: &Path) -> Result<TemporalSchema> {
    parse(root, paths::SCHEMA)
}

fn load_embedding(root: &Path, rel: &str) -> Result<EmbeddingSet> {
    let path = root.join(rel);
    if !path.exists() {
        return Err(CliError::MissingEmbedding(format!(
            "embedding checkpoint {} not found",
            path.display()
        )));
    }
    Ok(EmbeddingSet::from_json(&read_text(root, rel)?)?)
}

pub fn load_context(root: &Path) -> Result<ContextTensor> {
    Ok(ContextTensor::from_bytes(&read(root, paths::CONTEXT)?)?)
}

/// Synthetic city and its speed, jam and weather series.
pub fn stage_synth(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let city = generate_city(cfg.city.roads, cfg.seed)?;
    let series = generate_series_with(
        &city,
        cfg.city.days,
        cfg.seed,
        &SeriesConfig {
            noise_scale: cfg.city.noise_scale,
        },
    )?;
    write(root, paths::CITY, city.to_json())?;
    write(root, paths::SERIES, series.to_json())?;
    write(root, paths::SPEED, series.speed.to_csv())?;
    log("synth", format!("{} roads, {} slots", city.roads.len(), series.n_slots));
    Ok(())
}

/// First slot with a full attribute history.
pub fn first_slot(tcfg: &TemporalConfig) -> usize {
    tcfg.history_slots().saturating_sub(1)
}

/// Spatial and temporal units of the configured graph.
pub fn stage_build_kg(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let city = load_city(root)?;
    let series = load_series(root)?;
    let mut kg = KnowledgeGraph::new();
    build_spatial_unit(&mut kg, &city, &cfg.kg.buffer()?, cfg.kg.max_link_order)?;
    let tcfg = cfg.kg.temporal()?;
    let schema = build_temporal_unit(&mut kg, &city, &series, &tcfg, first_slot(&tcfg))?;
    write(root, paths::KG, kg.to_json())?;
    write(root, paths::SCHEMA, serde_json::to_string(&schema).expect("schema serializes"))?;
    log(
        "build-kg",
        format!(
            "{} entities, {} relations, {} spatial and {} temporal facts",
            kg.num_entities(),
            kg.num_relations(),
            kg.facts(Unit::Spatial).len(),
            kg.facts(Unit::Temporal).len()
        ),
    );
    Ok(())
}

/// Embeddings of the spatial and temporal units used for integration.
pub fn stage_embed(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let kg = load_kg(root)?;
    let mut tc = cfg.embed.train.clone();
    tc.seed = cfg.seed;
    for (unit, family, rel) in [
        (Unit::Spatial, cfg.embed.spatial_family, paths::EMB_SPATIAL),
        (Unit::Temporal, cfg.embed.temporal_family, paths::EMB_TEMPORAL),
    ] {
        let t = Instant::now();
        let emb = train(kg.facts(unit), kg.num_entities(), kg.num_relations(), family, &tc)?;
        write(root, rel, emb.to_json())?;
        log("embed", format!("{family} on {unit:?} unit in {:.1?}", t.elapsed()));
    }
    Ok(())
}

fn link_label(order: u32) -> String {
    if order == 0 {
        "Link[-]".into()
    } else {
        format!("Link[{order}]")
    }
}

fn mr_cell(
    kg: &KnowledgeGraph,
    unit: Unit,
    family: Family,
    opts: &SweepOptions,
    seed: u64,
) -> Result<f64> {
    let t = Instant::now();
    // A zero holdout trains and ranks on every fact of the unit.
    let (train_facts, test) = if opts.holdout > 0.0 {
        split_holdout(kg.facts(unit), opts.holdout, seed)
    } else {
        (kg.facts(unit).to_vec(), kg.facts(unit).to_vec())
    };
    let mut tc = opts.train.clone();
    tc.seed = seed;
    let emb = train(&train_facts, kg.num_entities(), kg.num_relations(), family, &tc)?;
    let report = evaluate_mr(&test, &emb, opts.side)?;
    let mr = report
        .value(opts.side)
        .ok_or_else(|| CliError::Config("ranking side produced no ranks".into()))?;
    log(
        "eval-mr",
        format!("{family} on {} facts: MR {mr:.2} in {:.1?}", train_facts.len(), t.elapsed()),
    );
    Ok(mr)
}

/// Mean rank over families x buffer sets x link orders on the spatial unit.
pub fn spatial_sweep(city: &City, opts: &SweepOptions, seed: u64) -> Result<Vec<MrRow>> {
    let mut graphs = Vec::new();
    for b in &opts.buffers {
        let buffer = BufferConfig::parse(b)?;
        for &order in &opts.link_orders {
            let mut kg = KnowledgeGraph::new();
            build_spatial_unit(&mut kg, city, &buffer, order)?;
            graphs.push((format!("Buffer[{}]", buffer.label()), link_label(order), kg));
        }
    }
    let cells: Vec<(Family, usize)> = opts
        .families
        .iter()
        .flat_map(|&f| (0..graphs.len()).map(move |g| (f, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(family, g)| {
            let (buffer, link, kg) = &graphs[g];
            Ok(MrRow {
                model: family.name().into(),
                buffer_cfg: buffer.clone(),
                link_cfg: link.clone(),
                side: opts.side.name().into(),
                mr: mr_cell(kg, Unit::Spatial, family, opts, seed)?,
            })
        })
        .collect()
}

/// Mean rank over families x past windows x temporal link sets. `Past[P]`
/// carries every time buffer from one slot up to P minutes, the way
/// `Link[k]` carries link orders 1..=k. The `buffer_cfg` column holds the
/// time buffer label.
pub fn temporal_sweep(city: &City, series: &CitySeries, opts: &SweepOptions, seed: u64) -> Result<Vec<MrRow>> {
    let mut graphs = Vec::new();
    for &p in &opts.past_windows {
        for l in &opts.temporal_links {
            let slot = TemporalConfig::default().slot_minutes;
            let tcfg = TemporalConfig {
                past_minutes: (1..=p / slot).map(|k| k * slot).collect(),
                link_kinds: TemporalConfig::parse_links(l)?,
                ..TemporalConfig::default()
            };
            let mut kg = KnowledgeGraph::new();
            build_temporal_unit(&mut kg, city, series, &tcfg, first_slot(&tcfg))?;
            graphs.push((format!("Past[{p}]"), format!("Link[{}]", tcfg.links_label()), kg));
        }
    }
    let cells: Vec<(Family, usize)> = opts
        .families
        .iter()
        .flat_map(|&f| (0..graphs.len()).map(move |g| (f, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(family, g)| {
            let (past, link, kg) = &graphs[g];
            Ok(MrRow {
                model: family.name().into(),
                buffer_cfg: past.clone(),
                link_cfg: link.clone(),
                side: opts.side.name().into(),
                mr: mr_cell(kg, Unit::Temporal, family, opts, seed)?,
            })
        })
        .collect()
}

pub fn stage_eval_mr(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let city = load_city(root)?;
    let series = load_series(root)?;
    let t = Instant::now();
    let rows = spatial_sweep(&city, &cfg.sweeps, cfg.seed)?;
    write(root, paths::MR_SPATIAL, mr_rows_to_csv(&rows))?;
    log("eval-mr", format!("{} spatial cells in {:.1?}", rows.len(), t.elapsed()));
    let t = Instant::now();
    let rows = temporal_sweep(&city, &series, &cfg.sweeps, cfg.seed)?;
    write(root, paths::MR_TEMPORAL, mr_rows_to_csv(&rows))?;
    log("eval-mr", format!("{} temporal cells in {:.1?}", rows.len(), t.elapsed()));
    Ok(())
}

/// Slots whose attributes set the temporal normalization statistics: those
/// covered by the forecaster's training windows.
pub fn training_window(cfg: &ExperimentConfig, n_slots: usize) -> Result<std::ops::Range<usize>> {
    let tcfg = cfg.kg.temporal()?;
    let split = ckg_core::forecast::WindowSplit::new(n_slots, first_slot(&tcfg), &cfg.forecast.model)?;
    Ok(split.train_slots(&cfg.forecast.model))
}

pub fn stage_integrate(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let emb_s = load_embedding(root, paths::EMB_SPATIAL)?;
    let emb_t = load_embedding(root, paths::EMB_TEMPORAL)?;
    let kg = load_kg(root)?;
    let schema = load_schema(root)?;
    let series = load_series(root)?;
    let t0 = first_slot(&cfg.kg.temporal()?);
    let window = training_window(cfg, series.n_slots)?;
    let ctx = build_context_tensor(&kg, &emb_s, &emb_t, &schema, &series, t0..series.n_slots, window)?;
    write(root, paths::CONTEXT, ctx.to_bytes())?;
    write(
        root,
        paths::CONTEXT_HEADER,
        serde_json::to_string_pretty(&ctx.header()).expect("header serializes"),
    )?;
    log("integrate", format!("{} roads x {} slots x 17 x {}", ctx.roads, ctx.slots, ctx.dim));
    Ok(())
}

/// Forecaster variant: context-free baseline or a context subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Context(ContextVariant),
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Variant::Baseline,
            "ST" => Variant::Context(ContextVariant::SpatioTemporal),
            "S" => Variant::Context(ContextVariant::Spatial),
            "T" => Variant::Context(ContextVariant::Temporal),
            _ => return Err(CliError::Config(format!("unknown forecast variant {s}"))),
        })
    }

    /// Model label used in metric tables.
    pub fn label(self) -> String {
        match self {
            Variant::Baseline => "baseline".into(),
            Variant::Context(v) => format!("CKG-{}", v.name()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub model: String,
    pub seed: u64,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
}

/// Result of one forecaster training, as written to disk.
pub struct VariantRun {
    pub rows: Vec<MetricRow>,
    pub record: TrainingRecord,
    pub context_heatmap: Option<ckg_core::autodiff::Tensor>,
    pub sequence_heatmap: Option<ckg_core::autodiff::Tensor>,
    pub checkpoint: String,
}

/// Trains one variant with one seed.
pub fn run_variant(
    cfg: &ExperimentConfig,
    city: &City,
    series: &CitySeries,
    context: Option<&ContextTensor>,
    variant: Variant,
    seed: u64,
) -> Result<VariantRun> {
    let t0 = first_slot(&cfg.kg.temporal()?);
    let ctx = match variant {
        Variant::Baseline => None,
        Variant::Context(v) => Some(v.apply(context.ok_or_else(|| {
            CliError::MissingInput("context tensor required for context variants".into())
        })?)),
    };
    let mut fc = cfg.forecast.model.clone();
    fc.seed = seed;
    let data = ForecastData {
        speed: &series.speed,
        adjacency: &city.adjacency,
        context: ctx.as_ref(),
        first_slot: t0,
    };
    let out = Forecaster::train(&data, &fc)?;
    let label = variant.label();
    let rows = out
        .test
        .horizons
        .iter()
        .map(|h| MetricRow {
            model: label.clone(),
            horizon_min: h.horizon_min,
            mae: h.mae,
            mape: h.mape,
            seed,
        })
        .collect();
    Ok(VariantRun {
        rows,
        record: TrainingRecord {
            model: label,
            seed,
            initial_val_loss: out.initial_val_loss,
            best_epoch: out.best_epoch,
            history: out.history,
        },
        context_heatmap: out.test.context_heatmap,
        sequence_heatmap: out.test.sequence_heatmap,
        checkpoint: out.model.to_json(),
    })
}

pub fn stage_forecast(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let city = load_city(root)?;
    let series = load_series(root)?;
    let variants: Vec<Variant> = cfg
        .forecast
        .variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<_>>()?;
    let context = if variants.iter().any(|v| *v != Variant::Baseline) {
        Some(load_context(root)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &seed in &cfg.forecast.seeds {
        for &v in &variants {
            let t = Instant::now();
            let run = run_variant(cfg, &city, &series, context.as_ref(), v, seed)?;
            let tag = format!("{}_seed{seed}", run.record.model);
            write(root, &format!("forecast/checkpoints/{tag}.json"), &run.checkpoint)?;
            write(
                root,
                &format!("forecast/history/{tag}.json"),
                serde_json::to_string_pretty(&run.record).expect("record serializes"),
            )?;
            if let Some(m) = &run.context_heatmap {
                write(root, &format!("forecast/heatmaps/context_{tag}.csv"), heatmap_to_csv(m))?;
            }
            if let Some(m) = &run.sequence_heatmap {
                write(root, &format!("forecast/heatmaps/sequence_{tag}.csv"), heatmap_to_csv(m))?;
            }
            let avg = run.rows.iter().map(|r| r.mae).sum::<f64>() / run.rows.len().max(1) as f64;
            log("forecast", format!("{tag}: mean MAE {avg:.4} in {:.1?}", t.elapsed()));
            rows.extend(run.rows);
        }
    }
    write(root, paths::METRICS, metric_rows_to_csv(&rows))?;
    Ok(())
}

/// Runs one named stage.
pub fn run_stage(stage: &str, cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    match stage {
        "synth" => stage_synth(cfg, root),
        "build-kg" => stage_build_kg(cfg, root),
        "embed" => stage_embed(cfg, root),
        "eval-mr" => stage_eval_mr(cfg, root),
        "integrate" => stage_integrate(cfg, root),
        "forecast" => stage_forecast(cfg, root),
        "report" => crate::report::stage_report(cfg, root),
        "all" => STAGES.iter().try_for_each(|s| run_stage(s, cfg, root)),
        other => Err(CliError::Config(format!(
            "unknown stage {other}; expected one of {} or all",
            STAGES.join(", ")
        ))),
    }
}
