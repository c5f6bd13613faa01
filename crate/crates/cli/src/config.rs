use std::path::{Path, PathBuf};

use ckg_core::forecast::ForecastConfig;
use ckg_core::kg::{BufferConfig, TemporalConfig};
use ckg_core::kge::{Family, TrainConfig};
use ckg_core::rank::Side;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityOptions {
    pub roads: usize,
    pub days: usize,
    pub noise_scale: f64,
}

impl Default for CityOptions {
    fn default() -> Self {
        Self {
            roads: 50,
            days: 7,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgOptions {
    /// `near`, `far`, `all`, a range label or a comma list of meters.
    pub buffer: String,
    /// Highest spatial link order; 0 emits no links.
    pub max_link_order: u32,
    pub past_minutes: Vec<u32>,
    /// `-`, `HDW` or any subset of the letters.
    pub links: String,
}

impl Default for KgOptions {
    fn default() -> Self {
        Self {
            buffer: "all".into(),
            max_link_order: 6,
            past_minutes: TemporalConfig::default().past_minutes,
            links: "HDW".into(),
        }
    }
}

impl KgOptions {
    pub fn buffer(&self) -> Result<BufferConfig> {
        Ok(BufferConfig::parse(&self.buffer)?)
    }

    pub fn temporal(&self) -> Result<TemporalConfig> {
        let cfg = TemporalConfig {
            past_minutes: self.past_minutes.clone(),
            link_kinds: TemporalConfig::parse_links(&self.links)?,
            ..TemporalConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedOptions {
    pub spatial_family: Family,
    pub temporal_family: Family,
    pub train: TrainConfig,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            spatial_family: Family::ComplEx,
            temporal_family: Family::KG2E,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub families: Vec<Family>,
    /// Buffer sets of the spatial sweep.
    pub buffers: Vec<String>,
    /// Link orders of the spatial sweep (0 = no links).
    pub link_orders: Vec<u32>,
    /// Single past windows of the temporal sweep, minutes.
    pub past_windows: Vec<u32>,
    /// Link kind sets of the temporal sweep.
    pub temporal_links: Vec<String>,
    /// Fraction of facts held out for ranking; 0 ranks the training facts.
    pub holdout: f64,
    pub side: Side,
    pub train: TrainConfig,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            buffers: vec!["near".into(), "far".into(), "all".into()],
            link_orders: vec![0, 6],
            past_windows: (1..=6).map(|k| k * 10).collect(),
            temporal_links: vec!["-".into(), "HDW".into()],
            holdout: 0.0,
            side: Side::Both,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastOptions {
    pub model: ForecastConfig,
    /// Any of `baseline`, `ST`, `S`, `T`.
    pub variants: Vec<String>,
    /// Forecaster seeds; every variant is trained once per seed.
    pub seeds: Vec<u64>,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            model: ForecastConfig::default(),
            variants: ["baseline", "ST", "S", "T"].map(String::from).to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

/// Whole-pipeline configuration, one section per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub city: CityOptions,
    pub kg: KgOptions,
    pub embed: EmbedOptions,
    pub sweeps: SweepOptions,
    pub forecast: ForecastOptions,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            city: CityOptions::default(),
            kg: KgOptions::default(),
            embed: EmbedOptions::default(),
            sweeps: SweepOptions::default(),
            forecast: ForecastOptions::default(),
            output_dir: PathBuf::from("ckg_out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.city.roads == 0 || self.city.days == 0 {
            return bad("city needs at least one road and one day".into());
        }
        self.kg.buffer()?;
        self.kg.temporal()?;
        for b in &self.sweeps.buffers {
            ckg_core::kg::BufferConfig::parse(b)?;
        }
        for l in &self.sweeps.temporal_links {
            TemporalConfig::parse_links(l)?;
        }
        if self.sweeps.link_orders.iter().any(|&k| k > 12) || self.kg.max_link_order > 12 {
            return bad("link orders must be at most 12".into());
        }
        if !(0.0..1.0).contains(&self.sweeps.holdout) {
            return bad(format!("holdout fraction {} outside [0, 1)", self.sweeps.holdout));
        }
        self.embed.train.validate(self.embed.spatial_family)?;
        self.embed.train.validate(self.embed.temporal_family)?;
        for &f in &self.sweeps.families {
            self.sweeps.train.validate(f)?;
        }
        self.forecast.model.validate()?;
        for v in &self.forecast.variants {
            crate::pipeline::Variant::parse(v)?;
        }
        if self.forecast.seeds.is_empty() {
            return bad("forecast needs at least one seed".into());
        }
        Ok(())
    }
}
