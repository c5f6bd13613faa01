//! Context-fused traffic speed forecasting: attention over context groups and
//! history slots feeding a diffusion-convolution recurrent encoder-decoder.

mod attention;
mod dcgru;
mod model;

pub use attention::{mean_weights, mhsa, AttentionBlock, Attended};
pub use dcgru::{diffusion_conv, diffusion_features, transition_supports, DcgruCell};
pub use model::{
    EpochLog, EvalReport, ForecastData, ForecastOutcome, Forecaster, RoadScaler, WindowSplit,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GradError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("dimension {dim} is not divisible by {heads} heads")]
    HeadDivisibility { dim: usize, heads: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub input_slots: usize,
    pub output_slots: usize,
    pub context_heads: usize,
    pub sequence_heads: usize,
    /// Query/key/value width of each sequence-view head.
    pub sequence_head_dim: usize,
    /// Width of the sequence-view output fed to the encoder per road.
    pub sequence_out_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    /// Train/validation/test fractions of the chronologically ordered windows.
    pub split: [f64; 3],
    pub hidden: usize,
    pub diffusion_steps: usize,
    pub teacher_forcing: f64,
    /// Every `window_stride`-th training window is used.
    pub window_stride: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            input_slots: 12,
            output_slots: 12,
            context_heads: 10,
            sequence_heads: 4,
            sequence_head_dim: 4,
            sequence_out_dim: 8,
            epochs: 500,
            batch_size: 16,
            lr: 1e-3,
            lr_milestones: vec![150, 250, 350, 450],
            lr_gamma: 0.5,
            split: [0.7, 0.1, 0.2],
            hidden: 64,
            diffusion_steps: 2,
            teacher_forcing: 0.5,
            window_stride: 1,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: &str| Err(ForecastError::InvalidConfig(m.to_string()));
        if self.input_slots == 0 || self.output_slots == 0 {
            return bad("input and output slots must be positive");
        }
        if self.context_heads == 0 || self.sequence_heads == 0 {
            return bad("head counts must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.window_stride == 0 {
            return bad("batch size, hidden size and window stride must be positive");
        }
        if self.sequence_head_dim == 0 || self.sequence_out_dim == 0 {
            return bad("sequence view widths must be positive");
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad("lr must be positive and teacher forcing in [0, 1]");
        }
        if self.split.iter().any(|&f| !(f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split fractions must be positive and sum to 1");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_gamma.powi(k as i32)
    }
}

/// Minimum true speed (km/h) for a cell to count towards MAPE.
pub const MAPE_EPSILON: f64 = 1.0;

fn same_len(pred: &[f64], truth: &[f64]) -> Result<(), ForecastError> {
    if pred.len() != truth.len() {
        return Err(ForecastError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, ForecastError> {
    same_len(pred, truth)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
}

/// Mean absolute percentage error over cells with `truth >= MAPE_EPSILON`;
/// NaN when no cell qualifies.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64, ForecastError> {
    same_len(pred, truth)?;
    let (sum, n) = pred
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t >= MAPE_EPSILON)
        .fold((0.0, 0usize), |(s, n), (p, t)| (s + ((p - t) / t).abs(), n + 1));
    Ok(if n == 0 { f64::NAN } else { 100.0 * sum / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetric {
    pub horizon_min: usize,
    pub mae: f64,
    pub mape: f64,
}

/// One row of the forecast metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub horizon_min: usize,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "MAPE")]
    pub mape: f64,
    pub seed: u64,
}

pub fn metric_rows_to_csv(rows: &[MetricRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn metric_rows_from_csv(text: &str) -> Result<Vec<MetricRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

/// Square weight matrix as a headerless CSV grid.
pub fn heatmap_to_csv(m: &Tensor) -> String {
    let n = m.last_dim();
    let mut out = String::new();
    for row in m.data().chunks(n.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn heatmap_from_csv(text: &str) -> Result<Tensor, ForecastError> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().parse::<f64>()).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()
        .map_err(|e| ForecastError::ShapeMismatch(format!("heatmap cell: {e}")))?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(ForecastError::ShapeMismatch("heatmap is not square".into()));
    }
    Ok(Tensor::new(vec![n, n], rows.concat())?)
}
