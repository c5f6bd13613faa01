use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{mean_weights, AttentionBlock};
use super::dcgru::{transition_supports, DcgruCell};
use super::{mae, mape, ForecastConfig, ForecastError, HorizonMetric};
use crate::autodiff::{load_json, save_json, Adam, Csr, Graph, ParamId, ParamStore, Tensor, Var};
use crate::integrate::{ContextTensor, GROUPS};
use crate::synth::SpeedMatrix;

type Result<T> = std::result::Result<T, ForecastError>;

/// Inputs of one forecasting run.
#[derive(Debug, Clone, Copy)]
pub struct ForecastData<'a> {
    pub speed: &'a SpeedMatrix,
    pub adjacency: &'a [Vec<usize>],
    /// Context groups; `None` trains the context-free baseline.
    pub context: Option<&'a ContextTensor>,
    /// Earliest slot a window may start at.
    pub first_slot: usize,
}

/// Per-road z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RoadScaler {
    pub fn fit(speed: &SpeedMatrix, slots: std::ops::Range<usize>) -> Self {
        let n = slots.len().max(1) as f64;
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for r in 0..speed.n_roads {
            let v = &speed.road(r)[slots.clone()];
            let m = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            std.push(if s > 1e-6 { s } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn normalize(&self, road: usize, v: f64) -> f64 {
        (v - self.mean[road]) / self.std[road]
    }

    pub fn denormalize(&self, road: usize, z: f64) -> f64 {
        z * self.std[road] + self.mean[road]
    }
}

/// Window start slots of the chronological train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl WindowSplit {
    pub fn new(n_slots: usize, first_slot: usize, cfg: &ForecastConfig) -> Result<Self> {
        let span = cfg.input_slots + cfg.output_slots;
        let last = n_slots.checked_sub(span).filter(|&l| l >= first_slot).ok_or_else(|| {
            ForecastError::InsufficientData(format!(
                "{n_slots} slots leave no window of {span} slots after slot {first_slot}"
            ))
        })?;
        let all: Vec<usize> = (first_slot..=last).collect();
        let n = all.len();
        let n_train = (n as f64 * cfg.split[0]).floor() as usize;
        let n_val = (n as f64 * cfg.split[1]).floor() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(ForecastError::InsufficientData(format!(
                "{n} windows cannot be split {:?}",
                cfg.split
            )));
        }
        Ok(Self {
            train: all[..n_train].iter().copied().step_by(cfg.window_stride).collect(),
            val: all[n_train..n_train + n_val].to_vec(),
            test: all[n_train + n_val..].to_vec(),
        })
    }

    /// Slots seen by the training windows (inputs and targets).
    pub fn train_slots(&self, cfg: &ForecastConfig) -> std::ops::Range<usize> {
        let first = self.train[0];
        let last = *self.train.last().expect("non-empty");
        first..last + cfg.input_slots + cfg.output_slots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Test-set evaluation of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One entry per output slot.
    pub horizons: Vec<HorizonMetric>,
    pub mae_avg: f64,
    pub mape_avg: f64,
    /// Normalized L1 loss on z-scored speeds.
    pub loss: f64,
    /// Mean context-view attention, `[17, 17]`.
    pub context_heatmap: Option<Tensor>,
    /// Mean sequence-view attention, `[a, a]`.
    pub sequence_heatmap: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ForecastOutcome {
    pub model: Forecaster,
    pub split: WindowSplit,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub test: EvalReport,
}

/// Dual-view attention plus DCGRU encoder-decoder.
#[derive(Debug, Clone)]
pub struct Forecaster {
    pub cfg: ForecastConfig,
    pub store: ParamStore,
    pub n_roads: usize,
    /// Width of one context group, `None` for the baseline.
    pub context_dim: Option<usize>,
    pub scaler: RoadScaler,
    encoder: DcgruCell,
    decoder: DcgruCell,
    w_out: ParamId,
    b_out: ParamId,
    context_block: Option<AttentionBlock>,
    sequence_block: Option<AttentionBlock>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    config: ForecastConfig,
    n_roads: usize,
    context_dim: Option<usize>,
    scaler: RoadScaler,
    params: serde_json::Value,
}

struct Prepared<'a> {
    z: Vec<f64>,
    n_slots: usize,
    supports: Vec<Arc<Csr>>,
    context: Option<&'a ContextTensor>,
}

impl Prepared<'_> {
    fn z(&self, road: usize, slot: usize) -> f64 {
        self.z[road * self.n_slots + slot]
    }
}

struct Run {
    preds: Var,
    context_weights: Vec<Var>,
    sequence_weights: Vec<Var>,
}

impl Forecaster {
    pub fn new(
        cfg: &ForecastConfig,
        n_roads: usize,
        context_dim: Option<usize>,
        scaler: RoadScaler,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let c = cfg.sequence_out_dim;
        let k = cfg.diffusion_steps;
        let encoder = DcgruCell::new(&mut store, "encoder", 1 + c, cfg.hidden, k, 2, &mut rng);
        let decoder = DcgruCell::new(&mut store, "decoder", 1, cfg.hidden, k, 2, &mut rng);
        let bound = (6.0 / (cfg.hidden + 1) as f64).sqrt();
        let w_out = store.add_uniform("out.w", &[cfg.hidden, 1], bound, &mut rng);
        let b_out = store.add("out.b", Tensor::zeros(&[1]));
        let (mut context_block, mut sequence_block) = (None, None);
        if let Some(d) = context_dim {
            rng.set_stream(1);
            context_block = Some(AttentionBlock::standard(&mut store, "context", d, cfg.context_heads, false, &mut rng)?);
            sequence_block = Some(AttentionBlock::new(
                &mut store,
                "sequence",
                GROUPS * d,
                cfg.sequence_heads,
                cfg.sequence_head_dim,
                cfg.sequence_head_dim,
                c,
                true,
                &mut rng,
            )?);
        }
        Ok(Self {
            cfg: cfg.clone(),
            store,
            n_roads,
            context_dim,
            scaler,
            encoder,
            decoder,
            w_out,
            b_out,
            context_block,
            sequence_block,
        })
    }

    pub fn context_block(&self) -> Option<&AttentionBlock> {
        self.context_block.as_ref()
    }

    pub fn sequence_block(&self) -> Option<&AttentionBlock> {
        self.sequence_block.as_ref()
    }

    fn prepare<'a>(&self, data: &ForecastData<'a>) -> Result<Prepared<'a>> {
        let speed = data.speed;
        if speed.n_roads != self.n_roads || data.adjacency.len() != self.n_roads {
            return Err(ForecastError::ShapeMismatch(format!(
                "model has {} roads, data {} speed rows and {} adjacency rows",
                self.n_roads,
                speed.n_roads,
                data.adjacency.len()
            )));
        }
        match (data.context, self.context_dim) {
            (Some(ctx), Some(d)) => {
                if ctx.roads != self.n_roads || ctx.dim != d {
                    return Err(ForecastError::ShapeMismatch(format!(
                        "context {}x{} for model {}x{d}",
                        ctx.roads, ctx.dim, self.n_roads
                    )));
                }
                if data.first_slot < ctx.t0
                    || ctx.t0 + ctx.slots + self.cfg.output_slots + 1 < speed.n_slots
                {
                    return Err(ForecastError::InsufficientData(format!(
                        "context covers slots {:?}, windows need {}..{}",
                        ctx.slot_range(),
                        data.first_slot,
                        speed.n_slots - self.cfg.output_slots
                    )));
                }
            }
            (None, None) => {}
            _ => {
                return Err(ForecastError::ShapeMismatch(
                    "context presence does not match the model".into(),
                ))
            }
        }
        let mut z = Vec::with_capacity(speed.values.len());
        for r in 0..speed.n_roads {
            z.extend(speed.road(r).iter().map(|&v| self.scaler.normalize(r, v)));
        }
        Ok(Prepared {
            z,
            n_slots: speed.n_slots,
            supports: transition_supports(data.adjacency),
            context: data.context,
        })
    }

    /// Sequence-view features `[N, B, a, c]` of a batch, computing the
    /// context view and the sequence projections once per distinct
    /// (road, slot) cell.
    fn context_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        p: &Prepared,
        starts: &[usize],
        run: &mut Run,
    ) -> Result<Option<Var>> {
        let (Some(ctx), Some(cb), Some(sb)) = (p.context, &self.context_block, &self.sequence_block) else {
            return Ok(None);
        };
        let (n, b, a) = (self.n_roads, starts.len(), self.cfg.input_slots);
        let d = ctx.dim;
        let mut slots: BTreeSet<usize> = BTreeSet::new();
        for &s in starts {
            slots.extend(s..s + a);
        }
        // Cells with identical content share one context-view evaluation.
        let mut distinct: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut cell_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cells = Vec::new();
        for &t in &slots {
            for r in 0..n {
                let v = ctx.cell(r, t);
                let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
                let next = distinct.len();
                let id = *distinct.entry(key).or_insert_with(|| {
                    cells.extend_from_slice(&v);
                    next
                });
                cell_of.insert((r, t), id);
            }
        }
        let u = distinct.len();
        let x = g.input(Tensor::new(vec![u, GROUPS, d], cells)?);
        let att = cb.forward(g, store, x)?;
        run.context_weights = att.weights;
        let fused = g.reshape(att.out, &[u, GROUPS * d])?;
        let (q, k, v) = sb.project(g, store, fused)?;
        let mut rows = Vec::with_capacity(n * b * a);
        for r in 0..n {
            for &s in starts {
                for t in s..s + a {
                    rows.push(cell_of[&(r, t)]);
                }
            }
        }
        let mut seq = |m: Var| -> Result<Var> {
            let w = g.shape(m)[1];
            let m = g.gather(m, &rows)?;
            Ok(g.reshape(m, &[n * b, a, w])?)
        };
        let (q, k, v) = (seq(q)?, seq(k)?, seq(v)?);
        let att = sb.attend(g, store, q, k, v)?;
        run.sequence_weights = att.weights;
        Ok(Some(g.reshape(att.out, &[n, b, a, self.cfg.sequence_out_dim])?))
    }

    fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        p: &Prepared,
        starts: &[usize],
        teacher: &[bool],
    ) -> Result<Run> {
        let (n, b, a, h) = (self.n_roads, starts.len(), self.cfg.input_slots, self.cfg.hidden);
        let c = self.cfg.sequence_out_dim;
        let zeros = g.input(Tensor::zeros(&[n, b, c]));
        let mut run = Run {
            preds: zeros,
            context_weights: Vec::new(),
            sequence_weights: Vec::new(),
        };
        let feats = self.context_features(g, store, p, starts, &mut run)?;
        let speed_at = |g: &mut Graph, offset: usize| -> Result<Var> {
            let mut v = Vec::with_capacity(n * b);
            for r in 0..n {
                for &s in starts {
                    v.push(p.z(r, s + offset));
                }
            }
            Ok(g.input(Tensor::new(vec![n, b, 1], v)?))
        };
        let mut state = g.input(Tensor::zeros(&[n, b, h]));
        for i in 0..a {
            let x = speed_at(g, i)?;
            let ctx = match feats {
                Some(f) => {
                    let s = g.slice(f, 2, i, i + 1)?;
                    g.reshape(s, &[n, b, c])?
                }
                None => zeros,
            };
            let x = g.concat(&[x, ctx], 2)?;
            state = self.encoder.forward(g, store, &p.supports, x, state)?;
        }
        let (w, bias) = (g.param(store, self.w_out), g.param(store, self.b_out));
        let mut prev = speed_at(g, a - 1)?;
        let mut preds = Vec::with_capacity(self.cfg.output_slots);
        for j in 0..self.cfg.output_slots {
            state = self.decoder.forward(g, store, &p.supports, prev, state)?;
            let y = g.matmul(state, w)?;
            let y = g.add(y, bias)?;
            preds.push(y);
            prev = if teacher.get(j).copied().unwrap_or(false) {
                speed_at(g, a + j)?
            } else {
                y
            };
        }
        run.preds = g.concat(&preds, 2)?;
        Ok(run)
    }

    fn targets(&self, p: &Prepared, starts: &[usize]) -> Result<Tensor> {
        let (a, o) = (self.cfg.input_slots, self.cfg.output_slots);
        let mut v = Vec::with_capacity(self.n_roads * starts.len() * o);
        for r in 0..self.n_roads {
            for &s in starts {
                for j in 0..o {
                    v.push(p.z(r, s + a + j));
                }
            }
        }
        Ok(Tensor::new(vec![self.n_roads, starts.len(), o], v)?)
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        p: &Prepared,
        starts: &[usize],
        teacher: &[bool],
    ) -> Result<(Var, Run)> {
        let run = self.run(g, store, p, starts, teacher)?;
        let t = g.input(self.targets(p, starts)?);
        let d = g.sub(run.preds, t)?;
        let d = g.abs(d);
        Ok((g.mean(d), run))
    }

    /// Loss graph of one batch with the given teacher-forcing decisions; used
    /// by gradient checks.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        data: &ForecastData,
        starts: &[usize],
        teacher: &[bool],
    ) -> Result<Var> {
        let p = self.prepare(data)?;
        Ok(self.batch_loss(g, store, &p, starts, teacher)?.0)
    }

    /// Predicted speeds (km/h) `[road][window][horizon]` for window starts.
    pub fn predict(&self, data: &ForecastData, starts: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
        let p = self.prepare(data)?;
        let mut out = vec![Vec::with_capacity(starts.len()); self.n_roads];
        for chunk in starts.chunks(self.eval_batch()) {
            let mut g = Graph::new();
            let run = self.run(&mut g, &self.store, &p, chunk, &[])?;
            let o = self.cfg.output_slots;
            let vals = g.value(run.preds).data();
            for (r, road_out) in out.iter_mut().enumerate() {
                for w in 0..chunk.len() {
                    let base = (r * chunk.len() + w) * o;
                    road_out.push(
                        vals[base..base + o]
                            .iter()
                            .map(|&z| self.scaler.denormalize(r, z))
                            .collect(),
                    );
                }
            }
        }
        Ok(out)
    }

    fn eval_batch(&self) -> usize {
        self.cfg.batch_size * 4
    }

    fn evaluate_prepared(&self, store: &ParamStore, p: &Prepared, speed: &SpeedMatrix, starts: &[usize]) -> Result<EvalReport> {
        let (a, o) = (self.cfg.input_slots, self.cfg.output_slots);
        let mut pred_h = vec![Vec::new(); o];
        let mut true_h = vec![Vec::new(); o];
        let mut loss_sum = 0.0;
        let mut ctx_acc: Option<(Tensor, f64)> = None;
        let mut seq_acc: Option<(Tensor, f64)> = None;
        let accumulate = |acc: &mut Option<(Tensor, f64)>, m: Tensor, w: f64| match acc {
            None => *acc = Some((m.map(|v| v * w), w)),
            Some((t, tw)) => {
                for (x, y) in t.data_mut().iter_mut().zip(m.data()) {
                    *x += y * w;
                }
                *tw += w;
            }
        };
        for chunk in starts.chunks(self.eval_batch()) {
            let mut g = Graph::new();
            let (loss, run) = self.batch_loss(&mut g, store, p, chunk, &[])?;
            loss_sum += g.value(loss).item() * chunk.len() as f64;
            let vals = g.value(run.preds).data();
            for r in 0..self.n_roads {
                for (w, &s) in chunk.iter().enumerate() {
                    let base = (r * chunk.len() + w) * o;
                    for j in 0..o {
                        pred_h[j].push(self.scaler.denormalize(r, vals[base + j]));
                        true_h[j].push(speed.get(r, s + a + j));
                    }
                }
            }
            if !run.context_weights.is_empty() {
                let cells = (g.value(run.context_weights[0]).len() / (GROUPS * GROUPS)) as f64;
                accumulate(&mut ctx_acc, mean_weights(&g, &run.context_weights, GROUPS), cells);
                accumulate(&mut seq_acc, mean_weights(&g, &run.sequence_weights, a), chunk.len() as f64);
            }
        }
        let mut horizons = Vec::with_capacity(o);
        for j in 0..o {
            horizons.push(HorizonMetric {
                horizon_min: (j + 1) * 10,
                mae: mae(&pred_h[j], &true_h[j])?,
                mape: mape(&pred_h[j], &true_h[j])?,
            });
        }
        let finish = |acc: Option<(Tensor, f64)>| acc.map(|(t, w)| t.map(|v| v / w));
        Ok(EvalReport {
            mae_avg: horizons.iter().map(|h| h.mae).sum::<f64>() / o as f64,
            mape_avg: horizons.iter().map(|h| h.mape).sum::<f64>() / o as f64,
            loss: loss_sum / starts.len().max(1) as f64,
            horizons,
            context_heatmap: finish(ctx_acc),
            sequence_heatmap: finish(seq_acc),
        })
    }

    /// Metrics and attention heatmaps over the given window starts.
    pub fn evaluate(&self, data: &ForecastData, starts: &[usize]) -> Result<EvalReport> {
        let p = self.prepare(data)?;
        self.evaluate_prepared(&self.store, &p, data.speed, starts)
    }

    /// Trains from scratch and keeps the parameters of the best validation epoch.
    pub fn train(data: &ForecastData, cfg: &ForecastConfig) -> Result<ForecastOutcome> {
        Self::train_with(data, cfg, |_| {})
    }

    /// Like [`Forecaster::train`], reporting every finished epoch.
    pub fn train_with(
        data: &ForecastData,
        cfg: &ForecastConfig,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<ForecastOutcome> {
        cfg.validate()?;
        let split = WindowSplit::new(data.speed.n_slots, data.first_slot, cfg)?;
        let scaler = RoadScaler::fit(data.speed, split.train_slots(cfg));
        let mut model = Self::new(cfg, data.speed.n_roads, data.context.map(|c| c.dim), scaler)?;
        let p = model.prepare(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        let mut adam = Adam::new(cfg.lr);
        let mut store = model.store.clone();
        let initial_val_loss = model.evaluate_prepared(&store, &p, data.speed, &split.val)?.loss;
        let (mut best_loss, mut best_epoch, mut best_store) = (initial_val_loss, 0, store.clone());
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut batches: Vec<&[usize]> = split.train.chunks(cfg.batch_size).collect();
        for epoch in 1..=cfg.epochs {
            adam.lr = cfg.lr_at(epoch - 1);
            batches.shuffle(&mut rng);
            let mut total = 0.0;
            for starts in &batches {
                let teacher: Vec<bool> = (0..cfg.output_slots).map(|_| rng.gen_bool(cfg.teacher_forcing)).collect();
                let mut g = Graph::new();
                let (loss, _) = model.batch_loss(&mut g, &store, &p, starts, &teacher)?;
                total += g.value(loss).item() * starts.len() as f64;
                let mut grads = g.backward(loss)?;
                if cfg.grad_clip > 0.0 {
                    let norm = grads.norm();
                    if norm > cfg.grad_clip {
                        grads.scale(cfg.grad_clip / norm);
                    }
                }
                adam.step(&mut store, &grads);
            }
            let val_loss = model.evaluate_prepared(&store, &p, data.speed, &split.val)?.loss;
            let log = EpochLog {
                epoch,
                train_loss: total / split.train.len() as f64,
                val_loss,
            };
            on_epoch(&log);
            history.push(log);
            if val_loss < best_loss {
                best_loss = val_loss;
                best_epoch = epoch;
                best_store = store.clone();
            }
        }
        model.store = best_store;
        let test = model.evaluate_prepared(&model.store, &p, data.speed, &split.test)?;
        Ok(ForecastOutcome {
            model,
            split,
            initial_val_loss,
            best_epoch,
            history,
            test,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            config: self.cfg.clone(),
            n_roads: self.n_roads,
            context_dim: self.context_dim,
            scaler: self.scaler.clone(),
            params: serde_json::from_str(&save_json(&self.store)).expect("valid json"),
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: String| ForecastError::InvalidConfig(format!("checkpoint: {e}"));
        let doc: CheckpointDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut m = Self::new(&doc.config, doc.n_roads, doc.context_dim, doc.scaler)?;
        let store = load_json(&doc.params.to_string())?;
        if store.len() != m.store.len()
            || m.store.ids().any(|id| store.get(id).shape() != m.store.get(id).shape())
        {
            return Err(bad("parameter layout differs".into()));
        }
        m.store = store;
        Ok(m)
    }
}
