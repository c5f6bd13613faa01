use rand::Rng;

use super::ForecastError;
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};

/// Multi-head scaled dot-product self-attention without biases.
///
/// Heads are slices of the projected features: head `i` uses columns
/// `i*d_k..(i+1)*d_k` of the query/key projection and `i*d_v..(i+1)*d_v` of
/// the value projection. The concatenated heads go through `W_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub heads: usize,
    pub d_in: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_out: usize,
    pub causal: bool,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

/// Output of one attention pass.
pub struct Attended {
    /// `[B, T, d_out]`.
    pub out: Var,
    /// Per-head weights, each `[B, T, T]`.
    pub weights: Vec<Var>,
}

impl AttentionBlock {
    /// Standard block: `d_model` split evenly across `heads`, output `d_model`.
    pub fn standard<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        causal: bool,
        rng: &mut R,
    ) -> Result<Self, ForecastError> {
        if heads == 0 || d_model % heads != 0 {
            return Err(ForecastError::HeadDivisibility { dim: d_model, heads });
        }
        let d = d_model / heads;
        Self::new(store, name, d_model, heads, d, d, d_model, causal, rng)
    }

    /// Block with explicit per-head widths.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        heads: usize,
        d_k: usize,
        d_v: usize,
        d_out: usize,
        causal: bool,
        rng: &mut R,
    ) -> Result<Self, ForecastError> {
        if heads == 0 || d_k == 0 || d_v == 0 {
            return Err(ForecastError::HeadDivisibility { dim: d_in, heads });
        }
        let glorot = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
        let wq = store.add_uniform(format!("{name}.wq"), &[d_in, heads * d_k], glorot(d_in, heads * d_k), rng);
        let wk = store.add_uniform(format!("{name}.wk"), &[d_in, heads * d_k], glorot(d_in, heads * d_k), rng);
        let wv = store.add_uniform(format!("{name}.wv"), &[d_in, heads * d_v], glorot(d_in, heads * d_v), rng);
        let wo = store.add_uniform(format!("{name}.wo"), &[heads * d_v, d_out], glorot(heads * d_v, d_out), rng);
        Ok(Self {
            heads,
            d_in,
            d_k,
            d_v,
            d_out,
            causal,
            wq,
            wk,
            wv,
            wo,
        })
    }

    /// Query, key and value projections of `x[..., d_in]`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var, Var), ForecastError> {
        let (wq, wk, wv) = (g.param(store, self.wq), g.param(store, self.wk), g.param(store, self.wv));
        Ok((g.matmul(x, wq)?, g.matmul(x, wk)?, g.matmul(x, wv)?))
    }

    /// Attention over already projected `q, k [B, T, H*d_k]` and `v [B, T, H*d_v]`.
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<Attended, ForecastError> {
        let scale = 1.0 / (self.d_k as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qi = g.slice(q, 2, i * self.d_k, (i + 1) * self.d_k)?;
            let ki = g.slice(k, 2, i * self.d_k, (i + 1) * self.d_k)?;
            let vi = g.slice(v, 2, i * self.d_v, (i + 1) * self.d_v)?;
            let s = g.bmm(qi, ki, true)?;
            let s = g.scale(s, scale);
            let w = if self.causal { g.softmax_causal(s)? } else { g.softmax(s) };
            heads.push(g.bmm(w, vi, false)?);
            weights.push(w);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 2)? };
        let wo = g.param(store, self.wo);
        Ok(Attended {
            out: g.matmul(cat, wo)?,
            weights,
        })
    }

    /// Full pass over `x [B, T, d_in]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Attended, ForecastError> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.d_in {
            return Err(ForecastError::ShapeMismatch(format!(
                "attention input {:?}, expected [B, T, {}]",
                s, self.d_in
            )));
        }
        let (q, k, v) = self.project(g, store, x)?;
        self.attend(g, store, q, k, v)
    }
}

/// Evaluates a block on one token matrix `x [T, d_in]`, returning the output
/// `[T, d_out]` and the head-averaged attention matrix `[T, T]`.
pub fn mhsa(block: &AttentionBlock, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor), ForecastError> {
    let s = x.shape().to_vec();
    if s.len() != 2 {
        return Err(ForecastError::ShapeMismatch(format!("mhsa input {s:?}")));
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone().reshaped(vec![1, s[0], s[1]])?);
    let a = block.forward(&mut g, store, xv)?;
    let out = g.value(a.out).clone().reshaped(vec![s[0], block.d_out])?;
    Ok((out, mean_weights(&g, &a.weights, s[0])))
}

/// Average of `[B, T, T]` weight tensors over heads and batch.
pub fn mean_weights(g: &Graph, weights: &[Var], t: usize) -> Tensor {
    let mut acc = vec![0.0; t * t];
    let mut count = 0usize;
    for &w in weights {
        for block in g.value(w).data().chunks(t * t) {
            for (a, v) in acc.iter_mut().zip(block) {
                *a += v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    Tensor::new(vec![t, t], acc.into_iter().map(|v| v / n).collect()).expect("square")
}
