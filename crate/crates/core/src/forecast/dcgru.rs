use std::sync::Arc;

use rand::Rng;

use super::ForecastError;
use crate::autodiff::{Csr, Graph, ParamId, ParamStore, Tensor, Var};

/// Random-walk transition matrices `[D_O^-1 W, D_I^-1 W^T]` of a road graph
/// given as adjacency lists. A road without neighbours gets a self-loop.
pub fn transition_supports(adjacency: &[Vec<usize>]) -> Vec<Arc<Csr>> {
    let n = adjacency.len();
    let mut w = vec![0.0; n * n];
    for (a, nbrs) in adjacency.iter().enumerate() {
        for &b in nbrs {
            w[a * n + b] = 1.0;
        }
    }
    let mut wt = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            wt[b * n + a] = w[a * n + b];
        }
    }
    [w, wt]
        .into_iter()
        .map(|mut m| {
            for row in m.chunks_mut(n.max(1)) {
                let d: f64 = row.iter().sum();
                if d == 0.0 {
                    continue;
                }
                row.iter_mut().for_each(|v| *v /= d);
            }
            for i in 0..n {
                if m[i * n..(i + 1) * n].iter().all(|&v| v == 0.0) {
                    m[i * n + i] = 1.0;
                }
            }
            Arc::new(Csr::from_dense(n, n, &m))
        })
        .collect()
}

/// Scalar-weighted diffusion convolution of node features `x [N, F]`:
/// `sum_k theta[k].0 * P_O^k x + theta[k].1 * P_I^k x` for `k = 0..=K` where
/// `K = theta.len() - 1`.
pub fn diffusion_conv(
    x: &[f64],
    n_features: usize,
    adjacency: &[Vec<usize>],
    theta: &[(f64, f64)],
) -> Result<Vec<f64>, ForecastError> {
    let n = adjacency.len();
    if x.len() != n * n_features {
        return Err(ForecastError::ShapeMismatch(format!(
            "diffusion input has {} values for {n} nodes x {n_features}",
            x.len()
        )));
    }
    let supports = transition_supports(adjacency);
    let mut out = vec![0.0; x.len()];
    for (dir, s) in supports.iter().enumerate() {
        let mut z = x.to_vec();
        for (k, th) in theta.iter().enumerate() {
            if k > 0 {
                z = s.matmul_dense(&z, n_features);
            }
            let w = if dir == 0 { th.0 } else { th.1 };
            for (o, v) in out.iter_mut().zip(&z) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Diffusion terms of `x [N, B, F]` stacked on the feature axis: for each
/// direction, walks of length `0..=k`, giving `[N, B, 2 (K + 1) F]`.
pub fn diffusion_features(
    g: &mut Graph,
    supports: &[Arc<Csr>],
    x: Var,
    k: usize,
) -> Result<Var, ForecastError> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(ForecastError::ShapeMismatch(format!("diffusion input {s:?}")));
    }
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    let mut terms = Vec::with_capacity(supports.len() * (k + 1));
    for sup in supports {
        terms.push(x);
        let mut z = flat;
        for _ in 0..k {
            z = g.spmm(sup, z)?;
            terms.push(g.reshape(z, &s)?);
        }
    }
    Ok(g.concat(&terms, 2)?)
}

/// GRU cell whose dense transforms are diffusion convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct DcgruCell {
    pub input_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub n_supports: usize,
    pub w_gate: ParamId,
    pub b_gate: ParamId,
    pub w_cand: ParamId,
    pub b_cand: ParamId,
}

impl DcgruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        k: usize,
        n_supports: usize,
        rng: &mut R,
    ) -> Self {
        let f = n_supports * (k + 1) * (input_dim + hidden);
        let bound = |o: usize| (6.0 / (f + o) as f64).sqrt();
        let w_gate = store.add_uniform(format!("{name}.w_gate"), &[f, 2 * hidden], bound(2 * hidden), rng);
        let b_gate = store.add(format!("{name}.b_gate"), Tensor::filled(&[2 * hidden], 1.0));
        let w_cand = store.add_uniform(format!("{name}.w_cand"), &[f, hidden], bound(hidden), rng);
        let b_cand = store.add(format!("{name}.b_cand"), Tensor::zeros(&[hidden]));
        Self {
            input_dim,
            hidden,
            k,
            n_supports,
            w_gate,
            b_gate,
            w_cand,
            b_cand,
        }
    }

    /// One step: `x [N, B, input_dim]`, `h [N, B, hidden]` to the next state.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        supports: &[Arc<Csr>],
        x: Var,
        h: Var,
    ) -> Result<Var, ForecastError> {
        let (sx, sh) = (g.shape(x).to_vec(), g.shape(h).to_vec());
        if sx.len() != 3
            || sh.len() != 3
            || sx[..2] != sh[..2]
            || sx[2] != self.input_dim
            || sh[2] != self.hidden
        {
            return Err(ForecastError::ShapeMismatch(format!(
                "dcgru input {sx:?} state {sh:?}"
            )));
        }
        if supports.len() != self.n_supports {
            return Err(ForecastError::ShapeMismatch(format!(
                "{} supports, cell built for {}",
                supports.len(),
                self.n_supports
            )));
        }
        let xh = g.concat(&[x, h], 2)?;
        let feats = diffusion_features(g, supports, xh, self.k)?;
        let (w, b) = (g.param(store, self.w_gate), g.param(store, self.b_gate));
        let gates = g.matmul(feats, w)?;
        let gates = g.add(gates, b)?;
        let gates = g.sigmoid(gates);
        let r = g.slice(gates, 2, 0, self.hidden)?;
        let u = g.slice(gates, 2, self.hidden, 2 * self.hidden)?;
        let rh = g.mul(r, h)?;
        let xrh = g.concat(&[x, rh], 2)?;
        let feats = diffusion_features(g, supports, xrh, self.k)?;
        let (w, b) = (g.param(store, self.w_cand), g.param(store, self.b_cand));
        let c = g.matmul(feats, w)?;
        let c = g.add(c, b)?;
        let c = g.tanh(c);
        // h' = u * h + (1 - u) * c = c + u * (h - c)
        let d = g.sub(h, c)?;
        let ud = g.mul(u, d)?;
        Ok(g.add(c, ud)?)
    }
}
