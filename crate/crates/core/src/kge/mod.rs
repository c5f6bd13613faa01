//! The six scoring families, their parameter tables, and training.

mod score;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{CheckpointRecord, GradError, Graph, ParamId, ParamStore, Tensor, Var};

pub use score::{
    score_complex, score_kg2e, score_rescal, score_ntn, score_transe, score_transr, NtnRelation,
};
pub use train::{negative_sample, train, train_logged, CorruptMode};

pub const SIGMA_MIN: f64 = 0.05;
pub const SIGMA_MAX: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgeError {
    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),
    #[error("covariance must be positive")]
    NonPositiveCovariance,
    #[error("graph unit has no facts")]
    EmptyGraph,
    #[error("need at least 2 entities")]
    TooFewEntities,
    #[error("unknown model family {0}")]
    UnknownFamily(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    TransE,
    TransR,
    KG2E,
    RESCAL,
    ComplEx,
    NTN,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::TransE,
        Family::TransR,
        Family::KG2E,
        Family::RESCAL,
        Family::ComplEx,
        Family::NTN,
    ];

    /// Translational/distance families (margin loss, additive paths).
    pub fn is_distance(self) -> bool {
        matches!(self, Family::TransE | Family::TransR | Family::KG2E)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::TransE => "TransE",
            Family::TransR => "TransR",
            Family::KG2E => "KG2E",
            Family::RESCAL => "RESCAL",
            Family::ComplEx => "ComplEx",
            Family::NTN => "NTN",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| KgeError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub rel_dim: usize,
    /// Number of NTN tensor slices (the NTN relation dimension).
    pub ntn_slices: usize,
    pub negatives: usize,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 penalty on gathered embeddings for the logistic-loss families.
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 40,
            rel_dim: 40,
            ntn_slices: 4,
            negatives: 10,
            margin: 1.0,
            epochs: 500,
            batch_size: 128,
            lr: 0.01,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, family: Family) -> Result<(), KgeError> {
        if self.dim == 0 || self.rel_dim == 0 || self.negatives == 0 || self.batch_size == 0 {
            return Err(KgeError::InvalidConfig("dims, negatives and batch size must be positive".into()));
        }
        if family == Family::ComplEx && self.dim % 2 != 0 {
            return Err(KgeError::InvalidConfig("ComplEx needs an even dim".into()));
        }
        if family == Family::NTN && self.ntn_slices == 0 {
            return Err(KgeError::InvalidConfig("NTN needs at least one slice".into()));
        }
        Ok(())
    }
}

/// Parameter ids of one embedding family. Unused slots are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Layout {
    ent: Option<ParamId>,
    ent2: Option<ParamId>,
    rel: Option<ParamId>,
    rel2: Option<ParamId>,
    mat: Option<ParamId>,
    m1: Option<ParamId>,
    m2: Option<ParamId>,
    bias: Option<ParamId>,
}

/// Trained parameters of one model family.
///
/// Tables by family (`N` entities, `R` relations, `e` = dim, `r` = rel dim,
/// `k` = NTN slices):
/// TransE `ent[N,e] rel[R,e]`; TransR adds `proj[R,r,e]` with `rel[R,r]`;
/// KG2E `ent_mu, ent_sigma[N,e] rel_mu, rel_sigma[R,e]`; RESCAL `ent[N,e]
/// rel_mat[R,e,e]`; ComplEx `ent_re, ent_im[N,e/2] rel_re, rel_im[R,e/2]`;
/// NTN `ent[N,e] ntn_w[R,k,e,e] ntn_m1, ntn_m2[R,k,e] ntn_b[R,k] rel[R,k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub family: Family,
    pub dim: usize,
    pub rel_dim: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub params: ParamStore,
    layout: Layout,
}

fn row(t: &Tensor, i: usize) -> &[f64] {
    let n = t.len() / t.shape()[0];
    &t.data()[i * n..(i + 1) * n]
}

impl EmbeddingSet {
    /// Freshly initialized parameters.
    pub fn init(
        family: Family,
        n_entities: usize,
        n_relations: usize,
        cfg: &TrainConfig,
    ) -> Result<Self, KgeError> {
        cfg.validate(family)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(7);
        let (n, r, e) = (n_entities, n_relations, cfg.dim);
        let mut p = ParamStore::new();
        let mut l = Layout::default();
        let xavier = 6.0 / (e as f64).sqrt();
        let small = 1.0 / (e as f64).sqrt();
        let rel_dim = match family {
            Family::TransR => cfg.rel_dim,
            Family::NTN => cfg.ntn_slices,
            Family::ComplEx => e / 2,
            _ => e,
        };
        match family {
            Family::TransE | Family::TransR => {
                l.ent = Some(p.add_uniform("ent", &[n, e], xavier, &mut rng));
                l.rel = Some(p.add_uniform("rel", &[r, rel_dim], xavier, &mut rng));
                if family == Family::TransR {
                    let mut proj = Tensor::zeros(&[r, rel_dim, e]);
                    for k in 0..r {
                        for i in 0..rel_dim.min(e) {
                            proj.data_mut()[k * rel_dim * e + i * e + i] = 1.0;
                        }
                    }
                    l.mat = Some(p.add("proj", proj));
                }
                for id in [l.ent.unwrap(), l.rel.unwrap()] {
                    normalize_rows(p.get_mut(id), 1.0, true);
                }
            }
            Family::KG2E => {
                l.ent = Some(p.add_uniform("ent_mu", &[n, e], xavier, &mut rng));
                l.ent2 = Some(p.add("ent_sigma", sigma_init(&[n, e], &mut rng)));
                l.rel = Some(p.add_uniform("rel_mu", &[r, e], xavier, &mut rng));
                l.rel2 = Some(p.add("rel_sigma", sigma_init(&[r, e], &mut rng)));
                for id in [l.ent.unwrap(), l.rel.unwrap()] {
                    normalize_rows(p.get_mut(id), 1.0, true);
                }
            }
            Family::RESCAL => {
                l.ent = Some(p.add_uniform("ent", &[n, e], small, &mut rng));
                l.mat = Some(p.add_uniform("rel_mat", &[r, e, e], small, &mut rng));
            }
            Family::ComplEx => {
                let h = e / 2;
                l.ent = Some(p.add_uniform("ent_re", &[n, h], small, &mut rng));
                l.ent2 = Some(p.add_uniform("ent_im", &[n, h], small, &mut rng));
                l.rel = Some(p.add_uniform("rel_re", &[r, h], small, &mut rng));
                l.rel2 = Some(p.add_uniform("rel_im", &[r, h], small, &mut rng));
            }
            Family::NTN => {
                let k = rel_dim;
                l.ent = Some(p.add_uniform("ent", &[n, e], small, &mut rng));
                l.mat = Some(p.add_uniform("ntn_w", &[r, k, e, e], 1.0 / e as f64, &mut rng));
                l.m1 = Some(p.add_uniform("ntn_m1", &[r, k, e], small, &mut rng));
                l.m2 = Some(p.add_uniform("ntn_m2", &[r, k, e], small, &mut rng));
                l.bias = Some(p.add("ntn_b", Tensor::zeros(&[r, k])));
                l.rel = Some(p.add_uniform("rel", &[r, k], 1.0 / (k as f64).sqrt(), &mut rng));
            }
        }
        Ok(Self {
            family,
            dim: e,
            rel_dim,
            n_entities,
            n_relations,
            params: p,
            layout: l,
        })
    }

    fn t(&self, id: Option<ParamId>) -> &Tensor {
        self.params.get(id.expect("parameter present for family"))
    }

    /// Scores one triple with the plain scoring functions.
    pub fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        let l = &self.layout;
        let res = match self.family {
            Family::TransE => score_transe(row(self.t(l.ent), h), row(self.t(l.rel), r), row(self.t(l.ent), t)),
            Family::TransR => score_transr(
                row(self.t(l.ent), h),
                row(self.t(l.rel), r),
                row(self.t(l.ent), t),
                row(self.t(l.mat), r),
            ),
            Family::KG2E => score_kg2e(
                row(self.t(l.ent), h),
                row(self.t(l.ent2), h),
                row(self.t(l.rel), r),
                row(self.t(l.rel2), r),
                row(self.t(l.ent), t),
                row(self.t(l.ent2), t),
            ),
            Family::RESCAL => score_rescal(row(self.t(l.ent), h), row(self.t(l.ent), t), row(self.t(l.mat), r)),
            Family::ComplEx => score_complex(
                row(self.t(l.ent), h),
                row(self.t(l.ent2), h),
                row(self.t(l.rel), r),
                row(self.t(l.rel2), r),
                row(self.t(l.ent), t),
                row(self.t(l.ent2), t),
            ),
            Family::NTN => score_ntn(row(self.t(l.ent), h), row(self.t(l.ent), t), self.ntn_relation(r)),
        };
        res.expect("tables have consistent shapes")
    }

    fn ntn_relation(&self, r: usize) -> NtnRelation<'_> {
        let l = &self.layout;
        NtnRelation {
            w: row(self.t(l.mat), r),
            m1: row(self.t(l.m1), r),
            m2: row(self.t(l.m2), r),
            b: row(self.t(l.bias), r),
            u: row(self.t(l.rel), r),
        }
    }

    /// Scores of every entity as the tail of `(anchor, r, ?)` (`tail = true`)
    /// or as the head of `(?, r, anchor)`.
    pub fn score_candidates(&self, anchor: usize, r: usize, tail: bool) -> Vec<f64> {
        let l = &self.layout;
        let n = self.n_entities;
        match self.family {
            Family::RESCAL => {
                let m = row(self.t(l.mat), r);
                let e = self.dim;
                let ent = self.t(l.ent);
                let a = row(ent, anchor);
                // v = aᵀM for tails, w = M a for heads.
                let v: Vec<f64> = if tail {
                    (0..e).map(|j| (0..e).map(|i| a[i] * m[i * e + j]).sum()).collect()
                } else {
                    (0..e).map(|i| m[i * e..(i + 1) * e].iter().zip(a).map(|(x, y)| x * y).sum()).collect()
                };
                (0..n).map(|c| row(ent, c).iter().zip(&v).map(|(x, y)| x * y).sum()).collect()
            }
            Family::NTN => {
                let p = self.ntn_relation(r);
                let e = self.dim;
                let k = self.rel_dim;
                let ent = self.t(l.ent);
                let a = row(ent, anchor);
                // Per slice: the bilinear form collapsed onto the anchor, plus the
                // anchor's linear term.
                let mut coef = vec![0.0; k * e];
                let mut constant = vec![0.0; k];
                for j in 0..k {
                    let w = &p.w[j * e * e..(j + 1) * e * e];
                    for x in 0..e {
                        coef[j * e + x] = if tail {
                            (0..e).map(|i| a[i] * w[i * e + x]).sum::<f64>()
                        } else {
                            w[x * e..(x + 1) * e].iter().zip(a).map(|(u, v)| u * v).sum::<f64>()
                        };
                    }
                    let (lin_a, lin_c) = if tail { (p.m1, p.m2) } else { (p.m2, p.m1) };
                    constant[j] = lin_a[j * e..(j + 1) * e].iter().zip(a).map(|(u, v)| u * v).sum::<f64>() + p.b[j];
                    for x in 0..e {
                        coef[j * e + x] += lin_c[j * e + x];
                    }
                }
                (0..n)
                    .map(|c| {
                        let v = row(ent, c);
                        (0..k)
                            .map(|j| {
                                let z: f64 = coef[j * e..(j + 1) * e].iter().zip(v).map(|(u, w)| u * w).sum();
                                p.u[j] * (z + constant[j]).tanh()
                            })
                            .sum()
                    })
                    .collect()
            }
            Family::TransR => {
                let m = row(self.t(l.mat), r);
                let rv = row(self.t(l.rel), r);
                let (rd, e) = (self.rel_dim, self.dim);
                let ent = self.t(l.ent);
                let project = |v: &[f64]| -> Vec<f64> {
                    (0..rd).map(|i| m[i * e..(i + 1) * e].iter().zip(v).map(|(x, y)| x * y).sum()).collect()
                };
                let pa = project(row(ent, anchor));
                (0..n)
                    .map(|c| {
                        let pc = project(row(ent, c));
                        let (ph, pt) = if tail { (&pa, &pc) } else { (&pc, &pa) };
                        -(0..rd).map(|i| (ph[i] + rv[i] - pt[i]).powi(2)).sum::<f64>()
                    })
                    .collect()
            }
            _ => (0..n)
                .map(|c| if tail { self.score(anchor, r, c) } else { self.score(c, r, anchor) })
                .collect(),
        }
    }

    /// Entity vector used for context integration (dim `dim`): the embedding,
    /// the Gaussian mean for KG2E, or `concat(re, im)` for ComplEx.
    pub fn entity_vector(&self, e: usize) -> Vec<f64> {
        let l = &self.layout;
        match self.family {
            Family::ComplEx => [row(self.t(l.ent), e), row(self.t(l.ent2), e)].concat(),
            _ => row(self.t(l.ent), e).to_vec(),
        }
    }

    /// Relation vector used for context integration: the translation for
    /// TransE/TransR, the mean for KG2E, the diagonal of the bilinear matrix
    /// for RESCAL, `concat(re, im)` for ComplEx, the output layer for NTN.
    pub fn relation_vector(&self, r: usize) -> Vec<f64> {
        let l = &self.layout;
        match self.family {
            Family::RESCAL => {
                let m = row(self.t(l.mat), r);
                (0..self.dim).map(|i| m[i * self.dim + i]).collect()
            }
            Family::ComplEx => [row(self.t(l.rel), r), row(self.t(l.rel2), r)].concat(),
            _ => row(self.t(l.rel), r).to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
    }

    /// Batched scores `[B, 1]` of the given triples as a differentiable graph.
    pub fn score_graph(
        &self,
        g: &mut Graph,
        heads: &[usize],
        rels: &[usize],
        tails: &[usize],
    ) -> Result<Var, KgeError> {
        score_graph(g, &self.params, &self.layout, self.family, heads, rels, tails, self.dim)
    }

    /// Same as [`score_graph`](Self::score_graph) but reads parameters from
    /// `params`, which must have this set's layout (e.g. a perturbed copy).
    pub fn score_graph_with(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        heads: &[usize],
        rels: &[usize],
        tails: &[usize],
    ) -> Result<Var, KgeError> {
        score_graph(g, params, &self.layout, self.family, heads, rels, tails, self.dim)
    }

    /// Entity-table parameters touched by the loss, for L2 penalties.
    fn entity_params(&self) -> Vec<ParamId> {
        [self.layout.ent, self.layout.ent2]
            .into_iter()
            .flatten()
            .filter(|_| !self.family.is_distance())
            .collect()
    }

    /// Enforces per-family constraints: unit-ball entity norms for
    /// TransE/TransR, covariance clamps for KG2E.
    pub fn apply_constraints(&mut self, epoch_end: bool) {
        match self.family {
            Family::TransE | Family::TransR if epoch_end => {
                let id = self.layout.ent.unwrap();
                normalize_rows(self.params.get_mut(id), 1.0, false);
            }
            Family::KG2E => {
                for id in [self.layout.ent2, self.layout.rel2].into_iter().flatten() {
                    for v in self.params.get_mut(id).data_mut() {
                        *v = v.clamp(SIGMA_MIN, SIGMA_MAX);
                    }
                }
            }
            _ => {}
        }
    }

    pub fn to_json(&self) -> String {
        let doc = EmbeddingJson {
            family: self.family,
            dim: self.dim,
            rel_dim: self.rel_dim,
            n_entities: self.n_entities,
            n_relations: self.n_relations,
            params: self
                .params
                .ids()
                .map(|id| CheckpointRecord {
                    name: self.params.name(id).to_string(),
                    shape: self.params.get(id).shape().to_vec(),
                    values: self.params.get(id).data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("embedding serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KgeError> {
        let doc: EmbeddingJson = serde_json::from_str(text).map_err(|e| KgeError::Json(e.to_string()))?;
        let mut params = ParamStore::new();
        for r in doc.params {
            params.add(r.name, Tensor::new(r.shape, r.values)?);
        }
        let find = |n: &str| params.find(n);
        let layout = Layout {
            ent: find("ent").or(find("ent_mu")).or(find("ent_re")),
            ent2: find("ent_sigma").or(find("ent_im")),
            rel: find("rel").or(find("rel_mu")).or(find("rel_re")),
            rel2: find("rel_sigma").or(find("rel_im")),
            mat: find("proj").or(find("rel_mat")).or(find("ntn_w")),
            m1: find("ntn_m1"),
            m2: find("ntn_m2"),
            bias: find("ntn_b"),
        };
        if layout.ent.is_none() {
            return Err(KgeError::Json("missing entity table".into()));
        }
        Ok(Self {
            family: doc.family,
            dim: doc.dim,
            rel_dim: doc.rel_dim,
            n_entities: doc.n_entities,
            n_relations: doc.n_relations,
            params,
            layout,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingJson {
    family: Family,
    dim: usize,
    rel_dim: usize,
    n_entities: usize,
    n_relations: usize,
    params: Vec<CheckpointRecord>,
}

fn sigma_init(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.5..1.0)).collect()).unwrap()
}

/// Rescales rows to norm `max`; when `always` is false only longer rows shrink.
fn normalize_rows(t: &mut Tensor, max: f64, always: bool) {
    let c = t.last_dim();
    for row in t.data_mut().chunks_mut(c) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && (always || n > max) {
            row.iter_mut().for_each(|v| *v *= max / n);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn score_graph(
    g: &mut Graph,
    p: &ParamStore,
    l: &Layout,
    family: Family,
    heads: &[usize],
    rels: &[usize],
    tails: &[usize],
    dim: usize,
) -> Result<Var, KgeError> {
    let b = heads.len();
    let gp = |g: &mut Graph, id: Option<ParamId>, rows: &[usize]| g.gather_param(p, id.unwrap(), rows);
    let out = match family {
        Family::TransE => {
            let h = gp(g, l.ent, heads)?;
            let r = gp(g, l.rel, rels)?;
            let t = gp(g, l.ent, tails)?;
            let d = g.add(h, r)?;
            let d = g.sub(d, t)?;
            let sq = g.square(d);
            let s = g.sum_last(sq);
            g.neg(s)
        }
        Family::TransR => {
            let h = gp(g, l.ent, heads)?;
            let t = gp(g, l.ent, tails)?;
            let r = gp(g, l.rel, rels)?;
            let m = gp(g, l.mat, rels)?;
            let diff = g.sub(h, t)?;
            let diff = g.reshape(diff, &[b, dim, 1])?;
            let proj = g.bmm(m, diff, false)?;
            let rd = g.shape(r)[1];
            let proj = g.reshape(proj, &[b, rd])?;
            let d = g.add(proj, r)?;
            let sq = g.square(d);
            let s = g.sum_last(sq);
            g.neg(s)
        }
        Family::KG2E => {
            let mh = gp(g, l.ent, heads)?;
            let sh = gp(g, l.ent2, heads)?;
            let mr = gp(g, l.rel, rels)?;
            let sr = gp(g, l.rel2, rels)?;
            let mt = gp(g, l.ent, tails)?;
            let st = gp(g, l.ent2, tails)?;
            let dm = g.sub(mt, mh)?;
            let dm = g.sub(dm, mr)?;
            let s = g.add(st, sh)?;
            let s = g.add(s, sr)?;
            let sq = g.square(dm);
            let q = g.div(sq, s)?;
            let ls = g.log(s);
            let tot = g.add(q, ls)?;
            let tot = g.sum_last(tot);
            let tot = g.add_scalar(tot, dim as f64 * std::f64::consts::TAU.ln());
            g.scale(tot, -0.5)
        }
        Family::RESCAL => {
            let h = gp(g, l.ent, heads)?;
            let t = gp(g, l.ent, tails)?;
            let m = gp(g, l.mat, rels)?;
            let h3 = g.reshape(h, &[b, 1, dim])?;
            let hm = g.bmm(h3, m, false)?;
            let hm = g.reshape(hm, &[b, dim])?;
            let prod = g.mul(hm, t)?;
            g.sum_last(prod)
        }
        Family::ComplEx => {
            let hr = gp(g, l.ent, heads)?;
            let hi = gp(g, l.ent2, heads)?;
            let rr = gp(g, l.rel, rels)?;
            let ri = gp(g, l.rel2, rels)?;
            let tr = gp(g, l.ent, tails)?;
            let ti = gp(g, l.ent2, tails)?;
            let a = g.mul(hr, tr)?;
            let c = g.mul(hi, ti)?;
            let re_part = g.add(a, c)?;
            let a = g.mul(hr, ti)?;
            let c = g.mul(hi, tr)?;
            let im_part = g.sub(a, c)?;
            let x = g.mul(rr, re_part)?;
            let y = g.mul(ri, im_part)?;
            let s = g.add(x, y)?;
            g.sum_last(s)
        }
        Family::NTN => {
            let h = gp(g, l.ent, heads)?;
            let t = gp(g, l.ent, tails)?;
            let w = gp(g, l.mat, rels)?;
            let m1 = gp(g, l.m1, rels)?;
            let m2 = gp(g, l.m2, rels)?;
            let bias = gp(g, l.bias, rels)?;
            let u = gp(g, l.rel, rels)?;
            let k = g.shape(u)[1];
            let w = g.reshape(w, &[b, k * dim, dim])?;
            let t3 = g.reshape(t, &[b, dim, 1])?;
            let wt = g.bmm(w, t3, false)?;
            let wt = g.reshape(wt, &[b, k, dim])?;
            let h3 = g.reshape(h, &[b, 1, dim])?;
            let bil = g.mul(wt, h3)?;
            let bil = g.sum_last(bil);
            let bil = g.reshape(bil, &[b, k])?;
            let hcol = g.reshape(h, &[b, dim, 1])?;
            let l1 = g.bmm(m1, hcol, false)?;
            let l1 = g.reshape(l1, &[b, k])?;
            let l2 = g.bmm(m2, t3, false)?;
            let l2 = g.reshape(l2, &[b, k])?;
            let z = g.add(bil, l1)?;
            let z = g.add(z, l2)?;
            let z = g.add(z, bias)?;
            let z = g.tanh(z);
            let s = g.mul(z, u)?;
            g.sum_last(s)
        }
    };
    Ok(out)
}
