//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Parameters live in a [`ParamStore`]; every forward pass records a fresh
//! [`Graph`] whose [`Graph::backward`] returns [`Gradients`] keyed by
//! [`ParamId`]. Optimizers ([`Adam`]) then update the store in place.

mod check;
mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use check::{compare_gradients, grad_check, grad_check_sampled, GradCheckReport, ParamCheck};
pub use checkpoint::{load_binary, load_json, save_binary, save_json, CheckpointRecord};
pub use graph::{sigmoid, softplus, Csr, Graph, Var};
pub use optim::{adam_step, Adam, AdamState, LrSchedule};
pub use tensor::Tensor;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named collection of learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Adds a parameter initialized uniformly in `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Gradient of one parameter: dense, or a set of touched rows when the
/// parameter was only read through row gathers.
#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Dense(Tensor),
    Rows {
        shape: Vec<usize>,
        row_len: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl Slot {
    fn to_dense(&self) -> Tensor {
        match self {
            Slot::Dense(t) => t.clone(),
            Slot::Rows {
                shape,
                row_len,
                rows,
            } => {
                let mut t = Tensor::zeros(shape);
                for (&r, g) in rows {
                    t.data_mut()[r * row_len..(r + 1) * row_len].copy_from_slice(g);
                }
                t
            }
        }
    }

    fn densify(&mut self) -> &mut Tensor {
        if let Slot::Rows { .. } = self {
            *self = Slot::Dense(self.to_dense());
        }
        match self {
            Slot::Dense(t) => t,
            Slot::Rows { .. } => unreachable!(),
        }
    }
}

/// Parameter gradients produced by a backward pass.
///
/// Parameters reached only through [`Graph::gather_param`] keep row-sparse
/// gradients so optimizers can skip untouched rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Slot>>,
}

impl Gradients {
    /// Dense copy of the gradient of `id`, if any.
    pub fn get(&self, id: ParamId) -> Option<Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref).map(Slot::to_dense)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.slots.get(id.0).is_some_and(Option::is_some)
    }

    /// Touched rows and their gradients when the gradient is row-sparse.
    pub fn sparse_rows(&self, id: ParamId) -> Option<(usize, &BTreeMap<usize, Vec<f64>>)> {
        match self.slots.get(id.0).and_then(Option::as_ref)? {
            Slot::Rows { row_len, rows, .. } => Some((*row_len, rows)),
            Slot::Dense(_) => None,
        }
    }

    /// Dense gradient buffer when the gradient is dense.
    pub fn dense(&self, id: ParamId) -> Option<&Tensor> {
        match self.slots.get(id.0).and_then(Option::as_ref)? {
            Slot::Dense(t) => Some(t),
            Slot::Rows { .. } => None,
        }
    }

    fn ensure(&mut self, id: ParamId) -> &mut Option<Slot> {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        &mut self.slots[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, shape: &[usize], g: &[f64]) {
        let slot = self
            .ensure(id)
            .get_or_insert_with(|| Slot::Dense(Tensor::zeros(shape)));
        for (d, s) in slot.densify().data_mut().iter_mut().zip(g) {
            *d += s;
        }
    }

    pub(crate) fn scatter_rows(
        &mut self,
        id: ParamId,
        shape: &[usize],
        rows: &[usize],
        row_len: usize,
        g: &[f64],
    ) {
        let slot = self.ensure(id).get_or_insert_with(|| Slot::Rows {
            shape: shape.to_vec(),
            row_len,
            rows: BTreeMap::new(),
        });
        match slot {
            Slot::Dense(t) => {
                let t = t.data_mut();
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut t[r * row_len..(r + 1) * row_len];
                    for (d, s) in dst.iter_mut().zip(&g[k * row_len..(k + 1) * row_len]) {
                        *d += s;
                    }
                }
            }
            Slot::Rows { rows: map, .. } => {
                for (k, &r) in rows.iter().enumerate() {
                    let dst = map.entry(r).or_insert_with(|| vec![0.0; row_len]);
                    for (d, s) in dst.iter_mut().zip(&g[k * row_len..(k + 1) * row_len]) {
                        *d += s;
                    }
                }
            }
        }
    }

    /// Sums another gradient set into this one (aggregation across workers).
    pub fn merge(&mut self, other: &Gradients) {
        for (i, s) in other.slots.iter().enumerate() {
            match s {
                Some(Slot::Dense(t)) => self.accumulate(ParamId(i), t.shape(), t.data()),
                Some(Slot::Rows {
                    shape,
                    row_len,
                    rows,
                }) => {
                    for (&r, g) in rows {
                        self.scatter_rows(ParamId(i), shape, &[r], *row_len, g);
                    }
                }
                None => {}
            }
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slots.iter_mut().flatten().flat_map(|s| -> Box<dyn Iterator<Item = &mut f64>> {
            match s {
                Slot::Dense(t) => Box::new(t.data_mut().iter_mut()),
                Slot::Rows { rows, .. } => Box::new(rows.values_mut().flatten()),
            }
        })
    }

    pub fn scale(&mut self, c: f64) {
        self.values_mut().for_each(|v| *v *= c);
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        *self.ensure(id) = Some(Slot::Dense(value));
    }

    /// Global L2 norm over all gradients.
    pub fn norm(&mut self) -> f64 {
        self.values_mut().map(|v| *v * *v).sum::<f64>().sqrt()
    }
}
