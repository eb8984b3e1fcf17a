use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.08;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Named, insertion-ordered collection of trainable tensors.
///
/// Parameters are drawn from `U(-scale, scale)` with a generator seeded by
/// `rng_seed`, so two stores built with the same seed and the same sequence
/// of `add` calls are bit-identical.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
    pub(crate) moments: Vec<Moments>,
    rng_seed: u64,
    rng: ChaCha8Rng,
    init_scale: f64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self::with_init_scale(rng_seed, INIT_RANGE)
    }

    pub fn with_init_scale(rng_seed: u64, init_scale: f64) -> Self {
        ParamStore {
            entries: IndexMap::new(),
            moments: Vec::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            init_scale,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a randomly initialized parameter.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        let scale = self.init_scale;
        let values = (0..n)
            .map(|_| {
                if scale == 0.0 {
                    0.0
                } else {
                    self.rng.gen_range(-scale..=scale)
                }
            })
            .collect();
        self.insert(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.insert(name, shape, vec![0.0; n])
    }

    pub fn add_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        self.insert(name, shape, values)
    }

    fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "parameter `{name}` needs positive extents, got {shape:?}"
            )));
        }
        let mut tensor = Tensor::new(shape.to_vec(), values)?;
        tensor.requires_grad = true;
        let (idx, _) = self.entries.insert_full(name.to_string(), tensor);
        self.moments.push(Moments::default());
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries
            .get_index(id.0)
            .map(|(k, _)| k.as_str())
            .expect("param id from this store")
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Overwrites every value with `f(id, old)`; used by tests to pin weights.
    pub fn fill_with(&mut self, mut f: impl FnMut(&str, usize, f64) -> f64) {
        for (name, t) in self.entries.iter_mut() {
            for (i, v) in t.values.iter_mut().enumerate() {
                *v = f(name, i, *v);
            }
        }
    }

    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let t = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if t.values.len() != values.len() {
            return Err(Error::Shape {
                op: "set_values",
                left: t.shape.clone(),
                right: vec![values.len()],
            });
        }
        t.values.copy_from_slice(values);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.grad = None;
        }
    }

    /// Stores `grads` as each parameter's gradient; parameters the loss did
    /// not reach get an explicit zero gradient.
    pub fn set_grads(&mut self, grads: &Gradients) {
        for (i, t) in self.entries.values_mut().enumerate() {
            let g = grads
                .get(ParamId(i))
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.values.len()]);
            t.grad = Some(g);
        }
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    /// Sum of squared parameter values, for the l2 penalty.
    pub fn squared_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.values.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Per-parameter gradient buffers produced by a backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            slots: store
                .entries
                .values()
                .map(|t| Some(vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Adds `weight * 2 * θ` for every parameter, the gradient of
    /// `weight * Σ‖θ‖²`.
    pub fn add_l2(&mut self, store: &ParamStore, weight: f64) {
        for id in store.ids() {
            let vals = &store.get(id).values;
            let g: Vec<f64> = vals.iter().map(|v| 2.0 * weight * v).collect();
            self.accumulate(id, &g);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .all(|v| v.is_finite())
    }
}
