//! Named tensors that make up a model.

use std::collections::HashMap;

use crate::error::{config_err, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<F: Float> {
    pub name: String,
    pub value: Tensor<F>,
    /// Running statistics and other buffers are stored but not optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Float = f32> {
    entries: Vec<ParamEntry<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries().filter(|(_, e)| e.trainable).map(|(id, _)| id)
    }

    /// Number of scalar values across trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .id(&e.name)
                .ok_or_else(|| config_err(format!("missing tensor {}", e.name)))?;
            let v = other.get(src);
            if v.shape() != e.value.shape() {
                return Err(config_err(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    v.shape(),
                    e.value.shape()
                )));
            }
            e.value = v.clone();
        }
        Ok(())
    }
}

/// How a freshly created tensor is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-limit, limit]`.
    Uniform(f64),
}

impl Init {
    /// Glorot-style uniform limit for the given fan-in and fan-out.
    pub fn glorot(fan_in: usize, fan_out: usize) -> Self {
        Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    pub fn sample<F: Float, R: rand::Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<F> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Uniform(limit) => {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| F::of(rng.random_range(-limit..=limit))).collect();
                Tensor::new(shape, data).expect("element count matches shape")
            }
        }
    }
}

/// Creates or looks up named tensors while a model is being assembled.
pub trait ParamSource<F: Float> {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<ParamId>;
}

/// Adds new, randomly initialised tensors to a store.
pub struct Initializer<'a, F: Float, R: rand::Rng> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut R,
}

impl<F: Float, R: rand::Rng> ParamSource<F> for Initializer<'_, F, R> {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<ParamId> {
        let value = init.sample(shape, self.rng);
        self.store.add(name, value, trainable)
    }
}

/// Resolves tensors that already exist in a store (e.g. after loading a
/// checkpoint), checking their shapes.
pub struct Lookup<'a, F: Float> {
    pub store: &'a ParamStore<F>,
}

impl<F: Float> ParamSource<F> for Lookup<'_, F> {
    fn tensor(&mut self, name: &str, shape: &[usize], _init: Init, _trainable: bool) -> Result<ParamId> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| config_err(format!("missing tensor {name}")))?;
        let actual = self.store.get(id).shape();
        if actual != shape {
            return Err(config_err(format!("tensor {name} has shape {actual:?}, expected {shape:?}")));
        }
        Ok(id)
    }
}
