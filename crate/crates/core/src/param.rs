//! Named trainable parameters.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    name: String,
    value: Tensor<T>,
}

impl<T: Element> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }
}

/// Ordered set of uniquely named parameters. Order is creation order and is
/// stable, so optimizer state and checkpoints line up by position.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: impl Into<Shape>, data: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let value = Tensor::parameter(shape, data)?;
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.value.zero_grad());
    }

    /// Replaces a parameter's values with a fresh leaf (gradient cleared).
    pub fn set(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if data.len() != p.value.numel() {
            return Err(Error::dim(
                "ParamStore::set",
                format!("'{}' has {} elements, got {}", p.name, p.value.numel(), data.len()),
            ));
        }
        p.value = Tensor::parameter(p.value.shape(), data)?;
        Ok(())
    }

    pub fn set_by_index(&mut self, index: usize, data: Vec<T>) -> Result<()> {
        self.set(ParamId(index), data)
    }

    pub fn values(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| p.value.to_vec()).collect()
    }

    pub fn load_values(&mut self, values: Vec<Vec<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::dim(
                "ParamStore::load_values",
                format!("{} parameters, {} value sets", self.params.len(), values.len()),
            ));
        }
        for (i, v) in values.into_iter().enumerate() {
            self.set(ParamId(i), v)?;
        }
        Ok(())
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, matching the usual deep-learning
/// framework default for convolutions.
pub fn fan_in_uniform<T: Element>(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
}
