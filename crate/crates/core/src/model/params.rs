use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(Arc::new(value));
        ParamId(self.names.len() - 1)
    }

    pub fn normal<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &*self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| &**t))
    }

    /// Mutable access; clones the tensor only if a graph still shares it.
    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[index])
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Replaces every value with the same-named tensor from `values`.
    pub fn load(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} parameter tensors, found {}",
                self.names.len(),
                values.len()
            )));
        }
        for (name, t) in values {
            let &i = self
                .index
                .get(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown parameter {name}")))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = Arc::new(t.clone());
        }
        Ok(())
    }

    /// One gradient-tracked leaf per parameter, sharing storage.
    pub fn bind<'g>(&self, g: &'g Graph) -> Bound<'g> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| g.param(Arc::clone(t)))
                .collect(),
        }
    }

    /// Like [`ParamStore::bind`] but without gradient tracking.
    pub fn bind_frozen<'g>(&self, g: &'g Graph) -> Bound<'g> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| g.constant_arc(Arc::clone(t)))
                .collect(),
        }
    }
}

/// Parameters attached to one graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn var(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }
}
