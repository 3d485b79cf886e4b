//! Named parameters, their binding onto a tape, and plain SGD.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered parameter collection with unique names.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let id = self.id(name)?;
        Some(&mut self.params[id.0].tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Push every parameter onto `tape` as a leaf; trainable ones take gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), p.trainable))
            .collect();
        Bindings { vars }
    }
}

/// Tape nodes for each parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Pull per-parameter gradients out of a reverse sweep. Non-trainable
    /// parameters map to `None`.
    pub fn collect(&self, store: &ParamStore, mut grads: Gradients) -> ParamGrads {
        let grads = self
            .vars
            .iter()
            .zip(store.iter())
            .map(|(&v, p)| if p.trainable { grads.take(v) } else { None })
            .collect();
        ParamGrads { grads }
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn new(grads: Vec<Option<Tensor>>) -> Self {
        ParamGrads { grads }
    }

    pub fn zeros_like(store: &ParamStore) -> Self {
        let grads = store
            .iter()
            .map(|p| p.trainable.then(|| Tensor::zeros(p.tensor.shape())))
            .collect();
        ParamGrads { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Tensor>> {
        self.grads.iter().map(Option::as_ref)
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a, b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (a @ None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(c);
        }
    }
}

/// `θ ← θ − lr·g` for every trainable parameter.
pub fn sgd_step(store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
    }
    if grads.grads.len() != store.len() {
        return Err(Error::contract(format!(
            "gradient list has {} entries for {} parameters",
            grads.grads.len(),
            store.len()
        )));
    }
    for (p, g) in store.params.iter().zip(&grads.grads) {
        if !p.trainable {
            continue;
        }
        match g {
            None => {
                return Err(Error::contract(format!("missing gradient for {:?}", p.name)));
            }
            Some(g) if g.shape() != p.tensor.shape() => {
                return Err(Error::shape("sgd_step", p.tensor.shape(), g.shape()));
            }
            Some(_) => {}
        }
    }
    for (p, g) in store.params.iter_mut().zip(&grads.grads) {
        if let (true, Some(g)) = (p.trainable, g) {
            for (w, d) in p.tensor.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
        }
    }
    Ok(())
}
