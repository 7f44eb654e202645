use indexmap::IndexMap;

use crate::error::{config_err, shape_err, Result};
use crate::numerics::tape::{Gradients, Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry<T> {
    params: IndexMap<String, Param<T>>,
}

/// Parameters recorded as leaves of one tape, indexed by [`ParamId`].
pub struct Bound<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.params.contains_key(name) {
            return Err(config_err!("duplicate parameter name {name:?}"));
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.params.insert_full(
            name.to_string(),
            Param {
                value,
                grad,
                requires_grad: true,
            },
        );
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        self.params[id.0].requires_grad = on;
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| config_err!("unknown parameter {name:?}"))?;
        if p.value.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {name:?} has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            ));
        }
        p.value = value;
        Ok(())
    }

    /// Records every parameter on `tape`; frozen ones as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Result<Bound<'t, T>> {
        let vars = self
            .params
            .values()
            .map(|p| {
                if p.requires_grad {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Records every parameter as a constant; for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Result<Bound<'t, T>> {
        let vars = self
            .params
            .values()
            .map(|p| tape.constant(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the gradients of a backward pass into each parameter's `grad`.
    pub fn accumulate(&mut self, bound: &Bound<'_, T>, grads: &Gradients<T>) -> Result<()> {
        for (p, v) in self.params.values_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(*v) {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamRegistry<U> {
        ParamRegistry {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                            requires_grad: p.requires_grad,
                        },
                    )
                })
                .collect(),
        }
    }
}
