use super::{DiffTensor, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named learnable tensors in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<DiffTensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: DiffTensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `±bound`, drawn in registration order from `rng`.
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut SeededRng,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
        self.register(name, DiffTensor { shape, data, requires_grad: true, grad: None })
    }

    pub fn register_const(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        let n = shape.iter().product();
        self.register(
            name,
            DiffTensor { shape, data: vec![T::from_f64(value); n], requires_grad: true, grad: None },
        )
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DiffTensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DiffTensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DiffTensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [DiffTensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(DiffTensor::numel).sum()
    }

    /// Overwrite a parameter's values, keeping its shape.
    pub fn set_data(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if data.len() != t.numel() {
            return Err(Error::shape(format!(
                "parameter {} expects {} values, got {}",
                self.names[id.0],
                t.numel(),
                data.len()
            )));
        }
        t.data = data;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(DiffTensor::zero_grad);
    }

    /// Place every parameter on `tape` as a gradient-carrying leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound { vars: self.tensors.iter().map(|t| tape.param(t)).collect() }
    }

    /// Copy gradients for bound parameters out of a finished backward pass,
    /// accumulating into any gradient already present.
    pub fn absorb_grads(&mut self, bound: &Bound<'_, T>, grads: &super::Gradients<T>) {
        for (t, v) in self.tensors.iter_mut().zip(&bound.vars) {
            let g = grads.get(*v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.numel()]);
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => t.grad = Some(g),
            }
        }
    }
}

/// Parameters placed on a tape, indexable by [`ParamId`].
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}
