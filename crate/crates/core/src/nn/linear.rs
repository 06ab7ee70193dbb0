use super::init_bound;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Bound, ParamId, ParamStore, Scalar, Var};

/// `y = x·W + b` over the last axis; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.register_uniform(format!("{name}.weight"), vec![in_dim, out_dim], init_bound(in_dim), rng);
        let bias = store.register_const(format!("{name}.bias"), vec![out_dim], 0.0);
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut shape = x.shape();
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::shape(format!("linear expects last axis {}, got {shape:?}", self.in_dim)));
        }
        let rows = x.numel() / self.in_dim;
        let y = x.reshape(vec![rows, self.in_dim])?.matmul(p.var(self.weight))?.add_row_bias(p.var(self.bias))?;
        *shape.last_mut().unwrap() = self.out_dim;
        y.reshape(shape)
    }
}

/// Layer normalization over the last axis, `γ = 1`, `β = 0` at init.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.register_const(format!("{name}.gamma"), vec![dim], 1.0);
        let beta = store.register_const(format!("{name}.beta"), vec![dim], 0.0);
        LayerNorm { gamma, beta, dim }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta))
    }
}
