use std::rc::Rc;

use super::attention::WindowAttention;
use super::linear::{LayerNorm, Linear};
use super::window::{expand_token_map, WindowPlan};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Bound, ParamStore, Scalar, Var};

/// One Swin Transformer layer on a full-resolution `[H,W,dim]` map:
/// `x + (S)W-MSA(LN(x))`, then `+ MLP(LN(·))`.
#[derive(Debug, Clone)]
pub struct SwinLayer {
    pub dim: usize,
    pub window: usize,
    /// 0 for W-MSA, `⌊M/2⌋` for SW-MSA.
    pub shift: usize,
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SwinLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        shifted: bool,
        mlp_ratio: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), dim);
        let attn = WindowAttention::new(store, &format!("{name}.attn"), dim, heads, window, rng)?;
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), dim);
        let hidden = mlp_ratio * dim;
        let fc1 = Linear::new(store, &format!("{name}.mlp.fc1"), dim, hidden, rng);
        let fc2 = Linear::new(store, &format!("{name}.mlp.fc2"), hidden, dim, rng);
        let shift = if shifted { window / 2 } else { 0 };
        Ok(SwinLayer { dim, window, shift, norm1, attn, norm2, fc1, fc2 })
    }

    pub fn plan(&self, height: usize, width: usize) -> Result<WindowPlan> {
        WindowPlan::new(height, width, self.window, self.shift)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::shape(format!("swin layer expects [H,W,{}], got {s:?}", self.dim)));
        }
        let plan = self.plan(s[0], s[1])?;
        let n = plan.tokens_per_window();
        let xn = self.norm1.forward(p, x)?;
        let windows =
            xn.remap(Rc::from(expand_token_map(&plan.to_windows, self.dim)), vec![plan.num_windows(), n, self.dim])?;
        let attended = self.attn.forward(p, windows, plan.mask.as_deref())?;
        let back = attended.remap(Rc::from(expand_token_map(&plan.from_windows, self.dim)), s.clone())?;
        let x = x.add(back)?;
        let h = self.fc1.forward(p, self.norm2.forward(p, x)?)?.gelu()?;
        x.add(self.fc2.forward(p, h)?)
    }
}
