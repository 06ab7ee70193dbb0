use std::rc::Rc;

use super::linear::Linear;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Bound, ParamId, ParamStore, Scalar, Var};

/// Index into the `(2M−1)²` relative-position table for query `p` and key
/// `q` of an `M×M` window.
pub fn relative_position_index(m: usize, p: usize, q: usize) -> usize {
    let (py, px) = (p / m, p % m);
    let (qy, qx) = (q / m, q % m);
    (py + m - 1 - qy) * (2 * m - 1) + (px + m - 1 - qx)
}

/// Multi-head self-attention inside non-overlapping windows, with a learned
/// relative position bias.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub qkv: Linear,
    pub proj: Linear,
    /// `[(2M−1)², nH]`, zero at init.
    pub rel_bias: ParamId,
}

impl WindowAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!("dim {dim} is not divisible by {heads} heads")));
        }
        let qkv = Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, rng);
        let rel_bias =
            store.register_const(format!("{name}.rel_bias"), vec![(2 * window - 1).pow(2), heads], 0.0);
        let proj = Linear::new(store, &format!("{name}.proj"), dim, dim, rng);
        Ok(WindowAttention { dim, heads, window, qkv, proj, rel_bias })
    }

    /// `x` is `[nW, M·M, dim]`; `mask`, when present, has one flag per
    /// `(window, query, key)` and blocks flagged pairs.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        mask: Option<&[bool]>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_probs(p, x, mask)?.0)
    }

    /// Like [`forward`](Self::forward), also returning the attention
    /// probabilities `[nW, nH, N, N]`.
    pub fn forward_with_probs<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        mask: Option<&[bool]>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        let n = self.window * self.window;
        if s.len() != 3 || s[1] != n || s[2] != self.dim {
            return Err(Error::shape(format!(
                "window attention expects [nW, {n}, {}], got {s:?}",
                self.dim
            )));
        }
        let nw = s[0];
        let (nh, hd) = (self.heads, self.dim / self.heads);
        if let Some(m) = mask {
            if m.len() != nw * n * n {
                return Err(Error::shape(format!("mask has {} flags, expected {}", m.len(), nw * n * n)));
            }
        }

        let qkv = self.qkv.forward(p, x)?; // [nW, N, 3·dim], channel = (part, head, e)
        let split = |part: usize, transpose: bool| -> Vec<usize> {
            let mut map = Vec::with_capacity(nw * nh * n * hd);
            for w in 0..nw {
                for h in 0..nh {
                    if transpose {
                        for e in 0..hd {
                            for t in 0..n {
                                map.push((w * n + t) * 3 * self.dim + part * self.dim + h * hd + e);
                            }
                        }
                    } else {
                        for t in 0..n {
                            for e in 0..hd {
                                map.push((w * n + t) * 3 * self.dim + part * self.dim + h * hd + e);
                            }
                        }
                    }
                }
            }
            map
        };
        let q = qkv.remap(Rc::from(split(0, false)), vec![nw * nh, n, hd])?;
        let kt = qkv.remap(Rc::from(split(1, true)), vec![nw * nh, hd, n])?;
        let v = qkv.remap(Rc::from(split(2, false)), vec![nw * nh, n, hd])?;

        let q = q.scale(T::from_f64(1.0 / (hd as f64).sqrt()))?;
        let logits = q.batch_matmul(kt)?; // [nW·nH, N, N]

        let bias_map: Vec<usize> = (0..nh)
            .flat_map(|h| {
                (0..n).flat_map(move |a| (0..n).map(move |b| relative_position_index(self.window, a, b) * nh + h))
            })
            .collect();
        let bias = p.var(self.rel_bias).remap(Rc::from(bias_map), vec![nh * n * n])?;
        let logits = logits.reshape(vec![nw, nh * n * n])?.add_row_bias(bias)?.reshape(vec![nw * nh, n, n])?;

        let full_mask = mask.map(|m| {
            let mut full = Vec::with_capacity(nw * nh * n * n);
            for w in 0..nw {
                for _ in 0..nh {
                    full.extend_from_slice(&m[w * n * n..(w + 1) * n * n]);
                }
            }
            full
        });
        let probs = logits.softmax(full_mask.as_deref())?;
        let out = probs.batch_matmul(v)?; // [nW·nH, N, hd]

        let mut merge = Vec::with_capacity(nw * n * self.dim);
        for w in 0..nw {
            for t in 0..n {
                for h in 0..nh {
                    for e in 0..hd {
                        merge.push(((w * nh + h) * n + t) * hd + e);
                    }
                }
            }
        }
        let out = out.remap(Rc::from(merge), vec![nw, n, self.dim])?;
        let y = self.proj.forward(p, out)?;
        Ok((y, probs.reshape(vec![nw, nh, n, n])?))
    }
}
