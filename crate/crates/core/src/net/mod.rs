//! The unfolded fusion network: `K` stages, each a learned gradient step on
//! the data terms followed by a learned proximal map.

mod config;
mod stage;

pub use config::FusionConfig;
pub use stage::{PriorModule, StageParams};

use crate::error::{Error, Result};
use crate::observation::{bicubic_resize, HsiCube, SpatialDegradation, SpectralResponse};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Bound, DiffTensor, ParamId, ParamStore, Scalar, Tape, Var};

/// Network parameters together with the layer layout that indexes them.
#[derive(Debug, Clone)]
pub struct FusionNet<T> {
    pub config: FusionConfig,
    pub params: ParamStore<T>,
    stages: Vec<StageParams>,
    etas: Vec<ParamId>,
}

/// Inverse of softplus, `ln(e^v − 1)`.
fn softplus_inv(v: f64) -> f64 {
    v + (-(-v).exp_m1()).ln()
}

impl<T: Scalar> FusionNet<T> {
    /// Registers every parameter in a fixed order, drawing from the `Init` stream.
    pub fn new(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed, Stream::Init, 0);
        let mut params = ParamStore::new();
        let k = config.stages;
        let mut stages = Vec::new();
        if config.share_stage_params {
            let feat = if config.dense_connections { config.prior_dim } else { 0 };
            stages.push(StageParams::new(&mut params, "stage", &config, feat, &mut rng)?);
        } else {
            for i in 0..k {
                let feat = if config.dense_connections { i * config.prior_dim } else { 0 };
                stages.push(StageParams::new(&mut params, &format!("stage{i}"), &config, feat, &mut rng)?);
            }
        }
        let n_eta = if config.share_eta { 1 } else { k };
        let etas = (0..n_eta)
            .map(|i| {
                let eta = rng.uniform(0.0, 1.0).max(1e-4);
                let name = if config.share_eta { "eta".to_string() } else { format!("eta{i}") };
                let t = DiffTensor::new(vec![1], vec![T::from_f64(softplus_inv(eta))]).expect("scalar shape");
                params.register(name, t.with_grad())
            })
            .collect();
        Ok(FusionNet { config, params, stages, etas })
    }

    pub fn stage(&self, k: usize) -> &StageParams {
        &self.stages[if self.config.share_stage_params { 0 } else { k }]
    }

    /// Raw (pre-softplus) step-size parameter used by stage `k`.
    pub fn eta_param(&self, k: usize) -> ParamId {
        self.etas[if self.config.share_eta { 0 } else { k }]
    }

    pub fn eta(&self, k: usize) -> f64 {
        let raw = self.params.get(self.eta_param(k)).data()[0].to_f64();
        raw.max(0.0) + (-raw.abs()).exp().ln_1p()
    }

    pub fn set_eta(&mut self, k: usize, value: f64) -> Result<()> {
        if !(value > 0.0) {
            return Err(Error::config(format!("step size must be positive, got {value}")));
        }
        self.params.set_data(self.eta_param(k), vec![T::from_f64(softplus_inv(value))])
    }

    /// Learnable scalar count; independent of `K` when stages share parameters.
    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Runs all stages from `x0`. Returns the final estimate.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
        z: Var<'t, T>,
        x0: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_all(p, y, z, x0)?.pop().expect("at least one stage"))
    }

    /// Every stage output `x⁽¹⁾..x⁽ᴷ⁾`.
    pub fn forward_all<'t>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
        z: Var<'t, T>,
        x0: Var<'t, T>,
    ) -> Result<Vec<Var<'t, T>>> {
        let cfg = &self.config;
        let xs = x0.shape();
        if xs.len() != 3 || xs[0] != cfg.bands {
            return Err(Error::shape(format!("network expects [{}, H, W] input, got {xs:?}", cfg.bands)));
        }
        let tape = x0.tape();
        let mut feats: Vec<Var<'t, T>> = Vec::new();
        let mut x = x0;
        let mut outs = Vec::with_capacity(cfg.stages);
        for k in 0..cfg.stages {
            let st = self.stage(k);
            let eta = p.var(self.eta_param(k)).softplus()?;
            let xhat = st.data_module(p, x, y, z, eta)?;
            let v = x.sub(xhat)?;
            let dense = if !cfg.dense_connections {
                None
            } else if cfg.share_stage_params {
                Some(match feats.len() {
                    0 => tape.constant(vec![cfg.prior_dim, xs[1], xs[2]], vec![T::zero(); cfg.prior_dim * xs[1] * xs[2]])?,
                    n => {
                        let mut acc = feats[0];
                        for f in &feats[1..] {
                            acc = acc.add(*f)?;
                        }
                        acc.scale(T::from_f64(1.0 / n as f64))?
                    }
                })
            } else if feats.is_empty() {
                None
            } else {
                Some(Var::concat(&feats)?)
            };
            let (next, f) = st.prior.forward(p, v, dense)?;
            feats.push(f);
            outs.push(next);
            x = next;
        }
        Ok(outs)
    }

    /// Records a full forward pass for one `(HR-MSI, LR-HSI)` pair on `tape`.
    pub fn forward_cubes<'t>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, T>,
        msi: &HsiCube,
        hsi: &HsiCube,
    ) -> Result<Var<'t, T>> {
        self.check_inputs(msi, hsi)?;
        let y = tape.constant(msi.tensor_shape(), to_scalars(msi.data()))?;
        let z = tape.constant(hsi.tensor_shape(), to_scalars(hsi.data()))?;
        let x0 = initial_estimate(hsi, self.config.scale)?;
        let x0 = tape.constant(x0.tensor_shape(), to_scalars(x0.data()))?;
        self.forward(p, y, z, x0)
    }

    /// Inference: fused cube in `f64`.
    pub fn fuse(&self, msi: &HsiCube, hsi: &HsiCube) -> Result<HsiCube> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let out = self.forward_cubes(&tape, &p, msi, hsi)?;
        HsiCube::new(msi.width(), msi.height(), self.config.bands, out.value().iter().map(|v| v.to_f64()).collect())
    }

    pub fn check_inputs(&self, msi: &HsiCube, hsi: &HsiCube) -> Result<()> {
        let cfg = &self.config;
        if msi.bands() != cfg.msi_bands || hsi.bands() != cfg.bands {
            return Err(Error::config(format!(
                "network expects {} MSI and {} HSI bands, data has {} and {}",
                cfg.msi_bands,
                cfg.bands,
                msi.bands(),
                hsi.bands()
            )));
        }
        if msi.width() != hsi.width() * cfg.scale || msi.height() != hsi.height() * cfg.scale {
            return Err(Error::config(format!(
                "network scale {} does not map {}x{} onto {}x{}",
                cfg.scale,
                hsi.width(),
                hsi.height(),
                msi.width(),
                msi.height()
            )));
        }
        Ok(())
    }

    /// Overwrites stage `k`'s data-module weights with explicit operators:
    /// `R` in the centre taps of the 3x3 spectral convs and a per-band copy
    /// of a 2x2, factor-2 blur in the single down/up-sampling pair.
    pub fn freeze_data_module(&mut self, k: usize, r: &SpectralResponse, c: &SpatialDegradation) -> Result<()> {
        let cfg = &self.config;
        if c.size() != 2 || c.factor() != 2 || cfg.scale != 2 {
            return Err(Error::config("explicit operators need a 2x2 kernel at scale 2"));
        }
        if r.bands() != cfg.bands || r.msi_bands() != cfg.msi_bands {
            return Err(Error::config("spectral response does not match the network band counts"));
        }
        let (s_hi, s_lo) = (cfg.bands, cfg.msi_bands);
        let st = self.stage(k).clone();
        let mut w = vec![0.0; s_lo * s_hi * 9];
        for j in 0..s_lo {
            for i in 0..s_hi {
                w[(j * s_hi + i) * 9 + 4] = r.get(i, j);
            }
        }
        self.params.set_data(st.r_conv.weight, to_scalars(&w))?;
        let mut w = vec![0.0; s_hi * s_lo * 9];
        for i in 0..s_hi {
            for j in 0..s_lo {
                w[(i * s_lo + j) * 9 + 4] = r.get(i, j);
            }
        }
        self.params.set_data(st.rt_conv.weight, to_scalars(&w))?;
        let mut w = vec![0.0; s_hi * s_hi * 4];
        for b in 0..s_hi {
            w[(b * s_hi + b) * 4..][..4].copy_from_slice(c.kernel());
        }
        self.params.set_data(st.c_convs[0].weight, to_scalars(&w))?;
        self.params.set_data(st.ct_convs[0].weight, to_scalars(&w))?;
        Ok(())
    }

    /// Zeroes the prior head so the prior module reduces to the identity.
    pub fn zero_prior_head(&mut self, k: usize) -> Result<()> {
        let head = self.stage(k).prior.head.clone();
        let n = self.params.get(head.weight).numel();
        self.params.set_data(head.weight, vec![T::zero(); n])?;
        if let Some(b) = head.bias {
            let n = self.params.get(b).numel();
            self.params.set_data(b, vec![T::zero(); n])?;
        }
        Ok(())
    }
}

/// `x⁽⁰⁾`: bicubic upsampling of the LR-HSI.
pub fn initial_estimate(hsi: &HsiCube, scale: usize) -> Result<HsiCube> {
    bicubic_resize(hsi, scale as f64)
}

pub fn to_scalars<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}
