use super::FusionConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Conv3d, ConvTranspose2d, SwinLayer};
use crate::rng::SeededRng;
use crate::tensor::{Bound, Padding, ParamStore, Scalar, Var};

/// Learned proximal step: embed, Swin stack, 3D conv residual, head.
#[derive(Debug, Clone)]
pub struct PriorModule {
    pub embed: Conv2d,
    pub stls: Vec<SwinLayer>,
    pub conv3d: Vec<Conv3d>,
    pub head: Conv2d,
    pub dim: usize,
}

impl PriorModule {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &FusionConfig,
        feat_channels: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let p = cfg.prior_dim;
        let embed = Conv2d::new(store, &format!("{name}.embed"), cfg.bands + feat_channels, p, 3, 1, Padding::Zero(1), true, rng);
        let stls = (0..cfg.n_stl)
            .map(|i| {
                SwinLayer::new(store, &format!("{name}.stl{i}"), p, cfg.heads, cfg.window, i % 2 == 1, cfg.mlp_ratio, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let conv3d = (0..cfg.n_conv3d)
            .map(|i| {
                let cin = if i == 0 { 1 } else { cfg.conv3d_channels };
                let cout = if i + 1 == cfg.n_conv3d { 1 } else { cfg.conv3d_channels };
                Conv3d::new(store, &format!("{name}.conv3d{i}"), cin, cout, 3, rng)
            })
            .collect();
        let head = Conv2d::new(store, &format!("{name}.head"), p, cfg.bands, 3, 1, Padding::Zero(1), true, rng);
        Ok(PriorModule { embed, stls, conv3d, head, dim: p })
    }

    /// Returns `(v + head(feats), feats)` where `feats` is the pre-head map.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        v: Var<'t, T>,
        dense: Option<Var<'t, T>>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let input = match dense {
            Some(f) => Var::concat(&[v, f])?,
            None => v,
        };
        let e = self.embed.forward(p, input)?;
        let feats = self.refine(p, e)?;
        Ok((v.add(self.head.forward(p, feats)?)?, feats))
    }

    fn refine<'t, T: Scalar>(&self, p: &Bound<'t, T>, e: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = e.shape();
        let (h, w) = (s[1], s[2]);
        let mut t = if self.stls.is_empty() { e } else { e.permute(&[1, 2, 0])? };
        for stl in &self.stls {
            t = stl.forward(p, t)?;
        }
        let feats = if self.stls.is_empty() { t } else { t.permute(&[2, 0, 1])? };
        if self.conv3d.is_empty() {
            return Ok(feats);
        }
        // The channel axis becomes the depth of a single-channel volume.
        let vol = feats.reshape(vec![1, self.dim, h, w])?;
        let mut u = vol;
        for (i, layer) in self.conv3d.iter().enumerate() {
            u = layer.forward(p, u)?;
            if i + 1 < self.conv3d.len() {
                u = u.gelu()?;
            }
        }
        vol.add(u)?.reshape(vec![self.dim, h, w])
    }
}

/// Data-consistency operators of one stage plus its prior module.
#[derive(Debug, Clone)]
pub struct StageParams {
    pub r_conv: Conv2d,
    pub rt_conv: Conv2d,
    pub c_convs: Vec<Conv2d>,
    pub ct_convs: Vec<ConvTranspose2d>,
    pub prior: PriorModule,
}

impl StageParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &FusionConfig,
        feat_channels: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (s_hi, s_lo) = (cfg.bands, cfg.msi_bands);
        // No biases: these stand in for linear operators and their adjoints.
        let r_conv = Conv2d::new(store, &format!("{name}.r_conv"), s_hi, s_lo, 3, 1, Padding::Zero(1), false, rng);
        let rt_conv = Conv2d::new(store, &format!("{name}.rt_conv"), s_lo, s_hi, 3, 1, Padding::Zero(1), false, rng);
        let c_convs = (0..cfg.down_layers())
            .map(|i| Conv2d::new(store, &format!("{name}.c_conv{i}"), s_hi, s_hi, 2, 2, Padding::Zero(0), false, rng))
            .collect();
        let ct_convs = (0..cfg.down_layers())
            .map(|i| ConvTranspose2d::new(store, &format!("{name}.ct_conv{i}"), s_hi, s_hi, 2, 2, false, rng))
            .collect();
        let prior = PriorModule::new(store, &format!("{name}.prior"), cfg, feat_channels, rng)?;
        Ok(StageParams { r_conv, rt_conv, c_convs, ct_convs, prior })
    }

    /// `x̂ = η (rT(r(x) − y) + cT(c(x) − z))`.
    pub fn data_module<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        y: Var<'t, T>,
        z: Var<'t, T>,
        eta: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (ys, zs) = (y.shape(), z.shape());
        let xs = x.shape();
        let d = 1usize << self.c_convs.len();
        if xs.len() != 3 || ys.len() != 3 || zs.len() != 3 || ys[1..] != xs[1..] || zs[1] * d != xs[1] || zs[2] * d != xs[2] {
            return Err(Error::shape(format!("data module got x {xs:?}, y {ys:?}, z {zs:?} at scale {d}")));
        }
        let y_res = self.r_conv.forward(p, x)?.sub(y)?;
        let mut down = x;
        for c in &self.c_convs {
            down = c.forward(p, down)?;
        }
        let z_res = down.sub(z)?;
        let mut up = z_res;
        for ct in self.ct_convs.iter().rev() {
            up = ct.forward(p, up)?;
        }
        self.rt_conv.forward(p, y_res)?.add(up)?.scale_by(eta)
    }
}
