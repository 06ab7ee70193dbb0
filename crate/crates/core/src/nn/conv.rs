use super::init_bound;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{
    Bound, Conv2dGeom, Conv3dGeom, ConvTranspose2dGeom, Padding, ParamId, ParamStore, Scalar, Var,
};

/// 2D cross-correlation layer, `[C_in,H,W] -> [C_out,H',W']`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let bound = init_bound(in_ch * kernel * kernel);
        let weight =
            store.register_uniform(format!("{name}.weight"), vec![out_ch, in_ch, kernel, kernel], bound, rng);
        let bias = bias.then(|| store.register_const(format!("{name}.bias"), vec![out_ch], 0.0));
        Conv2d { weight, bias, in_ch, out_ch, kernel, stride, padding }
    }

    pub fn geom(&self, height: usize, width: usize) -> Conv2dGeom {
        Conv2dGeom {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            height,
            width,
            kh: self.kernel,
            kw: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (h, w) = if s.len() == 3 { (s[1], s[2]) } else { (0, 0) };
        x.conv2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.geom(h, w))
    }
}

/// Transposed 2D convolution, weight `[C_in, C_out, k, k]`, zero padding.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let bound = init_bound(in_ch * kernel * kernel);
        let weight =
            store.register_uniform(format!("{name}.weight"), vec![in_ch, out_ch, kernel, kernel], bound, rng);
        let bias = bias.then(|| store.register_const(format!("{name}.bias"), vec![out_ch], 0.0));
        ConvTranspose2d { weight, bias, in_ch, out_ch, kernel, stride }
    }

    pub fn geom(&self, height: usize, width: usize) -> ConvTranspose2dGeom {
        ConvTranspose2dGeom {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            height,
            width,
            kh: self.kernel,
            kw: self.kernel,
            stride: self.stride,
            padding: 0,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (h, w) = if s.len() == 3 { (s[1], s[2]) } else { (1, 1) };
        x.conv_transpose2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.geom(h, w))
    }
}

/// Stride-1, same-padded 3D convolution over `[C_in,D,H,W]`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv3d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let bound = init_bound(in_ch * kernel.pow(3));
        let weight = store.register_uniform(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kernel, kernel, kernel],
            bound,
            rng,
        );
        let bias = Some(store.register_const(format!("{name}.bias"), vec![out_ch], 0.0));
        Conv3d { weight, bias, in_ch, out_ch, kernel }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (d, h, w) = if s.len() == 4 { (s[1], s[2], s[3]) } else { (0, 0, 0) };
        let geom = Conv3dGeom {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            depth: d,
            height: h,
            width: w,
            kd: self.kernel,
            kh: self.kernel,
            kw: self.kernel,
        };
        x.conv3d(p.var(self.weight), self.bias.map(|b| p.var(b)), geom)
    }
}
