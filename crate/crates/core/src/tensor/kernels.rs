//! Loop-nest kernels over flat row-major buffers. All reductions run in a
//! fixed order so results are bit-reproducible.

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Out-of-range taps read zero.
    Zero(usize),
    /// Out-of-range taps wrap around (cyclic convolution).
    Circular(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::Zero(p) | Padding::Circular(p) => p,
        }
    }

    /// Source index for output position `o`, tap `k`, or `None` for a zero tap.
    #[inline]
    fn source(self, o: usize, k: usize, stride: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - self.amount() as isize;
        match self {
            Padding::Zero(_) => (pos >= 0 && (pos as usize) < len).then_some(pos as usize),
            Padding::Circular(_) => Some(pos.rem_euclid(len as isize) as usize),
        }
    }
}

/// Geometry of a 2D cross-correlation `[C_in,H,W] -> [C_out,H',W']`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2dGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let p = self.padding.amount();
        ((self.height + 2 * p - self.kh) / self.stride + 1, (self.width + 2 * p - self.kw) / self.stride + 1)
    }

    pub fn valid(&self) -> bool {
        let p = self.padding.amount();
        self.kh >= 1
            && self.kw >= 1
            && self.stride >= 1
            && self.height + 2 * p >= self.kh
            && self.width + 2 * p >= self.kw
    }
}

pub fn conv2d_forward<T: Scalar>(g: &Conv2dGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let mut out = vec![T::zero(); g.out_ch * oh * ow];
    for oc in 0..g.out_ch {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..g.in_ch {
            let xin = &x[ic * g.height * g.width..(ic + 1) * g.height * g.width];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = w[((oc * g.in_ch + ic) * g.kh + a) * g.kw + b];
                    for oy in 0..oh {
                        let Some(iy) = g.padding.source(oy, a, g.stride, g.height) else { continue };
                        let row = &xin[iy * g.width..(iy + 1) * g.width];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            if let Some(ix) = g.padding.source(ox, b, g.stride, g.width) {
                                *o += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a conv2d w.r.t. its input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    g: &Conv2dGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (oh, ow) = g.out_hw();
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let mut db = vec![T::zero(); g.out_ch];
    for oc in 0..g.out_ch {
        let dplane = &dy[oc * oh * ow..(oc + 1) * oh * ow];
        db[oc] = dplane.iter().copied().sum();
        for ic in 0..g.in_ch {
            let base = ic * g.height * g.width;
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let widx = ((oc * g.in_ch + ic) * g.kh + a) * g.kw + b;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let Some(iy) = g.padding.source(oy, a, g.stride, g.height) else { continue };
                        for ox in 0..ow {
                            let Some(ix) = g.padding.source(ox, b, g.stride, g.width) else { continue };
                            let d = dplane[oy * ow + ox];
                            let xi = base + iy * g.width + ix;
                            if let Some(dx) = dx.as_mut() {
                                dx[xi] += wv * d;
                            }
                            acc += x[xi] * d;
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Geometry of a transposed 2D convolution `[C_in,h,w] -> [C_out,H,W]`
/// with zero padding. Weight layout is `[C_in, C_out, kh, kw]`, the same
/// buffer a conv2d `C_out -> C_in` would use, which makes the pair adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose2dGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2dGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height - 1) * self.stride + self.kh - 2 * self.padding,
            (self.width - 1) * self.stride + self.kw - 2 * self.padding,
        )
    }

    /// The forward convolution this layer is the adjoint of.
    pub fn adjoint_of(&self) -> Conv2dGeom {
        let (oh, ow) = self.out_hw();
        Conv2dGeom {
            in_ch: self.out_ch,
            out_ch: self.in_ch,
            height: oh,
            width: ow,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            padding: Padding::Zero(self.padding),
        }
    }
}

pub fn conv_transpose2d_forward<T: Scalar>(
    g: &ConvTranspose2dGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let mut out = vec![T::zero(); g.out_ch * oh * ow];
    if let Some(b) = bias {
        for oc in 0..g.out_ch {
            out[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().for_each(|v| *v = b[oc]);
        }
    }
    let p = g.padding as isize;
    for ic in 0..g.in_ch {
        for oc in 0..g.out_ch {
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = w[((ic * g.out_ch + oc) * g.kh + a) * g.kw + b];
                    for iy in 0..g.height {
                        let oy = (iy * g.stride + a) as isize - p;
                        if oy < 0 || oy as usize >= oh {
                            continue;
                        }
                        for ix in 0..g.width {
                            let ox = (ix * g.stride + b) as isize - p;
                            if ox < 0 || ox as usize >= ow {
                                continue;
                            }
                            out[(oc * oh + oy as usize) * ow + ox as usize] +=
                                wv * x[(ic * g.height + iy) * g.width + ix];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    g: &ConvTranspose2dGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (oh, ow) = g.out_hw();
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let db = (0..g.out_ch).map(|oc| dy[oc * oh * ow..(oc + 1) * oh * ow].iter().copied().sum()).collect();
    let p = g.padding as isize;
    for ic in 0..g.in_ch {
        for oc in 0..g.out_ch {
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let widx = ((ic * g.out_ch + oc) * g.kh + a) * g.kw + b;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for iy in 0..g.height {
                        let oy = (iy * g.stride + a) as isize - p;
                        if oy < 0 || oy as usize >= oh {
                            continue;
                        }
                        for ix in 0..g.width {
                            let ox = (ix * g.stride + b) as isize - p;
                            if ox < 0 || ox as usize >= ow {
                                continue;
                            }
                            let d = dy[(oc * oh + oy as usize) * ow + ox as usize];
                            let xi = (ic * g.height + iy) * g.width + ix;
                            if let Some(dx) = dx.as_mut() {
                                dx[xi] += wv * d;
                            }
                            acc += x[xi] * d;
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Geometry of a stride-1, zero "same"-padded 3D cross-correlation
/// `[C_in,D,H,W] -> [C_out,D,H,W]` with odd kernel extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv3dGeom {
    fn vol(&self) -> usize {
        self.depth * self.height * self.width
    }
}

#[inline]
fn same_src(o: usize, k: usize, ksize: usize, len: usize) -> Option<usize> {
    let pos = (o + k) as isize - (ksize / 2) as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}

pub fn conv3d_forward<T: Scalar>(g: &Conv3dGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let vol = g.vol();
    let (dd, hh, ww) = (g.depth, g.height, g.width);
    let mut out = vec![T::zero(); g.out_ch * vol];
    for oc in 0..g.out_ch {
        let ovol = &mut out[oc * vol..(oc + 1) * vol];
        if let Some(b) = bias {
            ovol.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..g.in_ch {
            let xin = &x[ic * vol..(ic + 1) * vol];
            for a in 0..g.kd {
                for b in 0..g.kh {
                    for c in 0..g.kw {
                        let wv = w[(((oc * g.in_ch + ic) * g.kd + a) * g.kh + b) * g.kw + c];
                        for od in 0..dd {
                            let Some(id) = same_src(od, a, g.kd, dd) else { continue };
                            for oy in 0..hh {
                                let Some(iy) = same_src(oy, b, g.kh, hh) else { continue };
                                let src = &xin[(id * hh + iy) * ww..(id * hh + iy + 1) * ww];
                                let dst = &mut ovol[(od * hh + oy) * ww..(od * hh + oy + 1) * ww];
                                for ox in 0..ww {
                                    if let Some(ix) = same_src(ox, c, g.kw, ww) {
                                        dst[ox] += wv * src[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv3d_backward<T: Scalar>(
    g: &Conv3dGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let vol = g.vol();
    let (dd, hh, ww) = (g.depth, g.height, g.width);
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let db = (0..g.out_ch).map(|oc| dy[oc * vol..(oc + 1) * vol].iter().copied().sum()).collect();
    for oc in 0..g.out_ch {
        let dvol = &dy[oc * vol..(oc + 1) * vol];
        for ic in 0..g.in_ch {
            let xbase = ic * vol;
            for a in 0..g.kd {
                for b in 0..g.kh {
                    for c in 0..g.kw {
                        let widx = (((oc * g.in_ch + ic) * g.kd + a) * g.kh + b) * g.kw + c;
                        let wv = w[widx];
                        let mut acc = T::zero();
                        for od in 0..dd {
                            let Some(id) = same_src(od, a, g.kd, dd) else { continue };
                            for oy in 0..hh {
                                let Some(iy) = same_src(oy, b, g.kh, hh) else { continue };
                                for ox in 0..ww {
                                    let Some(ix) = same_src(ox, c, g.kw, ww) else { continue };
                                    let d = dvol[(od * hh + oy) * ww + ox];
                                    let xi = xbase + (id * hh + iy) * ww + ix;
                                    if let Some(dx) = dx.as_mut() {
                                        dx[xi] += wv * d;
                                    }
                                    acc += x[xi] * d;
                                }
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// `out[b] = a[b] · c[b]` for `batch` independent `m×k · k×n` products.
pub fn bmm<T: Scalar>(a: &[T], c: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let cb = &c[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let orow = &mut ob[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ab[i * k + p];
                let crow = &cb[p * n..(p + 1) * n];
                for (o, &cv) in orow.iter_mut().zip(crow) {
                    *o += av * cv;
                }
            }
        }
    }
    out
}

/// `dA = dOut · Bᵀ`.
pub fn bmm_grad_a<T: Scalar>(dout: &[T], c: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::zero(); batch * m * k];
    for bi in 0..batch {
        let db = &dout[bi * m * n..(bi + 1) * m * n];
        let cb = &c[bi * k * n..(bi + 1) * k * n];
        for i in 0..m {
            let drow = &db[i * n..(i + 1) * n];
            for p in 0..k {
                let crow = &cb[p * n..(p + 1) * n];
                da[bi * m * k + i * k + p] = drow.iter().zip(crow).map(|(&d, &c)| d * c).sum();
            }
        }
    }
    da
}

/// `dB = Aᵀ · dOut`.
pub fn bmm_grad_b<T: Scalar>(a: &[T], dout: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut dc = vec![T::zero(); batch * k * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let db = &dout[bi * m * n..(bi + 1) * m * n];
        let cb = &mut dc[bi * k * n..(bi + 1) * k * n];
        for i in 0..m {
            let drow = &db[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ab[i * k + p];
                for (c, &d) in cb[p * n..(p + 1) * n].iter_mut().zip(drow) {
                    *c += av * d;
                }
            }
        }
    }
    dc
}

pub const LN_EPS: f64 = 1e-5;

/// Returns `(y, xhat, rstd)` for layer norm over rows of length `dim`.
pub fn layer_norm_forward<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], dim: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / dim;
    let n = T::from_f64(dim as f64);
    let eps = T::from_f64(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..dim {
            let h = (row[j] - mean) * rs;
            xhat[r * dim + j] = h;
            y[r * dim + j] = gamma[j] * h + beta[j];
        }
    }
    (y, xhat, rstd)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    dim: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / dim;
    let n = T::from_f64(dim as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); dim];
    let mut dbeta = vec![T::zero(); dim];
    for r in 0..rows {
        let d = &dy[r * dim..(r + 1) * dim];
        let h = &xhat[r * dim..(r + 1) * dim];
        let mut sum_dh = T::zero();
        let mut sum_dh_h = T::zero();
        for j in 0..dim {
            dgamma[j] += d[j] * h[j];
            dbeta[j] += d[j];
            let dh = d[j] * gamma[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
        }
        for j in 0..dim {
            let dh = d[j] * gamma[j];
            dx[r * dim + j] = rstd[r] / n * (n * dh - sum_dh - h[j] * sum_dh_h);
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax over rows of length `n`; masked entries (`true`) get probability 0.
pub fn softmax_forward<T: Scalar>(x: &[T], n: usize, mask: Option<&[bool]>) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (r, (xr, yr)) in x.chunks(n).zip(y.chunks_mut(n)).enumerate() {
        let masked = |j: usize| mask.is_some_and(|m| m[r * n + j]);
        let mut mx: Option<T> = None;
        for (j, &v) in xr.iter().enumerate() {
            if !masked(j) {
                mx = Some(mx.map_or(v, |m| m.max(v)));
            }
        }
        let Some(mx) = mx else { continue };
        let mut total = T::zero();
        for (j, (&v, o)) in xr.iter().zip(yr.iter_mut()).enumerate() {
            if !masked(j) {
                *o = (v - mx).exp();
                total += *o;
            }
        }
        yr.iter_mut().for_each(|o| *o = *o / total);
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], n: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, dr), xr) in y.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &dv) in xr.iter_mut().zip(yr).zip(dr) {
            *o = yv * (dv - dot);
        }
    }
    dx
}
