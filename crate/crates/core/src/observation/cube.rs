use crate::error::{Error, Result};

/// Image cube stored band-sequentially, row-major inside each band.
///
/// Element `(x, y, b)` lives at `b*H*W + y*W + x`, which is also the layout
/// of a `[S, H, W]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::shape(format!("cube dims must be positive, got {width}x{height}x{bands}")));
        }
        if data.len() != width * height * bands {
            return Err(Error::shape(format!(
                "cube {width}x{height}x{bands} needs {} values, got {}",
                width * height * bands,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerics(format!("cube value {i} is not finite")));
        }
        Ok(HsiCube { width, height, bands, data })
    }

    pub fn filled(width: usize, height: usize, bands: usize, value: f64) -> Result<Self> {
        Self::new(width, height, bands, vec![value; width * height * bands])
    }

    pub fn zeros_like(&self) -> Self {
        HsiCube { data: vec![0.0; self.data.len()], ..self.clone() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `(W, H, S)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.bands)
    }

    /// Tensor shape `[S, H, W]`.
    pub fn tensor_shape(&self) -> Vec<usize> {
        vec![self.bands, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, b: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, b: usize, v: f64) {
        self.data[(b * self.height + y) * self.width + x] = v;
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn spectrum(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(x, y, b)).collect()
    }

    /// Same geometry, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, self.bands, data)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::shape(format!(
                "crop {width}x{height}+{x0}+{y0} leaves the {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.bands);
        for b in 0..self.bands {
            let band = self.band(b);
            for y in y0..y0 + height {
                data.extend_from_slice(&band[y * self.width + x0..y * self.width + x0 + width]);
            }
        }
        Self::new(width, height, self.bands, data)
    }

    /// Divides by the global maximum so that the peak is 1. All-zero cubes are left alone.
    pub fn normalize_peak(&mut self) {
        let peak = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            self.data.iter_mut().for_each(|v| *v /= peak);
        }
    }

    pub fn same_dims(&self, other: &HsiCube) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!("cube dims {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn dot(&self, other: &HsiCube) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `a*self + b*other`.
    pub fn lin_comb(&self, a: f64, other: &HsiCube, b: f64) -> Result<Self> {
        self.same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        self.with_data(data)
    }

    pub fn sub(&self, other: &HsiCube) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn max_abs_diff(&self, other: &HsiCube) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}
