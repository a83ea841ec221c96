//! Image containers: RGB [`Frame`]s and single-channel [`HairMask`]s.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// An RGB image stored row-major as interleaved `f32` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut f = Self::new(height, width);
        f.data.chunks_mut(3).for_each(|px| px.copy_from_slice(&rgb));
        f
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!("frame buffer of {} values for {height}x{width}", data.len())));
        }
        let f = Self { height, width, data };
        f.validate()?;
        Ok(f)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("frame value {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// `(3, H, W)` planar tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let n = self.height * self.width;
        let mut out = vec![T::zero(); 3 * n];
        for (i, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = T::of(px[c] as f64);
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], out)
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); values are clamped to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let (c, h, w) = t.chw();
        assert_eq!(c, 3, "frame tensor needs 3 channels");
        let n = h * w;
        let src = t.data();
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            for ch in 0..3 {
                data.push((src[ch * n + i].f64() as f32).clamp(0.0, 1.0));
            }
        }
        Self { height: h, width: w, data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let [r, g, b] = self.get(y as usize, x as usize);
            Rgb([quantize(r), quantize(g), quantize(b)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.pixels().flat_map(|p| p.0.map(|v| v as f32 / 255.0)).collect();
        Ok(Self { height: h as usize, width: w as usize, data })
    }

    /// Mean over pixels where `mask > 0.5`; `None` for an empty selection.
    pub fn masked_mean(&self, mask: &HairMask) -> Option<[f64; 3]> {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for (px, &m) in self.data.chunks(3).zip(mask.data()) {
            if m > 0.5 {
                for c in 0..3 {
                    acc[c] += px[c] as f64;
                }
                n += 1;
            }
        }
        (n > 0).then(|| acc.map(|v| v / n as f64))
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel region occupancy in `[0, 1]`, binary unless softened.
#[derive(Clone, Debug, PartialEq)]
pub struct HairMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl HairMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("mask buffer of {} values for {height}x{width}", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("mask value outside [0, 1]".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn is_empty_region(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn complement(&self) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|v| 1.0 - v).collect() }
    }

    pub fn union(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims());
        Self { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(a, b)| a.max(*b)).collect() }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims());
        Self { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(a, b)| a.min(*b)).collect() }
    }

    pub fn threshold(&self, t: f32) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect() }
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a > 0.5, b > 0.5);
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// `(1, H, W)` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width], self.data.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// The mask replicated over three channels, matching a frame tensor.
    pub fn to_tensor3<T: Real>(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend(self.data.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::from_vec(&[3, self.height, self.width], data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| Luma([quantize(self.get(y as usize, x as usize))]))
            .save(path)
            .map_err(|source| Error::Image { path: path.into(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
        Ok(Self { height: h as usize, width: w as usize, data })
    }
}
