//! Linear spatial resampling operators shared by the graph, the warper,
//! and the guidance pyramid. Every operator is a sparse matrix applied
//! identically to each channel, so it is linear in the features.

use crate::real::Real;

/// Sparse `(out_pixels × in_pixels)` sampling matrix in CSR layout.
#[derive(Clone, Debug)]
pub struct SpatialMap<T> {
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<T>,
}

const SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

impl<T: Real> SpatialMap<T> {
    fn build(in_hw: (usize, usize), out_hw: (usize, usize), mut taps: impl FnMut(usize, usize, &mut Vec<(u32, f64)>)) -> Self {
        let mut offsets = Vec::with_capacity(out_hw.0 * out_hw.1 + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        let mut buf = Vec::with_capacity(16);
        offsets.push(0);
        for y in 0..out_hw.0 {
            for x in 0..out_hw.1 {
                buf.clear();
                taps(y, x, &mut buf);
                for &(i, w) in &buf {
                    if w != 0.0 {
                        index.push(i);
                        weight.push(T::of(w));
                    }
                }
                offsets.push(index.len());
            }
        }
        Self { in_hw, out_hw, offsets, index, weight }
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn bilinear_resize(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        let (ih, iw) = in_hw;
        let sy = ih as f64 / out_hw.0 as f64;
        let sx = iw as f64 / out_hw.1 as f64;
        Self::build(in_hw, out_hw, |y, x, taps| {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (ih - 1) as f64);
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (iw - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(ih - 1), (x0 + 1).min(iw - 1));
            let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
            let mut push = |yy: usize, xx: usize, w: f64| taps.push(((yy * iw + xx) as u32, w));
            push(y0, x0, (1.0 - wy) * (1.0 - wx));
            push(y0, x1, (1.0 - wy) * wx);
            push(y1, x0, wy * (1.0 - wx));
            push(y1, x1, wy * wx);
        })
    }

    /// Box-filter downsampling by an integer factor.
    pub fn area_downsample(in_hw: (usize, usize), factor: usize) -> Self {
        assert!(factor >= 1 && in_hw.0 % factor == 0 && in_hw.1 % factor == 0);
        let out_hw = (in_hw.0 / factor, in_hw.1 / factor);
        let w = 1.0 / (factor * factor) as f64;
        Self::build(in_hw, out_hw, |y, x, taps| {
            for dy in 0..factor {
                for dx in 0..factor {
                    let (yy, xx) = (y * factor + dy, x * factor + dx);
                    taps.push(((yy * in_hw.1 + xx) as u32, w));
                }
            }
        })
    }

    /// Bilinear sampling at `src = map(x, y)` with zero fill outside the
    /// input grid. Coordinates are in cell-center units.
    pub fn sample_at(in_hw: (usize, usize), out_hw: (usize, usize), map: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (ih, iw) = (in_hw.0 as isize, in_hw.1 as isize);
        Self::build(in_hw, out_hw, |y, x, taps| {
            let (sx, sy) = map(x as f64, y as f64);
            let (sx, sy) = (snap(sx), snap(sy));
            if !sx.is_finite() || !sy.is_finite() {
                return;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (wx, wy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for (yy, fy) in [(y0, 1.0 - wy), (y0 + 1, wy)] {
                for (xx, fx) in [(x0, 1.0 - wx), (x0 + 1, wx)] {
                    let w = fy * fx;
                    if w != 0.0 && yy >= 0 && yy < ih && xx >= 0 && xx < iw {
                        taps.push(((yy * iw + xx) as u32, w));
                    }
                }
            }
        })
    }

    pub fn is_identity_shape(&self) -> bool {
        self.in_hw == self.out_hw
    }

    /// Applies the map to every channel of a `(C, in_h*in_w)` buffer.
    pub fn apply(&self, input: &[T], channels: usize) -> Vec<T> {
        let n_in = self.in_hw.0 * self.in_hw.1;
        let n_out = self.out_hw.0 * self.out_hw.1;
        assert_eq!(input.len(), channels * n_in);
        let mut out = vec![T::zero(); channels * n_out];
        for c in 0..channels {
            let src = &input[c * n_in..(c + 1) * n_in];
            let dst = &mut out[c * n_out..(c + 1) * n_out];
            for (o, d) in dst.iter_mut().enumerate() {
                let mut acc = T::zero();
                for t in self.offsets[o]..self.offsets[o + 1] {
                    acc += src[self.index[t] as usize] * self.weight[t];
                }
                *d = acc;
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply), accumulated into `grad_in`.
    pub fn apply_transpose_into(&self, grad_out: &[T], channels: usize, grad_in: &mut [T]) {
        let n_in = self.in_hw.0 * self.in_hw.1;
        let n_out = self.out_hw.0 * self.out_hw.1;
        for c in 0..channels {
            let g = &grad_out[c * n_out..(c + 1) * n_out];
            let dst = &mut grad_in[c * n_in..(c + 1) * n_in];
            for (o, &go) in g.iter().enumerate() {
                for t in self.offsets[o]..self.offsets[o + 1] {
                    dst[self.index[t] as usize] += go * self.weight[t];
                }
            }
        }
    }

    /// Number of input taps feeding output pixel `o`.
    pub fn support(&self, o: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.offsets[o]..self.offsets[o + 1]).map(|t| (self.index[t] as usize, self.weight[t]))
    }
}
