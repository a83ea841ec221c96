//! Small layer helpers on top of [`Graph`].

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Weight initialisation for [`Conv2d::new`].
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// He-style N(0, gain² · 2 / fan_in).
    He(f64),
    /// All-zero weights and the given bias value.
    Zero(f64),
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [out_ch, in_ch, kernel, kernel];
        let (weight, bias_value) = match init {
            Init::He(gain) => {
                let std = gain * (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
                (store.add_normal(format!("{name}.weight"), &shape, std, rng), 0.0)
            }
            Init::Zero(b) => (store.add(format!("{name}.weight"), Tensor::zeros(&shape)), b),
        };
        let bias = Some(store.add(format!("{name}.bias"), Tensor::full(&[out_ch], T::of(bias_value))));
        Self { weight, bias, in_ch, out_ch, kernel, stride, pad: kernel / 2 }
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

pub fn lrelu<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Var {
    g.leaky_relu(x, T::of(LEAKY_SLOPE))
}
