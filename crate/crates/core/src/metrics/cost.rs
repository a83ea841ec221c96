//! Amortised inference cost of one anchor plus per-frame animation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub anchor_cost_tflops: f64,
    pub per_frame_tflops: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { anchor_cost_tflops: 74.23, per_frame_tflops: 1.57 }
    }
}

/// `C(N) = (anchor + per_frame · N) / N` in TFLOPs per frame.
pub fn amortized_cost(n: u64, model: &CostModel) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("frame count must be at least 1".into()));
    }
    if !(model.anchor_cost_tflops > 0.0 && model.per_frame_tflops > 0.0) {
        return Err(Error::Config("cost model constants must be positive".into()));
    }
    let n = n as f64;
    Ok((model.anchor_cost_tflops + model.per_frame_tflops * n) / n)
}
