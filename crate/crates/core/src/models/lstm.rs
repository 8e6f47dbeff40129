//! Stacked LSTM baseline mapping each time step of the 3 input leads to 9 outputs.

use candle_core::Tensor;

use super::layers::{Ctx, Linear, Lstm};
use super::params::ParamStore;
use super::{LstmSpec, IN_CHANNELS, OUT_CHANNELS};
use crate::error::{Error, Result};

pub struct LstmNet {
    layers: Vec<Lstm>,
    head: Linear,
}

impl LstmNet {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &LstmSpec) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.layers)
            .map(|i| {
                let d_in = if i == 0 { IN_CHANNELS } else { spec.hidden };
                Lstm::new(store, &format!("{prefix}.lstm{i}"), d_in, spec.hidden, false)
            })
            .collect::<Result<_>>()?;
        let head = Linear::new(store, &format!("{prefix}.head"), spec.hidden, OUT_CHANNELS)?;
        Ok(Self { layers, head })
    }

    /// `(batch, 3, L)` → `(batch, 9, L)`; unbounded output (no squashing).
    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (_, c, len) = x.dims3()?;
        if c != IN_CHANNELS || len == 0 {
            return Err(Error::ShapeMismatch(format!("expected (B, {IN_CHANNELS}, L≥1), got {:?}", x.dims())));
        }
        let mut h = x.transpose(1, 2)?.contiguous()?;
        for layer in &self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(self.head.forward(&h)?.transpose(1, 2)?.contiguous()?)
    }
}
