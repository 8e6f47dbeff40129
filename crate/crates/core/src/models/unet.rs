//! 1-D UNet generator, optionally with a bidirectional LSTM over the bottleneck.

use candle_core::{Tensor, D};

use super::layers::{leaky_relu, BatchNorm1d, Conv1d, Ctx, Lstm, UpConv1d};
use super::params::ParamStore;
use super::{GeneratorSpec, IN_CHANNELS, OUT_CHANNELS};
use crate::error::{Error, Result};

struct Down {
    conv: Conv1d,
    norm: Option<BatchNorm1d>,
}

struct Up {
    conv: UpConv1d,
    norm: Option<BatchNorm1d>,
    dropout: f64,
}

struct BiLstm {
    forward: Lstm,
    backward: Lstm,
}

pub struct UNet {
    down: Vec<Down>,
    up: Vec<Up>,
    out: UpConv1d,
    bottleneck: Option<BiLstm>,
}

impl UNet {
    /// `bottleneck_hidden` inserts a BiLSTM whose two directions each have that
    /// width; its concatenated output must match the bottleneck channel count.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        spec: &GeneratorSpec,
        bottleneck_hidden: Option<usize>,
    ) -> Result<Self> {
        spec.validate()?;
        let w = &spec.widths;
        let n = w.len();
        let mut down = Vec::with_capacity(n);
        for (d, &c_out) in w.iter().enumerate() {
            let c_in = if d == 0 { IN_CHANNELS } else { w[d - 1] };
            let norm = d > 0 || spec.bn_everywhere;
            let name = format!("{prefix}.down{d}");
            down.push(Down {
                conv: Conv1d::new(store, &format!("{name}.conv"), c_in, c_out, 4, 2, 1, !norm)?,
                norm: if norm {
                    Some(BatchNorm1d::new(store, &format!("{name}.bn"), c_out)?)
                } else {
                    None
                },
            });
        }

        let bottleneck = match bottleneck_hidden {
            Some(h) => {
                let c = w[n - 1];
                if 2 * h != c {
                    return Err(Error::Config(format!(
                        "bottleneck LSTM output 2×{h} does not match {c} bottleneck channels"
                    )));
                }
                Some(BiLstm {
                    forward: Lstm::new(store, &format!("{prefix}.bottleneck.fwd"), c, h, false)?,
                    backward: Lstm::new(store, &format!("{prefix}.bottleneck.bwd"), c, h, true)?,
                })
            }
            None => None,
        };

        // Decoder block k undoes encoder depth n-1-k and lands on depth n-2-k.
        let mut up = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            let from = n - 1 - k;
            let c_in = if k == 0 { w[from] } else { 2 * w[from] };
            let c_out = w[from - 1];
            let name = format!("{prefix}.up{k}");
            up.push(Up {
                conv: UpConv1d::new(store, &format!("{name}.conv"), c_in, c_out, false)?,
                norm: Some(BatchNorm1d::new(store, &format!("{name}.bn"), c_out)?),
                dropout: if k < spec.dropout_blocks { spec.dropout } else { 0.0 },
            });
        }
        let out = UpConv1d::new(store, &format!("{prefix}.out"), 2 * w[0], OUT_CHANNELS, true)?;
        Ok(Self {
            down,
            up,
            out,
            bottleneck,
        })
    }

    pub fn depth(&self) -> usize {
        self.down.len()
    }

    /// Total downsampling factor; valid lengths are positive multiples of it.
    pub fn length_multiple(&self) -> usize {
        1 << self.depth()
    }

    /// Encoder outputs, shallowest first. Exposed for the length-arithmetic checks.
    pub fn encode(&self, x: &Tensor, ctx: &Ctx) -> Result<Vec<Tensor>> {
        let (_, c, len) = x.dims3()?;
        if c != IN_CHANNELS {
            return Err(Error::ShapeMismatch(format!("expected {IN_CHANNELS} input leads, got {c}")));
        }
        let m = self.length_multiple();
        if len == 0 || len % m != 0 {
            return Err(Error::BadLength { len, multiple: m });
        }
        let mut feats = Vec::with_capacity(self.depth());
        let mut h = x.clone();
        for block in &self.down {
            h = block.conv.forward(&h)?;
            if let Some(bn) = &block.norm {
                h = bn.forward(&h, ctx)?;
            }
            h = leaky_relu(&h)?;
            feats.push(h.clone());
        }
        Ok(feats)
    }

    /// `(batch, 3, L)` → `(batch, 9, L)` in (−1, 1).
    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut feats = self.encode(x, ctx)?;
        let mut h = feats.pop().expect("at least one encoder block");
        if let Some(lstm) = &self.bottleneck {
            let seq = h.transpose(1, 2)?.contiguous()?;
            let both = Tensor::cat(&[lstm.forward.forward(&seq, ctx)?, lstm.backward.forward(&seq, ctx)?], D::Minus1)?;
            h = both.transpose(1, 2)?.contiguous()?;
        }
        for block in &self.up {
            h = block.conv.forward(&h)?;
            if let Some(bn) = &block.norm {
                h = bn.forward(&h, ctx)?;
            }
            h = ctx.dropout(&h, block.dropout)?;
            h = h.relu()?;
            let skip = feats.pop().expect("one skip per decoder block");
            h = Tensor::cat(&[h, skip], 1)?;
        }
        Ok(self.out.forward(&h)?.tanh()?)
    }
}
