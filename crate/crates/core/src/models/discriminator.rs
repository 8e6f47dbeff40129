//! Markovian patch discriminator: one logit per overlapping input interval.

use candle_core::Tensor;

use super::layers::{leaky_relu, BatchNorm1d, Conv1d, Ctx};
use super::params::ParamStore;
use super::{DiscriminatorSpec, IN_CHANNELS, OUT_CHANNELS};
use crate::error::{Error, Result};

struct Block {
    conv: Conv1d,
    norm: Option<BatchNorm1d>,
}

pub struct PatchDiscriminator {
    blocks: Vec<Block>,
    proj: Conv1d,
}

impl PatchDiscriminator {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &DiscriminatorSpec) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.widths.len());
        let mut c_in = IN_CHANNELS + OUT_CHANNELS;
        let last = spec.widths.len() - 1;
        for (i, &c_out) in spec.widths.iter().enumerate() {
            let stride = if i == last { 1 } else { 2 };
            let norm = i > 0 || spec.bn_everywhere;
            let name = format!("{prefix}.block{i}");
            blocks.push(Block {
                conv: Conv1d::new(store, &format!("{name}.conv"), c_in, c_out, 4, stride, 1, !norm)?,
                norm: if norm {
                    Some(BatchNorm1d::new(store, &format!("{name}.bn"), c_out)?)
                } else {
                    None
                },
            });
            c_in = c_out;
        }
        let proj = Conv1d::new(store, &format!("{prefix}.proj"), c_in, 1, 4, 1, 1, true)?;
        Ok(Self { blocks, proj })
    }

    /// Number of logits for an input of `len` samples.
    pub fn output_len(&self, len: usize) -> usize {
        let len = self.blocks.iter().fold(len, |l, b| b.conv.out_len(l));
        self.proj.out_len(len)
    }

    /// `(batch, 3, L)` and `(batch, 9, L)` → `(batch, n_patches)` logits.
    pub fn forward(&self, condition: &Tensor, candidate: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (bc, cc, lc) = condition.dims3()?;
        let (bt, ct, lt) = candidate.dims3()?;
        if bc != bt || cc != IN_CHANNELS || ct != OUT_CHANNELS || lc != lt {
            return Err(Error::ShapeMismatch(format!(
                "condition {:?} and candidate {:?} must be (B, {IN_CHANNELS}, L) and (B, {OUT_CHANNELS}, L)",
                condition.dims(),
                candidate.dims()
            )));
        }
        let mut h = Tensor::cat(&[condition, candidate], 1)?;
        for block in &self.blocks {
            h = block.conv.forward(&h)?;
            if let Some(bn) = &block.norm {
                h = bn.forward(&h, ctx)?;
            }
            h = leaky_relu(&h)?;
        }
        Ok(self.proj.forward(&h)?.squeeze(1)?)
    }
}

/// Real iff strictly more than half of the logits are positive; ties count as fake.
pub fn patch_majority(logits: &[f32]) -> Result<bool> {
    if logits.is_empty() {
        return Err(Error::Precondition("patch majority needs at least one logit".into()));
    }
    let positive = logits.iter().filter(|&&z| z > 0.0).count();
    Ok(2 * positive > logits.len())
}
