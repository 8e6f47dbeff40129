//! The reconstructor families: Pix2Pix GAN (UNet generator with a patch
//! discriminator), a stacked-LSTM baseline and an LSTM-UNet. All map a
//! `3 × L` matrix of leads I, II, V2 to a `9 × L` matrix of target leads.
//!
//! Every family is built from a [`ModelSpec`] into a [`Model`] that owns its
//! parameters. Checkpoints are single safetensors archives with the model spec,
//! the preprocessing hash and training counters in the header metadata.

mod discriminator;
pub mod layers;
mod lstm;
pub mod params;
mod unet;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{Tensor, Var};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use discriminator::{patch_majority, PatchDiscriminator};
pub use layers::Ctx;
pub use lstm::LstmNet;
pub use params::ParamStore;
pub use unet::UNet;

use crate::error::{Error, Result};
use crate::ingest::EcgRecord;
use crate::leads::LeadSet;

pub const IN_CHANNELS: usize = 3;
pub const OUT_CHANNELS: usize = 9;

/// Conventional Pix2Pix widths. With kernel 4 these give about 11M parameters
/// for generator plus discriminator, well short of the reported ~30M, so the
/// default widens the three innermost blocks instead.
pub const PIX2PIX_WIDTHS: [usize; 7] = [64, 128, 256, 512, 512, 512, 512];
pub const DEFAULT_WIDTHS: [usize; 7] = [64, 128, 256, 512, 1024, 1024, 1024];

const GEN: &str = "gen";
const DISC: &str = "disc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "PIX2PIX_GAN")]
    Pix2PixGan,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "LSTM_UNET")]
    LstmUnet,
    /// Test fixture that returns the ground-truth target leads.
    #[serde(rename = "IDENTITY")]
    Identity,
}

impl ModelFamily {
    pub const TRAINABLE: [ModelFamily; 3] = [ModelFamily::Pix2PixGan, ModelFamily::LstmUnet, ModelFamily::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Pix2PixGan => "PIX2PIX_GAN",
            ModelFamily::Lstm => "LSTM",
            ModelFamily::LstmUnet => "LSTM_UNET",
            ModelFamily::Identity => "IDENTITY",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pix2pix_gan" | "pix2pix" | "gan" => Ok(ModelFamily::Pix2PixGan),
            "lstm" => Ok(ModelFamily::Lstm),
            "lstm_unet" => Ok(ModelFamily::LstmUnet),
            "identity" => Ok(ModelFamily::Identity),
            _ => Err(Error::Config(format!(
                "unknown model family {s:?} (expected pix2pix-gan, lstm, lstm-unet or identity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    /// Encoder widths, shallowest first; one down/up block pair per entry.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    /// Number of innermost decoder blocks that apply dropout during training.
    pub dropout_blocks: usize,
    /// Also normalise the first encoder block.
    pub bn_everywhere: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            widths: DEFAULT_WIDTHS.to_vec(),
            kernel: 4,
            stride: 2,
            leaky_slope: layers::LEAKY_SLOPE,
            dropout: 0.5,
            dropout_blocks: 3,
            bn_everywhere: false,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("generator widths must be non-empty and positive".into()));
        }
        if self.widths.len() > 16 {
            return Err(Error::Config("generator deeper than 16 blocks".into()));
        }
        check_fixed_geometry(self.kernel, self.stride, self.leaky_slope)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Valid input lengths are positive multiples of this.
    pub fn length_multiple(&self) -> usize {
        1 << self.widths.len()
    }
}

fn check_fixed_geometry(kernel: usize, stride: usize, slope: f64) -> Result<()> {
    if kernel != 4 || stride != 2 {
        return Err(Error::Config(format!(
            "only kernel 4 with stride 2 is implemented, got kernel {kernel} stride {stride}"
        )));
    }
    if slope != layers::LEAKY_SLOPE {
        return Err(Error::Config(format!("only LeakyReLU slope {} is implemented", layers::LEAKY_SLOPE)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    /// Block widths; every block halves the length except the last.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub bn_everywhere: bool,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256, 512],
            kernel: 4,
            leaky_slope: layers::LEAKY_SLOPE,
            bn_everywhere: false,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be non-empty and positive".into()));
        }
        check_fixed_geometry(self.kernel, 2, self.leaky_slope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmSpec {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for LstmSpec {
    fn default() -> Self {
        Self { layers: 2, hidden: 64 }
    }
}

impl LstmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("LSTM needs at least one layer of positive width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelSpec {
    #[serde(rename = "PIX2PIX_GAN")]
    Pix2PixGan {
        #[serde(default)]
        generator: GeneratorSpec,
        #[serde(default)]
        discriminator: DiscriminatorSpec,
    },
    #[serde(rename = "LSTM")]
    Lstm {
        #[serde(default)]
        lstm: LstmSpec,
    },
    #[serde(rename = "LSTM_UNET")]
    LstmUnet {
        #[serde(default)]
        generator: GeneratorSpec,
        /// Per-direction width of the bottleneck BiLSTM; 0 means half the
        /// last encoder width.
        #[serde(default)]
        bottleneck_hidden: usize,
    },
    #[serde(rename = "IDENTITY")]
    Identity,
}

impl ModelSpec {
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Pix2PixGan => ModelSpec::Pix2PixGan {
                generator: GeneratorSpec::default(),
                discriminator: DiscriminatorSpec::default(),
            },
            ModelFamily::Lstm => ModelSpec::Lstm {
                lstm: LstmSpec::default(),
            },
            ModelFamily::LstmUnet => {
                let generator = GeneratorSpec::default();
                let bottleneck_hidden = generator.widths[generator.widths.len() - 1] / 2;
                ModelSpec::LstmUnet {
                    generator,
                    bottleneck_hidden,
                }
            }
            ModelFamily::Identity => ModelSpec::Identity,
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::Pix2PixGan { .. } => ModelFamily::Pix2PixGan,
            ModelSpec::Lstm { .. } => ModelFamily::Lstm,
            ModelSpec::LstmUnet { .. } => ModelFamily::LstmUnet,
            ModelSpec::Identity => ModelFamily::Identity,
        }
    }

    /// Sets the batch-norm override on every block that has the choice.
    pub fn with_bn_everywhere(mut self, on: bool) -> Self {
        match &mut self {
            ModelSpec::Pix2PixGan {
                generator,
                discriminator,
            } => {
                generator.bn_everywhere = on;
                discriminator.bn_everywhere = on;
            }
            ModelSpec::LstmUnet { generator, .. } => generator.bn_everywhere = on,
            ModelSpec::Lstm { .. } | ModelSpec::Identity => {}
        }
        self
    }

    /// Input lengths must be positive multiples of this.
    pub fn length_multiple(&self) -> usize {
        match self {
            ModelSpec::Pix2PixGan { generator, .. } | ModelSpec::LstmUnet { generator, .. } => {
                generator.length_multiple()
            }
            ModelSpec::Lstm { .. } | ModelSpec::Identity => 1,
        }
    }

    /// Trainable parameters of every network in the family, discriminator included.
    pub fn parameter_count(&self) -> Result<usize> {
        Ok(Model::new(self.clone(), 0)?.parameter_count())
    }
}

enum Net {
    Gan { gen: UNet, disc: PatchDiscriminator },
    Lstm(LstmNet),
    LstmUnet(UNet),
    Identity,
}

/// Training counters and provenance stored alongside checkpoint weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub preprocess_hash: String,
    pub step: usize,
    pub epoch: usize,
    pub val_r2: Option<f64>,
    /// Content hash of the dataset manifest the model was trained on.
    pub dataset_hash: Option<String>,
}

const META_SPEC: &str = "model_spec";
const META_INFO: &str = "checkpoint";

pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let net = match &spec {
            ModelSpec::Pix2PixGan {
                generator,
                discriminator,
            } => Net::Gan {
                gen: UNet::new(&mut store, GEN, generator, None)?,
                disc: PatchDiscriminator::new(&mut store, DISC, discriminator)?,
            },
            ModelSpec::Lstm { lstm } => Net::Lstm(LstmNet::new(&mut store, GEN, lstm)?),
            ModelSpec::LstmUnet {
                generator,
                bottleneck_hidden,
            } => {
                let hidden = match *bottleneck_hidden {
                    0 => generator.widths.last().copied().unwrap_or(0) / 2,
                    h => h,
                };
                Net::LstmUnet(UNet::new(&mut store, GEN, generator, Some(hidden))?)
            }
            ModelSpec::Identity => Net::Identity,
        };
        Ok(Self { spec, store, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> ModelFamily {
        self.spec.family()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.num_params("")
    }

    pub fn generator_vars(&self) -> Vec<Var> {
        self.store.trainable(&format!("{GEN}."))
    }

    pub fn discriminator_vars(&self) -> Vec<Var> {
        self.store.trainable(&format!("{DISC}."))
    }

    pub fn has_discriminator(&self) -> bool {
        matches!(self.net, Net::Gan { .. })
    }

    /// The UNet trunk, if the family has one.
    pub fn unet(&self) -> Option<&UNet> {
        match &self.net {
            Net::Gan { gen, .. } => Some(gen),
            Net::LstmUnet(u) => Some(u),
            _ => None,
        }
    }

    pub fn discriminator(&self) -> Option<&PatchDiscriminator> {
        match &self.net {
            Net::Gan { disc, .. } => Some(disc),
            _ => None,
        }
    }

    /// `(batch, 3, L)` → `(batch, 9, L)`.
    pub fn generate(&self, input: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        match &self.net {
            Net::Gan { gen, .. } => gen.forward(input, ctx),
            Net::LstmUnet(u) => u.forward(input, ctx),
            Net::Lstm(l) => l.forward(input, ctx),
            Net::Identity => Err(Error::Precondition(
                "the identity fixture reconstructs from full records only".into(),
            )),
        }
    }

    /// Patch logits `(batch, n_patches)`; GAN family only.
    pub fn discriminate(&self, condition: &Tensor, candidate: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        match &self.net {
            Net::Gan { disc, .. } => disc.forward(condition, candidate, ctx),
            _ => Err(Error::Precondition(format!("{} has no discriminator", self.family()))),
        }
    }

    /// Inference on one `3 × L` input.
    pub fn predict(&self, input: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        let (c, len) = input.dim();
        if c != IN_CHANNELS {
            return Err(Error::ShapeMismatch(format!("expected {IN_CHANNELS} input leads, got {c}")));
        }
        let data: Vec<f32> = input.iter().copied().collect();
        let x = Tensor::from_vec(data, (1, c, len), self.store.device())?;
        let y = self.generate(&x, &mut Ctx::eval())?;
        let values = y.flatten_all()?.to_vec1::<f32>()?;
        Array2::from_shape_vec((OUT_CHANNELS, len), values).map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let metadata = HashMap::from([
            (META_SPEC.to_string(), serde_json::to_string(&self.spec)?),
            (META_INFO.to_string(), serde_json::to_string(meta)?),
        ]);
        self.store.save(path, metadata)
    }

    /// Rebuilds the model described in the archive and loads its weights.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (values, metadata) = params::read_archive(path)?;
        let field = |key: &str| {
            metadata
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("{} lacks {key} metadata", path.display())))
        };
        let spec: ModelSpec = serde_json::from_str(field(META_SPEC)?)?;
        let meta: CheckpointMeta = serde_json::from_str(field(META_INFO)?)?;
        let model = Model::new(spec, 0)?;
        model.store.restore(&values)?;
        Ok((model, meta))
    }
}

/// Anything that turns a preprocessed 12-lead record into its 9 target leads.
pub trait Reconstruct {
    fn reconstruct(&self, record: &EcgRecord) -> Result<Array2<f32>>;
}

impl Reconstruct for Model {
    fn reconstruct(&self, record: &EcgRecord) -> Result<Array2<f32>> {
        let signal = record.signal();
        if let Net::Identity = self.net {
            return Ok(signal.select(ndarray::Axis(0), &LeadSet::target_rows()));
        }
        let m = self.spec.length_multiple();
        if record.len() % m != 0 {
            return Err(Error::BadLength {
                len: record.len(),
                multiple: m,
            });
        }
        self.predict(signal.select(ndarray::Axis(0), &LeadSet::input_rows()).view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_gan() -> ModelSpec {
        ModelSpec::Pix2PixGan {
            generator: GeneratorSpec {
                widths: vec![4, 8, 8],
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec {
                widths: vec![4, 8, 8, 8],
                ..DiscriminatorSpec::default()
            },
        }
    }

    #[test]
    fn family_strings() {
        for f in [ModelFamily::Pix2PixGan, ModelFamily::Lstm, ModelFamily::LstmUnet, ModelFamily::Identity] {
            assert_eq!(f.name().parse::<ModelFamily>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.name()));
        }
        assert_eq!("lstm-unet".parse::<ModelFamily>().unwrap(), ModelFamily::LstmUnet);
        assert!("transformer".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        for f in ModelFamily::TRAINABLE {
            let spec = ModelSpec::default_for(f).with_bn_everywhere(true);
            let json = serde_json::to_string(&spec).unwrap();
            assert!(json.contains(f.name()));
            assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
        }
    }

    #[test]
    fn rejects_unimplemented_geometry() {
        let spec = GeneratorSpec {
            kernel: 5,
            ..GeneratorSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn majority_rule() {
        assert!(patch_majority(&[1.2, 0.3, -0.1]).unwrap());
        assert!(!patch_majority(&[-1.0, -1.0, 1.0]).unwrap());
        assert!(!patch_majority(&[1.0, -1.0]).unwrap());
        assert!(!patch_majority(&[0.0]).unwrap());
        assert!(patch_majority(&[]).is_err());
    }

    #[test]
    fn small_shapes_and_lengths() {
        let model = Model::new(small_gan(), 1).unwrap();
        let x = Tensor::zeros((2, 3, 64), candle_core::DType::F32, &candle_core::Device::Cpu).unwrap();
        let y = model.generate(&x, &mut Ctx::train(0)).unwrap();
        assert_eq!(y.dims(), &[2, 9, 64]);
        let bad = Tensor::zeros((1, 3, 12), candle_core::DType::F32, &candle_core::Device::Cpu).unwrap();
        assert!(matches!(
            model.generate(&bad, &mut Ctx::eval()),
            Err(Error::BadLength { len: 12, multiple: 8 })
        ));
        let disc = model.discriminator().unwrap();
        let logits = model.discriminate(&x, &y, &Ctx::eval()).unwrap();
        assert_eq!(logits.dims(), &[2, disc.output_len(64)]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let model = Model::new(small_gan(), 5).unwrap();
        let meta = CheckpointMeta {
            preprocess_hash: "abc".into(),
            step: 7,
            epoch: 2,
            val_r2: Some(0.25),
            dataset_hash: None,
        };
        model.save(&path, &meta).unwrap();
        let (back, got) = Model::load(&path).unwrap();
        assert_eq!(got, meta);
        assert_eq!(back.spec(), model.spec());
        assert_eq!(back.store().snapshot().unwrap(), model.store().snapshot().unwrap());

        let identity = Model::new(ModelSpec::Identity, 0).unwrap();
        identity.save(&path, &meta).unwrap();
        assert_eq!(Model::load(&path).unwrap().0.family(), ModelFamily::Identity);
    }
}
