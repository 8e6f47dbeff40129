//! Training: adversarial plus L1 reconstruction for the GAN, mean squared
//! error for the baselines, and epoch-level early stopping on validation R².

mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, AdamConfig};

use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, EcgRecord, Split};
use crate::metrics::R2Variant;
use crate::models::{CheckpointMeta, Ctx, Model, ModelSpec, IN_CHANNELS, OUT_CHANNELS};
use crate::preprocess::{make_windows, prepare_split, PreprocessConfig, WindowedDataset};
use crate::report::{evaluate_records, mean_r2};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const NONFINITE_CHECKPOINT: &str = "nonfinite.safetensors";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without improvement of mean validation R² before stopping.
    pub patience: usize,
    /// Windows per optimisation step.
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the L1 term in the generator objective.
    pub lambda_recon: f64,
    pub seed: u64,
    /// Caps the steps per epoch; `None` covers every window once.
    pub max_steps_per_epoch: Option<usize>,
    /// Early-stop on the test split instead of the validation split.
    pub paper_protocol: bool,
    pub r2_variant: R2Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 14,
            patience: 3,
            batch_size: 16,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            lambda_recon: 100.0,
            seed: 0,
            max_steps_per_epoch: None,
            paper_protocol: false,
            r2_variant: R2Variant::Conventional,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lambda_recon >= 0.0) {
            return Err(Error::Config("lambda_recon must be non-negative".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("optimizer needs lr > 0 and betas in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// The split used for early stopping.
    pub fn selection_split(&self) -> Split {
        if self.paper_protocol {
            Split::Test
        } else {
            Split::Val
        }
    }
}

/// Mean binary cross-entropy of logits against a constant label, in the
/// overflow-free form `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits(logits: &Tensor, label: f64) -> Result<Tensor> {
    let relu = logits.relu()?;
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((relu - (logits * label)?)? + softplus)?.mean_all()?)
}

pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Scalar losses of one step. GAN-only fields are `None` for the baselines,
/// whose `reconstruction` is the mean squared error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: usize,
    pub generator: f64,
    pub reconstruction: f64,
    pub adversarial: Option<f64>,
    pub discriminator: Option<f64>,
    pub d_real: Option<f64>,
    pub d_fake: Option<f64>,
}

fn scalar(t: &Tensor, step: usize, component: &'static str) -> Result<f64> {
    let v = t.to_scalar::<f32>()? as f64;
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss { step, component });
    }
    Ok(v)
}

/// Owns a model and its optimizers; one call of [`Trainer::step`] is one update.
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    gen_opt: Adam,
    disc_opt: Option<Adam>,
    ctx: Ctx,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen_opt = Adam::new(model.generator_vars(), cfg.adam());
        if gen_opt_is_empty(&model) {
            return Err(Error::Config(format!("{} has no trainable parameters", model.family())));
        }
        let disc_opt = model
            .has_discriminator()
            .then(|| Adam::new(model.discriminator_vars(), cfg.adam()));
        let ctx = Ctx::train(cfg.seed ^ 0x5eed_d0d0);
        Ok(Self {
            model,
            cfg,
            gen_opt,
            disc_opt,
            ctx,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One update on a batch of inputs `(B, 3, L)` and targets `(B, 9, L)`.
    pub fn step(&mut self, input: &Tensor, target: &Tensor) -> Result<StepLosses> {
        self.step += 1;
        if self.disc_opt.is_some() {
            self.gan_step(input, target)
        } else {
            self.baseline_step(input, target)
        }
    }

    /// Discriminator update on real and generated pairs, then generator update
    /// on flipped labels plus λ-weighted L1.
    fn gan_step(&mut self, input: &Tensor, target: &Tensor) -> Result<StepLosses> {
        let step = self.step;
        let fake = self.model.generate(input, &mut self.ctx)?;

        let d_real = bce_with_logits(&self.model.discriminate(input, target, &self.ctx)?, 1.0)?;
        let d_fake = bce_with_logits(&self.model.discriminate(input, &fake.detach(), &self.ctx)?, 0.0)?;
        let d_loss = ((&d_real + &d_fake)? * 0.5)?;
        let d_value = scalar(&d_loss, step, "discriminator")?;
        let grads = d_loss.backward()?;
        self.disc_opt.as_mut().expect("GAN has a discriminator").step(&grads)?;

        let adversarial = bce_with_logits(&self.model.discriminate(input, &fake, &self.ctx)?, 1.0)?;
        let recon = l1_loss(&fake, target)?;
        let total = (&adversarial + (&recon * self.cfg.lambda_recon)?)?;
        let adv_value = scalar(&adversarial, step, "adversarial")?;
        let recon_value = scalar(&recon, step, "reconstruction")?;
        let total_value = scalar(&total, step, "generator")?;
        let grads = total.backward()?;
        self.gen_opt.step(&grads)?;

        Ok(StepLosses {
            step,
            generator: total_value,
            reconstruction: recon_value,
            adversarial: Some(adv_value),
            discriminator: Some(d_value),
            d_real: Some(scalar(&d_real, step, "discriminator")?),
            d_fake: Some(scalar(&d_fake, step, "discriminator")?),
        })
    }

    fn baseline_step(&mut self, input: &Tensor, target: &Tensor) -> Result<StepLosses> {
        let pred = self.model.generate(input, &mut self.ctx)?;
        let loss = mse_loss(&pred, target)?;
        let value = scalar(&loss, self.step, "reconstruction")?;
        let grads = loss.backward()?;
        self.gen_opt.step(&grads)?;
        Ok(StepLosses {
            step: self.step,
            generator: value,
            reconstruction: value,
            adversarial: None,
            discriminator: None,
            d_real: None,
            d_fake: None,
        })
    }
}

fn gen_opt_is_empty(model: &Model) -> bool {
    model.generator_vars().is_empty()
}

/// Stacks windows `indices` into `(B, 3, L)` inputs and `(B, 9, L)` targets.
pub fn batch_tensors(data: &WindowedDataset, indices: &[usize], device: &Device) -> Result<(Tensor, Tensor)> {
    let len = data.length;
    let mut input = Vec::with_capacity(indices.len() * IN_CHANNELS * len);
    let mut target = Vec::with_capacity(indices.len() * OUT_CHANNELS * len);
    for &i in indices {
        let w = &data.windows[i];
        input.extend(w.input.iter().copied());
        target.extend(w.target.iter().copied());
    }
    let b = indices.len();
    Ok((
        Tensor::from_vec(input, (b, IN_CHANNELS, len), device)?,
        Tensor::from_vec(target, (b, OUT_CHANNELS, len), device)?,
    ))
}

/// Produces the model-selection metric at the end of each epoch.
pub trait Validator {
    fn validate(&mut self, model: &Model) -> Result<f64>;
}

/// Mean R² over full-length (unwindowed) records.
pub struct RecordValidator {
    records: Vec<EcgRecord>,
    variant: R2Variant,
}

impl RecordValidator {
    pub fn new(records: Vec<EcgRecord>, variant: R2Variant) -> Self {
        Self { records, variant }
    }

    pub fn records(&self) -> &[EcgRecord] {
        &self.records
    }
}

impl Validator for RecordValidator {
    fn validate(&mut self, model: &Model) -> Result<f64> {
        let metrics = evaluate_records(model, &self.records, self.variant)?;
        mean_r2(&metrics).ok_or_else(|| Error::Precondition("validation records have no defined R² cell".into()))
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub val_r2: f64,
    pub generator: f64,
    pub reconstruction: f64,
    pub adversarial: Option<f64>,
    pub discriminator: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_r2: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochSummary>,
    pub stopped_early: bool,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Where [`fit`] writes its checkpoints and log; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct FitOutput {
    pub run_dir: Option<PathBuf>,
    /// Stamped into every checkpoint.
    pub meta: CheckpointMeta,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine<'a> {
    Step {
        epoch: usize,
        #[serde(flatten)]
        losses: &'a StepLosses,
    },
    Epoch(&'a EpochSummary),
}

struct Log(Option<BufWriter<File>>);

impl Log {
    fn open(run_dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = run_dir else { return Ok(Self(None)) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(TRAIN_LOG);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self(Some(BufWriter::new(f))))
    }

    fn write(&mut self, line: &LogLine<'_>) -> Result<()> {
        if let Some(w) = &mut self.0 {
            let text = serde_json::to_string(line)?;
            writeln!(w, "{text}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(TRAIN_LOG, e))?;
        }
        Ok(())
    }
}

/// Trains until `max_epochs` or until validation R² has not improved for
/// `patience` epochs, then restores the weights of the best epoch.
pub fn fit(
    model: Model,
    train: &WindowedDataset,
    validator: &mut dyn Validator,
    cfg: &TrainConfig,
    out: &FitOutput,
) -> Result<(Model, TrainState)> {
    if train.is_empty() {
        return Err(Error::EmptySplit(Split::Train));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let run_dir = out.run_dir.as_deref();
    let mut log = Log::open(run_dir)?;
    let mut state = TrainState::default();
    let mut best_weights = None;
    let device = trainer.model().store().device().clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.max_steps_per_epoch {
            batches.truncate(cap);
        }
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for batch in &batches {
            let (x, y) = batch_tensors(train, batch, &device)?;
            let losses = match trainer.step(&x, &y) {
                Ok(l) => l,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    if let Some(dir) = run_dir {
                        let meta = CheckpointMeta {
                            step: trainer.steps_done(),
                            epoch,
                            ..out.meta.clone()
                        };
                        trainer.model().save(&dir.join(NONFINITE_CHECKPOINT), &meta)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            sums.0 += losses.generator;
            sums.1 += losses.reconstruction;
            sums.2 += losses.adversarial.unwrap_or(0.0);
            sums.3 += losses.discriminator.unwrap_or(0.0);
            log.write(&LogLine::Step {
                epoch,
                losses: &losses,
            })?;
        }

        let val_r2 = validator.validate(trainer.model())?;
        let n = batches.len() as f64;
        let gan = trainer.model().has_discriminator();
        let summary = EpochSummary {
            epoch,
            steps: trainer.steps_done(),
            val_r2,
            generator: sums.0 / n,
            reconstruction: sums.1 / n,
            adversarial: gan.then_some(sums.2 / n),
            discriminator: gan.then_some(sums.3 / n),
        };
        log.write(&LogLine::Epoch(&summary))?;
        log::info!("epoch {epoch}: validation R² {val_r2:.4}");
        state.epochs.push(summary);

        let meta = CheckpointMeta {
            step: trainer.steps_done(),
            epoch,
            val_r2: Some(val_r2),
            ..out.meta.clone()
        };
        if let Some(dir) = run_dir {
            let path = dir.join(LAST_CHECKPOINT);
            trainer.model().save(&path, &meta)?;
            state.last_checkpoint = Some(path);
        }
        if state.best_r2.is_none_or(|b| val_r2 > b) {
            state.best_r2 = Some(val_r2);
            state.best_epoch = Some(epoch);
            best_weights = Some(trainer.model().store().snapshot()?);
            if let Some(dir) = run_dir {
                let path = dir.join(BEST_CHECKPOINT);
                trainer.model().save(&path, &meta)?;
                state.best_checkpoint = Some(path);
            }
        } else if epoch - state.best_epoch.expect("set on first epoch") >= cfg.patience {
            state.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let model = trainer.into_model();
    if let Some(w) = best_weights {
        model.store().restore(&w)?;
    }
    Ok((model, state))
}

/// Windows of every record, skipping (with a warning) records shorter than a window.
pub fn window_records(records: &[EcgRecord], cfg: &PreprocessConfig) -> Result<WindowedDataset> {
    let mut data = WindowedDataset::new(cfg.window_length, cfg.window_stride);
    for rec in records {
        match make_windows(rec, cfg.window_length, cfg.window_stride) {
            Ok(w) => data.extend(w),
            Err(Error::RecordTooShort { len, required }) => {
                log::warn!("skipping {}: {len} samples, window needs {required}", rec.record_id)
            }
            Err(e) => return Err(e),
        }
    }
    Ok(data)
}

/// Trains `spec` on a manifest's train split with early stopping on the
/// validation split (or the test split with `paper_protocol`).
pub fn fit_manifest(
    manifest: &DatasetManifest,
    base: &Path,
    spec: ModelSpec,
    pre: &PreprocessConfig,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<(Model, TrainState)> {
    pre.validate()?;
    cfg.validate()?;
    let train = prepare_split(manifest, base, Split::Train, pre)?;
    let select = prepare_split(manifest, base, cfg.selection_split(), pre)?;
    let windows = window_records(&train, pre)?;
    let model = Model::new(spec, cfg.seed)?;
    let out = FitOutput {
        run_dir: run_dir.map(Path::to_path_buf),
        meta: CheckpointMeta {
            preprocess_hash: pre.hash(),
            dataset_hash: Some(manifest.content_hash()?),
            ..CheckpointMeta::default()
        },
    };
    let mut validator = RecordValidator::new(select, cfg.r2_variant);
    fit(model, &windows, &mut validator, cfg, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GeneratorSpec, LstmSpec};
    use crate::synthetic::SyntheticEcg;

    fn t(v: &[f32], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn loss_anchors_at_zero_logits() {
        let ln2 = std::f64::consts::LN_2;
        let z = t(&[0.0; 6], &[2, 3]);
        let real = bce_with_logits(&z, 1.0).unwrap().to_scalar::<f32>().unwrap() as f64;
        let fake = bce_with_logits(&z, 0.0).unwrap().to_scalar::<f32>().unwrap() as f64;
        assert!((real - ln2).abs() < 1e-7 && (fake - ln2).abs() < 1e-7);
        let y = t(&[0.1, -0.3, 0.7, 0.2], &[1, 1, 4]);
        assert_eq!(l1_loss(&y, &y).unwrap().to_scalar::<f32>().unwrap(), 0.0);
        assert_eq!(mse_loss(&y, &y).unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let z = t(&[200.0, -200.0], &[2]);
        let v = bce_with_logits(&z, 1.0).unwrap().to_scalar::<f32>().unwrap();
        assert!((v - 100.0).abs() < 1e-3, "{v}");
        let v = bce_with_logits(&z, 0.0).unwrap().to_scalar::<f32>().unwrap();
        assert!((v - 100.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 14,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda_recon: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn tiny_gan() -> ModelSpec {
        ModelSpec::Pix2PixGan {
            generator: GeneratorSpec {
                widths: vec![8, 16, 16],
                ..GeneratorSpec::default()
            },
            discriminator: crate::models::DiscriminatorSpec {
                widths: vec![8, 8, 8, 8],
                ..Default::default()
            },
        }
    }

    fn batch() -> (Tensor, Tensor) {
        let rec = SyntheticEcg::default().record("b", 256, 500.0, 1);
        let (rec, _) = crate::preprocess::normalize(&rec).unwrap();
        let data = make_windows(&rec, 128, 128).unwrap();
        batch_tensors(&data, &[0, 1], &Device::Cpu).unwrap()
    }

    #[test]
    fn generator_loss_decomposes() {
        let (x, y) = batch();
        for lambda in [0.0, 100.0] {
            let cfg = TrainConfig {
                lambda_recon: lambda,
                ..TrainConfig::default()
            };
            let mut tr = Trainer::new(Model::new(tiny_gan(), 3).unwrap(), cfg).unwrap();
            for _ in 0..3 {
                let l = tr.step(&x, &y).unwrap();
                let expect = l.adversarial.unwrap() + lambda * l.reconstruction;
                assert!((l.generator - expect).abs() < 1e-4 * expect.abs().max(1.0), "{l:?}");
            }
        }
    }

    #[test]
    fn steps_are_seed_deterministic() {
        let (x, y) = batch();
        let run = || {
            let mut tr = Trainer::new(Model::new(tiny_gan(), 9).unwrap(), TrainConfig::default()).unwrap();
            (0..3).map(|_| tr.step(&x, &y).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn baseline_loss_is_mse() {
        let (x, y) = batch();
        let spec = ModelSpec::Lstm {
            lstm: LstmSpec { layers: 1, hidden: 4 },
        };
        let model = Model::new(spec, 0).unwrap();
        let pred = model.generate(&x, &mut Ctx::eval()).unwrap();
        let expect = mse_loss(&pred, &y).unwrap().to_scalar::<f32>().unwrap() as f64;
        let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
        let l = tr.step(&x, &y).unwrap();
        assert!((l.generator - expect).abs() < 1e-6);
        assert!(l.adversarial.is_none());
    }

    #[test]
    fn untrained_discriminator_at_zero_logit_gives_ln2() {
        let (x, y) = batch();
        let model = Model::new(tiny_gan(), 1).unwrap();
        for name in ["disc.proj.weight", "disc.proj.bias"] {
            let v = model.store().get(name).unwrap();
            v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
        }
        let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
        let l = tr.step(&x, &y).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for v in [l.d_real, l.d_fake, l.discriminator] {
            assert!((v.unwrap() - ln2).abs() < 1e-6, "{l:?}");
        }
    }

    #[test]
    fn baseline_loss_trends_down_on_one_batch() {
        let (x, y) = batch();
        let spec = ModelSpec::Lstm {
            lstm: LstmSpec { layers: 1, hidden: 8 },
        };
        let cfg = TrainConfig {
            lr: 1e-2,
            beta1: 0.9,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(Model::new(spec, 2).unwrap(), cfg).unwrap();
        let losses: Vec<f64> = (0..100).map(|_| tr.step(&x, &y).unwrap().generator).collect();
        let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 10, "{rises} rises");
        assert!(losses[99] < losses[0]);
    }

    #[test]
    fn gan_total_loss_drops_on_one_batch() {
        let (x, y) = batch();
        let cfg = TrainConfig {
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(Model::new(tiny_gan(), 5).unwrap(), cfg).unwrap();
        let first = tr.step(&x, &y).unwrap().generator;
        let last = (1..100).map(|_| tr.step(&x, &y).unwrap().generator).last().unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    struct Scripted(std::vec::IntoIter<f64>);

    impl Validator for Scripted {
        fn validate(&mut self, _: &Model) -> Result<f64> {
            Ok(self.0.next().expect("script exhausted"))
        }
    }

    fn tiny_windows() -> WindowedDataset {
        let rec = SyntheticEcg::default().record("w", 128, 500.0, 3);
        make_windows(&rec, 64, 64).unwrap()
    }

    fn scripted_fit(script: Vec<f64>) -> TrainState {
        let spec = ModelSpec::Lstm {
            lstm: LstmSpec { layers: 1, hidden: 2 },
        };
        let cfg = TrainConfig {
            max_steps_per_epoch: Some(1),
            ..TrainConfig::default()
        };
        let model = Model::new(spec, 0).unwrap();
        fit(model, &tiny_windows(), &mut Scripted(script.into_iter()), &cfg, &FitOutput::default())
            .unwrap()
            .1
    }

    #[test]
    fn plateau_stops_at_best_plus_patience() {
        let s = scripted_fit(vec![0.2, 0.5, 0.5, 0.5, 0.5]);
        assert_eq!((s.epoch, s.best_epoch, s.best_r2), (5, Some(2), Some(0.5)));
        assert!(s.stopped_early);
    }

    #[test]
    fn improving_runs_every_epoch() {
        let s = scripted_fit((1..=14).map(|e| e as f64 / 20.0).collect());
        assert_eq!((s.epoch, s.best_epoch), (14, Some(14)));
        assert!(!s.stopped_early);
        assert_eq!(s.epochs.len(), 14);
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let model = Model::new(ModelSpec::default_for(crate::models::ModelFamily::Lstm), 0).unwrap();
        let empty = WindowedDataset::new(64, 64);
        let r = fit(model, &empty, &mut Scripted(vec![].into_iter()), &TrainConfig::default(), &FitOutput::default());
        assert!(matches!(r, Err(Error::EmptySplit(Split::Train))));
    }

    #[test]
    fn identity_is_not_trainable() {
        let model = Model::new(ModelSpec::Identity, 0).unwrap();
        assert!(Trainer::new(model, TrainConfig::default()).is_err());
    }

    #[test]
    fn nonfinite_loss_aborts() {
        let (x, _) = batch();
        let y = (x.ones_like().unwrap() * f64::NAN).unwrap();
        let y = Tensor::cat(&[&y, &y, &y], 1).unwrap();
        let spec = ModelSpec::Lstm {
            lstm: LstmSpec { layers: 1, hidden: 4 },
        };
        let mut tr = Trainer::new(Model::new(spec, 0).unwrap(), TrainConfig::default()).unwrap();
        assert!(matches!(
            tr.step(&x, &y),
            Err(Error::NonFiniteLoss { step: 1, component: "reconstruction" })
        ));
    }
}
