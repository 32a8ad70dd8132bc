//! Loss, the early-stopping training loop for both models, and checkpoints.

mod checkpoint;

pub use checkpoint::{
    decode_tensor_file, encode_tensor_file, load_checkpoint, load_encoder, read_tensor_file, save_checkpoint,
    save_encoder, write_tensor_file, AnyTensor, Checkpoint, EncoderCheckpoint, TensorFile, MAGIC,
};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Corpus, DatasetError, FontRecord, GlyphImage, KerningTable, Split};
use crate::features::{Encoder, EncoderConfig, FeatureError, FeatureExtractor, FeatureKind, FeatureVector};
use crate::models::{
    pairwise_rows, ModelConfig, ModelError, ModelKind, Normalizer, PairwiseConfig, SetwiseConfig, SpacingModel,
};
use crate::numerics::{adam_step, grad_check, AdamState, GradCheckReport, Gradients, Graph, NumericsError, Tensor};
use crate::par::{self, Execution};

/// Rows per parallel work unit inside one pairwise batch.
const PAIR_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("table sizes differ: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite training loss at epoch {epoch} (batch {batch})")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl TrainingError {
    pub fn is_validation(&self) -> bool {
        match self {
            TrainingError::NonFiniteLoss { .. } | TrainingError::Numerics(_) | TrainingError::Io { .. } => false,
            TrainingError::Model(e) => e.is_validation(),
            TrainingError::Feature(e) => e.is_validation(),
            TrainingError::Dataset(e) => !matches!(e, DatasetError::Io { .. }),
            _ => true,
        }
    }
}

/// Mean absolute difference over all `N²` entries.
pub fn mae_loss(pred: &KerningTable, gt: &KerningTable) -> Result<f64, TrainingError> {
    if pred.n() != gt.n() {
        return Err(TrainingError::DimensionMismatch(pred.n(), gt.n()));
    }
    let sum: f64 = pred.values().iter().zip(gt.values()).map(|(p, g)| (p - g).abs()).sum();
    Ok(sum / pred.values().len() as f64)
}

fn default_batch() -> usize {
    64
}
fn default_patience() -> usize {
    100
}
fn default_max_epochs() -> usize {
    2000
}
fn default_hidden() -> Vec<usize> {
    vec![512, 256]
}
fn default_d_model() -> usize {
    32
}
fn default_heads() -> usize {
    2
}
fn default_ffn() -> usize {
    64
}
fn default_max_tokens() -> usize {
    4096
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub features: FeatureKind,
    /// Defaults to 1e-4 (pairwise) or 1e-3 (set-wise).
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Optional cap on optimizer updates; the epoch in progress is cut short
    /// and validated when the cap is hit.
    #[serde(default)]
    pub max_steps: Option<u64>,
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub pairwise_hidden: Vec<usize>,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_ffn")]
    pub ffn_hidden: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl TrainConfig {
    pub fn new(model: ModelKind, features: FeatureKind, seed: u64) -> Self {
        Self {
            model,
            features,
            lr: None,
            batch_size: default_batch(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            max_steps: None,
            seed,
            pairwise_hidden: default_hidden(),
            d_model: default_d_model(),
            heads: default_heads(),
            ffn_hidden: default_ffn(),
            max_tokens: default_max_tokens(),
            execution: Execution::default(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.model {
            ModelKind::Pairwise => 1e-4,
            ModelKind::Setwise => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(TrainingError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if self.patience == 0 || self.batch_size == 0 {
            return Err(TrainingError::Config(
                "patience and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dim: usize, n_categories: usize) -> ModelConfig {
        match self.model {
            ModelKind::Pairwise => ModelConfig::Pairwise(PairwiseConfig {
                feature_dim,
                n_categories,
                hidden: self.pairwise_hidden.clone(),
            }),
            ModelKind::Setwise => ModelConfig::Setwise(SetwiseConfig {
                feature_dim,
                n_categories,
                d_model: self.d_model,
                heads: self.heads,
                ffn_hidden: self.ffn_hidden,
                max_tokens: self.max_tokens,
            }),
        }
    }
}

/// Stops after `patience` epochs without a strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            StopDecision::Improved
        } else if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// One font's model inputs and targets.
#[derive(Clone, Debug)]
pub struct FontFeatures {
    pub features: Vec<FeatureVector>,
    pub gt: KerningTable,
}

pub fn prepare_fonts(
    fonts: &[&FontRecord],
    extractor: &FeatureExtractor,
    exec: Execution,
) -> Result<Vec<FontFeatures>, TrainingError> {
    par::map(exec, fonts, |r| {
        Ok(FontFeatures {
            features: extractor.extract(&r.glyphs)?,
            gt: r.gt.clone(),
        })
    })
    .into_iter()
    .collect()
}

/// A minibatch: whole fonts (set-wise) or `(font, i, j)` samples (pairwise).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Batch {
    Fonts(Vec<usize>),
    Pairs(Vec<(usize, usize, usize)>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Fonts(v) => v.len(),
            Batch::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffled batches for one epoch: fonts for set-wise, uniformly shuffled
/// `(font, pair)` samples for pairwise.
pub fn epoch_batches(kind: ModelKind, data: &[FontFeatures], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    match kind {
        ModelKind::Setwise => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(rng);
            order.chunks(batch_size).map(|c| Batch::Fonts(c.to_vec())).collect()
        }
        ModelKind::Pairwise => {
            let mut samples: Vec<(usize, usize, usize)> = data
                .iter()
                .enumerate()
                .flat_map(|(f, d)| {
                    let n = d.gt.n();
                    (0..n * n).map(move |k| (f, k / n, k % n))
                })
                .collect();
            samples.shuffle(rng);
            samples.chunks(batch_size).map(|c| Batch::Pairs(c.to_vec())).collect()
        }
    }
}

/// Mean loss over the batch and its gradient. Work units run through
/// [`par::map`] and are reduced in input order.
pub fn batch_gradients(
    model: &SpacingModel<f32>,
    data: &[FontFeatures],
    batch: &Batch,
    exec: Execution,
) -> Result<(f64, Gradients<f32>), TrainingError> {
    let total = batch.len() as f64;
    let parts: Vec<Result<(f64, Gradients<f32>), TrainingError>> = match batch {
        Batch::Fonts(fonts) => par::map(exec, fonts, |&f| {
            let font = &data[f];
            let mut g = Graph::new();
            let pred = model.table_node_with(&mut g, &model.params, &font.features)?;
            let n2 = font.gt.values().len();
            let gt = g.input(Tensor::from_f64(&[n2, 1], font.gt.values())?)?;
            let diff = g.sub(pred, gt)?;
            let mae = g.mean_abs(diff)?;
            let loss = g.scale(mae, 1.0 / total)?;
            let grads = g.backward(loss, &model.params)?;
            Ok((f64::from(g.value(loss).item()), grads))
        }),
        Batch::Pairs(samples) => {
            let ModelConfig::Pairwise(cfg) = &model.config else {
                return Err(TrainingError::Config("pair batches need a pairwise model".into()));
            };
            let chunks: Vec<&[(usize, usize, usize)]> = samples.chunks(PAIR_CHUNK).collect();
            par::map(exec, &chunks, |chunk| {
                let rows: Vec<_> = chunk
                    .iter()
                    .map(|&(f, i, j)| (&data[f].features[i], &data[f].features[j], i, j))
                    .collect();
                let targets: Vec<f64> = chunk.iter().map(|&(f, i, j)| data[f].gt.get(i, j)).collect();
                let mut g = Graph::new();
                let pred = pairwise_rows(&mut g, &model.params, cfg, &model.norm, &rows)?;
                let gt = g.input(Tensor::from_f64(&[chunk.len(), 1], &targets)?)?;
                let diff = g.sub(pred, gt)?;
                let mae = g.mean_abs(diff)?;
                let loss = g.scale(mae, chunk.len() as f64 / total)?;
                let grads = g.backward(loss, &model.params)?;
                Ok((f64::from(g.value(loss).item()), grads))
            })
        }
    };
    let mut acc = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        acc.accumulate(&g);
    }
    Ok((loss, acc))
}

/// Adam update; a zero learning rate leaves the weights untouched.
pub fn apply_update(
    model: &mut SpacingModel<f32>,
    grads: &Gradients<f32>,
    adam: &mut AdamState<f32>,
    lr: f64,
) -> Result<(), TrainingError> {
    if lr == 0.0 {
        return Ok(());
    }
    adam_step(&mut model.params, grads, adam, lr)?;
    Ok(())
}

/// Mean over fonts of the table MAE (equal to the pair-level MAE since every
/// font contributes `N²` pairs).
pub fn mean_table_mae(model: &SpacingModel<f32>, data: &[FontFeatures], exec: Execution) -> Result<f64, TrainingError> {
    let per_font = par::map(exec, data, |font| {
        let pred = model.predict_table(&font.features)?;
        mae_loss(&pred, &font.gt)
    });
    let mut sum = 0.0;
    for v in per_font {
        sum += v?;
    }
    Ok(sum / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
}

pub fn extractor_for(
    kind: FeatureKind,
    image_size: usize,
    encoder: Option<&Encoder>,
) -> Result<FeatureExtractor, TrainingError> {
    match kind {
        FeatureKind::Peripheral => Ok(FeatureExtractor::Peripheral { image_size }),
        FeatureKind::Encoder => {
            let enc =
                encoder.ok_or_else(|| TrainingError::Config("encoder features need a pretrained encoder".into()))?;
            if !enc.is_frozen() {
                return Err(TrainingError::Config(
                    "encoder must be frozen before kerning training".into(),
                ));
            }
            if enc.config().image_size != image_size {
                return Err(FeatureError::ImageSize {
                    expected: enc.config().image_size,
                    found: image_size,
                }
                .into());
            }
            Ok(FeatureExtractor::Encoder(enc.clone()))
        }
    }
}

/// Trains on the corpus train split with early stopping on the validation
/// split; returns the best-validation weights.
pub fn train(cfg: &TrainConfig, corpus: &Corpus, encoder: Option<&Encoder>) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    let train_fonts = corpus.split(Split::Train);
    let val_fonts = corpus.split(Split::Val);
    if train_fonts.is_empty() {
        return Err(TrainingError::EmptySplit("train"));
    }
    if val_fonts.is_empty() {
        return Err(TrainingError::EmptySplit("val"));
    }
    let exec = cfg.execution;
    let extractor = extractor_for(cfg.features, corpus.image_size(), encoder)?;
    let train_data = prepare_fonts(&train_fonts, &extractor, exec)?;
    let val_data = prepare_fonts(&val_fonts, &extractor, exec)?;

    let model_config = cfg.model_config(extractor.dim(), corpus.n_categories());
    let mut model = SpacingModel::<f32>::init(model_config, cfg.seed)?;
    model.norm = Normalizer::fit(
        extractor.dim(),
        train_data.iter().flat_map(|f| &f.features),
        train_data.iter().flat_map(|f| f.gt.values().iter().copied()),
    );
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let lr = cfg.learning_rate();
    let start = Instant::now();

    let initial_val = mean_table_mae(&model, &val_data, exec)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: mean_table_mae(&model, &train_data, exec)?,
        val_loss: initial_val,
        elapsed_s: start.elapsed().as_secs_f64(),
    }];
    let mut stopper = EarlyStopping::new(cfg.patience);
    stopper.observe(0, initial_val);
    let mut best_params = model.params.clone();
    let mut steps = 0u64;

    for epoch in 1..=cfg.max_epochs {
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let batches = epoch_batches(cfg.model, &train_data, cfg.batch_size, &mut rng);
        let (mut loss_sum, mut weight) = (0.0, 0.0);
        for (b, batch) in batches.iter().enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let (loss, grads) = batch_gradients(&model, &train_data, batch, exec)?;
            if !loss.is_finite() {
                return Err(TrainingError::NonFiniteLoss { epoch, batch: b });
            }
            apply_update(&mut model, &grads, &mut adam, lr)?;
            steps += 1;
            loss_sum += loss * batch.len() as f64;
            weight += batch.len() as f64;
        }
        let val_loss = mean_table_mae(&model, &val_data, exec)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / weight,
            val_loss,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} ({:.1}s)",
            record.train_loss,
            record.val_loss,
            record.elapsed_s
        );
        history.push(record);
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_params = model.params.clone(),
            StopDecision::Stop => break,
            StopDecision::Continue => {}
        }
    }
    model.params = best_params;
    let checkpoint = Checkpoint {
        model,
        encoder: match extractor {
            FeatureExtractor::Encoder(e) => Some(e),
            FeatureExtractor::Peripheral { .. } => None,
        },
        feature_kind: cfg.features,
        image_size: corpus.image_size(),
        train_config: Some(cfg.clone()),
        best_val_loss: stopper.best_loss(),
        epoch: stopper.best_epoch(),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        steps,
    })
}

/// Gradient check of a model on a tiny float64 problem: four random 8×8
/// glyphs embedded by a random 8-dimensional encoder, `d_model = 8`, MAE
/// loss against random targets. Every parameter is probed.
pub fn gradcheck_tiny(kind: ModelKind, seed: u64) -> Result<GradCheckReport, TrainingError> {
    use rand::Rng;
    const N: usize = 4;
    const H: usize = 8;
    const D: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glyphs: Vec<GlyphImage> = (0..N)
        .map(|c| {
            let mut ink: Vec<bool> = (0..H * H).map(|_| rng.gen_bool(0.4)).collect();
            ink[rng.gen_range(0..H * H)] = true;
            GlyphImage::new(c, H, ink)
        })
        .collect();
    let encoder = Encoder::new(
        EncoderConfig {
            image_size: H,
            feature_dim: D,
            n_categories: N,
            channels: vec![16, 32, 64, 128],
        },
        seed,
    );
    let features = encoder.embed(&glyphs)?;
    let targets: Vec<f64> = (0..N * N).map(|_| rng.gen_range(0.0..20.0)).collect();
    let config = match kind {
        ModelKind::Pairwise => ModelConfig::Pairwise(PairwiseConfig {
            feature_dim: D,
            n_categories: N,
            hidden: vec![16, 8],
        }),
        ModelKind::Setwise => ModelConfig::Setwise(SetwiseConfig {
            feature_dim: D,
            n_categories: N,
            d_model: 8,
            heads: 2,
            ffn_hidden: 16,
            max_tokens: 4096,
        }),
    };
    let mut model = SpacingModel::<f64>::init(config, seed)?;
    model.norm = Normalizer::fit(D, &features, targets.iter().copied());
    model.predict_table(&features)?;
    let gt = Tensor::from_f64(&[N * N, 1], &targets)?;
    let report = grad_check(
        |g, p| {
            let out = model.table_node_with(g, p, &features).map_err(|e| match e {
                ModelError::Numerics(n) => n,
                other => panic!("shapes were checked by the forward pass above: {other}"),
            })?;
            let y = g.input(gt.clone())?;
            let r = g.sub(out, y)?;
            g.mean_abs(r)
        },
        &model.params,
        usize::MAX,
        seed,
    )?;
    Ok(report)
}

/// Training log as CSV: `epoch,train_loss,val_loss,elapsed_s`.
pub fn write_training_log(path: &Path, history: &[EpochRecord]) -> Result<(), TrainingError> {
    let io = |source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "epoch,train_loss,val_loss,elapsed_s").map_err(io)?;
    for r in history {
        writeln!(out, "{},{},{},{:.3}", r.epoch, r.train_loss, r.val_loss, r.elapsed_s).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[Vec<f64>]) -> KerningTable {
        KerningTable::from_rows(rows).unwrap()
    }

    #[test]
    fn mae_hand_cases() {
        let a = table(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = table(&[vec![0.0, 2.0], vec![3.0, 8.0]]);
        assert_eq!(mae_loss(&a, &b).unwrap(), 1.25);
        assert_eq!(mae_loss(&a, &a).unwrap(), 0.0);
        let shifted = KerningTable::from_fn(2, |i, j| a.get(i, j) + 3.0).unwrap();
        assert_eq!(mae_loss(&shifted, &a).unwrap(), 3.0);
        assert!(matches!(
            mae_loss(&a, &KerningTable::constant(3, 0.0)),
            Err(TrainingError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn patience_returns_first_epoch() {
        let mut s = EarlyStopping::new(3);
        assert_eq!(s.observe(0, 10.0), StopDecision::Improved);
        assert_eq!(s.observe(1, 5.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 6.0), StopDecision::Continue);
        assert_eq!(s.observe(3, 7.0), StopDecision::Continue);
        assert_eq!(s.observe(4, 8.0), StopDecision::Stop);
        assert_eq!((s.best_epoch(), s.best_loss()), (1, 5.0));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: TrainConfig = serde_json::from_str(r#"{"model":"setwise","features":"peripheral","seed":3}"#).unwrap();
        assert_eq!(c.learning_rate(), 1e-3);
        assert_eq!((c.batch_size, c.patience, c.max_epochs), (64, 100, 2000));
        let mut p = TrainConfig::new(ModelKind::Pairwise, FeatureKind::Peripheral, 0);
        assert_eq!(p.learning_rate(), 1e-4);
        p.lr = Some(0.0);
        assert!(p.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(
            r#"{"model":"setwise","features":"peripheral","seed":3,"lr_decay":1}"#
        )
        .is_err());
    }

    #[test]
    fn tiny_gradcheck_passes_for_both_models() {
        for kind in [ModelKind::Pairwise, ModelKind::Setwise] {
            let r = gradcheck_tiny(kind, 1).unwrap();
            assert!(r.max_rel_error <= 1e-5, "{kind:?}: {r:?}");
        }
    }

    #[test]
    fn zero_learning_rate_step_keeps_weights() {
        let cfg = SetwiseConfig::new(4, 3);
        let mut model = SpacingModel::<f32>::init(ModelConfig::Setwise(cfg), 2).unwrap();
        let data = vec![FontFeatures {
            features: (0..3).map(|i| vec![i as f64, 1.0, -0.5, 0.25 * i as f64]).collect(),
            gt: KerningTable::from_fn(3, |i, j| (i * 3 + j) as f64).unwrap(),
        }];
        let before = model.params.clone();
        let mut adam = AdamState::new(&model.params);
        let (_, grads) = batch_gradients(&model, &data, &Batch::Fonts(vec![0]), Execution::Sequential).unwrap();
        assert!(grads.max_abs() > 0.0);
        apply_update(&mut model, &grads, &mut adam, 0.0).unwrap();
        assert!(model.params.bit_identical(&before));
        apply_update(&mut model, &grads, &mut adam, 1e-3).unwrap();
        assert!(!model.params.bit_identical(&before));
    }

    #[test]
    fn mae_gradient_is_sign_over_count() {
        let mut params = crate::numerics::ParameterStore::<f64>::new();
        params
            .insert("p", Tensor::from_f64(&[2, 2], &[1.5, -0.5, 0.0, 2.0]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let p = g.param(&params, "p").unwrap();
        let loss = g.mean_abs(p).unwrap();
        let grads = g.backward(loss, &params).unwrap();
        assert_eq!(grads.get(0).data(), &[0.25, -0.25, 0.0, 0.25]);
    }
}
