//! Small convolutional glyph encoder: four 3×3 stride-2 stages, global
//! average pooling and a linear map to the feature width. A category head
//! is attached only while pretraining.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureVector};
use crate::dataset::{FontRecord, GlyphImage};
use crate::numerics::{adam_step, AdamState, ConvGeometry, Gradients, Graph, NodeId, ParameterStore, Scalar, Tensor};
use crate::par::{self, Execution};

const EMBED_CHUNK: usize = 64;
const SUB_BATCH: usize = 16;

fn default_channels() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub feature_dim: usize,
    pub n_categories: usize,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
}

impl EncoderConfig {
    pub fn new(image_size: usize, feature_dim: usize, n_categories: usize) -> Self {
        Self {
            image_size,
            feature_dim,
            n_categories,
            channels: default_channels(),
        }
    }

    /// Parameter names and shapes, in insertion order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (k, &cout) in self.channels.iter().enumerate() {
            out.push((format!("enc.conv{k}.weight"), vec![9 * cin, cout], 9 * cin));
            out.push((format!("enc.conv{k}.bias"), vec![cout], 9 * cin));
            cin = cout;
        }
        out.push(("enc.proj.weight".into(), vec![cin, self.feature_dim], cin));
        out.push(("enc.proj.bias".into(), vec![self.feature_dim], cin));
        out.push((
            "enc.head.weight".into(),
            vec![self.feature_dim, self.n_categories],
            self.feature_dim,
        ));
        out.push(("enc.head.bias".into(), vec![self.n_categories], self.feature_dim));
        out
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParameterStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, shape, fan_in) in self.parameter_shapes() {
            store
                .insert_uniform(name, &shape, fan_in, &mut rng)
                .expect("encoder parameter names are unique");
        }
        store
    }
}

fn image_batch<T: Scalar>(images: &[&GlyphImage], size: usize) -> Result<Tensor<T>, FeatureError> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.size() != size {
            return Err(FeatureError::ImageSize {
                expected: size,
                found: img.size(),
            });
        }
        data.extend(img.pixels().iter().map(|&p| if p { T::one() } else { T::zero() }));
    }
    Ok(Tensor::new(vec![images.len(), size, size, 1], data)?)
}

/// Records the encoder on `g` and returns the `[B, D]` feature node.
pub fn encoder_forward<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    cfg: &EncoderConfig,
    images: &[&GlyphImage],
) -> Result<NodeId, FeatureError> {
    let batch = images.len();
    let mut x = g.input(image_batch(images, cfg.image_size)?)?;
    let (mut side, mut cin) = (cfg.image_size, 1);
    for (k, &cout) in cfg.channels.iter().enumerate() {
        let geom = ConvGeometry {
            batch,
            height: side,
            width: side,
            channels: cin,
            stride: 2,
            pad: 1,
        };
        let cols = g.im2col(x, geom)?;
        let w = g.param(params, &format!("enc.conv{k}.weight"))?;
        let b = g.param(params, &format!("enc.conv{k}.bias"))?;
        let y = g.matmul(cols, w)?;
        let y = g.add(y, b)?;
        x = g.relu(y)?;
        side = geom.out_height();
        cin = cout;
    }
    let pooled = g.mean_axis1(x, batch)?;
    let w = g.param(params, "enc.proj.weight")?;
    let b = g.param(params, "enc.proj.bias")?;
    let f = g.matmul(pooled, w)?;
    Ok(g.add(f, b)?)
}

fn head_logits<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    features: NodeId,
) -> Result<NodeId, FeatureError> {
    let w = g.param(params, "enc.head.weight")?;
    let b = g.param(params, "enc.head.bias")?;
    let z = g.matmul(features, w)?;
    Ok(g.add(z, b)?)
}

/// Trained encoder weights (float32) plus the frozen flag.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParameterStore<f32>,
    frozen: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let params = config.init_params(seed);
        Self {
            config,
            params,
            frozen: false,
        }
    }

    /// Rebuilds an encoder from stored parameters, checking every expected tensor.
    pub fn from_parts(config: EncoderConfig, params: ParameterStore<f32>, frozen: bool) -> Result<Self, FeatureError> {
        for (name, shape, _) in config.parameter_shapes() {
            let t = params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(crate::numerics::NumericsError::ShapeMismatch {
                    op: "encoder parameter",
                    lhs: t.shape().to_vec(),
                    rhs: shape,
                }
                .into());
            }
        }
        Ok(Self { config, params, frozen })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore<f32> {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Mutable weights; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParameterStore<f32>, FeatureError> {
        if self.frozen {
            return Err(FeatureError::Frozen);
        }
        Ok(&mut self.params)
    }

    fn run_chunks<R: Send>(
        &self,
        glyphs: &[&GlyphImage],
        read: impl Fn(&Graph<'_, f32>, NodeId, NodeId) -> Vec<R> + Sync + Send,
    ) -> Result<Vec<R>, FeatureError> {
        let chunks: Vec<&[&GlyphImage]> = glyphs.chunks(EMBED_CHUNK).collect();
        let parts = par::map(Execution::Parallel, &chunks, |chunk| {
            let mut g = Graph::new();
            let f = encoder_forward(&mut g, &self.params, &self.config, chunk)?;
            let z = head_logits(&mut g, &self.params, f)?;
            Ok::<_, FeatureError>(read(&g, f, z))
        });
        let mut out = Vec::with_capacity(glyphs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn embed(&self, glyphs: &[GlyphImage]) -> Result<Vec<FeatureVector>, FeatureError> {
        let refs: Vec<&GlyphImage> = glyphs.iter().collect();
        let d = self.config.feature_dim;
        self.run_chunks(&refs, |g, f, _| {
            g.value(f)
                .data()
                .chunks(d)
                .map(|row| row.iter().map(|v| v.as_f64()).collect())
                .collect()
        })
    }

    pub fn predict_categories(&self, glyphs: &[&GlyphImage]) -> Result<Vec<usize>, FeatureError> {
        let n = self.config.n_categories;
        self.run_chunks(glyphs, |g, _, z| g.value(z).data().chunks(n).map(argmax).collect())
    }
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

fn default_feature_dim() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_max_epochs() -> usize {
    40
}
fn default_patience() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            feature_dim: default_feature_dim(),
            lr: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            channels: default_channels(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    /// `(epoch, mean train loss, held-out accuracy)`.
    pub history: Vec<(usize, f64, f64)>,
}

fn accuracy(encoder: &Encoder, samples: &[(&GlyphImage, usize)]) -> Result<f64, FeatureError> {
    let images: Vec<&GlyphImage> = samples.iter().map(|s| s.0).collect();
    let predicted = encoder.predict_categories(&images)?;
    let hits = predicted.iter().zip(samples).filter(|(p, s)| **p == s.1).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Category-classification pretraining on explicit `(glyph, label)` samples.
/// Keeps the weights with the best held-out accuracy and returns them frozen.
pub fn pretrain_on_samples(
    train: &[(&GlyphImage, usize)],
    heldout: &[(&GlyphImage, usize)],
    n_categories: usize,
    cfg: &PretrainConfig,
) -> Result<(Encoder, PretrainReport), FeatureError> {
    let first = train.first().ok_or(FeatureError::NoData)?;
    let mut labels: Vec<usize> = train.iter().map(|s| s.1).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 || n_categories < 2 {
        return Err(FeatureError::TooFewCategories(labels.len()));
    }
    if heldout.is_empty() {
        return Err(FeatureError::NoData);
    }
    let mut config = EncoderConfig::new(first.0.size(), cfg.feature_dim, n_categories);
    config.channels = cfg.channels.clone();
    let mut encoder = Encoder::new(config, cfg.seed);
    let mut adam = AdamState::new(&encoder.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut best = (0usize, accuracy(&encoder, heldout)?, encoder.params.clone());
    let mut history = vec![(0, f64::NAN, best.1)];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (loss, grads) = batch_gradients(&encoder, train, batch)?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut encoder.params, &grads, &mut adam, cfg.lr)?;
        }
        let acc = accuracy(&encoder, heldout)?;
        history.push((epoch, loss_sum / train.len() as f64, acc));
        log::info!("pretrain epoch {epoch}: held-out accuracy {acc:.4}");
        if acc > best.1 {
            best = (epoch, acc, encoder.params.clone());
        }
        // nothing left to gain once every held-out glyph is classified correctly
        if best.1 >= 1.0 || epoch - best.0 >= cfg.patience.max(1) {
            break;
        }
    }
    let (best_epoch, best_accuracy, params) = best;
    encoder.params = params;
    encoder.freeze();
    Ok((
        encoder,
        PretrainReport {
            epochs_run,
            best_epoch,
            best_accuracy,
            history,
        },
    ))
}

/// Mean cross-entropy over `batch` and its gradient, split into sub-batches
/// that run in parallel and are reduced in a fixed order.
fn batch_gradients(
    encoder: &Encoder,
    samples: &[(&GlyphImage, usize)],
    batch: &[usize],
) -> Result<(f64, Gradients<f32>), FeatureError> {
    let chunks: Vec<&[usize]> = batch.chunks(SUB_BATCH).collect();
    let total = batch.len() as f64;
    let parts = par::map(Execution::Parallel, &chunks, |chunk| {
        let images: Vec<&GlyphImage> = chunk.iter().map(|&i| samples[i].0).collect();
        let targets: Vec<usize> = chunk.iter().map(|&i| samples[i].1).collect();
        let mut g = Graph::new();
        let f = encoder_forward(&mut g, &encoder.params, &encoder.config, &images)?;
        let z = head_logits(&mut g, &encoder.params, f)?;
        let ce = g.cross_entropy(z, &targets)?;
        let loss = g.scale(ce, chunk.len() as f64 / total)?;
        let grads = g.backward(loss, &encoder.params)?;
        Ok::<_, FeatureError>((g.value(loss).item().as_f64(), grads))
    });
    let mut acc = Gradients::zeros_like(&encoder.params);
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        acc.accumulate(&g);
    }
    Ok((loss, acc))
}

/// Pretrains on every glyph of `train`, early-stopping on `heldout` fonts.
/// Without held-out fonts the last tenth of the training fonts is held out.
pub fn pretrain_encoder(
    train: &[&FontRecord],
    heldout: &[&FontRecord],
    cfg: &PretrainConfig,
) -> Result<(Encoder, PretrainReport), FeatureError> {
    let (fit, held): (&[&FontRecord], &[&FontRecord]) = if heldout.is_empty() && train.len() > 1 {
        let cut = train.len() - train.len().div_ceil(10);
        (&train[..cut], &train[cut..])
    } else if heldout.is_empty() {
        (train, train)
    } else {
        (train, heldout)
    };
    fn samples<'a>(fonts: &[&'a FontRecord]) -> Vec<(&'a GlyphImage, usize)> {
        fonts
            .iter()
            .flat_map(|r| r.glyphs.iter().map(|g| (g, g.category())))
            .collect()
    }
    let n = train.first().map_or(0, |r| r.n());
    pretrain_on_samples(&samples(fit), &samples(held), n, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            image_size: 8,
            feature_dim: 4,
            n_categories: 3,
            channels: vec![2, 3, 3, 2],
        }
    }

    fn blob(cat: usize, size: usize) -> GlyphImage {
        GlyphImage::from_fn(cat, size, move |x, y| (x * 7 + y * 3 + cat * 5).is_multiple_of(4))
    }

    #[test]
    fn zero_projection_outputs_bias() {
        let cfg = tiny();
        let mut params = cfg.init_params::<f32>(1);
        params.get_mut("enc.proj.weight").unwrap().data_mut().fill(0.0);
        params
            .get_mut("enc.proj.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.5, -1.0, 2.0, 0.25]);
        let enc = Encoder::from_parts(cfg, params, true).unwrap();
        for f in enc.embed(&[blob(0, 8), blob(2, 8)]).unwrap() {
            assert_eq!(f, vec![0.5, -1.0, 2.0, 0.25]);
        }
    }

    #[test]
    fn embedding_is_deterministic_and_sized() {
        let enc = Encoder::new(tiny(), 3);
        let a = enc.embed(&[blob(1, 8)]).unwrap();
        let b = enc.embed(&[blob(1, 8)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 4);
        assert!(matches!(enc.embed(&[blob(1, 16)]), Err(FeatureError::ImageSize { .. })));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let cfg = tiny();
        let params = cfg.init_params::<f64>(9);
        let images = [blob(0, 8), blob(1, 8)];
        let refs: Vec<&GlyphImage> = images.iter().collect();
        let probe = Tensor::from_f64(&[2, 4], &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.5, -1.3]).unwrap();
        let report = grad_check(
            |g, p| {
                let f = encoder_forward(g, p, &cfg, &refs).map_err(|e| match e {
                    FeatureError::Numerics(n) => n,
                    other => panic!("{other}"),
                })?;
                let w = g.input(probe.clone())?;
                let s = g.mul(f, w)?;
                g.sum(s)
            },
            &params,
            200,
            4,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
    }

    #[test]
    fn frozen_encoder_refuses_mutation() {
        let mut enc = Encoder::new(tiny(), 0);
        assert!(enc.params_mut().is_ok());
        enc.freeze();
        assert!(matches!(enc.params_mut(), Err(FeatureError::Frozen)));
    }

    #[test]
    fn single_category_cannot_pretrain() {
        let g = blob(0, 8);
        let samples = vec![(&g, 0usize); 4];
        let err = pretrain_on_samples(&samples, &samples, 1, &PretrainConfig::new(0)).unwrap_err();
        assert!(matches!(err, FeatureError::TooFewCategories(1)));
    }
}
