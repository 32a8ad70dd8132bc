//! Spacing models: the pairwise conditional regressor and the set-wise
//! transformer over all ordered glyph pairs of a font.
//!
//! Both models see standardized features and predict in standardized target
//! units; a fixed affine map brings outputs back to pixels. The statistics
//! live in a [`Normalizer`] that is fitted once on training data and then
//! stored next to the weights, never trained.

mod pairwise;
mod setwise;

pub use pairwise::{pairwise_batch, pairwise_forward, pairwise_rows, predict_table_pairwise, PairwiseConfig};
pub use setwise::{build_pair_tokens, pair_tokens, setwise_forward, setwise_table_node, SetwiseConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::KerningTable;
use crate::features::FeatureVector;
use crate::numerics::{Graph, NodeId, NumericsError, ParameterStore, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature length {found} does not match model width {expected}")]
    FeatureLength { expected: usize, found: usize },
    #[error("category {category} out of range for {n} categories")]
    CategoryOutOfRange { category: usize, n: usize },
    #[error("{tokens} pair tokens exceed the token budget of {limit}")]
    Capacity { tokens: usize, limit: usize },
    #[error("set-wise model needs at least 2 glyphs, got {0}")]
    TooFewGlyphs(usize),
    #[error("model expects {expected} categories, font has {found}")]
    CategoryCount { expected: usize, found: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl ModelError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, ModelError::Numerics(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pairwise,
    Setwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Pairwise(PairwiseConfig),
    Setwise(SetwiseConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Pairwise(_) => ModelKind::Pairwise,
            ModelConfig::Setwise(_) => ModelKind::Setwise,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ModelConfig::Pairwise(c) => c.feature_dim,
            ModelConfig::Setwise(c) => c.feature_dim,
        }
    }

    pub fn n_categories(&self) -> usize {
        match self {
            ModelConfig::Pairwise(c) => c.n_categories,
            ModelConfig::Setwise(c) => c.n_categories,
        }
    }

    pub fn parameter_shapes(&self) -> Vec<ParamSpec> {
        match self {
            ModelConfig::Pairwise(c) => c.parameter_shapes(),
            ModelConfig::Setwise(c) => c.parameter_shapes(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelConfig::Pairwise(c) => c.validate(),
            ModelConfig::Setwise(c) => c.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform(usize),
    Constant(f64),
}

/// Name, shape and initialization of one trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: String, shape: Vec<usize>, init: Init) -> Self {
        Self { name, shape, init }
    }
}

/// Fixed input standardization and output scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_shift: f64,
    pub target_scale: f64,
}

const STD_FLOOR: f64 = 1e-6;

fn floor_std(s: f64) -> f64 {
    if s < STD_FLOOR {
        1.0
    } else {
        s
    }
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            target_shift: 0.0,
            target_scale: 1.0,
        }
    }

    /// Per-dimension mean/std of `features` and mean/std of `targets`.
    pub fn fit<'a>(
        dim: usize,
        features: impl IntoIterator<Item = &'a FeatureVector>,
        targets: impl IntoIterator<Item = f64>,
    ) -> Self {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0.0;
        for f in features {
            for ((s, q), &v) in sum.iter_mut().zip(&mut sq).zip(f) {
                *s += v;
                *q += v * v;
            }
            count += 1.0;
        }
        let (mut tsum, mut tsq, mut tcount) = (0.0, 0.0, 0.0);
        for t in targets {
            tsum += t;
            tsq += t * t;
            tcount += 1.0;
        }
        let mut out = Self::identity(dim);
        if count > 0.0 {
            for k in 0..dim {
                let mean = sum[k] / count;
                out.feature_mean[k] = mean;
                out.feature_std[k] = floor_std((sq[k] / count - mean * mean).max(0.0).sqrt());
            }
        }
        if tcount > 0.0 {
            let mean = tsum / tcount;
            out.target_shift = mean;
            out.target_scale = floor_std((tsq / tcount - mean * mean).max(0.0).sqrt());
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn standardize(&self, f: &[f64]) -> Result<Vec<f64>, ModelError> {
        if f.len() != self.dim() {
            return Err(ModelError::FeatureLength {
                expected: self.dim(),
                found: f.len(),
            });
        }
        Ok(f.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    /// `[rows, D]` tensor of standardized feature vectors.
    pub(crate) fn feature_matrix<T: Scalar>(&self, features: &[&FeatureVector]) -> Result<Tensor<T>, ModelError> {
        let mut data = Vec::with_capacity(features.len() * self.dim());
        for f in features {
            data.extend(self.standardize(f)?);
        }
        Ok(Tensor::from_f64(&[features.len(), self.dim()], &data)?)
    }

    /// Maps raw model outputs to pixels inside the graph.
    pub(crate) fn denormalize<'p, T: Scalar>(&self, g: &mut Graph<'p, T>, raw: NodeId) -> Result<NodeId, ModelError> {
        let scaled = g.scale(raw, self.target_scale)?;
        let shift = g.input(Tensor::scalar(T::of(self.target_shift)))?;
        Ok(g.add(scaled, shift)?)
    }
}

/// Weights, configuration and normalization of one spacing model.
#[derive(Clone, Debug)]
pub struct SpacingModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
    pub norm: Normalizer,
}

impl<T: Scalar> SpacingModel<T> {
    /// Uniform `±1/√fan_in` initialization drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        for spec in config.parameter_shapes() {
            match spec.init {
                Init::Uniform(fan_in) => params.insert_uniform(spec.name, &spec.shape, fan_in, &mut rng)?,
                Init::Constant(v) => params.insert(spec.name, Tensor::full(&spec.shape, T::of(v)))?,
            };
        }
        let norm = Normalizer::identity(config.feature_dim());
        Ok(Self { config, params, norm })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore<T>, norm: Normalizer) -> Result<Self, ModelError> {
        config.validate()?;
        for spec in config.parameter_shapes() {
            let t = params.require(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(NumericsError::ShapeMismatch {
                    op: "model parameter",
                    lhs: t.shape().to_vec(),
                    rhs: spec.shape,
                }
                .into());
            }
        }
        if norm.dim() != config.feature_dim() {
            return Err(ModelError::FeatureLength {
                expected: config.feature_dim(),
                found: norm.dim(),
            });
        }
        Ok(Self { config, params, norm })
    }

    pub fn cast<U: Scalar>(&self) -> SpacingModel<U> {
        SpacingModel {
            config: self.config.clone(),
            params: self.params.cast(),
            norm: self.norm.clone(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    /// Records the full-table prediction with weights taken from `params`
    /// (same names and shapes as `self.params`); returns `[N², 1]` in pixels.
    pub fn table_node_with<'p>(
        &self,
        g: &mut Graph<'p, T>,
        params: &'p ParameterStore<T>,
        features: &[FeatureVector],
    ) -> Result<NodeId, ModelError> {
        match &self.config {
            ModelConfig::Pairwise(c) => {
                let n = features.len();
                if n != c.n_categories {
                    return Err(ModelError::CategoryCount {
                        expected: c.n_categories,
                        found: n,
                    });
                }
                let pairs: Vec<(usize, usize)> = (0..n * n).map(|k| (k / n, k % n)).collect();
                pairwise_batch(g, params, c, &self.norm, features, &pairs)
            }
            ModelConfig::Setwise(c) => setwise_table_node(g, params, c, &self.norm, features),
        }
    }

    pub fn table_node<'p>(&'p self, g: &mut Graph<'p, T>, features: &[FeatureVector]) -> Result<NodeId, ModelError> {
        self.table_node_with(g, &self.params, features)
    }

    /// Predicted `N × N` table in pixels.
    pub fn predict_table(&self, features: &[FeatureVector]) -> Result<KerningTable, ModelError> {
        let mut g = Graph::new();
        let out = self.table_node(&mut g, features)?;
        let values = g.value(out).to_f64_vec();
        KerningTable::new(features.len(), values).map_err(|e| ModelError::Config(e.to_string()))
    }
}
