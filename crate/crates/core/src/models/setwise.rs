use serde::{Deserialize, Serialize};

use super::{Init, ModelConfig, ModelError, Normalizer, ParamSpec, SpacingModel};
use crate::dataset::KerningTable;
use crate::features::FeatureVector;
use crate::numerics::{Graph, NodeId, ParameterStore, Scalar};

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

/// Pair projection, one post-norm transformer layer and a norm-then-linear head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetwiseConfig {
    pub feature_dim: usize,
    pub n_categories: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_ffn")]
    pub ffn_hidden: usize,
    /// Largest N² accepted before refusing with a capacity error.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

impl SetwiseConfig {
    pub fn new(feature_dim: usize, n_categories: usize) -> Self {
        Self {
            feature_dim,
            n_categories,
            d_model: default_d_model(),
            heads: default_heads(),
            ffn_hidden: default_ffn(),
            max_tokens: default_max_tokens(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub(crate) fn parameter_shapes(&self) -> Vec<ParamSpec> {
        let (d, f) = (self.d_model, self.ffn_hidden);
        let mut out = Vec::new();
        let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
            out.push(ParamSpec::new(
                format!("{name}.weight"),
                vec![fan_in, fan_out],
                Init::Uniform(fan_in),
            ));
            out.push(ParamSpec::new(
                format!("{name}.bias"),
                vec![fan_out],
                Init::Uniform(fan_in),
            ));
        };
        linear("sw.proj", 2 * self.feature_dim, d);
        for p in ["q", "k", "v", "o"] {
            linear(&format!("sw.attn.{p}"), d, d);
        }
        linear("sw.ffn0", d, f);
        linear("sw.ffn1", f, d);
        linear("sw.out", d, 1);
        for ln in ["sw.ln1", "sw.ln2", "sw.out_ln"] {
            out.push(ParamSpec::new(format!("{ln}.gain"), vec![d], Init::Constant(1.0)));
            out.push(ParamSpec::new(format!("{ln}.bias"), vec![d], Init::Constant(0.0)));
        }
        out
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        if self.feature_dim == 0 || self.heads == 0 || self.d_model < 2 || !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "set-wise model needs d_model ≥ 2 divisible by the head count, got {self:?}"
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(ModelError::Config("ffn_hidden must be positive".into()));
        }
        Ok(())
    }
}

fn linear<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    name: &str,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let w = g.param(params, &format!("{name}.weight"))?;
    let b = g.param(params, &format!("{name}.bias"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

fn norm_layer<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    name: &str,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let gain = g.param(params, &format!("{name}.gain"))?;
    let bias = g.param(params, &format!("{name}.bias"))?;
    Ok(g.layer_norm(x, gain, bias)?)
}

/// Pair tokens `[N², d]` in row-major pair order. The projection of
/// `[f_i | f_j]` is split into its two halves so each glyph is projected once.
pub fn build_pair_tokens<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    cfg: &SetwiseConfig,
    norm: &Normalizer,
    features: &[FeatureVector],
) -> Result<NodeId, ModelError> {
    let n = features.len();
    if n < 2 {
        return Err(ModelError::TooFewGlyphs(n));
    }
    if n * n > cfg.max_tokens {
        return Err(ModelError::Capacity {
            tokens: n * n,
            limit: cfg.max_tokens,
        });
    }
    let refs: Vec<&FeatureVector> = features.iter().collect();
    let f = g.input(norm.feature_matrix(&refs)?)?;
    let w = g.param(params, "sw.proj.weight")?;
    let w_first = g.slice_rows(w, 0, cfg.feature_dim)?;
    let w_second = g.slice_rows(w, cfg.feature_dim, cfg.feature_dim)?;
    let a = g.matmul(f, w_first)?;
    let b = g.matmul(f, w_second)?;
    let pairs = g.pair_sum(a, b)?;
    let bias = g.param(params, "sw.proj.bias")?;
    Ok(g.add(pairs, bias)?)
}

/// Full set-wise forward; returns `[N², 1]` in pixels.
pub fn setwise_table_node<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    cfg: &SetwiseConfig,
    norm: &Normalizer,
    features: &[FeatureVector],
) -> Result<NodeId, ModelError> {
    let x = build_pair_tokens(g, params, cfg, norm, features)?;
    let q = linear(g, params, "sw.attn.q", x)?;
    let k = linear(g, params, "sw.attn.k", x)?;
    let v = linear(g, params, "sw.attn.v", x)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = g.softmax(scores)?;
        heads.push(g.matmul(weights, vh)?);
    }
    let attended = g.concat(&heads)?;
    let attended = linear(g, params, "sw.attn.o", attended)?;
    let x = g.add(x, attended)?;
    let x = norm_layer(g, params, "sw.ln1", x)?;
    let hidden = linear(g, params, "sw.ffn0", x)?;
    let hidden = g.relu(hidden)?;
    let ff = linear(g, params, "sw.ffn1", hidden)?;
    let x = g.add(x, ff)?;
    let x = norm_layer(g, params, "sw.ln2", x)?;
    let x = norm_layer(g, params, "sw.out_ln", x)?;
    let raw = linear(g, params, "sw.out", x)?;
    norm.denormalize(g, raw)
}

fn config<T: Scalar>(model: &SpacingModel<T>) -> Result<&SetwiseConfig, ModelError> {
    match &model.config {
        ModelConfig::Setwise(c) => Ok(c),
        ModelConfig::Pairwise(_) => Err(ModelError::Config("expected a set-wise model".into())),
    }
}

/// Token embeddings as plain rows, for inspection.
pub fn pair_tokens<T: Scalar>(
    model: &SpacingModel<T>,
    features: &[FeatureVector],
) -> Result<Vec<Vec<f64>>, ModelError> {
    let cfg = config(model)?;
    let mut g = Graph::new();
    let t = build_pair_tokens(&mut g, &model.params, cfg, &model.norm, features)?;
    Ok(g.value(t)
        .to_f64_vec()
        .chunks(cfg.d_model)
        .map(<[f64]>::to_vec)
        .collect())
}

/// All `N²` spaces of one font in a single pass.
pub fn setwise_forward<T: Scalar>(
    model: &SpacingModel<T>,
    features: &[FeatureVector],
) -> Result<KerningTable, ModelError> {
    config(model)?;
    model.predict_table(features)
}
