use serde::{Deserialize, Serialize};

use super::{Init, ModelConfig, ModelError, Normalizer, ParamSpec, SpacingModel};
use crate::dataset::KerningTable;
use crate::features::FeatureVector;
use crate::numerics::{Graph, NodeId, ParameterStore, Scalar, Tensor};

fn default_hidden() -> Vec<usize> {
    vec![512, 256]
}

/// Three fully connected layers over `[f_i | f_j | onehot(i) | onehot(j)]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseConfig {
    pub feature_dim: usize,
    pub n_categories: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl PairwiseConfig {
    pub fn new(feature_dim: usize, n_categories: usize) -> Self {
        Self {
            feature_dim,
            n_categories,
            hidden: default_hidden(),
        }
    }

    pub fn input_width(&self) -> usize {
        2 * self.feature_dim + 2 * self.n_categories
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub(crate) fn parameter_shapes(&self) -> Vec<ParamSpec> {
        self.widths()
            .windows(2)
            .enumerate()
            .flat_map(|(k, w)| {
                [
                    ParamSpec::new(format!("pw.fc{k}.weight"), vec![w[0], w[1]], Init::Uniform(w[0])),
                    ParamSpec::new(format!("pw.fc{k}.bias"), vec![w[1]], Init::Uniform(w[0])),
                ]
            })
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        if self.feature_dim == 0 || self.n_categories == 0 || self.hidden.len() != 2 || self.hidden.contains(&0) {
            return Err(ModelError::Config(format!(
                "pairwise model needs positive widths and two hidden layers, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn config<T: Scalar>(model: &SpacingModel<T>) -> Result<&PairwiseConfig, ModelError> {
    match &model.config {
        ModelConfig::Pairwise(c) => Ok(c),
        ModelConfig::Setwise(_) => Err(ModelError::Config("expected a pairwise model".into())),
    }
}

/// Records predictions for the `(i, j)` pairs of one font; returns `[B, 1]` in pixels.
pub fn pairwise_batch<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    cfg: &PairwiseConfig,
    norm: &Normalizer,
    features: &[FeatureVector],
    pairs: &[(usize, usize)],
) -> Result<NodeId, ModelError> {
    let n = features.len();
    let rows: Vec<(&FeatureVector, &FeatureVector, usize, usize)> = pairs
        .iter()
        .map(|&(i, j)| match (features.get(i), features.get(j)) {
            (Some(a), Some(b)) => Ok((a, b, i, j)),
            _ => Err(ModelError::CategoryOutOfRange { category: i.max(j), n }),
        })
        .collect::<Result<_, _>>()?;
    pairwise_rows(g, params, cfg, norm, &rows)
}

/// Like [`pairwise_batch`] but each row may come from a different font.
pub fn pairwise_rows<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    params: &'p ParameterStore<T>,
    cfg: &PairwiseConfig,
    norm: &Normalizer,
    rows: &[(&FeatureVector, &FeatureVector, usize, usize)],
) -> Result<NodeId, ModelError> {
    let (d, n) = (cfg.feature_dim, cfg.n_categories);
    let width = cfg.input_width();
    let mut data = vec![0.0; rows.len() * width];
    for (r, &(fi, fj, i, j)) in rows.iter().enumerate() {
        for c in [i, j] {
            if c >= n {
                return Err(ModelError::CategoryOutOfRange { category: c, n });
            }
        }
        let row = &mut data[r * width..(r + 1) * width];
        row[..d].copy_from_slice(&norm.standardize(fi)?);
        row[d..2 * d].copy_from_slice(&norm.standardize(fj)?);
        row[2 * d + i] = 1.0;
        row[2 * d + n + j] = 1.0;
    }
    let mut x = g.input(Tensor::from_f64(&[rows.len(), width], &data)?)?;
    let layers = cfg.hidden.len() + 1;
    for k in 0..layers {
        let w = g.param(params, &format!("pw.fc{k}.weight"))?;
        let b = g.param(params, &format!("pw.fc{k}.bias"))?;
        let y = g.matmul(x, w)?;
        x = g.add(y, b)?;
        if k + 1 < layers {
            x = g.relu(x)?;
        }
    }
    norm.denormalize(g, x)
}

/// Space for glyph `i` followed by glyph `j`.
pub fn pairwise_forward<T: Scalar>(
    model: &SpacingModel<T>,
    f_i: &FeatureVector,
    f_j: &FeatureVector,
    i: usize,
    j: usize,
) -> Result<f64, ModelError> {
    let cfg = config(model)?;
    let mut g = Graph::new();
    let out = pairwise_rows(&mut g, &model.params, cfg, &model.norm, &[(f_i, f_j, i, j)])?;
    Ok(g.value(out).data()[0].as_f64())
}

/// All `N²` pairwise predictions, evaluated as one batch.
pub fn predict_table_pairwise<T: Scalar>(
    model: &SpacingModel<T>,
    features: &[FeatureVector],
) -> Result<KerningTable, ModelError> {
    config(model)?;
    model.predict_table(features)
}
