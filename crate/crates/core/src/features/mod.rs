//! Glyph geometry and per-glyph feature vectors.

mod encoder;

pub use encoder::{
    encoder_forward, pretrain_encoder, pretrain_on_samples, Encoder, EncoderConfig, PretrainConfig, PretrainReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GlyphImage;
use crate::numerics::NumericsError;

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("glyph {0} has no ink")]
    EmptyGlyph(usize),
    #[error("need at least two categories to pretrain, found {0}")]
    TooFewCategories(usize),
    #[error("encoder expects {expected}x{expected} images, got {found}x{found}")]
    ImageSize { expected: usize, found: usize },
    #[error("no glyphs to train on")]
    NoData,
    #[error("encoder is frozen")]
    Frozen,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl FeatureError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, FeatureError::Numerics(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Encoder,
    Peripheral,
}

/// Mean ink column of a row-major `width`-wide raster, `None` without ink.
pub fn ink_centroid(width: usize, pixels: &[bool]) -> Option<f64> {
    let (mut sum, mut count) = (0usize, 0usize);
    for (i, _) in pixels.iter().enumerate().filter(|(_, &p)| p) {
        sum += i % width;
        count += 1;
    }
    (count > 0).then(|| sum as f64 / count as f64)
}

pub fn center_of_gravity(g: &GlyphImage) -> Result<f64, FeatureError> {
    ink_centroid(g.size(), g.pixels()).ok_or(FeatureError::EmptyGlyph(g.category()))
}

/// Left and right edge distances per row, normalized by H; `[left; right]`.
/// Rows without ink read H on both sides.
pub fn peripheral_feature(g: &GlyphImage) -> FeatureVector {
    let h = g.size();
    let scale = 1.0 / h as f64;
    let mut out = vec![0.0; 2 * h];
    for y in 0..h {
        let (left, right) = match g.row_extent(y) {
            Some((l, r)) => (l, h - 1 - r),
            None => (h, h),
        };
        out[y] = left as f64 * scale;
        out[h + y] = right as f64 * scale;
    }
    out
}

/// Turns glyphs into model inputs.
#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    Peripheral { image_size: usize },
    Encoder(Encoder),
}

impl FeatureExtractor {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureExtractor::Peripheral { .. } => FeatureKind::Peripheral,
            FeatureExtractor::Encoder(_) => FeatureKind::Encoder,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureExtractor::Peripheral { image_size } => 2 * image_size,
            FeatureExtractor::Encoder(e) => e.config().feature_dim,
        }
    }

    pub fn extract(&self, glyphs: &[GlyphImage]) -> Result<Vec<FeatureVector>, FeatureError> {
        match self {
            FeatureExtractor::Peripheral { image_size } => glyphs
                .iter()
                .map(|g| {
                    if g.size() != *image_size {
                        return Err(FeatureError::ImageSize {
                            expected: *image_size,
                            found: g.size(),
                        });
                    }
                    Ok(peripheral_feature(g))
                })
                .collect(),
            FeatureExtractor::Encoder(e) => e.embed(glyphs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_bits(size: usize, bits: &[bool]) -> GlyphImage {
        GlyphImage::new(0, size, bits.to_vec())
    }

    #[test]
    fn single_and_paired_pixels() {
        let g = GlyphImage::from_fn(0, 32, |x, y| x == 10 && y == 3);
        assert_eq!(center_of_gravity(&g).unwrap(), 10.0);
        let g = GlyphImage::from_fn(0, 32, |x, y| (x == 10 || x == 20) && y == 3);
        assert_eq!(center_of_gravity(&g).unwrap(), 15.0);
        let empty = GlyphImage::from_fn(4, 8, |_, _| false);
        assert!(matches!(center_of_gravity(&empty), Err(FeatureError::EmptyGlyph(4))));
    }

    #[test]
    fn peripheral_edges_and_sentinel() {
        let full = GlyphImage::from_fn(0, 8, |_, _| true);
        assert!(peripheral_feature(&full).iter().all(|&v| v == 0.0));
        let g = GlyphImage::from_fn(0, 8, |x, y| y == 2 && (2..=5).contains(&x));
        let f = peripheral_feature(&g);
        assert_eq!(f[2], 2.0 / 8.0);
        assert_eq!(f[8 + 2], 2.0 / 8.0);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[8], 1.0);
    }

    proptest! {
        #[test]
        fn cog_shifts_with_translation(bits in proptest::collection::vec(any::<bool>(), 64), dx in -3isize..=3) {
            let g = from_bits(8, &bits);
            prop_assume!(g.has_ink());
            if let Some(t) = g.translated(dx) {
                let a = center_of_gravity(&g).unwrap();
                let b = center_of_gravity(&t).unwrap();
                prop_assert!((b - a - dx as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn peripheral_rows_are_independent(bits in proptest::collection::vec(any::<bool>(), 64), row in 0usize..8, fill in any::<bool>()) {
            let g = from_bits(8, &bits);
            let mut edited = bits.clone();
            edited[row * 8..row * 8 + 8].iter_mut().for_each(|p| *p = fill);
            let (a, b) = (peripheral_feature(&g), peripheral_feature(&from_bits(8, &edited)));
            for k in 0..16 {
                if k != row && k != 8 + row {
                    prop_assert_eq!(a[k], b[k]);
                }
            }
            prop_assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
