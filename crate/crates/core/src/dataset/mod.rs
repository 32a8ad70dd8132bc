//! Glyph rasters, kerning tables, font records, splits and the synthetic corpus.

mod io;
mod splits;
mod synth;

pub use io::{
    load_font_glyphs, load_font_record, read_table, save_font_record, write_table, Corpus, FontMeta, SPLITS_FILE,
};
pub use splits::{validate_splits, Split, SplitManifest, SplitViolation};
pub use synth::{
    font_mean_ink_width, generate_synthetic_corpus, synthesize_corpus, synthesize_font, synthetic_gt_space, ShapeKind,
    ShapeSet, SpacingContext, SynthConfig, SynthMeta, SynthMode,
};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::{Gray, PgmError};

/// Raster sizes accepted from disk.
pub const SUPPORTED_SIZES: [usize; 4] = [32, 64, 128, 256];

/// Pixel values below this are ink when the record uses the 0-is-ink convention.
pub const BINARIZE_THRESHOLD: u8 = 128;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad image {path}: {source}")]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error("missing glyph: {0}")]
    MissingGlyph(String),
    #[error("kerning table shape error: expected {expected}x{expected}, found {rows}x{cols}")]
    TableShape { expected: usize, rows: usize, cols: usize },
    #[error("kerning table contains a non-finite entry at ({row}, {col})")]
    NonFiniteTable { row: usize, col: usize },
    #[error("glyph {0} has no ink")]
    EmptyGlyph(String),
    #[error("glyph {label} is {width}x{height}; expected a square raster of a supported size")]
    GlyphSize { label: String, width: usize, height: usize },
    #[error("glyph count {glyphs} does not match table size {table}")]
    CategoryCount { glyphs: usize, table: usize },
    #[error("unknown font id {0:?}")]
    UnknownFont(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Category labels: `A…Z a…z` for 52 categories, decimal indices otherwise.
pub fn category_label(index: usize, n: usize) -> String {
    if n == 52 {
        let c = if index < 26 {
            b'A' + index as u8
        } else {
            b'a' + (index - 26) as u8
        };
        (c as char).to_string()
    } else {
        index.to_string()
    }
}

pub fn category_index(label: &str, n: usize) -> Option<usize> {
    (0..n).find(|&i| category_label(i, n) == label)
}

/// Default baseline: 96/256 of the height above the bottom edge.
pub fn baseline_row(size: usize) -> usize {
    (size as f64 * 160.0 / 256.0).round() as usize
}

/// One binary glyph raster (`true` = ink), `size × size`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphImage {
    category: usize,
    size: usize,
    ink: Vec<bool>,
    baseline_row: usize,
}

impl GlyphImage {
    pub fn new(category: usize, size: usize, ink: Vec<bool>) -> Self {
        assert_eq!(ink.len(), size * size, "raster must be size×size");
        Self {
            category,
            size,
            ink,
            baseline_row: baseline_row(size),
        }
    }

    pub fn from_fn(category: usize, size: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let ink = (0..size * size).map(|i| f(i % size, i / size)).collect();
        Self::new(category, size, ink)
    }

    /// Binarizes an 8-bit raster; `ink_value` is the pixel value that means ink (0 or 255).
    pub fn from_gray(category: usize, img: &Gray, ink_value: u8) -> Self {
        let ink = img
            .pixels
            .iter()
            .map(|&p| {
                if ink_value == 0 {
                    p < BINARIZE_THRESHOLD
                } else {
                    p >= BINARIZE_THRESHOLD
                }
            })
            .collect();
        Self::new(category, img.width, ink)
    }

    /// Ink as 0, background as 255.
    pub fn to_gray(&self) -> Gray {
        Gray {
            width: self.size,
            height: self.size,
            pixels: self.ink.iter().map(|&i| if i { 0 } else { 255 }).collect(),
        }
    }

    pub fn category(&self) -> usize {
        self.category
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn baseline_row(&self) -> usize {
        self.baseline_row
    }

    pub fn pixels(&self) -> &[bool] {
        &self.ink
    }

    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.size + x]
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&i| i).count()
    }

    pub fn has_ink(&self) -> bool {
        self.ink.iter().any(|&i| i)
    }

    /// Leftmost and rightmost ink columns of row `y`.
    pub fn row_extent(&self, y: usize) -> Option<(usize, usize)> {
        let row = &self.ink[y * self.size..(y + 1) * self.size];
        let left = row.iter().position(|&i| i)?;
        let right = row.iter().rposition(|&i| i)?;
        Some((left, right))
    }

    /// Leftmost and rightmost ink columns over the whole glyph.
    pub fn column_extent(&self) -> Option<(usize, usize)> {
        (0..self.size)
            .filter_map(|y| self.row_extent(y))
            .fold(None, |acc, (l, r)| match acc {
                None => Some((l, r)),
                Some((al, ar)) => Some((al.min(l), ar.max(r))),
            })
    }

    /// Horizontal ink extent in pixels (0 for an empty glyph).
    pub fn ink_width(&self) -> usize {
        self.column_extent().map_or(0, |(l, r)| r - l + 1)
    }

    /// Copy with all ink moved `dx` columns; `None` if ink would leave the frame.
    pub fn translated(&self, dx: isize) -> Option<GlyphImage> {
        if let Some((l, r)) = self.column_extent() {
            if (l as isize + dx) < 0 || (r as isize + dx) >= self.size as isize {
                return None;
            }
        }
        let size = self.size;
        Some(GlyphImage::from_fn(self.category, size, |x, y| {
            let sx = x as isize - dx;
            sx >= 0 && (sx as usize) < size && self.is_ink(sx as usize, y)
        }))
    }

    pub fn with_category(mut self, category: usize) -> Self {
        self.category = category;
        self
    }
}

/// `n × n` letter spaces in pixels; row = first letter, column = second.
#[derive(Clone, Debug, PartialEq)]
pub struct KerningTable {
    n: usize,
    values: Vec<f64>,
}

impl KerningTable {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self, DatasetError> {
        if values.len() != n * n {
            return Err(DatasetError::TableShape {
                expected: n,
                rows: values.len() / n.max(1),
                cols: n,
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFiniteTable {
                row: pos / n,
                col: pos % n,
            });
        }
        Ok(Self { n, values })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            n,
            values: vec![value; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, DatasetError> {
        Self::new(n, (0..n * n).map(|k| f(k / n, k % n)).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DatasetError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(DatasetError::TableShape {
                expected: n,
                rows: n,
                cols: bad.len(),
            });
        }
        Self::new(n, rows.concat())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, first: usize, second: usize) -> f64 {
        self.values[first * self.n + second]
    }

    pub fn set(&mut self, first: usize, second: usize, value: f64) {
        self.values[first * self.n + second] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Table with rows and columns reordered: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        Self {
            n,
            values: (0..n * n).map(|k| self.get(perm[k / n], perm[k % n])).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Style {
    Serif,
    #[serde(rename = "Sans-serif")]
    SansSerif,
    Handwriting,
    Display,
    Synthetic,
}

impl Style {
    pub fn label(self) -> &'static str {
        match self {
            Style::Serif => "Serif",
            Style::SansSerif => "Sans-serif",
            Style::Handwriting => "Handwriting",
            Style::Display => "Display",
            Style::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A font's glyphs (one per category, in category order) and its ground-truth spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct FontRecord {
    pub font_id: String,
    pub family_id: String,
    pub style: Option<Style>,
    pub glyphs: Vec<GlyphImage>,
    pub gt: KerningTable,
    pub synthetic: Option<SynthMeta>,
}

impl FontRecord {
    pub fn n(&self) -> usize {
        self.glyphs.len()
    }

    pub fn image_size(&self) -> usize {
        self.glyphs.first().map_or(0, GlyphImage::size)
    }

    pub fn style_label(&self) -> &'static str {
        self.style.map_or("Unknown", Style::label)
    }

    /// Checks the record invariants: one inked glyph per category in order,
    /// a common square size, and a matching finite table.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.glyphs.len();
        if self.gt.n() != n {
            return Err(DatasetError::CategoryCount {
                glyphs: n,
                table: self.gt.n(),
            });
        }
        let size = self.image_size();
        for (i, g) in self.glyphs.iter().enumerate() {
            let label = category_label(i, n);
            if g.category() != i || g.size() != size {
                return Err(DatasetError::GlyphSize {
                    label,
                    width: g.size(),
                    height: g.size(),
                });
            }
            if !g.has_ink() {
                return Err(DatasetError::EmptyGlyph(label));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_upper_then_lower_case() {
        assert_eq!(category_label(0, 52), "A");
        assert_eq!(category_label(25, 52), "Z");
        assert_eq!(category_label(26, 52), "a");
        assert_eq!(category_label(51, 52), "z");
        assert_eq!(category_label(7, 10), "7");
        assert_eq!(category_index("Z", 52), Some(25));
    }

    #[test]
    fn baseline_rows_for_supported_sizes() {
        assert_eq!(baseline_row(256), 160);
        assert_eq!(baseline_row(64), 40);
        assert_eq!(baseline_row(32), 20);
    }

    #[test]
    fn table_rejects_ragged_rows() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(
            KerningTable::from_rows(&rows),
            Err(DatasetError::TableShape { cols: 1, .. })
        ));
    }

    #[test]
    fn permuted_table_reindexes_both_axes() {
        let t = KerningTable::from_fn(3, |i, j| (10 * i + j) as f64).unwrap();
        let p = t.permuted(&[2, 0, 1]);
        assert_eq!(p.get(0, 1), t.get(2, 0));
        assert_eq!(p.get(1, 2), t.get(0, 1));
    }

    #[test]
    fn style_serializes_with_display_names() {
        assert_eq!(serde_json::to_string(&Style::SansSerif).unwrap(), "\"Sans-serif\"");
        let s: Style = serde_json::from_str("\"Handwriting\"").unwrap();
        assert_eq!(s, Style::Handwriting);
    }

    #[test]
    fn translation_moves_column_extent() {
        let g = GlyphImage::from_fn(0, 8, |x, y| x == 2 && y > 1);
        let t = g.translated(3).unwrap();
        assert_eq!(t.column_extent(), Some((5, 5)));
        assert!(g.translated(6).is_none());
    }
}
