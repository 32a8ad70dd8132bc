//! Word previews: glyphs placed at given center-of-gravity distances.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{category_index, GlyphImage, KerningTable};
use crate::features::center_of_gravity;
use crate::pgm::{self, Gray, PgmError};

/// Blank border around the inked area, in pixels.
pub const MARGIN: usize = 8;
const PAPER: u8 = 255;
const INK: u8 = 0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("{glyphs} glyphs need {} spaces, got {spaces}", glyphs.saturating_sub(1))]
    SpaceCount { glyphs: usize, spaces: usize },
    #[error("glyph {0} of the word has no ink")]
    EmptyGlyph(usize),
    #[error("no glyphs to render")]
    EmptyWord,
    #[error("space {index} is not finite")]
    NonFiniteSpace { index: usize },
    #[error("letter {letter:?} is not one of the font's {n} categories")]
    UnknownLetter { letter: String, n: usize },
    #[error("gt and estimated spaces differ in length: {gt} vs {est}")]
    ComparisonLength { gt: usize, est: usize },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

impl RenderError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, RenderError::Io { .. } | RenderError::Pgm(PgmError::Io(_)))
    }
}

/// An 8-bit grayscale canvas (ink = 0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Composite {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Canvas column of each glyph's frame column 0.
    pub placements: Vec<i64>,
}

impl Composite {
    pub fn to_gray(&self) -> Gray {
        Gray {
            width: self.width,
            height: self.height,
            pixels: self.pixels.clone(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Places glyphs so consecutive centers of gravity are `spaces` apart. Each
/// gap is rounded on its own, so every distance is within 0.5 px of the
/// request. Glyphs share a baseline; overlapping ink stays ink.
pub fn compose_word(glyphs: &[&GlyphImage], spaces: &[f64]) -> Result<Composite, RenderError> {
    if glyphs.is_empty() {
        return Err(RenderError::EmptyWord);
    }
    if spaces.len() + 1 != glyphs.len() {
        return Err(RenderError::SpaceCount {
            glyphs: glyphs.len(),
            spaces: spaces.len(),
        });
    }
    if let Some(index) = spaces.iter().position(|s| !s.is_finite()) {
        return Err(RenderError::NonFiniteSpace { index });
    }
    let cogs = glyphs
        .iter()
        .enumerate()
        .map(|(k, g)| center_of_gravity(g).map_err(|_| RenderError::EmptyGlyph(k)))
        .collect::<Result<Vec<f64>, _>>()?;

    let mut offsets = vec![0i64; glyphs.len()];
    for k in 1..glyphs.len() {
        offsets[k] = offsets[k - 1] + (spaces[k - 1] + cogs[k - 1] - cogs[k]).round() as i64;
    }
    let top = glyphs.iter().map(|g| g.baseline_row()).max().expect("non-empty");
    let rows: Vec<i64> = glyphs.iter().map(|g| (top - g.baseline_row()) as i64).collect();

    let (mut x0, mut x1, mut y0, mut y1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for (k, g) in glyphs.iter().enumerate() {
        let s = g.size();
        for y in 0..s {
            if let Some((l, r)) = g.row_extent(y) {
                x0 = x0.min(offsets[k] + l as i64);
                x1 = x1.max(offsets[k] + r as i64);
                y0 = y0.min(rows[k] + y as i64);
                y1 = y1.max(rows[k] + y as i64);
            }
        }
    }
    let m = MARGIN as i64;
    let width = (x1 - x0 + 1 + 2 * m) as usize;
    let height = (y1 - y0 + 1 + 2 * m) as usize;
    let (dx, dy) = (m - x0, m - y0);
    let mut pixels = vec![PAPER; width * height];
    for (k, g) in glyphs.iter().enumerate() {
        let s = g.size();
        for y in 0..s {
            for x in 0..s {
                if g.is_ink(x, y) {
                    let cx = (offsets[k] + x as i64 + dx) as usize;
                    let cy = (rows[k] + y as i64 + dy) as usize;
                    pixels[cy * width + cx] = INK;
                }
            }
        }
    }
    Ok(Composite {
        width,
        height,
        pixels,
        placements: offsets.iter().map(|o| o + dx).collect(),
    })
}

/// Signed error of one gap (`est − gt`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapError {
    pub gap: usize,
    pub gt: f64,
    pub est: f64,
    pub signed_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Ground-truth row stacked above the estimate row.
    pub image: Composite,
    pub gt_row: Composite,
    pub est_row: Composite,
    pub gaps: Vec<GapError>,
}

pub fn compose_comparison(
    glyphs: &[&GlyphImage],
    gt_spaces: &[f64],
    est_spaces: &[f64],
) -> Result<Comparison, RenderError> {
    if gt_spaces.len() != est_spaces.len() {
        return Err(RenderError::ComparisonLength {
            gt: gt_spaces.len(),
            est: est_spaces.len(),
        });
    }
    let gt_row = compose_word(glyphs, gt_spaces)?;
    let est_row = compose_word(glyphs, est_spaces)?;
    let width = gt_row.width.max(est_row.width);
    let height = gt_row.height + est_row.height;
    let mut pixels = vec![PAPER; width * height];
    for (row, top) in [(&gt_row, 0), (&est_row, gt_row.height)] {
        for y in 0..row.height {
            let dst = (top + y) * width;
            pixels[dst..dst + row.width].copy_from_slice(&row.pixels[y * row.width..(y + 1) * row.width]);
        }
    }
    let gaps = gt_spaces
        .iter()
        .zip(est_spaces)
        .enumerate()
        .map(|(gap, (&gt, &est))| GapError {
            gap,
            gt,
            est,
            signed_error: est - gt,
        })
        .collect();
    Ok(Comparison {
        image: Composite {
            width,
            height,
            pixels,
            placements: gt_row.placements.clone(),
        },
        gt_row,
        est_row,
        gaps,
    })
}

pub fn write_pgm(c: &Composite, path: &Path) -> Result<(), RenderError> {
    Ok(pgm::write(&c.to_gray(), path)?)
}

/// Side CSV: `gap,gt,est,signed_error`.
pub fn write_gap_csv(gaps: &[GapError], path: &Path) -> Result<(), RenderError> {
    let io = |source| RenderError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "gap,gt,est,signed_error").map_err(io)?;
    for g in gaps {
        writeln!(out, "{},{:.3},{:.3},{:.3}", g.gap, g.gt, g.est, g.signed_error).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Category indices of each letter of `word` (one label per character).
pub fn word_categories(word: &str, n: usize) -> Result<Vec<usize>, RenderError> {
    word.chars()
        .map(|c| {
            let letter = c.to_string();
            category_index(&letter, n).ok_or(RenderError::UnknownLetter { letter, n })
        })
        .collect()
}

/// Spaces between consecutive letters, read from a table.
pub fn word_spaces(table: &KerningTable, categories: &[usize]) -> Vec<f64> {
    categories.windows(2).map(|w| table.get(w[0], w[1])).collect()
}
