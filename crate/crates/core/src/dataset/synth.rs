//! Synthetic fonts built from parametric stroke shapes, with spacing given by
//! a closed-form gap rule so that ground truth is known exactly.
//!
//! Randomness comes from ChaCha8 seeded with the corpus seed; every font and
//! every family draws from its own stream, so fonts can be generated in any
//! order (or in parallel) and still come out byte-identical.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::write_json;
use super::splits::{Split, SplitManifest};
use super::{
    baseline_row, save_font_record, DatasetError, FontRecord, GlyphImage, KerningTable, Style, SPLITS_FILE,
    SUPPORTED_SIZES,
};
use crate::features::ink_centroid;
use crate::par::{self, Execution};

pub const STROKE_RANGE: (f64, f64) = (4.0, 16.0);
pub const SLANT_RANGE: (f64, f64) = (-0.2, 0.2);
const WIDTH_SCALE_RANGE: (f64, f64) = (0.85, 1.15);
const GLYPH_JITTER_RANGE: (f64, f64) = (0.9, 1.1);
const MAX_SHIFT: i32 = 3;
const FONTS_PER_FAMILY: usize = 2;
const FAMILY_STREAM_BASE: u64 = 1 << 32;
/// Cap heights (fraction of H) cycled once per pass through the shape list.
const HEIGHTS: [f64; 8] = [0.50, 0.34, 0.58, 0.42, 0.54, 0.38, 0.46, 0.30];
const MODE_B_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthMode {
    /// Constant ink gap tied to stroke width.
    #[default]
    A,
    /// Mode A plus a term that depends on every glyph of the font.
    B,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSet {
    #[default]
    Standard,
    /// Every category is a vertical bar of the same height; widths vary by category.
    Bars,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Bar,
    Rectangle,
    LeftWedge,
    RightWedge,
    Ring,
    Tee,
    Ell,
}

impl ShapeKind {
    pub const CYCLE: [ShapeKind; 7] = [
        ShapeKind::Bar,
        ShapeKind::Rectangle,
        ShapeKind::LeftWedge,
        ShapeKind::RightWedge,
        ShapeKind::Ring,
        ShapeKind::Tee,
        ShapeKind::Ell,
    ];

    /// Nominal width as a fraction of H; bars use the stroke width instead.
    fn width_fraction(self) -> f64 {
        match self {
            ShapeKind::Bar => 0.0,
            ShapeKind::Rectangle => 0.42,
            ShapeKind::LeftWedge | ShapeKind::RightWedge => 0.36,
            ShapeKind::Ring | ShapeKind::Tee => 0.46,
            ShapeKind::Ell => 0.34,
        }
    }

    /// Ink test in glyph-local coordinates: `u` across `[0, width)`, `v` up from the baseline over `[0, height)`.
    fn contains(self, u: f64, v: f64, width: f64, height: f64, stroke: f64) -> bool {
        let half = stroke / 2.0;
        match self {
            ShapeKind::Bar => true,
            ShapeKind::Rectangle => u < stroke || u >= width - stroke || v < stroke || v >= height - stroke,
            ShapeKind::LeftWedge => {
                let c = half + (width - stroke) * (2.0 * v / height - 1.0).abs();
                (u - c).abs() <= half
            }
            ShapeKind::RightWedge => {
                let c = half + (width - stroke) * (1.0 - (2.0 * v / height - 1.0).abs());
                (u - c).abs() <= half
            }
            ShapeKind::Ring => {
                let (a, b) = (width / 2.0, height / 2.0);
                let (du, dv) = (u - a, v - b);
                let outer = (du / a).powi(2) + (dv / b).powi(2) <= 1.0;
                let (ia, ib) = (a - stroke, b - stroke);
                let inner = ia > 0.0 && ib > 0.0 && (du / ia).powi(2) + (dv / ib).powi(2) < 1.0;
                outer && !inner
            }
            ShapeKind::Tee => v >= height - stroke || (u - width / 2.0).abs() < half,
            ShapeKind::Ell => u < stroke || v < stroke,
        }
    }
}

fn default_categories() -> usize {
    10
}
fn default_image_size() -> usize {
    64
}
fn default_train() -> usize {
    200
}
fn default_holdout() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_categories")]
    pub n_categories: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_train")]
    pub train_fonts: usize,
    #[serde(default = "default_holdout")]
    pub val_fonts: usize,
    #[serde(default = "default_holdout")]
    pub test_fonts: usize,
    #[serde(default)]
    pub mode: SynthMode,
    #[serde(default)]
    pub shapes: ShapeSet,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            n_categories: default_categories(),
            image_size: default_image_size(),
            train_fonts: default_train(),
            val_fonts: default_holdout(),
            test_fonts: default_holdout(),
            mode: SynthMode::A,
            shapes: ShapeSet::Standard,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_categories < 2 {
            return Err(DatasetError::Config(format!(
                "n_categories must be at least 2, got {}",
                self.n_categories
            )));
        }
        if !SUPPORTED_SIZES.contains(&self.image_size) {
            return Err(DatasetError::Config(format!(
                "image_size must be one of {SUPPORTED_SIZES:?}, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    fn split_sizes(&self) -> [(Split, usize); 3] {
        [
            (Split::Train, self.train_fonts),
            (Split::Val, self.val_fonts),
            (Split::Test, self.test_fonts),
        ]
    }
}

/// Generator parameters stored alongside each synthetic font.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthMeta {
    pub stroke_width: f64,
    pub slant: f64,
    pub width_scale: f64,
    pub mode: SynthMode,
    pub shapes: ShapeSet,
}

/// Font-level inputs to the spacing rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpacingContext {
    /// Minimum horizontal ink gap over shared rows, in pixels.
    pub gap: f64,
    /// Added to every space (zero in mode A).
    pub offset: f64,
}

impl SpacingContext {
    pub fn mode_a(stroke_width: f64) -> Self {
        Self {
            gap: 0.5 * stroke_width + 4.0,
            offset: 0.0,
        }
    }

    pub fn for_font(glyphs: &[GlyphImage], stroke_width: f64, mode: SynthMode) -> Self {
        let mut ctx = Self::mode_a(stroke_width);
        if mode == SynthMode::B {
            let size = glyphs.first().map_or(0, GlyphImage::size) as f64;
            ctx.offset = MODE_B_WEIGHT * (font_mean_ink_width(glyphs) - size / 4.0);
        }
        ctx
    }
}

/// Mean over glyphs of the horizontal ink extent.
pub fn font_mean_ink_width(glyphs: &[GlyphImage]) -> f64 {
    glyphs.iter().map(|g| g.ink_width() as f64).sum::<f64>() / glyphs.len() as f64
}

/// Ground-truth space (COG distance) for `gi` followed by `gj`.
pub fn synthetic_gt_space(gi: &GlyphImage, gj: &GlyphImage, ctx: &SpacingContext) -> Result<f64, DatasetError> {
    let label = |g: &GlyphImage| g.category().to_string();
    let cog_i = ink_centroid(gi.size(), gi.pixels()).ok_or_else(|| DatasetError::EmptyGlyph(label(gi)))?;
    let cog_j = ink_centroid(gj.size(), gj.pixels()).ok_or_else(|| DatasetError::EmptyGlyph(label(gj)))?;
    if gi.size() != gj.size() {
        return Err(DatasetError::Config(format!(
            "glyph sizes differ: {} vs {}",
            gi.size(),
            gj.size()
        )));
    }
    let shared = (0..gi.size())
        .filter_map(|y| Some((gi.row_extent(y)?.1, gj.row_extent(y)?.0)))
        .map(|(r, l)| r as f64 - l as f64)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    let reach = match shared {
        Some(d) => d,
        None => {
            // both glyphs have ink, so the unwraps cannot fail
            let (_, r) = gi.column_extent().unwrap();
            let (l, _) = gj.column_extent().unwrap();
            r as f64 - l as f64
        }
    };
    Ok(ctx.gap + reach + cog_j - cog_i + ctx.offset)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct GlyphParams {
    shape: ShapeKind,
    width: f64,
    height: f64,
    shift: i32,
}

fn draw_glyph(category: usize, size: usize, stroke: f64, slant: f64, p: &GlyphParams) -> GlyphImage {
    let base = baseline_row(size) as f64;
    let skew = slant.abs() * p.height;
    let max_extent = size as f64 - 8.0;
    let width = p.width.min(max_extent - skew).max(1.0);
    let left = (size as f64 - (width + skew)) / 2.0 + if slant < 0.0 { skew } else { 0.0 } + p.shift as f64;
    GlyphImage::from_fn(category, size, |x, y| {
        let v = base - 1.0 - y as f64 + 0.5;
        if v < 0.0 || v >= p.height {
            return false;
        }
        let u = x as f64 + 0.5 - left - slant * v;
        u >= 0.0 && u < width && p.shape.contains(u, v, width, p.height, stroke)
    })
}

/// Builds font `index` of family `family` deterministically from the corpus seed.
pub fn synthesize_font(cfg: &SynthConfig, index: usize, family: usize) -> Result<FontRecord, DatasetError> {
    let size = cfg.image_size;
    let h = size as f64;
    let mut family_rng = stream_rng(cfg.seed, FAMILY_STREAM_BASE + family as u64);
    let slant = uniform(&mut family_rng, SLANT_RANGE);
    let width_scale = uniform(&mut family_rng, WIDTH_SCALE_RANGE);
    let mut rng = stream_rng(cfg.seed, index as u64);
    let stroke = uniform(&mut rng, STROKE_RANGE);

    let glyphs: Vec<GlyphImage> = (0..cfg.n_categories)
        .map(|c| {
            let jitter = uniform(&mut rng, GLYPH_JITTER_RANGE);
            let shift = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
            let params = match cfg.shapes {
                ShapeSet::Standard => {
                    let shape = ShapeKind::CYCLE[c % ShapeKind::CYCLE.len()];
                    let height = (HEIGHTS[(c / ShapeKind::CYCLE.len()) % HEIGHTS.len()] * h).round();
                    let width = match shape {
                        ShapeKind::Bar => stroke * jitter,
                        s => (s.width_fraction() * h * width_scale * jitter).max(stroke + 2.0),
                    };
                    GlyphParams {
                        shape,
                        width,
                        height,
                        shift,
                    }
                }
                ShapeSet::Bars => GlyphParams {
                    shape: ShapeKind::Bar,
                    width: stroke * (1.0 + 0.5 * (c % 3) as f64) * jitter,
                    height: (HEIGHTS[0] * h).round(),
                    shift,
                },
            };
            draw_glyph(c, size, stroke, slant, &params)
        })
        .collect();

    let ctx = SpacingContext::for_font(&glyphs, stroke, cfg.mode);
    let n = glyphs.len();
    let mut values = Vec::with_capacity(n * n);
    for gi in &glyphs {
        for gj in &glyphs {
            values.push(synthetic_gt_space(gi, gj, &ctx)?);
        }
    }
    Ok(FontRecord {
        font_id: format!("synth-{index:04}"),
        family_id: format!("family-{family:04}"),
        style: Some(Style::Synthetic),
        glyphs,
        gt: KerningTable::new(n, values)?,
        synthetic: Some(SynthMeta {
            stroke_width: stroke,
            slant,
            width_scale,
            mode: cfg.mode,
            shapes: cfg.shapes,
        }),
    })
}

/// In-memory corpus: the manifest and every record in manifest order.
/// Families never straddle splits; each holds two consecutive fonts of one split.
pub fn synthesize_corpus(cfg: &SynthConfig, exec: Execution) -> Result<(SplitManifest, Vec<FontRecord>), DatasetError> {
    cfg.validate()?;
    let mut plan = Vec::new();
    let mut family = 0;
    for (split, count) in cfg.split_sizes() {
        for k in 0..count {
            plan.push((split, plan.len(), family));
            if k % FONTS_PER_FAMILY == FONTS_PER_FAMILY - 1 || k + 1 == count {
                family += 1;
            }
        }
    }
    let records = par::map(exec, &plan, |&(_, index, family)| synthesize_font(cfg, index, family))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut manifest = SplitManifest::default();
    for ((split, _, _), record) in plan.iter().zip(&records) {
        manifest.ids_mut(*split).push(record.font_id.clone());
    }
    Ok((manifest, records))
}

/// Writes `splits.json`, `synth.json` and `fonts/<id>/` under `out`.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, out: &Path) -> Result<SplitManifest, DatasetError> {
    let (manifest, records) = synthesize_corpus(cfg, Execution::Parallel)?;
    fs::create_dir_all(out).map_err(|source| DatasetError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    par::map(Execution::Parallel, &records, |r| {
        save_font_record(r, &super::Corpus::font_dir(out, &r.font_id))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    write_json(&out.join(SPLITS_FILE), &manifest)?;
    write_json(&out.join("synth.json"), cfg)?;
    Ok(manifest)
}
