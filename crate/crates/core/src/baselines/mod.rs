//! Statistical baselines (one constant, per-pair mean) and an optical
//! heuristic that places glyphs so the blank area between them matches a
//! calibrated target.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FontRecord, GlyphImage, KerningTable};
use crate::features::ink_centroid;
use crate::par::{self, Execution};

/// Bisection stops once the bracket is this narrow (pixels).
pub const OPTICAL_RESOLUTION: f64 = 0.25;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no training fonts")]
    EmptyTraining,
    #[error("fonts disagree on category count: {expected} vs {found}")]
    MixedCategories { expected: usize, found: usize },
    #[error("glyph {0} has no ink")]
    EmptyGlyph(usize),
    #[error("invalid optical calibration: {0}")]
    Calibration(String),
    #[error("baseline artifact i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid baseline artifact: {0}")]
    Json(#[from] serde_json::Error),
}

impl BaselineError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, BaselineError::Io { .. })
    }
}

fn require_fonts(train: &[&FontRecord]) -> Result<usize, BaselineError> {
    let n = train.first().ok_or(BaselineError::EmptyTraining)?.n();
    if let Some(r) = train.iter().find(|r| r.gt.n() != n) {
        return Err(BaselineError::MixedCategories {
            expected: n,
            found: r.gt.n(),
        });
    }
    Ok(n)
}

/// Mean over every entry of every training table.
pub fn fit_monospace(train: &[&FontRecord]) -> Result<f64, BaselineError> {
    train.first().ok_or(BaselineError::EmptyTraining)?;
    let (sum, count) = train.iter().fold((0.0, 0usize), |(s, c), r| {
        (s + r.gt.values().iter().sum::<f64>(), c + r.gt.values().len())
    });
    Ok(sum / count as f64)
}

/// Elementwise mean of the training tables.
pub fn fit_average(train: &[&FontRecord]) -> Result<KerningTable, BaselineError> {
    let n = require_fonts(train)?;
    let mut acc = vec![0.0; n * n];
    for r in train {
        for (a, v) in acc.iter_mut().zip(r.gt.values()) {
            *a += v;
        }
    }
    let count = train.len() as f64;
    Ok(KerningTable::new(n, acc.into_iter().map(|v| v / count).collect()).expect("finite mean of finite tables"))
}

fn centroid(g: &GlyphImage) -> Result<f64, BaselineError> {
    ink_centroid(g.size(), g.pixels()).ok_or(BaselineError::EmptyGlyph(g.category()))
}

/// Row profiles and COG of a glyph, precomputed for repeated area queries.
struct Profile {
    rows: Vec<Option<(usize, usize)>>,
    cog: f64,
}

impl Profile {
    fn new(g: &GlyphImage) -> Result<Self, BaselineError> {
        Ok(Self {
            rows: (0..g.size()).map(|y| g.row_extent(y)).collect(),
            cog: centroid(g)?,
        })
    }
}

fn profile_area(left: &Profile, right: &Profile, s: f64) -> f64 {
    let shift = s - right.cog + left.cog;
    left.rows
        .iter()
        .zip(&right.rows)
        .filter_map(|(l, r)| Some((l.as_ref()?.1, r.as_ref()?.0)))
        .map(|(rl, lr)| (lr as f64 + shift - rl as f64 - 1.0).max(0.0))
        .sum()
}

/// Blank pixels strictly between the two glyphs, summed over rows inked in
/// both, with the right glyph placed so the COG distance is `s`.
pub fn blank_area(left: &GlyphImage, right: &GlyphImage, s: f64) -> Result<f64, BaselineError> {
    Ok(profile_area(&Profile::new(left)?, &Profile::new(right)?, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalCalibration {
    pub target_area: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl OpticalCalibration {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.target_area.is_nan()
            || self.target_area < 0.0
            || !self.s_max.is_finite()
            || self.s_min.is_nan()
            || self.s_min >= self.s_max
        {
            return Err(BaselineError::Calibration(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Target area = mean blank area at ground-truth spacing over all training pairs.
pub fn fit_optical(train: &[&FontRecord]) -> Result<OpticalCalibration, BaselineError> {
    require_fonts(train)?;
    let per_font = par::map(Execution::Parallel, train, |r| {
        let profiles = r.glyphs.iter().map(Profile::new).collect::<Result<Vec<_>, _>>()?;
        let n = profiles.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                sum += profile_area(&profiles[i], &profiles[j], r.gt.get(i, j));
            }
        }
        Ok::<_, BaselineError>((sum, n * n))
    });
    let (mut sum, mut count) = (0.0, 0usize);
    for part in per_font {
        let (s, c) = part?;
        sum += s;
        count += c;
    }
    let h = train[0].image_size() as f64;
    Ok(OpticalCalibration {
        target_area: sum / count as f64,
        s_min: 0.0,
        s_max: 2.0 * h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpticalEstimate {
    pub space: f64,
    /// The target area was not reached inside the bounds; `space` is `s_max`.
    pub saturated: bool,
}

fn search(cal: &OpticalCalibration, left: &Profile, right: &Profile) -> OpticalEstimate {
    let area = |s| profile_area(left, right, s);
    if area(cal.s_min) >= cal.target_area {
        return OpticalEstimate {
            space: cal.s_min,
            saturated: false,
        };
    }
    if area(cal.s_max) < cal.target_area {
        return OpticalEstimate {
            space: cal.s_max,
            saturated: true,
        };
    }
    let (mut lo, mut hi) = (cal.s_min, cal.s_max);
    while hi - lo > OPTICAL_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if area(mid) >= cal.target_area {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    OpticalEstimate {
        space: hi,
        saturated: false,
    }
}

/// Smallest space (to within the bisection resolution) whose blank area reaches the target.
pub fn optical_estimate(
    cal: &OpticalCalibration,
    left: &GlyphImage,
    right: &GlyphImage,
) -> Result<OpticalEstimate, BaselineError> {
    cal.validate()?;
    let est = search(cal, &Profile::new(left)?, &Profile::new(right)?);
    if est.saturated {
        log::warn!(
            "optical target area {} unreachable for pair ({}, {}); using s_max",
            cal.target_area,
            left.category(),
            right.category()
        );
    }
    Ok(est)
}

/// A fitted baseline as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    Monospace { space: f64 },
    Average { table: Vec<Vec<f64>> },
    Optical(OpticalCalibration),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Monospace,
    Average,
    Optical,
}

impl Baseline {
    pub fn fit(kind: BaselineKind, train: &[&FontRecord]) -> Result<Self, BaselineError> {
        Ok(match kind {
            BaselineKind::Monospace => Baseline::Monospace {
                space: fit_monospace(train)?,
            },
            BaselineKind::Average => Baseline::Average {
                table: fit_average(train)?.to_rows(),
            },
            BaselineKind::Optical => Baseline::Optical(fit_optical(train)?),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Monospace { .. } => BaselineKind::Monospace,
            Baseline::Average { .. } => BaselineKind::Average,
            Baseline::Optical(_) => BaselineKind::Optical,
        }
    }

    /// Predicted table for one font's glyphs.
    pub fn predict(&self, glyphs: &[GlyphImage]) -> Result<KerningTable, BaselineError> {
        let n = glyphs.len();
        match self {
            Baseline::Monospace { space } => Ok(KerningTable::constant(n, *space)),
            Baseline::Average { table } => {
                if table.len() != n {
                    return Err(BaselineError::MixedCategories {
                        expected: table.len(),
                        found: n,
                    });
                }
                KerningTable::from_rows(table).map_err(|e| BaselineError::Calibration(e.to_string()))
            }
            Baseline::Optical(cal) => {
                cal.validate()?;
                let profiles = glyphs.iter().map(Profile::new).collect::<Result<Vec<_>, _>>()?;
                let mut saturated = 0;
                let values = (0..n * n)
                    .map(|k| {
                        let est = search(cal, &profiles[k / n], &profiles[k % n]);
                        saturated += usize::from(est.saturated);
                        est.space
                    })
                    .collect();
                if saturated > 0 {
                    log::warn!("optical baseline saturated at s_max on {saturated} of {} pairs", n * n);
                }
                Ok(KerningTable::new(n, values).expect("bisection stays finite"))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let text = fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
