//! Test-set metrics and report artifacts.
//!
//! Every metric is computed from the per-(font, pair) absolute errors. Per-style
//! numbers average over pairs, not over fonts first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{Baseline, BaselineError};
use crate::dataset::{category_label, FontRecord, KerningTable};
use crate::features::FeatureExtractor;
use crate::par::{self, Execution};
use crate::training::{self, Checkpoint, TrainingError};

/// Font-level MAE threshold, in pixels (strict).
pub const GOOD_FONT_MAE: f64 = 7.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no methods to evaluate")]
    NoMethods,
    #[error("no fonts to evaluate")]
    NoFonts,
    #[error("invalid method name {0:?}: use letters, digits, '-' or '_'")]
    MethodName(String),
    #[error("duplicate method name {0:?}")]
    DuplicateMethod(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("fonts disagree on category count or image size: {0}")]
    MixedFonts(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl EvalError {
    pub fn is_validation(&self) -> bool {
        match self {
            EvalError::Io { .. } | EvalError::Csv(_) => false,
            EvalError::Training(e) => e.is_validation(),
            EvalError::Baseline(e) => e.is_validation(),
            _ => true,
        }
    }
}

/// Same definition as the training loss.
pub fn table_mae(pred: &KerningTable, gt: &KerningTable) -> Result<f64, EvalError> {
    Ok(training::mae_loss(pred, gt)?)
}

/// Anything that produces a full spacing table for a font.
pub trait TablePredictor: Sync {
    fn predict(&self, record: &FontRecord) -> Result<KerningTable, EvalError>;
}

impl TablePredictor for Baseline {
    fn predict(&self, record: &FontRecord) -> Result<KerningTable, EvalError> {
        Ok(Baseline::predict(self, &record.glyphs)?)
    }
}

/// Predicts with a trained checkpoint.
pub struct ModelPredictor {
    checkpoint: Checkpoint,
    extractor: FeatureExtractor,
}

impl ModelPredictor {
    pub fn new(checkpoint: Checkpoint) -> Result<Self, EvalError> {
        let extractor = checkpoint.extractor()?;
        Ok(Self { checkpoint, extractor })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }
}

impl TablePredictor for ModelPredictor {
    fn predict(&self, record: &FontRecord) -> Result<KerningTable, EvalError> {
        let features = self.extractor.extract(&record.glyphs).map_err(TrainingError::from)?;
        Ok(self
            .checkpoint
            .model
            .predict_table(&features)
            .map_err(TrainingError::from)?)
    }
}

/// Returns each font's own ground truth.
pub struct GroundTruth;

impl TablePredictor for GroundTruth {
    fn predict(&self, record: &FontRecord) -> Result<KerningTable, EvalError> {
        Ok(record.gt.clone())
    }
}

/// Loads a method artifact: a model checkpoint or a baseline JSON file.
pub fn load_predictor(path: &Path) -> Result<Box<dyn TablePredictor>, EvalError> {
    let bytes = std::fs::read(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(training::MAGIC) {
        let ckpt = training::load_checkpoint(path)?;
        Ok(Box::new(ModelPredictor::new(ckpt)?))
    } else {
        Ok(Box::new(Baseline::load(path)?))
    }
}

pub struct Method<'a> {
    pub name: String,
    pub predictor: &'a dyn TablePredictor,
}

impl<'a> Method<'a> {
    pub fn new(name: impl Into<String>, predictor: &'a dyn TablePredictor) -> Self {
        Self {
            name: name.into(),
            predictor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleMae {
    pub mae: f64,
    pub fonts: usize,
    pub pairs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FontResult {
    pub font_id: String,
    pub style: String,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub mae: f64,
    pub per_style: BTreeMap<String, StyleMae>,
    pub fonts_below_7: usize,
    pub wins: usize,
    pub curve: Vec<CurvePoint>,
    pub per_pair_mae: Vec<Vec<f64>>,
    pub fonts: Vec<FontResult>,
    /// Row-major `N²` absolute errors per font, in font order.
    #[serde(skip)]
    pub abs_errors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_categories: usize,
    pub image_size: usize,
    pub labels: Vec<String>,
    pub n_fonts: usize,
    pub methods: Vec<MethodReport>,
    pub gt_mean: Vec<Vec<f64>>,
    pub gt_variance: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn check_name(name: &str) -> Result<(), EvalError> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(EvalError::MethodName(name.into()));
    }
    Ok(())
}

fn square(n: usize, f: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| f(i * n + j)).collect()).collect()
}

/// Runs every method on every font and aggregates the metrics.
pub fn evaluate(methods: &[Method<'_>], fonts: &[&FontRecord], exec: Execution) -> Result<EvalReport, EvalError> {
    if methods.is_empty() {
        return Err(EvalError::NoMethods);
    }
    let first = fonts.first().ok_or(EvalError::NoFonts)?;
    let (n, h) = (first.n(), first.image_size());
    for (k, m) in methods.iter().enumerate() {
        check_name(&m.name)?;
        if methods[..k].iter().any(|o| o.name == m.name) {
            return Err(EvalError::DuplicateMethod(m.name.clone()));
        }
    }
    if let Some(bad) = fonts.iter().find(|f| f.n() != n || f.image_size() != h) {
        return Err(EvalError::MixedFonts(bad.font_id.clone()));
    }
    let nn = n * n;

    // errors[f][m] = row-major absolute errors of method m on font f.
    let errors: Vec<Vec<Vec<f64>>> = par::map(exec, fonts, |font| {
        methods
            .iter()
            .map(|m| {
                let pred = m.predictor.predict(font)?;
                if pred.n() != n {
                    return Err(TrainingError::DimensionMismatch(pred.n(), n).into());
                }
                Ok(pred
                    .values()
                    .iter()
                    .zip(font.gt.values())
                    .map(|(p, g)| (p - g).abs())
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>, EvalError>>()
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let font_mae: Vec<Vec<f64>> = errors
        .iter()
        .map(|per_method| per_method.iter().map(|ae| ae.iter().sum::<f64>() / nn as f64).collect())
        .collect();
    let mut wins = vec![0usize; methods.len()];
    for row in &font_mae {
        let best = row.iter().copied().fold(f64::INFINITY, f64::min);
        for (w, &v) in wins.iter_mut().zip(row) {
            if v == best {
                *w += 1;
            }
        }
    }

    let total_pairs = (fonts.len() * nn) as f64;
    let reports = methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let mut pair_sum = vec![0.0; nn];
            let mut by_style: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
            for (f, font) in fonts.iter().enumerate() {
                let ae = &errors[f][m];
                for (s, v) in pair_sum.iter_mut().zip(ae) {
                    *s += v;
                }
                let e = by_style.entry(font.style_label().to_string()).or_default();
                e.0 += ae.iter().sum::<f64>();
                e.1 += 1;
                e.2 += nn;
            }
            let all: Vec<f64> = errors.iter().flat_map(|e| e[m].iter().copied()).collect();
            let curve = (0..=h / 4)
                .map(|t| CurvePoint {
                    threshold: t,
                    fraction: all.iter().filter(|&&v| v < t as f64).count() as f64 / total_pairs,
                })
                .collect();
            MethodReport {
                name: method.name.clone(),
                mae: all.iter().sum::<f64>() / total_pairs,
                per_style: by_style
                    .into_iter()
                    .map(|(k, (sum, fonts, pairs))| {
                        (
                            k,
                            StyleMae {
                                mae: sum / pairs as f64,
                                fonts,
                                pairs,
                            },
                        )
                    })
                    .collect(),
                fonts_below_7: font_mae.iter().filter(|r| r[m] < GOOD_FONT_MAE).count(),
                wins: wins[m],
                curve,
                per_pair_mae: square(n, |k| pair_sum[k] / fonts.len() as f64),
                fonts: fonts
                    .iter()
                    .enumerate()
                    .map(|(f, font)| FontResult {
                        font_id: font.font_id.clone(),
                        style: font.style_label().to_string(),
                        mae: font_mae[f][m],
                    })
                    .collect(),
                abs_errors: errors.iter().map(|e| e[m].clone()).collect(),
            }
        })
        .collect();

    let count = fonts.len() as f64;
    let mean: Vec<f64> = (0..nn)
        .map(|k| fonts.iter().map(|f| f.gt.values()[k]).sum::<f64>() / count)
        .collect();
    let variance: Vec<f64> = (0..nn)
        .map(|k| fonts.iter().map(|f| (f.gt.values()[k] - mean[k]).powi(2)).sum::<f64>() / count)
        .collect();
    Ok(EvalReport {
        n_categories: n,
        image_size: h,
        labels: (0..n).map(|i| category_label(i, n)).collect(),
        n_fonts: fonts.len(),
        methods: reports,
        gt_mean: square(n, |k| mean[k]),
        gt_variance: square(n, |k| variance[k]),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Labeled `N × N` CSV: rows are first letters, columns second letters.
pub fn heatmap_csv(labels: &[String], matrix: &[Vec<f64>]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.3}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Per-pair MAE of `a` minus that of `b`.
pub fn difference_matrix(report: &EvalReport, a: &str, b: &str) -> Result<Vec<Vec<f64>>, EvalError> {
    let ma = report.method(a).ok_or_else(|| EvalError::UnknownMethod(a.into()))?;
    let mb = report.method(b).ok_or_else(|| EvalError::UnknownMethod(b.into()))?;
    Ok(ma
        .per_pair_mae
        .iter()
        .zip(&mb.per_pair_mae)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_csv_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `report.json`, heatmaps, curves, raw errors and pairwise
/// difference matrices into `dir`.
pub fn write_report(report: &EvalReport, fonts: &[&FontRecord], dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(&dir.join("report.json"), &(json + "\n"))?;
    write_text(&dir.join("gt_mean.csv"), &heatmap_csv(&report.labels, &report.gt_mean)?)?;
    write_text(
        &dir.join("gt_variance.csv"),
        &heatmap_csv(&report.labels, &report.gt_variance)?,
    )?;
    let n = report.n_categories;
    for m in &report.methods {
        write_text(
            &dir.join(format!("mae_{}.csv", m.name)),
            &heatmap_csv(&report.labels, &m.per_pair_mae)?,
        )?;
        write_csv_rows(
            &dir.join(format!("curve_{}.csv", m.name)),
            &["threshold", "fraction"],
            m.curve
                .iter()
                .map(|p| vec![p.threshold.to_string(), format!("{:.6}", p.fraction)]),
        )?;
        let rows = fonts.iter().zip(&m.abs_errors).flat_map(|(font, ae)| {
            ae.iter().enumerate().map(move |(k, v)| {
                vec![
                    font.font_id.clone(),
                    font.style_label().to_string(),
                    report.labels[k / n].clone(),
                    report.labels[k % n].clone(),
                    format!("{v:.6}"),
                ]
            })
        });
        write_csv_rows(
            &dir.join(format!("ae_{}.csv", m.name)),
            &["font_id", "style", "first", "second", "ae"],
            rows,
        )?;
    }
    for (i, a) in report.methods.iter().enumerate() {
        for b in &report.methods[i + 1..] {
            let diff = difference_matrix(report, &a.name, &b.name)?;
            write_text(
                &dir.join(format!("diff_{}_minus_{}.csv", a.name, b.name)),
                &heatmap_csv(&report.labels, &diff)?,
            )?;
        }
    }
    Ok(())
}
