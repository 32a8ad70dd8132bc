use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::splits::{Split, SplitManifest};
use super::{category_label, DatasetError, FontRecord, GlyphImage, KerningTable, Style, SynthMeta, SUPPORTED_SIZES};
use crate::pgm;

pub const SPLITS_FILE: &str = "splits.json";
const META_FILE: &str = "meta.json";
const KERNING_FILE: &str = "kerning.json";
const GLYPH_DIR: &str = "glyphs";
const FONTS_DIR: &str = "fonts";

fn default_ink_value() -> u8 {
    0
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FontMeta {
    pub font_id: String,
    pub family_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
    /// Pixel value that marks ink in the glyph PGMs (0 or 255).
    #[serde(default = "default_ink_value")]
    pub ink_value: u8,
    /// Number of categories; inferred from the table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_categories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthMeta>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_table(path: &Path, expected: Option<usize>) -> Result<KerningTable, DatasetError> {
    let rows: Vec<Vec<f64>> = read_json(path)?;
    let n = expected.unwrap_or(rows.len());
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        let cols = rows.iter().map(Vec::len).find(|&c| c != n).unwrap_or(n);
        return Err(DatasetError::TableShape {
            expected: n,
            rows: rows.len(),
            cols,
        });
    }
    KerningTable::from_rows(&rows)
}

/// Writes a table as nested JSON arrays, one row per line so it stays diffable.
pub fn write_table(path: &Path, table: &KerningTable) -> Result<(), DatasetError> {
    let mut text = String::from("[\n");
    for (i, row) in table.to_rows().iter().enumerate() {
        let line = serde_json::to_string(row).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        text.push_str("  ");
        text.push_str(&line);
        text.push_str(if i + 1 < table.n() { ",\n" } else { "\n" });
    }
    text.push_str("]\n");
    fs::write(path, text).map_err(io_err(path))
}

fn read_glyphs(dir: &Path, n: usize, ink_value: u8) -> Result<Vec<GlyphImage>, DatasetError> {
    let mut glyphs = Vec::with_capacity(n);
    for c in 0..n {
        let label = category_label(c, n);
        let path = dir.join(GLYPH_DIR).join(format!("{label}.pgm"));
        if !path.is_file() {
            return Err(DatasetError::MissingGlyph(label));
        }
        let img = pgm::read(&path).map_err(|source| DatasetError::Pgm { path, source })?;
        if img.width != img.height || !SUPPORTED_SIZES.contains(&img.width) {
            return Err(DatasetError::GlyphSize {
                label,
                width: img.width,
                height: img.height,
            });
        }
        glyphs.push(GlyphImage::from_gray(c, &img, ink_value));
    }
    Ok(glyphs)
}

/// Glyphs only, for fonts without a ground-truth table. `meta.json` is
/// optional here; when present its ink value and category count are honored.
pub fn load_font_glyphs(dir: &Path, n_categories: usize) -> Result<Vec<GlyphImage>, DatasetError> {
    let meta_path = dir.join(META_FILE);
    let ink_value = if meta_path.is_file() {
        let meta: FontMeta = read_json(&meta_path)?;
        if let Some(n) = meta.n_categories.filter(|&n| n != n_categories) {
            return Err(DatasetError::Config(format!(
                "font declares {n} categories but the model expects {n_categories}"
            )));
        }
        meta.ink_value
    } else {
        default_ink_value()
    };
    let glyphs = read_glyphs(dir, n_categories, ink_value)?;
    let size = glyphs.first().map_or(0, GlyphImage::size);
    for g in &glyphs {
        let label = category_label(g.category(), n_categories);
        if g.size() != size {
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
    Ok(glyphs)
}

/// Reads `meta.json`, `kerning.json` and `glyphs/<label>.pgm` from `dir`.
pub fn load_font_record(dir: &Path) -> Result<FontRecord, DatasetError> {
    let meta: FontMeta = read_json(&dir.join(META_FILE))?;
    let gt = read_table(&dir.join(KERNING_FILE), meta.n_categories)?;
    let glyphs = read_glyphs(dir, gt.n(), meta.ink_value)?;
    let record = FontRecord {
        font_id: meta.font_id,
        family_id: meta.family_id,
        style: meta.style,
        glyphs,
        gt,
        synthetic: meta.synthetic,
    };
    record.validate()?;
    Ok(record)
}

/// Writes the record layout read by [`load_font_record`], creating `dir` if needed.
pub fn save_font_record(record: &FontRecord, dir: &Path) -> Result<(), DatasetError> {
    let glyph_dir = dir.join(GLYPH_DIR);
    fs::create_dir_all(&glyph_dir).map_err(io_err(&glyph_dir))?;
    let n = record.n();
    let meta = FontMeta {
        font_id: record.font_id.clone(),
        family_id: record.family_id.clone(),
        style: record.style,
        ink_value: 0,
        n_categories: Some(n),
        synthetic: record.synthetic.clone(),
    };
    write_json(&dir.join(META_FILE), &meta)?;
    write_table(&dir.join(KERNING_FILE), &record.gt)?;
    for (c, g) in record.glyphs.iter().enumerate() {
        let path = glyph_dir.join(format!("{}.pgm", category_label(c, n)));
        pgm::write(&g.to_gray(), &path).map_err(|source| DatasetError::Pgm { path, source })?;
    }
    Ok(())
}

/// A corpus directory: `splits.json` plus `fonts/<font_id>/`.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: SplitManifest,
    records: BTreeMap<String, FontRecord>,
}

impl Corpus {
    pub fn font_dir(root: &Path, font_id: &str) -> PathBuf {
        root.join(FONTS_DIR).join(font_id)
    }

    /// Loads every font named in the manifest and rejects family leakage.
    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let manifest: SplitManifest = read_json(&root.join(SPLITS_FILE))?;
        let mut records = BTreeMap::new();
        for (_, id) in manifest.all_ids() {
            if !records.contains_key(id) {
                let record = load_font_record(&Self::font_dir(root, id))?;
                if &record.font_id != id {
                    return Err(DatasetError::Config(format!(
                        "fonts/{id}/meta.json declares font_id {:?}",
                        record.font_id
                    )));
                }
                records.insert(id.clone(), record);
            }
        }
        let corpus = Self {
            root: root.to_path_buf(),
            manifest,
            records,
        };
        corpus.check()?;
        Ok(corpus)
    }

    pub fn from_records(manifest: SplitManifest, records: Vec<FontRecord>) -> Result<Self, DatasetError> {
        let corpus = Self {
            root: PathBuf::new(),
            manifest,
            records: records.into_iter().map(|r| (r.font_id.clone(), r)).collect(),
        };
        corpus.check()?;
        Ok(corpus)
    }

    fn check(&self) -> Result<(), DatasetError> {
        let violations = super::validate_splits(&self.manifest, self.records.values())?;
        if let Some(v) = violations.first() {
            return Err(DatasetError::Config(format!("split manifest violation: {v}")));
        }
        let mut sizes = self.records.values().map(|r| (r.n(), r.image_size()));
        if let Some(first) = sizes.next() {
            if let Some(other) = sizes.find(|s| *s != first) {
                return Err(DatasetError::Config(format!(
                    "fonts disagree on (categories, image size): {first:?} vs {other:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&FontRecord> {
        self.manifest.ids(split).iter().map(|id| &self.records[id]).collect()
    }

    pub fn get(&self, font_id: &str) -> Option<&FontRecord> {
        self.records.get(font_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &FontRecord> {
        self.records.values()
    }

    pub fn n_categories(&self) -> usize {
        self.records.values().next().map_or(0, FontRecord::n)
    }

    pub fn image_size(&self) -> usize {
        self.records.values().next().map_or(0, FontRecord::image_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> FontRecord {
        let glyphs = (0..n)
            .map(|c| GlyphImage::from_fn(c, 32, move |x, y| x >= 4 + c % 20 && x < 10 + c % 20 && y > 8 && y < 20))
            .collect();
        FontRecord {
            font_id: "f0".into(),
            family_id: "fam".into(),
            style: Some(Style::Display),
            glyphs,
            gt: KerningTable::from_fn(n, |i, j| 0.1 + i as f64 * 1.0 / 3.0 - j as f64 * 1e-7).unwrap(),
            synthetic: None,
        }
    }

    #[test]
    fn save_then_load_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample(52);
        save_font_record(&r, dir.path()).unwrap();
        assert!(dir.path().join("glyphs/Z.pgm").is_file());
        assert_eq!(load_font_record(dir.path()).unwrap(), r);
    }

    #[test]
    fn missing_glyph_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_font_record(&sample(52), dir.path()).unwrap();
        fs::remove_file(dir.path().join("glyphs/Z.pgm")).unwrap();
        let err = load_font_record(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing glyph: Z");
    }

    #[test]
    fn non_square_table_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        save_font_record(&sample(52), dir.path()).unwrap();
        let rows: Vec<Vec<f64>> = (0..52).map(|_| vec![1.0; 51]).collect();
        fs::write(dir.path().join("kerning.json"), serde_json::to_string(&rows).unwrap()).unwrap();
        let err = load_font_record(dir.path()).unwrap_err();
        assert!(
            matches!(err, DatasetError::TableShape { rows: 52, cols: 51, .. }),
            "{err}"
        );
    }

    #[test]
    fn blank_glyph_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        save_font_record(&sample(3), dir.path()).unwrap();
        let blank = pgm::Gray {
            width: 32,
            height: 32,
            pixels: vec![255; 32 * 32],
        };
        pgm::write(&blank, &dir.path().join("glyphs/1.pgm")).unwrap();
        assert!(matches!(load_font_record(dir.path()), Err(DatasetError::EmptyGlyph(l)) if l == "1"));
    }

    #[test]
    fn inverted_ink_convention_is_honoured() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample(2);
        save_font_record(&r, dir.path()).unwrap();
        for c in 0..2 {
            let path = dir.path().join(format!("glyphs/{c}.pgm"));
            let mut img = pgm::read(&path).unwrap();
            img.pixels.iter_mut().for_each(|p| *p = 255 - *p);
            pgm::write(&img, &path).unwrap();
        }
        let mut meta: FontMeta = read_json(&dir.path().join("meta.json")).unwrap();
        meta.ink_value = 255;
        write_json(&dir.path().join("meta.json"), &meta).unwrap();
        assert_eq!(load_font_record(dir.path()).unwrap().glyphs, r.glyphs);
    }

    #[test]
    fn unknown_meta_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_font_record(&sample(2), dir.path()).unwrap();
        fs::write(
            dir.path().join("meta.json"),
            r#"{"font_id":"f0","family_id":"fam","colour":"red"}"#,
        )
        .unwrap();
        assert!(matches!(load_font_record(dir.path()), Err(DatasetError::Json { .. })));
    }
}
