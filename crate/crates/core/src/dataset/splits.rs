use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DatasetError, FontRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Font ids per split, as stored in `splits.json`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn ids_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn all_ids(&self) -> impl Iterator<Item = (Split, &String)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.ids(s).iter().map(move |id| (s, id)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitViolation {
    /// One family has fonts in more than one split.
    FamilyAcrossSplits { family_id: String, splits: Vec<Split> },
    /// One font id is listed more than once.
    DuplicateFont { font_id: String, splits: Vec<Split> },
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |splits: &[Split]| splits.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
        match self {
            SplitViolation::FamilyAcrossSplits { family_id, splits } => {
                write!(f, "family {family_id} appears in splits {}", names(splits))
            }
            SplitViolation::DuplicateFont { font_id, splits } => {
                write!(f, "font {font_id} is listed in {}", names(splits))
            }
        }
    }
}

/// Returns every disjointness violation; an empty list means the manifest is valid.
pub fn validate_splits<'a>(
    manifest: &SplitManifest,
    records: impl IntoIterator<Item = &'a FontRecord>,
) -> Result<Vec<SplitViolation>, DatasetError> {
    let by_id: BTreeMap<&str, &FontRecord> = records.into_iter().map(|r| (r.font_id.as_str(), r)).collect();
    let mut font_splits: BTreeMap<&str, Vec<Split>> = BTreeMap::new();
    let mut family_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for (split, id) in manifest.all_ids() {
        let record = by_id
            .get(id.as_str())
            .ok_or_else(|| DatasetError::UnknownFont(id.clone()))?;
        font_splits.entry(id).or_default().push(split);
        family_splits.entry(&record.family_id).or_default().insert(split);
    }
    let duplicates = font_splits
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(id, splits)| SplitViolation::DuplicateFont {
            font_id: id.to_string(),
            splits,
        });
    let families = family_splits
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(family, splits)| SplitViolation::FamilyAcrossSplits {
            family_id: family.to_string(),
            splits: splits.into_iter().collect(),
        });
    Ok(duplicates.chain(families).collect())
}
