use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::io::{load_label, load_rgb};
use crate::data::SamplePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown split '{s}' (expected train, val, test)")))
    }
}

/// Subdirectories holding the time-1 images, time-2 images and labels.
pub const SUBDIRS: [&str; 3] = ["A", "B", "label"];

/// The ids of one split and where their files live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    /// File names (shared by the three subdirectories), sorted.
    pub files: Vec<String>,
    /// `(height, width)` of the first sample.
    pub patch_size: (usize, usize),
}

impl DatasetManifest {
    pub fn split_dir(&self) -> PathBuf {
        self.root.join(self.split.as_str())
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Sample ids: file names without extension.
    pub fn ids(&self) -> Vec<String> {
        self.files.iter().map(|f| id_of(f)).collect()
    }

    pub fn load(&self, index: usize) -> Result<SamplePair> {
        let file = &self.files[index];
        let dir = self.split_dir();
        let sample = SamplePair {
            id: id_of(file),
            reference: load_rgb(&dir.join("A").join(file))?,
            comparison: load_rgb(&dir.join("B").join(file))?,
            label: load_label(&dir.join("label").join(file))?,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn load_all(&self) -> Result<Vec<SamplePair>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

fn id_of(file: &str) -> String {
    Path::new(file).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| file.to_string())
}

fn list_files(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Manifest(format!("cannot read {}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Indexes `root/<split>/{A,B,label}`. Every file must exist under the same
/// name in all three directories; the split must not be empty.
pub fn load_dataset(root: &Path, split: Split) -> Result<DatasetManifest> {
    let dir = root.join(split.as_str());
    let [a, b, l] = SUBDIRS.map(|s| list_files(&dir.join(s)));
    let (a, b, l) = (a?, b?, l?);
    for (name, present) in [("A", &a), ("B", &b), ("label", &l)] {
        for other in [&a, &b, &l] {
            if let Some(missing) = other.iter().find(|f| present.binary_search(f).is_err()) {
                return Err(Error::Manifest(format!(
                    "sample '{}' has no counterpart in {}/{name}",
                    id_of(missing),
                    dir.display()
                )));
            }
        }
    }
    if a.is_empty() {
        return Err(Error::Usage(format!("split '{split}' under {} has no samples", root.display())));
    }
    let (w, h) = image::image_dimensions(dir.join("A").join(&a[0]))
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", a[0])))?;
    Ok(DatasetManifest { root: root.to_path_buf(), split, files: a, patch_size: (h as usize, w as usize) })
}
