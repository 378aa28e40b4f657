//! Ingestion of CIFAKE-style directory trees:
//! `root/{train,test}/{REAL,FAKE}/*.{png,jpg,jpeg,bmp}`.
//!
//! Labels come only from the directory layout. Any subset of the four leaf
//! directories may be present.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Label;

/// Native CIFAKE resolution; other sizes are indexed with a warning.
pub const CIFAKE_SIDE: u32 = 32;
const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no such directory: {0}")]
    NoSuchDirectory(PathBuf),
    #[error("no images found under {0}")]
    EmptyDataset(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub dims: (u32, u32),
}

impl DatasetEntry {
    /// `{split}_{label}_{file stem}`; unique within one index.
    pub fn image_id(&self) -> String {
        let stem = self
            .path
            .file_stem()
            .map(|s| s.to_string_lossy())
            .unwrap_or_default();
        format!("{}_{}_{}", self.split, self.label, stem)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    /// Ordered by split, label, then file name.
    pub entries: Vec<DatasetEntry>,
    /// Non-fatal findings: unexpected image sizes, unreadable files.
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// At most the first `limit` entries.
    pub fn limited(&self, limit: Option<usize>) -> &[DatasetEntry] {
        &self.entries[..limit.unwrap_or(usize::MAX).min(self.entries.len())]
    }
}

fn find_child(dir: &Path, name: &str) -> Result<Option<PathBuf>, DatasetError> {
    let read = std::fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut matches: Vec<PathBuf> = read
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().eq_ignore_ascii_case(name))
        })
        .collect();
    matches.sort();
    Ok(matches.into_iter().next())
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path.extension().is_some_and(|e| {
            EXTENSIONS
                .iter()
                .any(|x| e.to_string_lossy().eq_ignore_ascii_case(x))
        })
}

/// Indexes every readable image under `root`.
pub fn ingest_cifake(root: impl AsRef<Path>) -> Result<DatasetIndex, DatasetError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::NoSuchDirectory(root.to_path_buf()));
    }
    let mut index = DatasetIndex::default();
    for split in [Split::Train, Split::Test] {
        let Some(split_dir) = find_child(root, split.as_str())? else {
            continue;
        };
        for label in [Label::Real, Label::Fake] {
            let Some(label_dir) = find_child(&split_dir, label.as_str())? else {
                continue;
            };
            let read = std::fs::read_dir(&label_dir).map_err(|source| DatasetError::Io {
                path: label_dir.clone(),
                source,
            })?;
            let mut files: Vec<PathBuf> = read
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| is_image(p))
                .collect();
            files.sort();
            for path in files {
                match image::image_dimensions(&path) {
                    Ok((w, h)) => {
                        if (w, h) != (CIFAKE_SIDE, CIFAKE_SIDE) {
                            index.warnings.push(format!(
                                "{}: {w}x{h}, expected {CIFAKE_SIDE}x{CIFAKE_SIDE}",
                                path.display()
                            ));
                        }
                        index.entries.push(DatasetEntry {
                            path,
                            label,
                            split,
                            dims: (h, w),
                        });
                    }
                    Err(e) => index
                        .warnings
                        .push(format!("{}: unreadable ({e})", path.display())),
                }
            }
        }
    }
    if index.entries.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    Ok(index)
}
