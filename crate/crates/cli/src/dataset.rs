//! Flat on-disk datasets.
//!
//! A dataset directory holds `images/` and optionally `edges/` (ground truth)
//! and the pseudo-label directories written by `annotate`. Files are paired by
//! stem; subdirectories are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use edgelab::pseudo_label::{list_images, COMBINED_DIR, OBJECT_DIR, PIXEL_DIR};

use crate::error::{CliError, Result};

pub const IMAGES_DIR: &str = "images";
pub const EDGES_DIR: &str = "edges";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub stem: String,
    pub image: PathBuf,
    pub edges: Option<PathBuf>,
    pub pixel_label: Option<PathBuf>,
    pub object_label: Option<PathBuf>,
    pub combined_label: Option<PathBuf>,
}

impl Sample {
    pub fn has_ground_truth(&self) -> bool {
        self.edges.is_some() || self.pixel_label.is_some() || self.object_label.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub root: PathBuf,
    /// In lexicographic order of the image file names.
    pub samples: Vec<Sample>,
    /// Images without any ground truth and label files without an image.
    pub warnings: Vec<String>,
}

fn stem_of(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Label files of one kind keyed by stem; empty when the directory is absent.
fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Ok(BTreeMap::new());
    }
    Ok(list_images(dir)?.into_iter().map(|p| (stem_of(&p), p)).collect())
}

pub fn ingest_dataset(dir: &Path) -> Result<Dataset> {
    let images_dir = dir.join(IMAGES_DIR);
    if !images_dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", images_dir.display())));
    }
    let images = list_images(&images_dir)?;
    if images.is_empty() {
        return Err(CliError::Config(format!("no images in {}", images_dir.display())));
    }
    let mut label_dirs: Vec<(&str, BTreeMap<String, PathBuf>)> = Vec::new();
    for sub in [EDGES_DIR, PIXEL_DIR, OBJECT_DIR, COMBINED_DIR] {
        label_dirs.push((sub, index_dir(&dir.join(sub))?));
    }
    let mut warnings = Vec::new();
    let mut samples = Vec::with_capacity(images.len());
    for image in images {
        let stem = stem_of(&image);
        let mut take = |i: usize| label_dirs[i].1.remove(&stem);
        let sample = Sample {
            edges: take(0),
            pixel_label: take(1),
            object_label: take(2),
            combined_label: take(3),
            stem,
            image,
        };
        if !sample.has_ground_truth() {
            warnings.push(format!("{} has no ground truth", sample.image.display()));
        }
        samples.push(sample);
    }
    for (sub, rest) in &label_dirs {
        for path in rest.values() {
            warnings.push(format!("{sub}/{} has no matching image", path.file_name().unwrap_or_default().to_string_lossy()));
        }
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        samples,
        warnings,
    })
}
