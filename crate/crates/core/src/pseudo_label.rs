//! Pseudo ground truth for unlabelled images.
//!
//! Two independent streams: pixel-level labels from homography adaptation of a
//! pretrained predictor, and object-level labels from a classical chain
//! (blur, L0 smoothing, Canny, dilation). Their union is the combined label.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::classical::{canny, l0_smooth};
use crate::error::{Error, Result};
use crate::homography::{homography_adapt, AnnotatorConfig};
use crate::imaging::{dilate, gaussian_blur, read_image, write_png, Raster};
use crate::scalar::Scalar;
use crate::{EdgeMap, Image};

/// Parameters of the classical object-level chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectLabelConfig {
    pub blur_sigma: f64,
    pub l0_lambda: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub dilate_radius: usize,
}

impl Default for ObjectLabelConfig {
    fn default() -> Self {
        ObjectLabelConfig {
            blur_sigma: 1.5,
            l0_lambda: 0.02,
            canny_low: 0.1,
            canny_high: 0.2,
            dilate_radius: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelConfig {
    pub annotator: AnnotatorConfig,
    pub object: ObjectLabelConfig,
    /// Binarisation threshold of the adapted pixel-level prediction.
    pub pixel_threshold: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            annotator: AnnotatorConfig::default(),
            object: ObjectLabelConfig::default(),
            pixel_threshold: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel<T> {
    pub pixel_map: Raster<T>,
    pub object_map: Raster<T>,
    pub combined: Raster<T>,
}

/// `dilate(canny(l0_smooth(gaussian_blur(img))))`.
pub fn object_level_labels<T: Scalar>(img: &Raster<T>, cfg: &ObjectLabelConfig) -> Result<Raster<T>> {
    let blurred = gaussian_blur(img, cfg.blur_sigma)?;
    let smooth = l0_smooth(&blurred, cfg.l0_lambda)?;
    let edges = canny(&smooth, cfg.canny_low, cfg.canny_high)?;
    Ok(dilate(&edges, cfg.dilate_radius))
}

/// Homography-adapted prediction binarised at `threshold`.
pub fn pixel_level_labels<T, P>(img: &Raster<T>, predictor: P, cfg: &AnnotatorConfig, threshold: f64) -> Result<Raster<T>>
where
    T: Scalar,
    P: Fn(&Raster<T>) -> Result<Raster<T>> + Sync,
{
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("pixel threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(homography_adapt(img, predictor, cfg)?.binarize(T::lit(threshold)))
}

/// Pixelwise OR of two binary maps.
pub fn combine_labels<T: Scalar>(pixel_map: &Raster<T>, object_map: &Raster<T>) -> Result<Raster<T>> {
    pixel_map.check_same_dims(object_map, "combine_labels")?;
    let half = T::lit(0.5);
    let pixels = pixel_map
        .pixels()
        .iter()
        .zip(object_map.pixels())
        .map(|(&a, &b)| if a >= half || b >= half { T::one() } else { T::zero() })
        .collect();
    Raster::new(pixel_map.height(), pixel_map.width(), pixels)
}

pub fn pseudo_label<T, P>(img: &Raster<T>, predictor: P, cfg: &LabelConfig) -> Result<PseudoLabel<T>>
where
    T: Scalar,
    P: Fn(&Raster<T>) -> Result<Raster<T>> + Sync,
{
    let pixel_map = pixel_level_labels(img, predictor, &cfg.annotator, cfg.pixel_threshold)?;
    let object_map = object_level_labels(img, &cfg.object)?;
    let combined = combine_labels(&pixel_map, &object_map)?;
    Ok(PseudoLabel {
        pixel_map,
        object_map,
        combined,
    })
}

pub const PIXEL_DIR: &str = "pixel_labels";
pub const OBJECT_DIR: &str = "object_labels";
pub const COMBINED_DIR: &str = "combined_labels";
pub const LABEL_MANIFEST: &str = "labels_manifest.txt";

/// Outcome of [`export_labels`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExportSummary {
    pub labelled: usize,
    /// Images whose three label files already existed.
    pub skipped: usize,
    /// `(image file name, error message)`.
    pub failed: Vec<(String, String)>,
}

/// Image files (`png`, `pgm`, `ppm`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm" | "ppm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Labels every image in `dataset_dir/images`.
///
/// Maps are written as `<stem>.png` under `pixel_labels/`, `object_labels/`
/// and `combined_labels/`. Images whose three outputs exist are skipped, so an
/// interrupted run can be resumed; images that fail are reported in the
/// summary and the rest are still processed. The manifest lists every image
/// with complete labels and is only rewritten when its content changes.
pub fn export_labels<P>(dataset_dir: impl AsRef<Path>, predictor: P, cfg: &LabelConfig) -> Result<ExportSummary>
where
    P: Fn(&Image) -> Result<EdgeMap> + Sync,
{
    let root = dataset_dir.as_ref();
    let images = list_images(&root.join("images"))?;
    if images.is_empty() {
        return Err(Error::invalid(format!("no images in {}", root.join("images").display())));
    }
    for sub in [PIXEL_DIR, OBJECT_DIR, COMBINED_DIR] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut summary = ExportSummary::default();
    let mut manifest = String::new();
    for (index, path) in images.iter().enumerate() {
        let file = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        let name = format!("{stem}.png");
        let outputs = [PIXEL_DIR, OBJECT_DIR, COMBINED_DIR].map(|d| root.join(d).join(&name));
        if outputs.iter().all(|p| p.is_file()) {
            summary.skipped += 1;
        } else {
            let labelled = read_image(path).and_then(|img| pseudo_label(&img, &predictor, cfg)).and_then(|l| {
                write_png(&outputs[0], &l.pixel_map)?;
                write_png(&outputs[1], &l.object_map)?;
                write_png(&outputs[2], &l.combined)
            });
            match labelled {
                Ok(()) => summary.labelled += 1,
                Err(e) => {
                    log::warn!("labelling {file} failed: {e}");
                    summary.failed.push((file, e.to_string()));
                    continue;
                }
            }
        }
        let _ = writeln!(
            manifest,
            "{index}\timages/{file}\t{PIXEL_DIR}/{name}\t{OBJECT_DIR}/{name}\t{COMBINED_DIR}/{name}"
        );
    }
    let path = root.join(LABEL_MANIFEST);
    if std::fs::read_to_string(&path).ok().as_deref() != Some(manifest.as_str()) {
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}
