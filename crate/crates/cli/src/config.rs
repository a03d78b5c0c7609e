//! Plain-text `key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown or
//! repeated keys and unparsable values are errors that name the line.
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use edgelab::homography::AnnotatorConfig;
use edgelab::model::{LossConfig, ModelConfig};
use edgelab::postprocess::FusionThresholds;
use edgelab::pseudo_label::{LabelConfig, ObjectLabelConfig};
use edgelab::synthetic::SyntheticConfig;

use crate::error::{CliError, Result};

/// Layer widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelWidth {
    /// The published widths (64, 64, 128, 128; heads 256).
    Full,
    /// Quarter widths for CPU-scale runs.
    Desk,
}

impl ModelWidth {
    pub fn model_config(self) -> ModelConfig {
        match self {
            ModelWidth::Full => ModelConfig::FULL,
            ModelWidth::Desk => ModelConfig::DESK,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSection {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotateSection {
    /// Dataset with an `images/` directory to label.
    pub dataset_dir: PathBuf,
    /// Pretrained model whose pixel head is adapted.
    pub checkpoint: PathBuf,
    pub n_homographies: usize,
    pub rotation_max_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub perspective_amp: f64,
    pub translation_frac: f64,
    pub pixel_threshold: f64,
    pub blur_sigma: f64,
    pub l0_lambda: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub dilate_radius: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lambda: f64,
    /// Side of the random square training crop; 0 trains on whole images.
    pub crop: usize,
    /// Continue from an existing checkpoint in the run directory.
    pub resume: bool,
    /// Run directory of `train-synth`.
    pub synth_run_dir: PathBuf,
    /// Run directory of `train-real`.
    pub real_run_dir: PathBuf,
    /// Starting weights for `train-real`; empty starts from scratch.
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferSection {
    pub checkpoint: PathBuf,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub tolerance: f64,
    pub n_thresholds: usize,
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Root of every random stream.
    pub seed: u64,
    pub model_width: ModelWidth,
    pub synth: SynthSection,
    pub annotate: AnnotateSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub fusion_pixel_threshold: f64,
    pub fusion_object_threshold: f64,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        let annot = AnnotatorConfig::default();
        let object = ObjectLabelConfig::default();
        let labels = LabelConfig::default();
        let fusion = FusionThresholds::default();
        let synth = SyntheticConfig::default();
        let eval = edgelab::evaluation::EvalConfig::default();
        Config {
            seed: 0,
            model_width: ModelWidth::Full,
            synth: SynthSection {
                count: 2000,
                height: synth.height,
                width: synth.width,
                out_dir: "data/synthetic".into(),
            },
            annotate: AnnotateSection {
                dataset_dir: "data/real".into(),
                checkpoint: "runs/synth/checkpoint.sedg".into(),
                n_homographies: annot.n_homographies,
                rotation_max_deg: annot.rotation_max_deg,
                scale_min: annot.scale_min,
                scale_max: annot.scale_max,
                perspective_amp: annot.perspective_amp,
                translation_frac: annot.translation_frac,
                pixel_threshold: labels.pixel_threshold,
                blur_sigma: object.blur_sigma,
                l0_lambda: object.l0_lambda,
                canny_low: object.canny_low,
                canny_high: object.canny_high,
                dilate_radius: object.dilate_radius,
            },
            train: TrainSection {
                lr: 0.001,
                epochs: 100,
                batch: 16,
                lambda: LossConfig::default().lambda,
                crop: 0,
                resume: true,
                synth_run_dir: "runs/synth".into(),
                real_run_dir: "runs/real".into(),
                init_checkpoint: Some("runs/synth/checkpoint.sedg".into()),
            },
            infer: InferSection {
                checkpoint: "runs/real/checkpoint.sedg".into(),
                input_dir: "data/real/images".into(),
                output_dir: "out/infer".into(),
            },
            fusion_pixel_threshold: fusion.pixel,
            fusion_object_threshold: fusion.object,
            eval: EvalSection {
                tolerance: eval.tolerance,
                n_thresholds: eval.n_thresholds,
                pred_dir: "out/infer/fused".into(),
                gt_dir: "data/real/edges".into(),
                output_dir: "out/eval".into(),
            },
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;

    /// Makes relative paths absolute; a no-op for non-path values.
    fn resolve(&mut self, _base: &Path) {}
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("`{s}`: {e}"))
            }
        }
    )*};
}
from_str_value!(f64, usize, u64, bool);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }

    fn resolve(&mut self, base: &Path) {
        if self.is_relative() {
            *self = base.join(&*self);
        }
    }
}

impl ConfigValue for Option<PathBuf> {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(p) = self {
            p.resolve(base);
        }
    }
}

impl ConfigValue for ModelWidth {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(ModelWidth::Full),
            "desk" => Ok(ModelWidth::Desk),
            _ => Err(format!("`{s}`: expected `full` or `desk`")),
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        impl Config {
            /// Every accepted key, in documentation order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Returns `Ok(false)` for an unknown key.
            fn assign(&mut self, key: &str, value: &str) -> Result<bool, String> {
                match key {
                    $($key => self.$($field).+ = <$ty as ConfigValue>::parse_value(value)?,)*
                    _ => return Ok(false),
                }
                Ok(true)
            }

            fn resolve_paths(&mut self, base: &Path) {
                $(<$ty as ConfigValue>::resolve(&mut self.$($field).+, base);)*
            }
        }
    };
}

config_keys! {
    "seed" => seed: u64,
    "model.width" => model_width: ModelWidth,
    "synth.count" => synth.count: usize,
    "synth.height" => synth.height: usize,
    "synth.width" => synth.width: usize,
    "synth.out_dir" => synth.out_dir: PathBuf,
    "annotate.dataset_dir" => annotate.dataset_dir: PathBuf,
    "annotate.checkpoint" => annotate.checkpoint: PathBuf,
    "annotate.n_homographies" => annotate.n_homographies: usize,
    "annotate.rotation_max_deg" => annotate.rotation_max_deg: f64,
    "annotate.scale_min" => annotate.scale_min: f64,
    "annotate.scale_max" => annotate.scale_max: f64,
    "annotate.perspective_amp" => annotate.perspective_amp: f64,
    "annotate.translation_frac" => annotate.translation_frac: f64,
    "annotate.pixel_threshold" => annotate.pixel_threshold: f64,
    "annotate.blur_sigma" => annotate.blur_sigma: f64,
    "annotate.l0_lambda" => annotate.l0_lambda: f64,
    "annotate.canny_low" => annotate.canny_low: f64,
    "annotate.canny_high" => annotate.canny_high: f64,
    "annotate.dilate_radius" => annotate.dilate_radius: usize,
    "train.lr" => train.lr: f64,
    "train.epochs" => train.epochs: usize,
    "train.batch" => train.batch: usize,
    "train.lambda" => train.lambda: f64,
    "train.crop" => train.crop: usize,
    "train.resume" => train.resume: bool,
    "train.synth_run_dir" => train.synth_run_dir: PathBuf,
    "train.real_run_dir" => train.real_run_dir: PathBuf,
    "train.init_checkpoint" => train.init_checkpoint: Option<PathBuf>,
    "infer.checkpoint" => infer.checkpoint: PathBuf,
    "infer.input_dir" => infer.input_dir: PathBuf,
    "infer.output_dir" => infer.output_dir: PathBuf,
    "fusion.pixel_threshold" => fusion_pixel_threshold: f64,
    "fusion.object_threshold" => fusion_object_threshold: f64,
    "eval.tolerance" => eval.tolerance: f64,
    "eval.n_thresholds" => eval.n_thresholds: usize,
    "eval.pred_dir" => eval.pred_dir: PathBuf,
    "eval.gt_dir" => eval.gt_dir: PathBuf,
    "eval.output_dir" => eval.output_dir: PathBuf,
}


impl Config {
    /// Reads `path`, then applies `overrides` (`key=value`) in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Config::parse(&text, &base, overrides)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Config> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("line {}: {msg}", i + 1));
            let (key, value) = split_pair(line).ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key `{key}`")));
            }
            match cfg.assign(key, value) {
                Ok(true) => {}
                Ok(false) => return Err(at(format!("unknown key `{key}`"))),
                Err(e) => return Err(at(format!("invalid value for `{key}`: {e}"))),
            }
        }
        for o in overrides {
            let at = |msg: String| CliError::Config(format!("--set {o}: {msg}"));
            let (key, value) = split_pair(o).ok_or_else(|| at("expected `key=value`".into()))?;
            match cfg.assign(key, value) {
                Ok(true) => {}
                Ok(false) => return Err(at(format!("unknown key `{key}`"))),
                Err(e) => return Err(at(format!("invalid value for `{key}`: {e}"))),
            }
        }
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let t = &self.train;
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be a nonnegative number, got {}", t.lr));
        }
        if t.epochs == 0 || t.batch == 0 {
            return bad("train.epochs and train.batch must be at least 1".into());
        }
        if !(t.lambda > 0.0) {
            return bad(format!("train.lambda must be positive, got {}", t.lambda));
        }
        if !t.crop.is_multiple_of(8) {
            return bad(format!("train.crop must be a multiple of 8, got {}", t.crop));
        }
        if !(self.eval.tolerance > 0.0) || self.eval.n_thresholds < 2 {
            return bad("eval.tolerance must be positive and eval.n_thresholds at least 2".into());
        }
        for (key, v) in [
            ("annotate.pixel_threshold", self.annotate.pixel_threshold),
            ("fusion.pixel_threshold", self.fusion_pixel_threshold),
            ("fusion.object_threshold", self.fusion_object_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{key} must lie in (0, 1), got {v}"));
            }
        }
        let a = &self.annotate;
        if !(0.0..=1.0).contains(&a.canny_low) || !(0.0..=1.0).contains(&a.canny_high) || a.canny_low > a.canny_high {
            return bad("annotate.canny_low <= annotate.canny_high must both lie in [0, 1]".into());
        }
        if !(a.l0_lambda > 0.0) || !(a.blur_sigma >= 0.0) {
            return bad("annotate.l0_lambda must be positive and annotate.blur_sigma nonnegative".into());
        }
        self.annotator().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synthetic().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.synth.count == 0 {
            return bad("synth.count must be at least 1".into());
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            height: self.synth.height,
            width: self.synth.width,
            ..SyntheticConfig::default()
        }
    }

    pub fn annotator(&self) -> AnnotatorConfig {
        let a = &self.annotate;
        AnnotatorConfig {
            n_homographies: a.n_homographies,
            rotation_max_deg: a.rotation_max_deg,
            scale_min: a.scale_min,
            scale_max: a.scale_max,
            perspective_amp: a.perspective_amp,
            translation_frac: a.translation_frac,
            rng_seed: self.seed,
        }
    }

    pub fn labels(&self) -> LabelConfig {
        let a = &self.annotate;
        LabelConfig {
            annotator: self.annotator(),
            object: ObjectLabelConfig {
                blur_sigma: a.blur_sigma,
                l0_lambda: a.l0_lambda,
                canny_low: a.canny_low,
                canny_high: a.canny_high,
                dilate_radius: a.dilate_radius,
            },
            pixel_threshold: a.pixel_threshold,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.train.lambda }
    }

    pub fn fusion(&self) -> FusionThresholds {
        FusionThresholds {
            pixel: self.fusion_pixel_threshold,
            object: self.fusion_object_threshold,
        }
    }

    pub fn evaluation(&self) -> edgelab::evaluation::EvalConfig {
        edgelab::evaluation::EvalConfig {
            n_thresholds: self.eval.n_thresholds,
            tolerance: self.eval.tolerance,
        }
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    let v = v.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(v);
    (!k.is_empty()).then_some((k, v))
}
