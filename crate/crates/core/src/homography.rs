//! Random homographies, projective warping and homography adaptation.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::Raster;
use crate::rng;
use crate::scalar::Scalar;

/// 3x3 projective transform on homogeneous pixel coordinates `(x, y, 1)`,
/// with `x` the column and `y` the row. Normalised so that `m[2][2] == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

const MIN_DET: f64 = 1e-8;

impl Homography {
    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let scale = m[(2, 2)];
        if !scale.is_finite() || scale.abs() < MIN_DET {
            return Err(Error::invalid("homography with vanishing m[2][2]"));
        }
        let m = if scale == 1.0 { m } else { m / scale };
        if !(m.determinant().abs() > MIN_DET) {
            return Err(Error::invalid("singular homography"));
        }
        Ok(Homography { m })
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography {
            m: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [0, 1, 2].map(|r| [0, 1, 2].map(|c| self.m[(r, c)]))
    }

    pub fn is_identity(&self) -> bool {
        self.m == Matrix3::identity()
    }

    pub fn inverse(&self) -> Self {
        if self.is_identity() {
            return *self;
        }
        let inv = self.m.try_inverse().expect("homographies are invertible by construction");
        Homography::from_matrix(inv).expect("inverse of an invertible homography")
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Homography::from_matrix(self.m * other.m)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.m * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    /// Homography taking the four `src` points onto `dst` (direct linear transform).
    pub fn from_correspondences(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for (i, (&(x, y), &(u, v))) in src.iter().zip(&dst).enumerate() {
            let r = 2 * i;
            a.set_row(r, &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
            a.set_row(r + 1, &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::invalid("degenerate point correspondences"))?;
        Homography::from_matrix(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
    }
}

/// Homography-adaptation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatorConfig {
    /// Number of transforms aggregated; the first is always the identity.
    pub n_homographies: usize,
    pub rotation_max_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Corner jitter as a fraction of the image extent.
    pub perspective_amp: f64,
    /// Translation as a fraction of the image extent.
    pub translation_frac: f64,
    pub rng_seed: u64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            n_homographies: 100,
            rotation_max_deg: 25.0,
            scale_min: 0.8,
            scale_max: 1.2,
            perspective_amp: 0.1,
            translation_frac: 0.1,
            rng_seed: 0,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_homographies == 0 {
            return Err(Error::invalid("n_homographies must be at least 1"));
        }
        if !(self.scale_min > 0.0) || self.scale_min > self.scale_max {
            return Err(Error::invalid(format!(
                "scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            )));
        }
        for (name, v) in [
            ("rotation_max_deg", self.rotation_max_deg),
            ("perspective_amp", self.perspective_amp),
            ("translation_frac", self.translation_frac),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Warped unit-square corners must stay inside this normalised box.
const CORNER_BOUND: (f64, f64) = (-0.3, 1.3);
const MAX_ATTEMPTS: usize = 100;

/// Random homography for a `height x width` image: corner jitter, then
/// rotation and scaling about the centre, then translation.
pub fn sample_homography<R: Rng + ?Sized>(cfg: &AnnotatorConfig, height: usize, width: usize, rng: &mut R) -> Result<Homography> {
    cfg.validate()?;
    let (sx, sy) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    let corners = [(0.0, 0.0), (sx, 0.0), (sx, sy), (0.0, sy)];
    for _ in 0..MAX_ATTEMPTS {
        let perspective = if cfg.perspective_amp > 0.0 {
            let a = cfg.perspective_amp;
            let jittered = corners.map(|(x, y)| (x + uniform(rng, -a, a) * sx, y + uniform(rng, -a, a) * sy));
            match Homography::from_correspondences(corners, jittered) {
                Ok(h) => h,
                Err(_) => continue,
            }
        } else {
            Homography::identity()
        };
        let max_rot = cfg.rotation_max_deg.to_radians();
        let theta = uniform(rng, -max_rot, max_rot);
        let scale = uniform(rng, cfg.scale_min, cfg.scale_max);
        let t = cfg.translation_frac;
        let (tx, ty) = (uniform(rng, -t, t) * sx, uniform(rng, -t, t) * sy);

        let (cx, cy) = (sx / 2.0, sy / 2.0);
        let (c, s) = (theta.cos() * scale, theta.sin() * scale);
        let similarity = Homography {
            m: Matrix3::new(c, -s, cx - c * cx + s * cy + tx, s, c, cy - s * cx - c * cy + ty, 0.0, 0.0, 1.0),
        };
        let Ok(h) = similarity.compose(&perspective) else { continue };
        let inside = corners.iter().all(|&(x, y)| {
            let (u, v) = h.apply(x, y);
            let (u, v) = (u / sx, v / sy);
            (CORNER_BOUND.0..=CORNER_BOUND.1).contains(&u) && (CORNER_BOUND.0..=CORNER_BOUND.1).contains(&v)
        });
        if inside {
            return Ok(h);
        }
    }
    Err(Error::invalid(format!(
        "no homography within the corner bound after {MAX_ATTEMPTS} attempts"
    )))
}

/// The `n` transforms used by [`homography_adapt`]: identity first, then seeded samples.
pub fn adaptation_homographies(cfg: &AnnotatorConfig, height: usize, width: usize) -> Result<Vec<Homography>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.rng_seed, rng::streams::HOMOGRAPHY);
    let mut hs = vec![Homography::identity()];
    for _ in 1..cfg.n_homographies {
        hs.push(sample_homography(cfg, height, width, &mut rng)?);
    }
    Ok(hs)
}

/// Bilinear sample at `(x, y)` assumed inside the frame.
pub(crate) fn bilinear<T: Scalar>(img: &Raster<T>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dims();
    let x0 = (x.floor() as isize).clamp(0, w as isize - 1) as usize;
    let y0 = (y.floor() as isize).clamp(0, h as isize - 1) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64).clamp(0.0, 1.0);
    let fy = (y - y0 as f64).clamp(0.0, 1.0);
    let a = img.get(y0, x0).as_f64();
    let b = img.get(y0, x1).as_f64();
    let c = img.get(y1, x0).as_f64();
    let d = img.get(y1, x1).as_f64();
    (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
}

const FRAME_EPS: f64 = 1e-9;

pub(crate) fn in_frame(h: usize, w: usize, x: f64, y: f64) -> bool {
    x >= -FRAME_EPS && y >= -FRAME_EPS && x <= (w - 1) as f64 + FRAME_EPS && y <= (h - 1) as f64 + FRAME_EPS
}

/// Warps `img` by `h` (source to destination) with inverse-mapped bilinear
/// sampling. Returns the warped image and a 0/1 validity mask; pixels whose
/// source falls outside the input are 0 in both.
pub fn warp_image<T: Scalar>(img: &Raster<T>, h: &Homography) -> (Raster<T>, Raster<T>) {
    let (rows, cols) = img.dims();
    if h.is_identity() {
        return (img.clone(), Raster::filled(rows, cols, T::one()));
    }
    let inv = h.inverse();
    let mut out = Raster::zeros(rows, cols);
    let mut mask = Raster::zeros(rows, cols);
    for y in 0..rows {
        for x in 0..cols {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if in_frame(rows, cols, sx, sy) {
                out.set(y, x, T::lit(bilinear(img, sx, sy)));
                mask.set(y, x, T::one());
            }
        }
    }
    (out, mask)
}

/// Mask-weighted homography adaptation of an edge predictor.
///
/// For every transform `H_i` the image is warped, passed through `predictor`
/// and warped back with `H_i^-1`; the back-warped validity mask weights each
/// contribution, so pixels that left the frame under `H_i` do not dilute the
/// mean. Pixels never covered are 0.
pub fn homography_adapt<T, P>(img: &Raster<T>, predictor: P, cfg: &AnnotatorConfig) -> Result<Raster<T>>
where
    T: Scalar,
    P: Fn(&Raster<T>) -> Result<Raster<T>> + Sync,
{
    let (rows, cols) = img.dims();
    let hs = adaptation_homographies(cfg, rows, cols)?;
    adapt_with(img, &predictor, &hs)
}

/// [`homography_adapt`] over an explicit list of transforms.
pub fn adapt_with<T, P>(img: &Raster<T>, predictor: &P, homographies: &[Homography]) -> Result<Raster<T>>
where
    T: Scalar,
    P: Fn(&Raster<T>) -> Result<Raster<T>> + Sync,
{
    let (rows, cols) = img.dims();
    let contributions: Vec<(Raster<T>, Raster<T>)> = homographies
        .par_iter()
        .map(|h| {
            let (warped, mask) = warp_image(img, h);
            let pred = predictor(&warped)?;
            pred.check_same_dims(&warped, "predictor output geometry")?;
            let inv = h.inverse();
            let (back, _) = warp_image(&pred, &inv);
            let (weight, _) = warp_image(&mask, &inv);
            Ok((back, weight))
        })
        .collect::<Result<_>>()?;
    let n = rows * cols;
    let mut acc = vec![0.0f64; n];
    let mut count = vec![0.0f64; n];
    for (back, weight) in &contributions {
        for i in 0..n {
            let m = weight.pixels()[i].as_f64();
            acc[i] += back.pixels()[i].as_f64() * m;
            count[i] += m;
        }
    }
    let pixels = acc
        .iter()
        .zip(&count)
        .map(|(&a, &c)| if c > 0.0 { T::lit(a / c) } else { T::zero() })
        .collect();
    Raster::new(rows, cols, pixels)
}
