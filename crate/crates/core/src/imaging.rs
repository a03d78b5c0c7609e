//! Rasters and the filtering / morphology primitives shared by every stage.

mod io;
mod morphology;

pub use io::{read_image, write_png};
pub use morphology::{dilate, is_thinning_fixed_point, thin};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single-channel row-major raster.
///
/// Images and edge maps keep their values in `[0, 1]`; intermediate results
/// (gradients, energies) may hold any finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Raster<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty raster {height}x{width}")));
        }
        if height * width != pixels.len() {
            return Err(Error::shape(format!(
                "{height}x{width} raster needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "empty raster");
        Raster {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "empty raster");
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Raster {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel at `(y, x)` with coordinates clamped to the frame.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> T {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.pixels[yy * self.width + xx]
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_dims<U>(&self, other: &Raster<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Raster {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// 1 where the value is at least `threshold`, else 0.
    pub fn binarize(&self, threshold: T) -> Self {
        self.map(|v| if v >= threshold { T::one() } else { T::zero() })
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != T::zero()).count()
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&v| v == T::zero() || v == T::one())
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|&v| v >= T::zero() && v <= T::one())
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|v| v.as_f64()).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn cast<U: Scalar>(&self) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Replicate-pads on the bottom and right up to the given size.
    pub fn pad_replicate(&self, height: usize, width: usize) -> Self {
        assert!(height >= self.height && width >= self.width);
        Raster::from_fn(height, width, |y, x| self.get_clamped(y as isize, x as isize))
    }

    /// Top-left `height x width` window.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Raster::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }
}

/// Luma `0.299 R + 0.587 G + 0.114 B` of interleaved RGB samples, clamped to `[0, 1]`.
pub fn to_grayscale<T: Scalar>(height: usize, width: usize, rgb: &[T]) -> Result<Raster<T>> {
    if rgb.len() != 3 * height * width {
        return Err(Error::shape(format!(
            "rgb buffer of {} samples for {height}x{width}",
            rgb.len()
        )));
    }
    let pixels = rgb
        .chunks_exact(3)
        .map(|p| {
            let l = 0.299 * p[0].as_f64() + 0.587 * p[1].as_f64() + 0.114 * p[2].as_f64();
            T::lit(l.clamp(0.0, 1.0))
        })
        .collect();
    Raster::new(height, width, pixels)
}

/// Sampled Gaussian of radius `ceil(3 sigma)`, normalised to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable 1-D correlation along rows then columns with replicate borders.
pub(crate) fn separable_filter<T: Scalar>(img: &Raster<T>, kx: &[f64], ky: &[f64]) -> Raster<f64> {
    let (h, w) = img.dims();
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx
                .iter()
                .enumerate()
                .map(|(i, &k)| k * img.get_clamped(y as isize, x as isize + i as isize - rx).as_f64())
                .sum();
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let yy = (y as isize + i as isize - ry).clamp(0, h as isize - 1) as usize;
                    k * tmp[yy * w + x]
                })
                .sum();
        }
    }
    Raster {
        height: h,
        width: w,
        pixels: out,
    }
}

pub fn gaussian_blur<T: Scalar>(img: &Raster<T>, sigma: f64) -> Result<Raster<T>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("gaussian_blur: sigma must be positive, got {sigma}")));
    }
    let k = gaussian_kernel(sigma);
    let lo = img.pixels.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    let hi = img.pixels.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    // a convex combination cannot leave the input range; clamp away rounding
    Ok(separable_filter(img, &k, &k).map(|v| v.clamp(lo, hi)).cast())
}

/// `(v - min) / (max - min)`; a constant raster maps to all zeros.
pub fn minmax_normalize<T: Scalar>(map: &Raster<T>) -> Raster<T> {
    let lo = map.pixels.iter().copied().fold(T::infinity(), T::min);
    let hi = map.pixels.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return Raster::zeros(map.height, map.width);
    }
    let span = hi - lo;
    map.map(|v| ((v - lo) / span).min(T::one()).max(T::zero()))
}
