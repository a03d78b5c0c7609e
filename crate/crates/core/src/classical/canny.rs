use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::{gaussian_kernel, separable_filter, Raster};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    /// Hysteresis thresholds on the min-max normalised gradient magnitude.
    pub low: f64,
    pub high: f64,
    /// Pre-smoothing Gaussian.
    pub sigma: f64,
    /// Images whose peak Sobel magnitude stays below this have no edges.
    /// The default is about the response to a 0.01 intensity step, so the
    /// normalisation cannot blow sub-grey-level residue up into edges.
    pub min_magnitude: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            low: 0.1,
            high: 0.2,
            sigma: 1.0,
            min_magnitude: 0.025,
        }
    }
}

/// Sobel derivatives `(gx, gy)` with replicate borders; `gx` grows to the right, `gy` downwards.
pub fn sobel(img: &Raster<f64>) -> (Raster<f64>, Raster<f64>) {
    let smooth = [1.0, 2.0, 1.0];
    let diff = [-1.0, 0.0, 1.0];
    (separable_filter(img, &diff, &smooth), separable_filter(img, &smooth, &diff))
}

const DIRS: [(isize, isize); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];

pub fn canny<T: Scalar>(img: &Raster<T>, low: f64, high: f64) -> Result<Raster<T>> {
    canny_with(
        img,
        &CannyParams {
            low,
            high,
            ..CannyParams::default()
        },
    )
}

/// Canny detector: Gaussian pre-smoothing, Sobel gradients, non-maximum
/// suppression along the quantised gradient direction and hysteresis with
/// 8-connectivity. Returns a binary map.
pub fn canny_with<T: Scalar>(img: &Raster<T>, params: &CannyParams) -> Result<Raster<T>> {
    let CannyParams {
        low,
        high,
        sigma,
        min_magnitude,
    } = *params;
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
        return Err(Error::invalid(format!(
            "canny thresholds must satisfy 0 <= low <= high <= 1, got low={low} high={high}"
        )));
    }
    let (h, w) = img.dims();
    let k = gaussian_kernel(sigma);
    let smooth = separable_filter(img, &k, &k);
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f64> = gx
        .pixels()
        .iter()
        .zip(gy.pixels())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    let hi = mag.iter().copied().fold(0.0, f64::max);
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    if hi < min_magnitude || hi <= lo {
        return Ok(Raster::zeros(h, w));
    }
    let norm: Vec<f64> = mag.iter().map(|m| (m - lo) / (hi - lo)).collect();
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            norm[y as usize * w + x as usize]
        }
    };

    // Non-maximum suppression. `d` points up the intensity slope; on an exact
    // tie across a step the pixel on the bright side survives. Differences
    // below `TIE` (relative to the peak magnitude) count as ties so that solver
    // noise upstream cannot flip the choice from row to row.
    const TIE: f64 = 1e-4;
    let mut kept = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let m = norm[y * w + x];
            if m <= 0.0 {
                continue;
            }
            let angle = gy.get(y, x).atan2(gx.get(y, x));
            let sector = ((angle / std::f64::consts::FRAC_PI_4).round() as isize).rem_euclid(8) as usize;
            let (dy, dx) = DIRS[sector];
            let (yi, xi) = (y as isize, x as isize);
            let ahead = at(yi + dy, xi + dx);
            let behind = at(yi - dy, xi - dx);
            if m >= ahead + TIE && m >= behind - TIE {
                kept[y * w + x] = m;
            }
        }
    }

    // Hysteresis
    let mut out = vec![false; h * w];
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| kept[i] > 0.0 && kept[i] >= high).collect();
    for &i in &queue {
        out[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for (dy, dx) in DIRS {
            let (yy, xx) = (y + dy, x + dx);
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                continue;
            }
            let j = yy as usize * w + xx as usize;
            if !out[j] && kept[j] > 0.0 && kept[j] >= low {
                out[j] = true;
                queue.push_back(j);
            }
        }
    }
    Raster::new(h, w, out.into_iter().map(|b| if b { T::one() } else { T::zero() }).collect())
}
