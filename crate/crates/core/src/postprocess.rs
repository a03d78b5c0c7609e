//! Fusion of the pixel-level and object-level head outputs.
//!
//! Object-level edges act as a skeleton: a breadth-first search starting at
//! every object edge grows through 8-connected pixel-level edges, keeping
//! their probabilities. The grown map is averaged with the object map and
//! min-max normalised.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::{minmax_normalize, Raster};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionThresholds {
    /// Pixel-level probability at which a pixel may be grown into.
    pub pixel: f64,
    /// Object-level probability at which a pixel seeds the search.
    pub object: f64,
}

impl Default for FusionThresholds {
    fn default() -> Self {
        FusionThresholds {
            pixel: 0.005,
            object: 0.005,
        }
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Pixel-level edges reachable from object-level seeds.
///
/// Seeds are pixels with `o_obj >= obj_thr`, candidates pixels with
/// `o_pix >= pix_thr`. Every candidate reached by an 8-connected walk that
/// starts at a seed and otherwise steps only on candidates keeps its `o_pix`
/// value; all other pixels are 0.
pub fn bfs_expand<T: Scalar>(o_pix: &Raster<T>, o_obj: &Raster<T>, pix_thr: f64, obj_thr: f64) -> Result<Raster<T>> {
    o_pix.check_same_dims(o_obj, "bfs_expand")?;
    for (name, t) in [("pixel", pix_thr), ("object", obj_thr)] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("{name} threshold must lie in (0, 1), got {t}")));
        }
    }
    let (h, w) = o_pix.dims();
    let candidate: Vec<bool> = o_pix.pixels().iter().map(|v| v.as_f64() >= pix_thr).collect();
    let mut visited = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, v) in o_obj.pixels().iter().enumerate() {
        if v.as_f64() >= obj_thr {
            visited[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for (dy, dx) in NEIGHBOURS {
            let (yy, xx) = (y + dy, x + dx);
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                continue;
            }
            let j = yy as usize * w + xx as usize;
            if !visited[j] && candidate[j] {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    let pixels = o_pix
        .pixels()
        .iter()
        .zip(visited.iter().zip(&candidate))
        .map(|(&v, (&seen, &cand))| if seen && cand { v } else { T::zero() })
        .collect();
    Raster::new(h, w, pixels)
}

/// `norm((bfs_expand(o_pix, o_obj) + o_obj) / 2)` with min-max `norm`.
pub fn fuse<T: Scalar>(o_pix: &Raster<T>, o_obj: &Raster<T>, thresholds: FusionThresholds) -> Result<Raster<T>> {
    let grown = bfs_expand(o_pix, o_obj, thresholds.pixel, thresholds.object)?;
    Ok(minmax_normalize(&average(&grown, o_obj)?))
}

/// `norm((o_pix + o_obj) / 2)`: both heads combined without the search.
pub fn combine_heads<T: Scalar>(o_pix: &Raster<T>, o_obj: &Raster<T>) -> Result<Raster<T>> {
    Ok(minmax_normalize(&average(o_pix, o_obj)?))
}

fn average<T: Scalar>(a: &Raster<T>, b: &Raster<T>) -> Result<Raster<T>> {
    a.check_same_dims(b, "average")?;
    let half = T::lit(0.5);
    let pixels = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| (x + y) * half).collect();
    Raster::new(a.height(), a.width(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_seeds_means_nothing_survives() {
        let pix = Raster::<f64>::filled(6, 6, 0.9);
        let obj = Raster::<f64>::filled(6, 6, 0.001);
        assert_eq!(bfs_expand(&pix, &obj, 0.005, 0.005).unwrap().count_nonzero(), 0);
    }

    #[test]
    fn identical_binary_maps_are_kept() {
        let m = Raster::<f64>::from_fn(8, 8, |y, x| if (x + 2 * y) % 5 == 0 { 1.0 } else { 0.0 });
        assert_eq!(bfs_expand(&m, &m, 0.005, 0.005).unwrap(), m);
    }

    #[test]
    fn only_components_touching_a_seed_survive() {
        let mut pix = Raster::<f64>::zeros(8, 8);
        for x in 0..4 {
            pix.set(1, x, 0.4);
        }
        // a diagonal step keeps it one 8-connected component
        pix.set(2, 4, 0.3);
        for x in 5..8 {
            pix.set(6, x, 0.6);
        }
        let mut obj = Raster::<f64>::zeros(8, 8);
        obj.set(0, 0, 1.0);
        let out = bfs_expand(&pix, &obj, 0.005, 0.005).unwrap();
        for x in 0..4 {
            assert_eq!(out.get(1, x), 0.4);
        }
        assert_eq!(out.get(2, 4), 0.3);
        assert!((5..8).all(|x| out.get(6, x) == 0.0));
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn fuse_degenerate_cases() {
        let zero = Raster::<f64>::zeros(5, 5);
        assert_eq!(fuse(&zero, &zero, FusionThresholds::default()).unwrap(), zero);
        let m = Raster::<f64>::from_fn(5, 5, |y, x| if y == x { 1.0 } else { 0.0 });
        assert_eq!(fuse(&zero, &m, FusionThresholds::default()).unwrap(), m);
    }

    #[test]
    fn rejects_mismatched_geometry_and_thresholds() {
        let a = Raster::<f64>::zeros(4, 4);
        let b = Raster::<f64>::zeros(4, 5);
        assert!(bfs_expand(&a, &b, 0.1, 0.1).is_err());
        assert!(bfs_expand(&a, &a, 0.0, 0.1).is_err());
    }
}
