use super::Raster;
use crate::scalar::Scalar;

fn on<T: Scalar>(v: T) -> bool {
    v >= T::lit(0.5)
}

/// Binary dilation with a `(2r + 1)^2` square; pixels `>= 0.5` count as set.
pub fn dilate<T: Scalar>(binary: &Raster<T>, radius: usize) -> Raster<T> {
    let (h, w) = binary.dims();
    let r = radius as isize;
    // separable max filter: rows, then columns
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = (x as isize - r).max(0) as usize;
            let hi = (x as isize + r).min(w as isize - 1) as usize;
            rows[y * w + x] = (lo..=hi).any(|xx| on(binary.get(y, xx)));
        }
    }
    Raster::from_fn(h, w, |y, x| {
        let lo = (y as isize - r).max(0) as usize;
        let hi = (y as isize + r).min(h as isize - 1) as usize;
        if (lo..=hi).any(|yy| rows[yy * w + x]) {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Neighbours `P2..P9` clockwise from north; outside the frame counts as unset.
fn neighbours(grid: &[bool], h: usize, w: usize, y: usize, x: usize) -> [bool; 8] {
    const OFFSETS: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];
    OFFSETS.map(|(dy, dx)| {
        let (yy, xx) = (y as isize + dy, x as isize + dx);
        yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && grid[yy as usize * w + xx as usize]
    })
}

/// Zhang-Suen deletion test for one sub-iteration (`first` selects the pass).
pub(crate) fn deletable(p: [bool; 8], first: bool) -> bool {
    let count = p.iter().filter(|&&b| b).count();
    if !(2..=6).contains(&count) {
        return false;
    }
    let transitions = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if transitions != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = p;
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Zhang-Suen thinning to a one-pixel-wide skeleton.
pub fn thin<T: Scalar>(binary: &Raster<T>) -> Raster<T> {
    let (h, w) = binary.dims();
    let mut grid: Vec<bool> = binary.pixels().iter().map(|&v| on(v)).collect();
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for first in [true, false] {
            doomed.clear();
            for y in 0..h {
                for x in 0..w {
                    if grid[y * w + x] && deletable(neighbours(&grid, h, w, y, x), first) {
                        doomed.push(y * w + x);
                    }
                }
            }
            changed |= !doomed.is_empty();
            for &i in &doomed {
                grid[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
    Raster::new(h, w, grid.into_iter().map(|b| if b { T::one() } else { T::zero() }).collect())
        .expect("same geometry")
}

/// Whether no pixel of `binary` is removable by either Zhang-Suen sub-iteration.
pub fn is_thinning_fixed_point<T: Scalar>(binary: &Raster<T>) -> bool {
    let (h, w) = binary.dims();
    let grid: Vec<bool> = binary.pixels().iter().map(|&v| on(v)).collect();
    (0..h * w).all(|i| {
        !grid[i] || {
            let p = neighbours(&grid, h, w, i / w, i % w);
            !deletable(p, true) && !deletable(p, false)
        }
    })
}
