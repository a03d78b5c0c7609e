//! Synthetic shapes with exact edge ground truth.
//!
//! Shapes are painted into a label canvas in z-order. A pixel is a ground-truth
//! edge when one of its 4-neighbours carries a lower label (i.e. it sits on the
//! visible outline of the shape painted last there) and the clean, noise-free
//! canvas has enough local contrast around it.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, write_png, Raster};
use crate::rng::{self, Rng};
use crate::{EdgeMap, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Segment,
    Polygon,
    Star,
    Ellipse,
    Cube,
    Checkerboard,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Segment,
        ShapeKind::Polygon,
        ShapeKind::Star,
        ShapeKind::Ellipse,
        ShapeKind::Cube,
        ShapeKind::Checkerboard,
    ];
}

/// One painted primitive. Coordinates are `(x, y)` in pixels.
///
/// * `Segment`, `Polygon`, `Star`: the vertex chain (polygons closed implicitly).
/// * `Ellipse`: `[centre, (rx, ry)]`, axis aligned.
/// * `Cube`: the 8 projected corners; edges join corners differing in one bit.
/// * `Checkerboard`: `[origin, u, v, (cols, rows)]`, cell `(i, j)` spans
///   `origin + i*u + j*v` to `origin + (i+1)*u + (j+1)*v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub vertices: Vec<(f64, f64)>,
    /// Fill intensity; checkerboards alternate between this and `alt_intensity`.
    pub intensity: f32,
    pub alt_intensity: f32,
}

impl Shape {
    pub fn polygon(vertices: Vec<(f64, f64)>, intensity: f32) -> Self {
        Shape {
            kind: ShapeKind::Polygon,
            vertices,
            intensity,
            alt_intensity: intensity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Image,
    pub gt_edges: EdgeMap,
    pub shapes: Vec<Shape>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub background: f32,
    pub background_sigma: f64,
    /// Probability of blurring the background noise.
    pub background_blur_prob: f64,
    /// Minimum |fill - background|.
    pub fill_contrast: f32,
    /// Ground-truth pixels need this much contrast in their clean 3x3 window.
    pub edge_contrast: f32,
    pub augment_blur_max: f64,
    pub augment_noise_max: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 120,
            width: 160,
            min_shapes: 1,
            max_shapes: 8,
            background: 0.5,
            background_sigma: 0.12,
            background_blur_prob: 0.5,
            fill_contrast: 0.15,
            edge_contrast: 0.1,
            augment_blur_max: 1.0,
            augment_noise_max: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::invalid(format!(
                "synthetic images must be at least 32x32, got {}x{}",
                self.height, self.width
            )));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::invalid("synthetic: min_shapes > max_shapes"));
        }
        Ok(())
    }
}

/// Label canvas: `labels[i] == 0` is background.
pub struct Canvas {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    /// Noise-free intensities; background pixels hold the background level.
    pub clean: Vec<f32>,
    next_label: u32,
}

impl Canvas {
    pub fn new(height: usize, width: usize, background: f32) -> Self {
        Canvas {
            height,
            width,
            labels: vec![0; height * width],
            clean: vec![background; height * width],
            next_label: 1,
        }
    }

    fn paint(&mut self, pixels: &[(isize, isize)], value: f32) {
        let label = self.next_label;
        self.next_label += 1;
        for &(x, y) in pixels {
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                let i = y as usize * self.width + x as usize;
                self.labels[i] = label;
                self.clean[i] = value;
            }
        }
    }

    pub fn draw(&mut self, shape: &Shape) {
        let v = &shape.vertices;
        match shape.kind {
            ShapeKind::Segment => {
                for pair in v.windows(2) {
                    self.paint(&bresenham(pair[0], pair[1]), shape.intensity);
                }
            }
            ShapeKind::Polygon | ShapeKind::Star => {
                let px = fill_polygon(v, self.height);
                self.paint(&px, shape.intensity);
            }
            ShapeKind::Ellipse => {
                let px = fill_ellipse(v[0], v[1]);
                self.paint(&px, shape.intensity);
            }
            ShapeKind::Cube => {
                let mut px = Vec::new();
                for a in 0..8usize {
                    for bit in [1, 2, 4] {
                        let b = a ^ bit;
                        if a < b {
                            px.extend(bresenham(v[a], v[b]));
                        }
                    }
                }
                self.paint(&px, shape.intensity);
            }
            ShapeKind::Checkerboard => {
                let (o, u, w, dims) = (v[0], v[1], v[2], v[3]);
                let at = |i: f64, j: f64| (o.0 + i * u.0 + j * w.0, o.1 + i * u.1 + j * w.1);
                for j in 0..dims.1 as usize {
                    for i in 0..dims.0 as usize {
                        let (fi, fj) = (i as f64, j as f64);
                        let quad = [at(fi, fj), at(fi + 1.0, fj), at(fi + 1.0, fj + 1.0), at(fi, fj + 1.0)];
                        let value = if (i + j) % 2 == 0 { shape.intensity } else { shape.alt_intensity };
                        let px = fill_polygon(&quad, self.height);
                        self.paint(&px, value);
                    }
                }
            }
        }
    }

    /// Visible outlines with at least `min_contrast` in the clean 3x3 window.
    pub fn ground_truth(&self, min_contrast: f32) -> EdgeMap {
        let (h, w) = (self.height, self.width);
        Raster::from_fn(h, w, |y, x| {
            let i = y * w + x;
            let label = self.labels[i];
            if label == 0 {
                return 0.0;
            }
            let lower = [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)].iter().any(|&(dy, dx)| {
                self.neighbour(y, x, dy, dx).is_some_and(|j| self.labels[j] < label)
            });
            if !lower {
                return 0.0;
            }
            let mut contrast = 0.0f32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(j) = self.neighbour(y, x, dy, dx) {
                        contrast = contrast.max((self.clean[j] - self.clean[i]).abs());
                    }
                }
            }
            if contrast >= min_contrast {
                1.0
            } else {
                0.0
            }
        })
    }

    fn neighbour(&self, y: usize, x: usize, dy: isize, dx: isize) -> Option<usize> {
        let (yy, xx) = (y as isize + dy, x as isize + dx);
        (yy >= 0 && xx >= 0 && (yy as usize) < self.height && (xx as usize) < self.width)
            .then(|| yy as usize * self.width + xx as usize)
    }
}

fn round_point(p: (f64, f64)) -> (isize, isize) {
    (p.0.round() as isize, p.1.round() as isize)
}

/// Bresenham line between rounded endpoints, endpoints included.
pub fn bresenham(a: (f64, f64), b: (f64, f64)) -> Vec<(isize, isize)> {
    let (mut x0, mut y0) = round_point(a);
    let (x1, y1) = round_point(b);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Pixels whose centres lie inside the polygon (even-odd rule) plus the
/// Bresenham outline, rows clipped to `0..height`.
pub fn fill_polygon(vertices: &[(f64, f64)], height: usize) -> Vec<(isize, isize)> {
    let n = vertices.len();
    let mut out = Vec::new();
    for k in 0..n {
        out.extend(bresenham(vertices[k], vertices[(k + 1) % n]));
    }
    let ymin = vertices.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0) as isize;
    let ymax = vertices.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min(height as f64 - 1.0) as isize;
    let mut xs = Vec::new();
    for y in ymin..=ymax {
        let yc = y as f64;
        xs.clear();
        for k in 0..n {
            let (a, b) = (vertices[k], vertices[(k + 1) % n]);
            if (a.1 <= yc && yc < b.1) || (b.1 <= yc && yc < a.1) {
                xs.push(a.0 + (yc - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let (lo, hi) = (pair[0].ceil() as isize, pair[1].floor() as isize);
            out.extend((lo..=hi).map(|x| (x, y)));
        }
    }
    out
}

/// Midpoint ellipse outline with its interior spans.
pub fn fill_ellipse(centre: (f64, f64), radii: (f64, f64)) -> Vec<(isize, isize)> {
    let (cx, cy) = round_point(centre);
    let (a, b) = (radii.0.round().max(1.0) as i64, radii.1.round().max(1.0) as i64);
    let outline = midpoint_ellipse(a, b);
    // widest span per row offset
    let mut span = vec![0i64; b as usize + 1];
    for &(x, y) in &outline {
        let y = y.unsigned_abs() as usize;
        span[y] = span[y].max(x.abs());
    }
    let mut out = Vec::new();
    for (dy, &half) in span.iter().enumerate() {
        for s in [-1i64, 1] {
            if dy == 0 && s == 1 {
                continue;
            }
            for dx in -half..=half {
                out.push((cx + dx as isize, cy + (s * dy as i64) as isize));
            }
        }
    }
    out
}

/// First-quadrant midpoint ellipse points mirrored to all four quadrants.
fn midpoint_ellipse(a: i64, b: i64) -> Vec<(i64, i64)> {
    let (a2, b2) = (a * a, b * b);
    let mut pts = Vec::new();
    let (mut x, mut y) = (0i64, b);
    // region 1: slope magnitude < 1, step in x; decision scaled by 4
    let mut d1 = 4 * b2 - 4 * a2 * b + a2;
    while b2 * x <= a2 * y {
        pts.push((x, y));
        if d1 < 0 {
            d1 += 4 * b2 * (2 * x + 3);
        } else {
            d1 += 4 * b2 * (2 * x + 3) - 8 * a2 * (y - 1);
            y -= 1;
        }
        x += 1;
    }
    // region 2: step in y
    let mut d2 = b2 * (2 * x + 1) * (2 * x + 1) + 4 * a2 * (y - 1) * (y - 1) - 4 * a2 * b2;
    while y >= 0 {
        pts.push((x, y));
        if d2 > 0 {
            d2 += 4 * a2 * (3 - 2 * y);
        } else {
            d2 += 8 * b2 * (x + 1) + 4 * a2 * (3 - 2 * y);
            x += 1;
        }
        y -= 1;
    }
    pts.iter().flat_map(|&(x, y)| [(x, y), (-x, y), (x, -y), (-x, -y)]).collect()
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Intensity at least `contrast` away from `background`, inside `[0, 1]`.
fn contrasting(rng: &mut Rng, background: f32, contrast: f32) -> f32 {
    let below = (background - contrast).max(0.0);
    let above = (1.0 - background - contrast).max(0.0);
    let u = rng.random::<f32>() * (below + above);
    if u < below {
        u
    } else {
        background + contrast + (u - below)
    }
}

fn random_shape(kind: ShapeKind, cfg: &SyntheticConfig, rng: &mut Rng) -> Shape {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let small = h.min(w);
    let intensity = contrasting(rng, cfg.background, cfg.fill_contrast);
    let centre = (uniform(rng, 0.15 * w, 0.85 * w), uniform(rng, 0.15 * h, 0.85 * h));
    let mut alt_intensity = intensity;
    let vertices = match kind {
        ShapeKind::Segment => loop {
            let a = (uniform(rng, 0.0, w - 1.0), uniform(rng, 0.0, h - 1.0));
            let b = (uniform(rng, 0.0, w - 1.0), uniform(rng, 0.0, h - 1.0));
            if (a.0 - b.0).hypot(a.1 - b.1) >= 0.15 * small {
                break vec![a, b];
            }
        },
        ShapeKind::Polygon => {
            let n = rng.random_range(3..=8);
            let (rx, ry) = (uniform(rng, 0.1, 0.3) * small, uniform(rng, 0.1, 0.3) * small);
            let mut angles: Vec<f64> = (0..n).map(|_| uniform(rng, 0.0, std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            angles.iter().map(|t| (centre.0 + rx * t.cos(), centre.1 + ry * t.sin())).collect()
        }
        ShapeKind::Star => {
            let n = rng.random_range(5..=8);
            let outer = uniform(rng, 0.12, 0.3) * small;
            let inner = outer * uniform(rng, 0.3, 0.6);
            let phase = uniform(rng, 0.0, std::f64::consts::TAU);
            (0..2 * n)
                .map(|k| {
                    let r = if k % 2 == 0 { outer } else { inner };
                    let t = phase + std::f64::consts::PI * k as f64 / n as f64;
                    (centre.0 + r * t.cos(), centre.1 + r * t.sin())
                })
                .collect()
        }
        ShapeKind::Ellipse => {
            vec![
                (centre.0.round(), centre.1.round()),
                ((uniform(rng, 0.06, 0.25) * small).round(), (uniform(rng, 0.06, 0.25) * small).round()),
            ]
        }
        ShapeKind::Cube => {
            let size = uniform(rng, 0.12, 0.25) * small;
            let (ax, ay, az) = (uniform(rng, 0.0, 6.3), uniform(rng, 0.0, 6.3), uniform(rng, 0.0, 6.3));
            (0..8)
                .map(|k| {
                    let p = [
                        if k & 1 == 0 { -0.5 } else { 0.5 },
                        if k & 2 == 0 { -0.5 } else { 0.5 },
                        if k & 4 == 0 { -0.5 } else { 0.5 },
                    ];
                    let (x, y, z) = rotate(p, ax, ay, az);
                    let _ = z;
                    (centre.0 + size * x, centre.1 + size * y)
                })
                .collect()
        }
        ShapeKind::Checkerboard => {
            let cell = uniform(rng, 0.06, 0.12) * small;
            let theta = uniform(rng, -0.6, 0.6);
            let (cols, rows) = (rng.random_range(2..=5) as f64, rng.random_range(2..=5) as f64);
            let u = (cell * theta.cos(), cell * theta.sin());
            let v = (-cell * theta.sin(), cell * theta.cos());
            let origin = (centre.0 - 0.5 * (cols * u.0 + rows * v.0), centre.1 - 0.5 * (cols * u.1 + rows * v.1));
            // the two colours straddle the background so both contrast with it
            alt_intensity = if intensity < cfg.background {
                contrasting(rng, cfg.background, cfg.fill_contrast).max(cfg.background + cfg.fill_contrast)
            } else {
                contrasting(rng, cfg.background, cfg.fill_contrast).min(cfg.background - cfg.fill_contrast)
            };
            vec![origin, u, v, (cols, rows)]
        }
    };
    Shape {
        kind,
        vertices,
        intensity,
        alt_intensity,
    }
}

fn rotate(p: [f64; 3], ax: f64, ay: f64, az: f64) -> (f64, f64, f64) {
    let (x, y, z) = (p[0], p[1], p[2]);
    let (y, z) = (y * ax.cos() - z * ax.sin(), y * ax.sin() + z * ax.cos());
    let (x, z) = (x * ay.cos() + z * ay.sin(), -x * ay.sin() + z * ay.cos());
    let (x, y) = (x * az.cos() - y * az.sin(), x * az.sin() + y * az.cos());
    (x, y, z)
}

/// Paints `shapes` over a (noisy) background and derives the ground truth.
pub fn render(cfg: &SyntheticConfig, shapes: &[Shape], rng: &mut Rng) -> Result<SyntheticSample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut canvas = Canvas::new(h, w, cfg.background);
    for s in shapes {
        canvas.draw(s);
    }
    let gt_edges = canvas.ground_truth(cfg.edge_contrast);

    let mut background = if cfg.background_sigma > 0.0 {
        let normal = Normal::new(cfg.background as f64, cfg.background_sigma)
            .map_err(|e| Error::invalid(format!("background noise: {e}")))?;
        Raster::from_fn(h, w, |_, _| normal.sample(rng).clamp(0.0, 1.0) as f32)
    } else {
        Raster::filled(h, w, cfg.background)
    };
    if rng.random::<f64>() < cfg.background_blur_prob {
        let sigma = uniform(rng, 0.5, 1.5);
        background = gaussian_blur(&background, sigma)?;
    }
    let mut image = Raster::from_fn(h, w, |y, x| {
        let i = y * w + x;
        if canvas.labels[i] == 0 {
            background.get(y, x)
        } else {
            canvas.clean[i]
        }
    });
    let sigma = uniform(rng, 0.0, cfg.augment_blur_max);
    if sigma > 0.1 {
        image = gaussian_blur(&image, sigma)?;
    }
    let noise = uniform(rng, 0.0, cfg.augment_noise_max);
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).map_err(|e| Error::invalid(format!("augmentation noise: {e}")))?;
        for v in image.pixels_mut() {
            *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(SyntheticSample {
        image,
        gt_edges,
        shapes: shapes.to_vec(),
    })
}

/// Random sample; `shape_count` forces the number of shapes.
pub fn generate_sample_with(cfg: &SyntheticConfig, rng: &mut Rng, shape_count: Option<usize>) -> Result<SyntheticSample> {
    cfg.validate()?;
    let count = shape_count.unwrap_or_else(|| rng.random_range(cfg.min_shapes..=cfg.max_shapes));
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
            random_shape(kind, cfg, rng)
        })
        .collect();
    render(cfg, &shapes, rng)
}

pub fn generate_sample(height: usize, width: usize, rng: &mut Rng) -> Result<SyntheticSample> {
    let cfg = SyntheticConfig {
        height,
        width,
        ..SyntheticConfig::default()
    };
    generate_sample_with(&cfg, rng, None)
}

/// Sample `index` of the dataset seeded with `seed`, independent of all others.
pub fn dataset_sample(cfg: &SyntheticConfig, seed: u64, index: usize) -> Result<SyntheticSample> {
    let mut rng = rng::stream(seed, rng::substream(rng::streams::SYNTH, index as u64));
    generate_sample_with(cfg, &mut rng, None)
}

pub fn sample_name(index: usize) -> String {
    format!("{index:06}.png")
}

pub fn generate_dataset(count: usize, height: usize, width: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<()> {
    let cfg = SyntheticConfig {
        height,
        width,
        ..SyntheticConfig::default()
    };
    generate_dataset_with(&cfg, count, seed, out_dir)
}

/// Writes `images/NNNNNN.png`, `edges/NNNNNN.png` and `manifest.txt`.
pub fn generate_dataset_with(cfg: &SyntheticConfig, count: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("generate_dataset: count must be at least 1"));
    }
    cfg.validate()?;
    let out = out_dir.as_ref();
    for sub in ["images", "edges"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    (0..count).into_par_iter().try_for_each(|i| -> Result<()> {
        let sample = dataset_sample(cfg, seed, i)?;
        let name = sample_name(i);
        write_png(out.join("images").join(&name), &sample.image)?;
        write_png(out.join("edges").join(&name), &sample.gt_edges)
    })?;
    let mut manifest = String::new();
    for i in 0..count {
        let name = sample_name(i);
        let _ = writeln!(manifest, "{i}\timages/{name}\tedges/{name}");
    }
    let path = out.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bresenham_endpoints_and_length() {
        let line = bresenham((0.0, 0.0), (5.0, 2.0));
        assert_eq!(line.first(), Some(&(0, 0)));
        assert_eq!(line.last(), Some(&(5, 2)));
        assert_eq!(line.len(), 6);
        assert_eq!(bresenham((3.0, 3.0), (3.0, 3.0)), vec![(3, 3)]);
    }

    #[test]
    fn midpoint_circle_is_symmetric_and_on_radius() {
        for &(x, y) in &midpoint_ellipse(10, 10) {
            let r = ((x * x + y * y) as f64).sqrt();
            assert!((r - 10.0).abs() < 0.75, "({x}, {y})");
        }
    }

    #[test]
    fn filled_square_covers_its_closed_box() {
        let sq = [(2.0, 3.0), (7.0, 3.0), (7.0, 9.0), (2.0, 9.0)];
        let mut px = fill_polygon(&sq, 20);
        px.sort();
        px.dedup();
        assert_eq!(px.len(), 6 * 7);
        assert!(px.iter().all(|&(x, y)| (2..=7).contains(&x) && (3..=9).contains(&y)));
    }

    #[test]
    fn zero_shapes_give_empty_ground_truth() {
        let cfg = SyntheticConfig::default();
        let mut rng = rng::stream(1, 0);
        let s = generate_sample_with(&cfg, &mut rng, Some(0)).unwrap();
        assert_eq!(s.gt_edges.count_nonzero(), 0);
        assert!(s.shapes.is_empty());
    }

    #[test]
    fn occluded_outline_is_not_ground_truth() {
        let mut c = Canvas::new(40, 40, 0.5);
        c.draw(&Shape::polygon(vec![(5.0, 5.0), (20.0, 5.0), (20.0, 20.0), (5.0, 20.0)], 0.9));
        c.draw(&Shape::polygon(vec![(10.0, 10.0), (30.0, 10.0), (30.0, 30.0), (10.0, 30.0)], 0.1));
        let gt = c.ground_truth(0.1);
        // the first square's hidden corner region is interior to the second
        assert_eq!(gt.get(20, 20), 0.0);
        assert_eq!(gt.get(10, 15), 1.0);
        assert_eq!(gt.get(5, 5), 1.0);
    }

    #[test]
    fn samples_are_reproducible() {
        let a = dataset_sample(&SyntheticConfig::default(), 9, 4).unwrap();
        let b = dataset_sample(&SyntheticConfig::default(), 9, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.gt_edges.is_binary() && a.image.in_unit_range());
    }

    #[test]
    fn every_kind_renders_edges() {
        let cfg = SyntheticConfig::default();
        let mut rng = rng::stream(3, 0);
        for kind in ShapeKind::ALL {
            let shape = random_shape(kind, &cfg, &mut rng);
            let s = render(&cfg, &[shape], &mut rng).unwrap();
            assert!(s.gt_edges.count_nonzero() > 10, "{kind:?}");
        }
    }

    #[test]
    fn rejects_tiny_images() {
        let mut rng = rng::stream(0, 0);
        assert!(generate_sample(16, 64, &mut rng).is_err());
    }
}
