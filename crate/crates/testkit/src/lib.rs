//! Brute-force reference implementations for testing. Everything here works
//! on plain `Vec<bool>` grids so it shares no code path with the harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `depth x height x width` binary grid in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub volumetric: bool,
    pub bits: Vec<bool>,
}

impl Grid {
    pub fn plane(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width);
        Self { depth: 1, height, width, volumetric: false, bits }
    }

    pub fn volume(depth: usize, height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), depth * height * width);
        Self { depth, height, width, volumetric: true, bits }
    }

    fn get(&self, z: i64, y: i64, x: i64) -> bool {
        if z < 0 || y < 0 || x < 0 {
            return false;
        }
        let (z, y, x) = (z as usize, y as usize, x as usize);
        if z >= self.depth || y >= self.height || x >= self.width {
            return false;
        }
        self.bits[(z * self.height + y) * self.width + x]
    }

    fn cells(&self) -> impl Iterator<Item = (i64, i64, i64)> + '_ {
        (0..self.depth).flat_map(move |z| {
            (0..self.height).flat_map(move |y| (0..self.width).map(move |x| (z as i64, y as i64, x as i64)))
        })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Foreground cells with a background (or out-of-grid) face neighbour.
pub fn boundary(g: &Grid) -> Vec<(i64, i64, i64)> {
    let mut offsets = vec![(0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
    if g.volumetric {
        offsets.extend([(-1, 0, 0), (1, 0, 0)]);
    }
    g.cells()
        .filter(|&(z, y, x)| g.get(z, y, x))
        .filter(|&(z, y, x)| offsets.iter().any(|&(dz, dy, dx)| !g.get(z + dz, y + dy, x + dx)))
        .collect()
}

fn dist(a: (i64, i64, i64), b: (i64, i64, i64)) -> f64 {
    let d2 = (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2) + (a.2 - b.2).pow(2);
    (d2 as f64).sqrt()
}

/// Number of points in `from` within `radius` of some point of `to` (all pairs).
fn close_count(from: &[(i64, i64, i64)], to: &[(i64, i64, i64)], radius: f64) -> usize {
    from.iter()
        .filter(|&&a| to.iter().any(|&b| dist(a, b) <= radius))
        .count()
}

pub fn dice(p: &Grid, g: &Grid) -> f64 {
    let inter = p.bits.iter().zip(&g.bits).filter(|(a, b)| **a && **b).count();
    let total = p.count() + g.count();
    if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 }
}

pub fn iou(p: &Grid, g: &Grid) -> f64 {
    let inter = p.bits.iter().zip(&g.bits).filter(|(a, b)| **a && **b).count();
    let union = p.bits.iter().zip(&g.bits).filter(|(a, b)| **a || **b).count();
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

pub fn surface_dice(p: &Grid, g: &Grid, tau: f64) -> f64 {
    let (bp, bg) = (boundary(p), boundary(g));
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return 0.0;
    }
    (close_count(&bp, &bg, tau) + close_count(&bg, &bp, tau)) as f64 / (bp.len() + bg.len()) as f64
}

pub fn boundary_f(p: &Grid, g: &Grid, radius: f64) -> f64 {
    let (bp, bg) = (boundary(p), boundary(g));
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return 0.0;
    }
    let precision = close_count(&bp, &bg, radius) as f64 / bp.len() as f64;
    let recall = close_count(&bg, &bp, radius) as f64 / bg.len() as f64;
    if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) }
}

/// 4-connected flood fill over pixels whose value lies within `tol` of the seed value.
pub fn flood_fill(height: usize, width: usize, values: &[f32], seed: (usize, usize), tol: f32) -> Vec<bool> {
    let target = values[seed.0 * width + seed.1];
    let mut out = vec![false; height * width];
    let mut stack = vec![seed];
    while let Some((r, c)) = stack.pop() {
        let i = r * width + c;
        if out[i] || (values[i] - target).abs() > tol {
            continue;
        }
        out[i] = true;
        if r > 0 { stack.push((r - 1, c)); }
        if r + 1 < height { stack.push((r + 1, c)); }
        if c > 0 { stack.push((r, c - 1)); }
        if c + 1 < width { stack.push((r, c + 1)); }
    }
    out
}

/// Random blobby 2-D grid: a few filled rectangles plus salt noise.
pub fn random_plane(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Grid {
    let mut bits = vec![false; height * width];
    let rects = rng.random_range(0..4);
    for _ in 0..rects {
        let r0 = rng.random_range(0..height);
        let c0 = rng.random_range(0..width);
        let r1 = rng.random_range(r0..height);
        let c1 = rng.random_range(c0..width);
        for r in r0..=r1 {
            for c in c0..=c1 {
                bits[r * width + c] = true;
            }
        }
    }
    let salt = rng.random_range(0.0..0.15);
    for b in bits.iter_mut() {
        if rng.random_bool(salt) {
            *b = !*b;
        }
    }
    Grid::plane(height, width, bits)
}

/// Seeded generator of random mask pairs up to `max_side` x `max_side`.
pub struct PairSource {
    rng: ChaCha8Rng,
    max_side: usize,
}

impl PairSource {
    pub fn new(seed: u64, max_side: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), max_side }
    }

    pub fn next_pair(&mut self) -> (Grid, Grid) {
        let h = self.rng.random_range(1..=self.max_side);
        let w = self.rng.random_range(1..=self.max_side);
        let a = random_plane(&mut self.rng, h, w);
        let b = random_plane(&mut self.rng, h, w);
        (a, b)
    }
}
